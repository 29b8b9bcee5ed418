#include "rmps/checkpoint.hpp"

#include "rmps/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rmps {

namespace {

constexpr char kMagic[4] = {'R', 'M', 'P', 'S'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
  public:
    Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

    template <typename T>
    T get(const char* what) {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in_) fail(what);
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        std::string s(n, '\0');
        in_.read(s.data(), std::streamsize(n));
        if (!in_) fail(what);
        return s;
    }
    [[noreturn]] void fail(const char* what) {
        throw ParseError("checkpoint '" + path_ + "' is truncated while reading " + what);
    }

  private:
    std::istream& in_;
    std::string path_;
};

ModelConfig config_from_table(const TensorTable& t) {
    ModelConfig cfg;
    auto entries = model_config_entries(cfg);
    for (auto& [key, value] : entries) {
        const Tensor* v = t.find("config." + key);
        if (!v) throw ParseError("checkpoint lacks config field '" + key + "'");
        value = v->item();
    }
    auto count = [&](const char* k) { return std::size_t(entries.at(k)); };
    cfg.d = count("model.d");
    cfg.n_queries = count("model.n_queries");
    cfg.heads = count("model.heads");
    cfg.thing_classes = count("model.thing_classes");
    cfg.stuff_classes = count("model.stuff_classes");
    cfg.arch = MetaArch(int(entries.at("model.arch")));
    cfg.decoder = DecoderKind(int(entries.at("model.decoder")));
    cfg.prompt_in_mhsa = entries.at("model.prompt_in_mhsa") != 0.0;
    cfg.mix_residual = entries.at("model.mix_residual") != 0.0;
    cfg.image_size = count("model.image_size");
    cfg.clip_frames = count("model.clip_frames");
    for (std::size_t i = 0; i < 4; ++i) cfg.channels[i] = count(("model.channels." + std::to_string(i)).c_str());
    cfg.adapter.obj = AdapterKind(int(entries.at("adapter.obj")));
    cfg.adapter.prompt = AdapterKind(int(entries.at("adapter.prompt")));
    return cfg;
}

LoadedCheckpoint restore(const TensorTable& table, const ModelConfig& cfg) {
    LoadedCheckpoint out{build_model(cfg, 0), {}};
    for (auto& p : out.model.parameters()) {
        const Tensor* src = table.find(p.name);
        if (!src) throw ConfigError("checkpoint lacks tensor '" + p.name + "'");
        if (src->shape() != p.tensor.shape()) {
            throw ConfigError("tensor '" + p.name + "' has shape " + shape_str(src->shape()) + " in checkpoint, model expects " +
                              shape_str(p.tensor.shape()));
        }
        auto dst = p.tensor.mutable_data();
        std::copy(src->data().begin(), src->data().end(), dst.begin());
        const Tensor* m = table.find("opt.m." + p.name);
        const Tensor* v = table.find("opt.v." + p.name);
        if (m && v) {
            out.optimizer.m[p.name].assign(m->data().begin(), m->data().end());
            out.optimizer.v[p.name].assign(v->data().begin(), v->data().end());
        }
    }
    if (const Tensor* step = table.find("meta.step")) out.optimizer.step = std::size_t(step->item());
    return out;
}

} // namespace

const Tensor* TensorTable::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t.tensor;
    return nullptr;
}

void write_tensor_table(const std::string& path, const TensorTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    out.write(kMagic, 4);
    put<std::uint32_t>(out, table.version);
    put<std::uint32_t>(out, std::uint32_t(table.tensors.size()));
    for (const auto& [name, t] : table.tensors) {
        if (name.size() > 0xFFFF) throw InputError("tensor name too long: " + name);
        put<std::uint16_t>(out, std::uint16_t(name.size()));
        out.write(name.data(), std::streamsize(name.size()));
        put<std::uint8_t>(out, std::uint8_t(t.rank()));
        for (auto e : t.shape()) put<std::uint32_t>(out, std::uint32_t(e));
        out.write(reinterpret_cast<const char*>(t.data().data()), std::streamsize(t.numel() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

TensorTable read_tensor_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    Reader r(in, path);
    if (r.bytes(4, "magic") != std::string(kMagic, 4)) throw ParseError("'" + path + "' is not a checkpoint (bad magic)");
    TensorTable table;
    table.version = r.get<std::uint32_t>("version");
    if (table.version != kCheckpointVersion) {
        throw ParseError("checkpoint '" + path + "' has version " + std::to_string(table.version) + ", expected " +
                         std::to_string(kCheckpointVersion));
    }
    const auto count = r.get<std::uint32_t>("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.get<std::uint16_t>("name length");
        std::string name = r.bytes(len, "tensor name");
        const auto rank = r.get<std::uint8_t>("rank");
        if (rank == 0 || rank > kMaxRank) throw ParseError("tensor '" + name + "' has invalid rank " + std::to_string(rank));
        Shape shape;
        for (std::uint8_t k = 0; k < rank; ++k) shape.push_back(r.get<std::uint32_t>("extent"));
        std::vector<double> values(shape_numel(shape));
        in.read(reinterpret_cast<char*>(values.data()), std::streamsize(values.size() * sizeof(double)));
        if (!in) r.fail("tensor data");
        table.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
    }
    return table;
}

void save_checkpoint(const std::string& path, const Model& model, const OptimizerState& opt) {
    TensorTable table;
    for (const auto& [key, value] : model_config_entries(model.cfg)) table.tensors.push_back({"config." + key, Tensor::scalar(value)});
    table.tensors.push_back({"meta.step", Tensor::scalar(double(opt.step))});
    const auto params = model.parameters();
    for (const auto& p : params) table.tensors.push_back({p.name, p.tensor.detach()});
    for (const auto& p : params) {
        auto m = opt.m.find(p.name);
        auto v = opt.v.find(p.name);
        if (m == opt.m.end() || v == opt.v.end()) continue;
        table.tensors.push_back({"opt.m." + p.name, Tensor(p.tensor.shape(), m->second)});
        table.tensors.push_back({"opt.v." + p.name, Tensor(p.tensor.shape(), v->second)});
    }
    write_tensor_table(path, table);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    TensorTable table = read_tensor_table(path);
    return restore(table, config_from_table(table));
}

LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig& expected) {
    TensorTable table = read_tensor_table(path);
    const auto stored = model_config_entries(config_from_table(table));
    for (const auto& [key, value] : model_config_entries(expected)) {
        const double have = stored.at(key);
        if (have != value) {
            std::ostringstream os;
            os << "checkpoint config mismatch on " << key << ": checkpoint has " << have << ", model expects " << value;
            throw ConfigError(os.str());
        }
    }
    return restore(table, expected);
}

} // namespace rmps
