#pragma once

#include "rmps/model.hpp"
#include "rmps/train.hpp"

#include <string>
#include <vector>

namespace rmps {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Raw named-tensor table. Layout: "RMPS", u32 version, u32 count, then per
/// tensor u16 name length, name bytes, u8 rank, u32 extents, f64 values, all
/// little-endian.
struct TensorTable {
    std::uint32_t version = kCheckpointVersion;
    std::vector<NamedTensor> tensors;

    const Tensor* find(const std::string& name) const;
};

void write_tensor_table(const std::string& path, const TensorTable& table);
/// Throws ParseError on bad magic, unsupported version or truncation.
TensorTable read_tensor_table(const std::string& path);

struct LoadedCheckpoint {
    Model model;
    OptimizerState optimizer;
};

/// Weights, AdamW moments ("opt.m.*", "opt.v.*"), step ("meta.step") and the
/// model config snapshot ("config.*").
void save_checkpoint(const std::string& path, const Model& model, const OptimizerState& opt);
/// Rebuilds the model from the stored config snapshot.
LoadedCheckpoint load_checkpoint(const std::string& path);
/// As above, but rejects a snapshot that differs from `expected`, naming the field.
LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig& expected);

} // namespace rmps
