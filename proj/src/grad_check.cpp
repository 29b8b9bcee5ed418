#include "rmps/grad_check.hpp"

#include "rmps/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace rmps {

GradCheckReport grad_check(std::string op_name, const std::function<Tensor()>& f,
                           std::vector<Tensor> params, const GradCheckOptions& options) {
    if (!(options.step > 0.0)) throw ContractError("grad_check: step must be positive");

    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    active_tape().clear();
    Tensor loss = f();
    backward(loss);

    auto evaluate = [&]() {
        NoGradGuard guard;
        return f().item();
    };
    const double base_a = evaluate();
    const double base_b = evaluate();
    if (base_a != base_b || base_a != loss.item()) {
        throw OracleError("grad_check(" + op_name + "): function is not deterministic");
    }

    std::mt19937_64 rng(options.seed);
    GradCheckReport report;
    report.op_name = std::move(op_name);
    report.tolerance = options.tolerance;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        std::vector<double> analytic(p.numel(), 0.0);
        if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());

        std::vector<std::size_t> idx(p.numel());
        std::iota(idx.begin(), idx.end(), 0);
        if (idx.size() > options.max_elements_per_tensor) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(options.max_elements_per_tensor);
        }
        auto values = p.mutable_data();
        for (auto i : idx) {
            const double saved = values[i];
            values[i] = saved + options.step;
            const double up = evaluate();
            values[i] = saved - options.step;
            const double down = evaluate();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            const double a = analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double err = std::abs(a - numeric) / denom;
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst_param = pi;
                report.worst_element = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
            ++report.elements_checked;
        }
        p.zero_grad();
    }
    report.passed = report.max_rel_err <= report.tolerance;
    return report;
}

std::string format_report(const GradCheckReport& report) {
    std::ostringstream os;
    os << "gradcheck op=" << report.op_name << " max_rel_err=" << report.max_rel_err
       << " tol=" << report.tolerance << " elements=" << report.elements_checked
       << " result=" << (report.passed ? "PASS" : "FAIL");
    if (!report.passed) {
        os << " worst=param" << report.worst_param << "[" << report.worst_element << "] analytic=" << report.worst_analytic
           << " numeric=" << report.worst_numeric;
    }
    return os.str();
}

} // namespace rmps
