#pragma once

#include "rmps/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace rmps {

struct GradCheckReport {
    std::string op_name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    std::size_t elements_checked = 0;
    // Location of the largest error: parameter position, flat element, values.
    std::size_t worst_param = 0;
    std::size_t worst_element = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    std::size_t max_elements_per_tensor = 64;
    std::uint64_t seed = 0x5eed;
};

/// Compares tape gradients of a scalar function against central finite
/// differences on up to `max_elements_per_tensor` sampled entries of each
/// parameter. Relative error uses the denominator max(|a|, |b|, 1e-8).
///
/// `f` must be deterministic; a second evaluation at the unperturbed point
/// that differs bitwise raises OracleError.
GradCheckReport grad_check(std::string op_name, const std::function<Tensor()>& f,
                           std::vector<Tensor> params, const GradCheckOptions& options = {});

std::string format_report(const GradCheckReport& report);

} // namespace rmps
