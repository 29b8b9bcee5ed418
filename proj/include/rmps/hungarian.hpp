#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace rmps {

/// Dense row-major cost matrix, rows = predictions, cols = ground truth.
struct CostMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> costs;

    CostMatrix() = default;
    CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), costs(r * c, fill) {}

    double& at(std::size_t i, std::size_t j) { return costs[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return costs[i * cols + j]; }
};

struct Assignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs; // (prediction, ground truth), sorted by prediction
    std::vector<std::size_t> unmatched;                     // prediction indices without a partner
    double total_cost = 0.0;                                // sum over pairs in prediction order
};

/// Minimum-cost injective assignment of min(rows, cols) pairs. The matrix is
/// padded to square with a constant above max|cost| * (rows + cols) and
/// solved with the O(n^3) potential-based Kuhn-Munkres method. Throws
/// InputError on non-finite entries.
Assignment hungarian(const CostMatrix& costs);

} // namespace rmps
