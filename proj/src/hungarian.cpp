#include "rmps/hungarian.hpp"

#include "rmps/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rmps {

Assignment hungarian(const CostMatrix& c) {
    if (c.costs.size() != c.rows * c.cols) throw DimensionError("hungarian: cost storage does not match extents");
    double max_abs = 0.0;
    for (double v : c.costs) {
        if (!std::isfinite(v)) throw InputError("hungarian: non-finite cost entry");
        max_abs = std::max(max_abs, std::abs(v));
    }
    Assignment result;
    if (c.rows == 0 || c.cols == 0) {
        for (std::size_t i = 0; i < c.rows; ++i) result.unmatched.push_back(i);
        return result;
    }
    const std::size_t n = std::max(c.rows, c.cols);
    const double pad = max_abs * double(c.rows + c.cols) + 1.0;
    auto cost = [&](std::size_t i, std::size_t j) { return i < c.rows && j < c.cols ? c.at(i, j) : pad; };

    // 1-based potentials; p[j] is the row matched to column j.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<std::size_t> col_of_row(c.rows, n);
    for (std::size_t j = 1; j <= n; ++j) {
        if (p[j] != 0 && p[j] - 1 < c.rows && j - 1 < c.cols) col_of_row[p[j] - 1] = j - 1;
    }
    for (std::size_t i = 0; i < c.rows; ++i) {
        if (col_of_row[i] < c.cols) {
            result.pairs.emplace_back(i, col_of_row[i]);
            result.total_cost += c.at(i, col_of_row[i]);
        } else {
            result.unmatched.push_back(i);
        }
    }
    return result;
}

} // namespace rmps
