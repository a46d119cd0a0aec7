// Dense tableau simplex for small linear programs
//
//     maximize c'x   subject to   A x <= b,  x >= 0,  b >= 0.
//
// The nonnegative right-hand side makes the slack basis feasible, so no
// phase-1 is needed; callers in this library always satisfy it. Pivoting is
// deterministic: Dantzig's rule with smallest-index tie-breaking, falling
// back to Bland's rule (which cannot cycle) if an iteration budget is hit.
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "smc/linalg.hpp"

namespace smc {

struct LpResult {
    double value = 0.0;
    Vec x;
    bool bounded = true;
};

inline LpResult lp_maximize(const Mat& a, const Vec& b, const Vec& c,
                            double eps = 1e-9) {
    const std::size_t m = a.rows, n = a.cols;
    for (double bi : b)
        if (bi < 0.0) throw std::invalid_argument("lp_maximize: requires b >= 0");

    // Tableau rows 0..m-1 are constraints, row m is the objective.
    // Columns 0..n-1 originals, n..n+m-1 slacks, n+m the right-hand side.
    const std::size_t cols = n + m + 1;
    Mat t(m + 1, cols);
    std::vector<std::size_t> basis(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) t(i, j) = a(i, j);
        t(i, n + i) = 1.0;
        t(i, cols - 1) = b[i];
        basis[i] = n + i;
    }
    for (std::size_t j = 0; j < n; ++j) t(m, j) = -c[j];

    const std::size_t dantzig_budget = 5 * (m + n) + 1000;
    for (std::size_t iter = 0;; ++iter) {
        const bool bland = iter > dantzig_budget;

        // Entering column: most negative reduced cost (Dantzig) or first
        // negative (Bland); ties and scans resolve by smallest index.
        std::size_t enter = cols;
        double best = -eps;
        for (std::size_t j = 0; j + 1 < cols; ++j) {
            if (t(m, j) < (bland ? -eps : best)) {
                best = t(m, j);
                enter = j;
                if (bland) break;
            }
        }
        if (enter == cols) break; // optimal

        // Ratio test; ties resolve by smallest basis variable (Bland-safe).
        std::size_t leave = m;
        double best_ratio = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m; ++i) {
            if (t(i, enter) <= eps) continue;
            const double ratio = t(i, cols - 1) / t(i, enter);
            if (ratio < best_ratio - 1e-12 ||
                (ratio < best_ratio + 1e-12 && (leave == m || basis[i] < basis[leave]))) {
                best_ratio = ratio;
                leave = i;
            }
        }
        if (leave == m) return LpResult{0.0, Vec(n, 0.0), false}; // unbounded

        // Pivot on (leave, enter).
        const double piv = t(leave, enter);
        for (std::size_t j = 0; j < cols; ++j) t(leave, j) /= piv;
        for (std::size_t i = 0; i <= m; ++i) {
            if (i == leave) continue;
            const double f = t(i, enter);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < cols; ++j) t(i, j) -= f * t(leave, j);
        }
        basis[leave] = enter;
    }

    LpResult res;
    res.x.assign(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        if (basis[i] < n) res.x[basis[i]] = t(i, cols - 1);
    res.value = 0.0;
    for (std::size_t j = 0; j < n; ++j) res.value += c[j] * res.x[j];
    return res;
}

} // namespace smc
