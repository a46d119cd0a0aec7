// Distances between atomic beliefs and time-average error functionals.
//
// The bounded-Lipschitz distance is the exact optimum of the finite linear
// program over test-function values on the merged atom support:
//
//     maximize   sum_i c_i f_i
//     subject to |f_i| <= 1,  |f_i - f_j| <= d(x_i, x_j),
//
// where c is the signed mass difference. Any feasible assignment extends to
// a function on the whole space with the same sup and Lipschitz bounds, so
// the program value equals the distance. Values live in [0, 2]; so does the
// total variation distance, which is computed with the sup-norm-one
// convention (twice the half-mass convention).
//
// Metric on atom locations: Euclidean on R^d; on finite state spaces the
// discrete metric scaled to the diameter 2 of the unit-ball function class,
// which makes the bounded-Lipschitz and total variation distances coincide
// there.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

#include "smc/errors.hpp"
#include "smc/exact.hpp"
#include "smc/linalg.hpp"
#include "smc/model.hpp"
#include "smc/particle.hpp"
#include "smc/simplex.hpp"

namespace smc {

inline constexpr std::size_t kBlSupportLimit = 5000;

/// The data of one bounded-Lipschitz evaluation: merged atom support,
/// signed mass differences (summing to zero), and pairwise distances.
struct BlProblem {
    std::vector<State> support;
    Vec signed_masses;
    Mat distances;
};

namespace detail {

// Merge exactly-coinciding atoms of (mu, -nu) into signed masses.
inline void merge_signed_atoms(const ParticleEnsemble& mu, const ParticleEnsemble& nu,
                               std::vector<State>& support, Vec& signed_masses) {
    std::map<State, double> acc;
    for (std::size_t i = 0; i < mu.n_particles(); ++i) acc[mu.locations[i]] += mu.weights[i];
    for (std::size_t i = 0; i < nu.n_particles(); ++i) acc[nu.locations[i]] -= nu.weights[i];
    support.clear();
    signed_masses.clear();
    for (const auto& [loc, mass] : acc) {
        if (mass == 0.0) continue;
        support.push_back(loc);
        signed_masses.push_back(mass);
    }
}

inline double euclidean(const State& a, const State& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace detail

inline BlProblem make_bl_problem(const ParticleEnsemble& mu, const ParticleEnsemble& nu) {
    BlProblem p;
    detail::merge_signed_atoms(mu, nu, p.support, p.signed_masses);
    const std::size_t m = p.support.size();
    if (m > kBlSupportLimit) throw SupportTooLarge(m, kBlSupportLimit);
    p.distances = Mat(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j)
            p.distances(i, j) = p.distances(j, i) =
                detail::euclidean(p.support[i], p.support[j]);
    return p;
}

inline BlProblem make_bl_problem(const DiscreteBelief& mu, const DiscreteBelief& nu) {
    if (mu.probs.size() != nu.probs.size())
        throw std::invalid_argument("bl: discrete beliefs of different size");
    BlProblem p;
    for (std::size_t i = 0; i < mu.probs.size(); ++i) {
        const double c = mu.probs[i] - nu.probs[i];
        if (c == 0.0) continue;
        p.support.push_back(State{static_cast<double>(i)});
        p.signed_masses.push_back(c);
    }
    const std::size_t m = p.support.size();
    p.distances = Mat(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            if (i != j) p.distances(i, j) = 2.0;
    return p;
}

/// Exact optimum of the bounded-Lipschitz program. Redundant pair
/// constraints are pruned first: any pair at distance >= 2 is implied by
/// the sup-norm box, and any pair dominated by a two-hop path through a
/// third atom is implied by the retained ones (on a line this reduces the
/// program to adjacent pairs).
inline double bl_distance(const BlProblem& p) {
    const std::size_t m = p.support.size();
    if (m == 0) return 0.0;
    if (m == 1) return std::min(std::abs(p.signed_masses[0]), 2.0);

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    // Adjacent pairs suffice when the metric is the line metric on the
    // (sorted) support, because distances are then additive.
    bool line_metric = p.support[0].size() == 1;
    for (std::size_t i = 0; line_metric && i < m; ++i)
        for (std::size_t j = i + 1; line_metric && j < m; ++j)
            if (std::abs(p.distances(i, j) - (p.support[j][0] - p.support[i][0])) > 1e-12)
                line_metric = false;
    if (line_metric) {
        for (std::size_t i = 0; i + 1 < m; ++i)
            if (p.distances(i, i + 1) < 2.0) pairs.emplace_back(i, i + 1);
    } else {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j) {
                const double dij = p.distances(i, j);
                if (dij >= 2.0) continue;
                bool implied = false;
                if (m <= 1024) {
                    for (std::size_t k = 0; k < m && !implied; ++k)
                        if (k != i && k != j &&
                            p.distances(i, k) + p.distances(k, j) <= dij + 1e-12)
                            implied = true;
                }
                if (!implied) pairs.emplace_back(i, j);
            }
    }

    // Shift to g = f + 1 in [0, 2]; the objective is shift-invariant since
    // the signed masses sum to zero.
    const std::size_t rows = 2 * pairs.size() + m;
    Mat a(rows, m);
    Vec b(rows);
    std::size_t r = 0;
    for (const auto& [i, j] : pairs) {
        a(r, i) = 1.0;
        a(r, j) = -1.0;
        b[r++] = p.distances(i, j);
        a(r, i) = -1.0;
        a(r, j) = 1.0;
        b[r++] = p.distances(i, j);
    }
    for (std::size_t i = 0; i < m; ++i) {
        a(r, i) = 1.0;
        b[r++] = 2.0;
    }
    const LpResult res = lp_maximize(a, b, p.signed_masses);
    return std::clamp(res.value, 0.0, 2.0);
}

inline double bl_distance(const ParticleEnsemble& mu, const ParticleEnsemble& nu) {
    return bl_distance(make_bl_problem(mu, nu));
}

inline double bl_distance(const DiscreteBelief& mu, const DiscreteBelief& nu) {
    return bl_distance(make_bl_problem(mu, nu));
}

// ---------------------------------------------------------------------------
// Total variation and V-weighted distances
// ---------------------------------------------------------------------------

inline double tv_distance(const ParticleEnsemble& mu, const ParticleEnsemble& nu) {
    std::vector<State> support;
    Vec c;
    detail::merge_signed_atoms(mu, nu, support, c);
    double s = 0.0;
    for (double ci : c) s += std::abs(ci);
    return s;
}

inline double tv_distance(const DiscreteBelief& mu, const DiscreteBelief& nu) {
    if (mu.probs.size() != nu.probs.size())
        throw std::invalid_argument("tv: discrete beliefs of different size");
    double s = 0.0;
    for (std::size_t i = 0; i < mu.probs.size(); ++i)
        s += std::abs(mu.probs[i] - nu.probs[i]);
    return s;
}

inline double v_norm_distance(const ParticleEnsemble& mu, const ParticleEnsemble& nu,
                              const LyapunovSpec& lyapunov) {
    std::vector<State> support;
    Vec c;
    detail::merge_signed_atoms(mu, nu, support, c);
    double s = 0.0;
    for (std::size_t i = 0; i < support.size(); ++i)
        s += lyapunov.v(support[i]) * std::abs(c[i]);
    return s;
}

inline double v_norm_distance(const DiscreteBelief& mu, const DiscreteBelief& nu,
                              const LyapunovSpec& lyapunov) {
    if (mu.probs.size() != nu.probs.size())
        throw std::invalid_argument("v-norm: discrete beliefs of different size");
    double s = 0.0;
    for (std::size_t i = 0; i < mu.probs.size(); ++i)
        s += lyapunov.v(State{static_cast<double>(i)}) * std::abs(mu.probs[i] - nu.probs[i]);
    return s;
}

// ---------------------------------------------------------------------------
// Coarsening
// ---------------------------------------------------------------------------

/// Snap the atoms of a one-dimensional ensemble onto `n_bins` equally
/// spaced nodes spanning [lo, hi] and aggregate weights. No atom moves
/// farther than half the node spacing.
inline ParticleEnsemble coarsen(const ParticleEnsemble& e, std::size_t n_bins,
                                double lo, double hi) {
    if (n_bins == 0) throw std::invalid_argument("coarsen: need at least one bin");
    for (const State& x : e.locations)
        if (x.size() != 1) throw std::invalid_argument("coarsen: one-dimensional ensembles only");

    std::map<std::size_t, double> acc;
    const double span = hi - lo;
    if (n_bins == 1 || span <= 0.0) {
        ParticleEnsemble out;
        out.locations.push_back(State{0.5 * (lo + hi)});
        out.weights.push_back(1.0);
        return out;
    }
    const double width = span / static_cast<double>(n_bins - 1);
    for (std::size_t i = 0; i < e.n_particles(); ++i) {
        const double idx = std::round((e.locations[i][0] - lo) / width);
        const auto j = static_cast<std::size_t>(
            std::clamp(idx, 0.0, static_cast<double>(n_bins - 1)));
        acc[j] += e.weights[i];
    }
    ParticleEnsemble out;
    for (const auto& [j, w] : acc) {
        out.locations.push_back(State{lo + width * static_cast<double>(j)});
        out.weights.push_back(w);
    }
    return out;
}

/// Coarsen over the ensemble's own support span.
inline ParticleEnsemble coarsen(const ParticleEnsemble& e, std::size_t n_bins) {
    double lo = e.locations[0][0], hi = lo;
    for (const State& x : e.locations) {
        lo = std::min(lo, x[0]);
        hi = std::max(hi, x[0]);
    }
    return coarsen(e, n_bins, lo, hi);
}

// ---------------------------------------------------------------------------
// Time-average functionals
// ---------------------------------------------------------------------------

struct ErrorSeries {
    Vec per_step_values;
    std::size_t horizon = 0;
};

inline double time_average(const ErrorSeries& series, std::size_t up_to) {
    if (up_to < 1 || up_to > series.per_step_values.size())
        throw std::invalid_argument("time_average: up_to out of range");
    double s = 0.0;
    for (std::size_t k = 0; k < up_to; ++k) s += series.per_step_values[k];
    return s / static_cast<double>(up_to);
}

/// Difference of time-averaged squared estimation errors,
/// |avg (f(X_k) - approx_k)^2 - avg (f(X_k) - exact_k)^2| over k = 1..up_to.
/// The mean sequences are index-aligned with trajectory.states.
inline double mse_comparison(const Trajectory& trajectory, const Vec& exact_means,
                             const Vec& approx_means,
                             const std::function<double(const State&)>& f,
                             std::size_t up_to) {
    if (exact_means.size() != trajectory.states.size() ||
        approx_means.size() != trajectory.states.size())
        throw std::invalid_argument("mse_comparison: sequences not aligned with trajectory");
    if (up_to < 1 || up_to > trajectory.horizon())
        throw std::invalid_argument("mse_comparison: up_to out of range");
    double mse_approx = 0.0, mse_exact = 0.0;
    for (std::size_t k = 1; k <= up_to; ++k) {
        const double fx = f(trajectory.states[k]);
        mse_approx += (fx - approx_means[k]) * (fx - approx_means[k]);
        mse_exact += (fx - exact_means[k]) * (fx - exact_means[k]);
    }
    return std::abs(mse_approx - mse_exact) / static_cast<double>(up_to);
}

} // namespace smc
