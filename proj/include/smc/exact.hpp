// Exact reference filters: Kalman recursion for linear-Gaussian models,
// forward Bayes enumeration for finite chains, and a grid-discretization
// oracle for one-dimensional continuous models.
//
// Conventions shared by every filter runner in this library: the belief at
// step 0 is the initial law updated by y_0 (no transition applied); each
// later step applies one transition followed by one likelihood update.
#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "smc/linalg.hpp"
#include "smc/model.hpp"

namespace smc {

// ---------------------------------------------------------------------------
// Gaussian beliefs and the Kalman recursion
// ---------------------------------------------------------------------------

struct GaussianBelief {
    Vec mean;
    Mat covariance;

    static GaussianBelief scalar(double mean, double variance) {
        Mat c(1, 1);
        c(0, 0) = variance;
        return GaussianBelief{Vec{mean}, c};
    }
    double mean1() const { return mean[0]; }
    double var1() const { return covariance(0, 0); }
};

/// Covariance must be symmetric (1e-12) with eigenvalues >= -1e-12.
inline bool gaussian_belief_valid(const GaussianBelief& b) {
    const std::size_t n = b.mean.size();
    if (b.covariance.rows != n || b.covariance.cols != n) return false;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(b.covariance(i, j) - b.covariance(j, i)) > 1e-12) return false;
    const Vec ev = symmetric_eigenvalues(b.covariance);
    return ev.front() >= -1e-12;
}

inline GaussianBelief kalman_predict(const GaussianBelief& b, double a, double q) {
    return GaussianBelief::scalar(a * b.mean1(), a * a * b.var1() + q);
}

inline GaussianBelief kalman_update(const GaussianBelief& b, double y, double r) {
    const double s = b.var1() + r;
    const double gain = b.var1() / s;
    const double mean = b.mean1() + gain * (y - b.mean1());
    // Joseph form; algebraically (1 - gain) * var for the scalar case.
    const double var = (1.0 - gain) * b.var1() * (1.0 - gain) + gain * r * gain;
    return GaussianBelief::scalar(mean, var);
}

/// One filter step of the scalar recursion: predict through x' = a x + noise
/// of variance q, then update with observation y of noise variance r.
inline GaussianBelief kalman_step(const GaussianBelief& b, double y, double a,
                                  double q, double r) {
    return kalman_update(kalman_predict(b, a, q), y, r);
}

// General matrix form, used to guard the scalar path against
// dimension-one special-casing. x' = A x + N(0, Q), y = H x + N(0, R).
inline GaussianBelief kalman_predict(const GaussianBelief& b, const Mat& a, const Mat& q) {
    GaussianBelief out;
    out.mean = mat_vec(a, b.mean);
    out.covariance = mat_mul(mat_mul(a, b.covariance), transpose(a));
    for (std::size_t i = 0; i < q.rows; ++i)
        for (std::size_t j = 0; j < q.cols; ++j) out.covariance(i, j) += q(i, j);
    return out;
}

inline GaussianBelief kalman_update(const GaussianBelief& b, const Vec& y,
                                    const Mat& h, const Mat& r) {
    const std::size_t n = b.mean.size(), m = y.size();
    Mat s = mat_mul(mat_mul(h, b.covariance), transpose(h));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) s(i, j) += r(i, j);
    // K = P H' S^{-1}, computed column by column through the SPD solve.
    const Mat pht = mat_mul(b.covariance, transpose(h));
    Mat gain(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        Vec row(m);
        for (std::size_t j = 0; j < m; ++j) row[j] = pht(i, j);
        const Vec gi = solve_spd(s, row);
        for (std::size_t j = 0; j < m; ++j) gain(i, j) = gi[j];
    }
    Vec innovation = y;
    const Vec hx = mat_vec(h, b.mean);
    for (std::size_t j = 0; j < m; ++j) innovation[j] -= hx[j];

    GaussianBelief out;
    out.mean = b.mean;
    const Vec corr = mat_vec(gain, innovation);
    for (std::size_t i = 0; i < n; ++i) out.mean[i] += corr[i];

    Mat ikh = Mat::identity(n);
    const Mat kh = mat_mul(gain, h);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) ikh(i, j) -= kh(i, j);
    // Joseph form keeps the covariance symmetric PSD.
    out.covariance = mat_mul(mat_mul(ikh, b.covariance), transpose(ikh));
    const Mat krk = mat_mul(mat_mul(gain, r), transpose(gain));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out.covariance(i, j) += krk(i, j);
    return out;
}

inline GaussianBelief kalman_step(const GaussianBelief& b, const Vec& y, const Mat& a,
                                  const Mat& q, const Mat& h, const Mat& r) {
    return kalman_update(kalman_predict(b, a, q), y, h, r);
}

// ---------------------------------------------------------------------------
// Finite-state forward recursion
// ---------------------------------------------------------------------------

struct DiscreteBelief {
    Vec probs;
};

inline bool discrete_belief_valid(const DiscreteBelief& b) {
    double s = 0.0;
    for (double p : b.probs) {
        if (p < 0.0) return false;
        s += p;
    }
    return std::abs(s - 1.0) <= 1e-12;
}

/// Exact Bayes step on a finite state space: propagate the belief through
/// the transition matrix, reweight by the emission likelihood of `y`, and
/// normalize. The normalizer cannot vanish for a nondegenerate channel; a
/// zero total signals a model bug and aborts.
inline DiscreteBelief forward_step(const DiscreteBelief& belief, const Obs& y,
                                   const ModelSpec& model) {
    if (!model.finite())
        throw std::invalid_argument("forward_step: model has no finite-state representation");
    const auto& p = model.transition_matrix;
    const std::size_t n = p.size();
    Vec predicted(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double bi = belief.probs[i];
        if (bi == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) predicted[j] += bi * p[i][j];
    }
    double total = 0.0;
    Vec post(n);
    for (std::size_t j = 0; j < n; ++j) {
        post[j] = predicted[j] * model.likelihood(State{static_cast<double>(j)}, y);
        total += post[j];
    }
    assert(total > 0.0 && "forward_step: zero posterior mass under a nondegenerate channel");
    for (double& pj : post) pj /= total;
    return DiscreteBelief{post};
}

/// Belief at step 0: initial law reweighted by the first observation.
inline DiscreteBelief forward_init(const ModelSpec& model, const Obs& y0) {
    const std::size_t n = model.n_states();
    Vec post(n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        post[j] = model.initial_probs[j] *
                  model.likelihood(State{static_cast<double>(j)}, y0);
        total += post[j];
    }
    assert(total > 0.0);
    for (double& pj : post) pj /= total;
    return DiscreteBelief{post};
}

// ---------------------------------------------------------------------------
// Grid oracle for 1-D continuous models
// ---------------------------------------------------------------------------

struct GridBelief {
    Vec nodes;  // strictly increasing
    Vec masses; // nonnegative, sums to 1
    /// Set when the grid fails to cover six posterior standard deviations.
    bool coverage_warning = false;
};

inline GridBelief make_uniform_grid(double lo, double hi, std::size_t n_nodes) {
    GridBelief g;
    g.nodes.resize(n_nodes);
    g.masses.assign(n_nodes, 1.0 / static_cast<double>(n_nodes));
    if (n_nodes == 1) {
        g.nodes[0] = 0.5 * (lo + hi);
        return g;
    }
    const double h = (hi - lo) / static_cast<double>(n_nodes - 1);
    for (std::size_t i = 0; i < n_nodes; ++i) g.nodes[i] = lo + h * static_cast<double>(i);
    return g;
}

/// Concentrate all mass on the node nearest to x.
inline GridBelief grid_point_mass(GridBelief grid, double x) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < grid.nodes.size(); ++i)
        if (std::abs(grid.nodes[i] - x) < std::abs(grid.nodes[best] - x)) best = i;
    grid.masses.assign(grid.nodes.size(), 0.0);
    grid.masses[best] = 1.0;
    return grid;
}

namespace detail {

// Midpoint quadrature weights with trapezoid end correction.
inline Vec grid_cell_widths(const Vec& nodes) {
    const std::size_t n = nodes.size();
    Vec w(n, 1.0);
    if (n == 1) return w;
    w[0] = 0.5 * (nodes[1] - nodes[0]);
    w[n - 1] = 0.5 * (nodes[n - 1] - nodes[n - 2]);
    for (std::size_t j = 1; j + 1 < n; ++j) w[j] = 0.5 * (nodes[j + 1] - nodes[j - 1]);
    return w;
}

inline void grid_mean_sd(const GridBelief& g, double& mean, double& sd) {
    mean = 0.0;
    for (std::size_t j = 0; j < g.nodes.size(); ++j) mean += g.nodes[j] * g.masses[j];
    double var = 0.0;
    for (std::size_t j = 0; j < g.nodes.size(); ++j) {
        const double d = g.nodes[j] - mean;
        var += d * d * g.masses[j];
    }
    sd = std::sqrt(std::max(0.0, var));
}

} // namespace detail

/// Transition kernel matrix for a fixed grid: entry (i, j) is the density of
/// moving node_i -> node_j times the quadrature width of cell j. Build once
/// per run when stepping a grid filter many times.
inline Mat grid_transition_kernel(
    const Vec& nodes, const std::function<double(const State&, const State&)>& density) {
    const std::size_t n = nodes.size();
    const Vec widths = detail::grid_cell_widths(nodes);
    Mat kernel(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            kernel(i, j) = density(State{nodes[i]}, State{nodes[j]}) * widths[j];
    return kernel;
}

/// Likelihood update only (used at step 0). Works in log space so extreme
/// observations cannot underflow row products.
inline GridBelief grid_update(const GridBelief& belief, const Obs& y, const ModelSpec& model) {
    const std::size_t n = belief.nodes.size();
    GridBelief out = belief;
    Vec logw(n, -1e300);
    double max_log = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
        if (belief.masses[j] <= 0.0) continue;
        logw[j] = model.log_likelihood(State{belief.nodes[j]}, y) + std::log(belief.masses[j]);
        if (logw[j] > max_log) max_log = logw[j];
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        out.masses[j] = belief.masses[j] > 0.0 ? std::exp(logw[j] - max_log) : 0.0;
        total += out.masses[j];
    }
    for (double& mj : out.masses) mj /= total;

    double mean, sd;
    detail::grid_mean_sd(out, mean, sd);
    out.coverage_warning = n > 1 && (out.nodes.front() > mean - 6.0 * sd ||
                                     out.nodes.back() < mean + 6.0 * sd);
    return out;
}

/// One filter step with a precomputed transition kernel.
inline GridBelief grid_filter_step(const GridBelief& belief, const Obs& y,
                                   const ModelSpec& model, const Mat& kernel) {
    const std::size_t n = belief.nodes.size();
    GridBelief predicted = belief;
    predicted.masses.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double mi = belief.masses[i];
        if (mi == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) predicted.masses[j] += mi * kernel(i, j);
    }
    double total = 0.0;
    for (double mj : predicted.masses) total += mj;
    if (n == 1 || total <= 0.0) {
        // Degenerate grid: nothing to redistribute.
        predicted.masses = belief.masses;
    } else {
        for (double& mj : predicted.masses) mj /= total;
    }
    return grid_update(predicted, y, model);
}

/// One filter step, building the kernel from a transition density on the fly.
inline GridBelief grid_filter_step(
    const GridBelief& belief, const Obs& y, const ModelSpec& model,
    const std::function<double(const State&, const State&)>& transition_density) {
    return grid_filter_step(belief, y, model,
                            grid_transition_kernel(belief.nodes, transition_density));
}

inline double grid_mean(const GridBelief& g) {
    double m = 0.0;
    for (std::size_t j = 0; j < g.nodes.size(); ++j) m += g.nodes[j] * g.masses[j];
    return m;
}

} // namespace smc
