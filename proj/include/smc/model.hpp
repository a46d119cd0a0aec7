// Hidden Markov model abstraction and the concrete models shipped with the
// library: linear-Gaussian state space, finite-alphabet chains, and
// additive-noise observation models with a bounded observation function.
//
// A model is a signal transition kernel, an initial law, and an observation
// channel given by a strictly positive likelihood density against a fixed
// reference measure on observation space. Signal states live in R^d; finite
// state spaces use integer labels stored in a 1-vector.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "smc/linalg.hpp"
#include "smc/rng.hpp"

namespace smc {

using State = std::vector<double>;
using Obs = std::vector<double>;

enum class ReferenceMeasure { lebesgue, counting, gaussian_weighted };

struct ModelSpec {
    int state_dim = 1;

    std::function<State(RngStream&)> initial_sampler;
    Vec initial_probs; // finite case only; empty otherwise

    std::function<State(const State&, RngStream&)> transition_sampler;
    std::vector<Vec> transition_matrix; // finite case only; empty otherwise

    /// Likelihood density y |-> upsilon(x, y), strictly positive.
    std::function<double(const State&, const Obs&)> likelihood;
    /// log upsilon(x, y), computed without going through the linear scale.
    std::function<double(const State&, const Obs&)> log_likelihood;
    std::function<Obs(const State&, RngStream&)> observation_sampler;

    ReferenceMeasure reference_measure = ReferenceMeasure::lebesgue;

    /// Signal transition density x -> x' against Lebesgue, when available
    /// (used by the grid oracle filter).
    std::function<double(const State&, const State&)> transition_density;

    /// Declared envelope u_-(y) <= upsilon(x, y) <= u_+(y), when available.
    std::function<double(const Obs&)> envelope_lower, envelope_upper;
    /// Density of the observation reference measure, when it has one.
    std::function<double(const Obs&)> reference_density;

    bool finite() const { return !initial_probs.empty(); }
    std::size_t n_states() const { return initial_probs.size(); }
};

struct Trajectory {
    std::vector<State> states;
    std::vector<Obs> observations;
    std::uint64_t seed = 0;

    std::size_t horizon() const { return states.empty() ? 0 : states.size() - 1; }
};

/// A function V : E -> [1, inf) with compact level sets, plus the Euclidean
/// radius of the level set {V <= r} for reporting.
struct LyapunovSpec {
    std::function<double(const State&)> v;
    std::function<double(double)> level_set_radius;
};

inline LyapunovSpec make_quadratic_lyapunov() {
    return LyapunovSpec{
        [](const State& x) {
            double s = 1.0;
            for (double c : x) s += c * c;
            return s;
        },
        [](double r) { return r >= 1.0 ? std::sqrt(r - 1.0) : 0.0; }};
}

inline LyapunovSpec make_unit_lyapunov() {
    return LyapunovSpec{[](const State&) { return 1.0; },
                        [](double) { return 0.0; }};
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Realize (X_0..X_T, Y_0..Y_T). Signal and observation noises come from
/// two fixed substreams of `seed`, so the result is bit-reproducible.
inline Trajectory simulate(const ModelSpec& model, std::size_t horizon,
                           std::uint64_t seed) {
    RngStream signal_stream(seed, 0);
    RngStream obs_stream(seed, 1);

    Trajectory traj;
    traj.seed = seed;
    traj.states.reserve(horizon + 1);
    traj.observations.reserve(horizon + 1);

    traj.states.push_back(model.initial_sampler(signal_stream));
    for (std::size_t k = 1; k <= horizon; ++k)
        traj.states.push_back(model.transition_sampler(traj.states.back(), signal_stream));
    for (const State& x : traj.states)
        traj.observations.push_back(model.observation_sampler(x, obs_stream));
    return traj;
}

// ---------------------------------------------------------------------------
// Concrete models
// ---------------------------------------------------------------------------

namespace detail {

inline double gaussian_logpdf(double x, double mean, double variance) {
    const double d = x - mean;
    return -0.5 * d * d / variance - 0.5 * std::log(2.0 * 3.14159265358979323846 * variance);
}

inline std::size_t sample_categorical(const Vec& probs, RngStream& rng) {
    const double u = rng.uniform();
    double cum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        cum += probs[i];
        if (u <= cum) return i;
    }
    return probs.size() - 1;
}

} // namespace detail

/// Scalar linear state space: X_k = a X_{k-1} + sqrt(q) xi_k starting at the
/// point x0, observed as Y_k = X_k + sqrt(r) eta_k with standard normal
/// noises. Likelihood is the N(x, r) density of y against Lebesgue.
inline ModelSpec make_linear_gaussian(double a, double q, double r, double x0) {
    if (!(q > 0.0)) throw std::invalid_argument("make_linear_gaussian: q must be positive");
    if (!(r > 0.0)) throw std::invalid_argument("make_linear_gaussian: r must be positive");

    const double sq = std::sqrt(q), sr = std::sqrt(r);
    ModelSpec m;
    m.state_dim = 1;
    m.reference_measure = ReferenceMeasure::lebesgue;
    m.initial_sampler = [x0](RngStream&) { return State{x0}; };
    m.transition_sampler = [a, sq](const State& x, RngStream& rng) {
        return State{a * x[0] + sq * rng.normal()};
    };
    m.transition_density = [a, q](const State& from, const State& to) {
        return std::exp(detail::gaussian_logpdf(to[0], a * from[0], q));
    };
    m.log_likelihood = [r](const State& x, const Obs& y) {
        return detail::gaussian_logpdf(y[0], x[0], r);
    };
    m.likelihood = [r](const State& x, const Obs& y) {
        return std::exp(detail::gaussian_logpdf(y[0], x[0], r));
    };
    m.observation_sampler = [sr](const State& x, RngStream& rng) {
        return Obs{x[0] + sr * rng.normal()};
    };
    return m;
}

/// Finite-state chain with a finite observation alphabet. Rows of
/// `transition` must be stochastic; every emission entry must be strictly
/// positive so that the observation channel is nondegenerate.
inline ModelSpec make_finite_hmm(const std::vector<Vec>& transition,
                                 const std::vector<Vec>& emission,
                                 const Vec& initial) {
    const std::size_t n = transition.size();
    if (n == 0) throw std::invalid_argument("make_finite_hmm: empty transition matrix");
    if (emission.size() != n || initial.size() != n)
        throw std::invalid_argument("make_finite_hmm: transition, emission, initial sizes disagree");

    auto check_stochastic = [](const Vec& row, const std::string& what) {
        double s = 0.0;
        for (double p : row) {
            if (p < 0.0) throw std::invalid_argument(what + ": negative probability");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-12)
            throw std::invalid_argument(what + ": probabilities sum to " + std::to_string(s));
    };
    check_stochastic(initial, "make_finite_hmm initial");
    for (std::size_t i = 0; i < n; ++i) {
        if (transition[i].size() != n)
            throw std::invalid_argument("make_finite_hmm: transition matrix not square");
        check_stochastic(transition[i], "make_finite_hmm transition row " + std::to_string(i));
    }
    const std::size_t n_symbols = emission[0].size();
    for (std::size_t i = 0; i < n; ++i) {
        if (emission[i].size() != n_symbols)
            throw std::invalid_argument("make_finite_hmm: ragged emission rows");
        check_stochastic(emission[i], "make_finite_hmm emission row " + std::to_string(i));
        for (double p : emission[i])
            if (p <= 0.0)
                throw std::invalid_argument(
                    "make_finite_hmm: zero emission probability; the observation "
                    "channel must be nondegenerate (every state must assign strictly "
                    "positive probability to every symbol)");
    }

    ModelSpec m;
    m.state_dim = 1;
    m.reference_measure = ReferenceMeasure::counting;
    m.initial_probs = initial;
    m.transition_matrix = transition;
    m.initial_sampler = [initial](RngStream& rng) {
        return State{static_cast<double>(detail::sample_categorical(initial, rng))};
    };
    m.transition_sampler = [transition](const State& x, RngStream& rng) {
        const auto i = static_cast<std::size_t>(x[0]);
        return State{static_cast<double>(detail::sample_categorical(transition[i], rng))};
    };
    m.likelihood = [emission](const State& x, const Obs& y) {
        return emission[static_cast<std::size_t>(x[0])][static_cast<std::size_t>(y[0])];
    };
    m.log_likelihood = [emission](const State& x, const Obs& y) {
        return std::log(emission[static_cast<std::size_t>(x[0])][static_cast<std::size_t>(y[0])]);
    };
    m.observation_sampler = [emission](const State& x, RngStream& rng) {
        const auto i = static_cast<std::size_t>(x[0]);
        return Obs{static_cast<double>(detail::sample_categorical(emission[i], rng))};
    };
    return m;
}

/// Additive-noise observation model Y = h(X) + N(0, Sigma) with a bounded
/// observation function h. The likelihood is taken against the N(0, Sigma)
/// reference measure, which makes it
///
///   upsilon(x, y) = exp(y' S h(x) - h(x)' S h(x) / 2),       S = Sigma^{-1},
///
/// and yields the explicit envelope
///
///   u_+(y) = exp(||y|| ||S|| hmax),
///   u_-(y) = exp(-(||y|| + hmax / 2) ||S|| hmax),
///
/// where hmax bounds sup_x ||h(x)|| (supplied by the caller) and ||S|| is the
/// spectral norm. Signal dynamics are inherited from `base`.
inline ModelSpec make_bounded_obs_model(const ModelSpec& base,
                                        std::function<Obs(const State&)> h,
                                        double h_sup_norm, const Mat& sigma) {
    if (!(h_sup_norm >= 0.0))
        throw std::invalid_argument("make_bounded_obs_model: need a nonnegative bound on ||h||");
    const std::size_t d = sigma.rows;
    const Mat sigma_inv = inverse_spd(sigma); // throws if sigma is not PD
    const Mat chol = cholesky(sigma);
    const double s_norm = spectral_norm_symmetric(sigma_inv);
    const double log_norm_const =
        -0.5 * static_cast<double>(d) * std::log(2.0 * 3.14159265358979323846) -
        0.5 * std::log(determinant_spd(sigma));

    ModelSpec m = base;
    m.reference_measure = ReferenceMeasure::gaussian_weighted;
    m.log_likelihood = [h, sigma_inv](const State& x, const Obs& y) {
        const Obs hx = h(x);
        const Vec shx = mat_vec(sigma_inv, hx);
        return dot(y, shx) - 0.5 * dot(hx, shx);
    };
    m.likelihood = [ll = m.log_likelihood](const State& x, const Obs& y) {
        return std::exp(ll(x, y));
    };
    m.observation_sampler = [h, chol, d](const State& x, RngStream& rng) {
        Vec z(d);
        for (double& zi : z) zi = rng.normal();
        Obs y = h(x);
        const Vec noise = mat_vec(chol, z);
        for (std::size_t i = 0; i < d; ++i) y[i] += noise[i];
        return y;
    };
    m.envelope_upper = [s_norm, h_sup_norm](const Obs& y) {
        return std::exp(norm2(y) * s_norm * h_sup_norm);
    };
    m.envelope_lower = [s_norm, h_sup_norm](const Obs& y) {
        return std::exp(-(norm2(y) + 0.5 * h_sup_norm) * s_norm * h_sup_norm);
    };
    m.reference_density = [sigma_inv, log_norm_const](const Obs& y) {
        return std::exp(log_norm_const - 0.5 * dot(y, mat_vec(sigma_inv, y)));
    };
    return m;
}

} // namespace smc
