// Weighted particle ensembles and the approximate filters built from them:
// the bootstrap filter (resample, propagate, reweight) and the naive filter
// (independent signal paths carrying cumulative importance weights, never
// resampled).
//
// Ensembles are immutable values; every operation returns a new ensemble.
// Weights are kept in linear scale and normalized after every operation;
// the naive filter keeps its path weights in log scale because they are
// products over the whole horizon.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include "smc/errors.hpp"
#include "smc/exact.hpp"
#include "smc/model.hpp"
#include "smc/rng.hpp"

namespace smc {

struct ParticleEnsemble {
    std::vector<State> locations;
    Vec weights;

    std::size_t n_particles() const { return locations.size(); }
};

/// Sum(weights) within 1e-10 of one, all weights nonnegative.
inline bool ensemble_valid(const ParticleEnsemble& e) {
    if (e.locations.size() != e.weights.size() || e.locations.empty()) return false;
    double s = 0.0;
    for (double w : e.weights) {
        if (w < 0.0 || !std::isfinite(w)) return false;
        s += w;
    }
    return std::abs(s - 1.0) <= 1e-10;
}

inline double integrate(const ParticleEnsemble& e,
                        const std::function<double(const State&)>& f) {
    double s = 0.0;
    for (std::size_t i = 0; i < e.n_particles(); ++i) s += e.weights[i] * f(e.locations[i]);
    return s;
}

/// Weighted mean of one state coordinate (the conditional-mean estimate).
inline double mean_coordinate(const ParticleEnsemble& e, std::size_t dim = 0) {
    double s = 0.0;
    for (std::size_t i = 0; i < e.n_particles(); ++i) s += e.weights[i] * e.locations[i][dim];
    return s;
}

struct EssReport {
    long step = 0;
    double ess = 0.0; // 1 / sum(w_i^2), in [1, N]
    double max_weight = 0.0;
};

inline EssReport make_ess_report(long step, const ParticleEnsemble& e) {
    double sq = 0.0, mx = 0.0;
    for (double w : e.weights) {
        sq += w * w;
        mx = std::max(mx, w);
    }
    return EssReport{step, 1.0 / sq, mx};
}

// ---------------------------------------------------------------------------
// Bootstrap filter operations
// ---------------------------------------------------------------------------

/// Bayes reweighting: locations unchanged, w'_i proportional to
/// w_i * upsilon(x_i, y). Throws UnderflowError (tagged with `step`) if the
/// total unnormalized weight falls below 1e-300.
inline ParticleEnsemble update(const ParticleEnsemble& e, const Obs& y,
                               const ModelSpec& model, long step = -1) {
    ParticleEnsemble out;
    out.locations = e.locations;
    out.weights.resize(e.weights.size());
    double total = 0.0;
    for (std::size_t i = 0; i < e.n_particles(); ++i) {
        out.weights[i] = e.weights[i] * model.likelihood(e.locations[i], y);
        total += out.weights[i];
    }
    if (!(total >= 1e-300)) throw UnderflowError(step);
    for (double& w : out.weights) w /= total;
    return out;
}

/// Multinomial resampling: `n_out` independent draws from the ensemble,
/// realized by inverse-CDF lookup of one sorted uniform batch. Output
/// weights are uniform. Deterministic given the stream state.
inline ParticleEnsemble resample(const ParticleEnsemble& e, std::size_t n_out,
                                 RngStream& rng) {
    Vec u(n_out);
    for (double& ui : u) ui = rng.uniform();
    std::sort(u.begin(), u.end());

    ParticleEnsemble out;
    out.locations.reserve(n_out);
    out.weights.assign(n_out, 1.0 / static_cast<double>(n_out));
    double cum = e.weights[0];
    std::size_t j = 0;
    for (std::size_t i = 0; i < n_out; ++i) {
        while (u[i] > cum && j + 1 < e.n_particles()) cum += e.weights[++j];
        out.locations.push_back(e.locations[j]);
    }
    return out;
}

/// Resampling at the ensemble's own size (the in-recursion case).
inline ParticleEnsemble resample(const ParticleEnsemble& e, RngStream& rng) {
    return resample(e, e.n_particles(), rng);
}

/// Advance every location independently through the signal transition.
/// Weights are carried over (callers normally pass a freshly resampled,
/// uniformly weighted ensemble). Per-particle noise comes from substreams
/// keyed by a nonce drawn from `rng` and the particle index, so the result
/// does not depend on any internal parallelization order.
inline ParticleEnsemble propagate(const ParticleEnsemble& e, const ModelSpec& model,
                                  RngStream& rng) {
    const std::uint64_t nonce = rng.next_u64();
    ParticleEnsemble out;
    out.weights = e.weights;
    out.locations.resize(e.n_particles());
    for (std::size_t i = 0; i < e.n_particles(); ++i) {
        RngStream sub = RngStream::from_key(derive_key(nonce, i));
        out.locations[i] = model.transition_sampler(e.locations[i], sub);
    }
    return out;
}

struct BootstrapStep {
    ParticleEnsemble predictor; // post-propagation, uniform weights
    ParticleEnsemble filtered;  // predictor reweighted by y
};

/// One step of the bootstrap recursion: resample the previous filter,
/// propagate through the signal kernel, reweight by the new observation.
/// The returned predictor is the one-step-ahead approximation; the filtered
/// ensemble carries weights upsilon(x_i, y) / sum_l upsilon(x_l, y).
inline BootstrapStep bootstrap_step(const ParticleEnsemble& e, const Obs& y,
                                    const ModelSpec& model, RngStream& rng,
                                    long step = -1) {
    BootstrapStep s;
    s.predictor = propagate(resample(e, rng), model, rng);
    s.filtered = update(s.predictor, y, model, step);
    return s;
}

/// Filter at step 0: i.i.d. draws from the initial law reweighted by the
/// first observation. No resampling is applied at this step.
inline ParticleEnsemble bootstrap_init(const ModelSpec& model, std::size_t n_particles,
                                       const Obs& y0, RngStream& rng) {
    ParticleEnsemble draws;
    draws.locations.reserve(n_particles);
    draws.weights.assign(n_particles, 1.0 / static_cast<double>(n_particles));
    for (std::size_t i = 0; i < n_particles; ++i)
        draws.locations.push_back(model.initial_sampler(rng));
    return update(draws, y0, model, 0);
}

/// Inverse of the reweighting step: recovers the predictor ensemble from a
/// filtered ensemble and the observation that produced it,
/// w_i proportional to w_i^filtered / upsilon(x_i, y_used).
inline ParticleEnsemble predictor_from_filter(const ParticleEnsemble& e, const Obs& y_used,
                                              const ModelSpec& model) {
    ParticleEnsemble out;
    out.locations = e.locations;
    out.weights.resize(e.weights.size());
    double total = 0.0;
    for (std::size_t i = 0; i < e.n_particles(); ++i) {
        out.weights[i] = e.weights[i] / model.likelihood(e.locations[i], y_used);
        total += out.weights[i];
    }
    for (double& w : out.weights) w /= total;
    return out;
}

// ---------------------------------------------------------------------------
// Naive filter
// ---------------------------------------------------------------------------

/// N independent signal paths (only the current endpoint is retained) with
/// cumulative log importance weights log upsilon(X_0, y_0) + ... +
/// log upsilon(X_k, y_k). Never resampled.
struct NaiveFilterState {
    std::vector<State> paths;
    Vec log_cumulative_weights;

    std::size_t n_particles() const { return paths.size(); }
};

/// Normalized weights derived on demand (max-subtracted softmax).
inline Vec naive_weights(const NaiveFilterState& s) {
    const double mx =
        *std::max_element(s.log_cumulative_weights.begin(), s.log_cumulative_weights.end());
    Vec w(s.log_cumulative_weights.size());
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = std::exp(s.log_cumulative_weights[i] - mx);
        total += w[i];
    }
    for (double& wi : w) wi /= total;
    return w;
}

inline ParticleEnsemble naive_ensemble(const NaiveFilterState& s) {
    return ParticleEnsemble{s.paths, naive_weights(s)};
}

/// Paths drawn i.i.d. from the initial law, weighted by the first
/// observation. Draw-for-draw identical to bootstrap_init on the same
/// stream, so both filters coincide at step 0.
inline NaiveFilterState naive_init(const ModelSpec& model, std::size_t n_particles,
                                   const Obs& y0, RngStream& rng) {
    NaiveFilterState s;
    s.paths.reserve(n_particles);
    for (std::size_t i = 0; i < n_particles; ++i) s.paths.push_back(model.initial_sampler(rng));
    s.log_cumulative_weights.resize(n_particles);
    for (std::size_t i = 0; i < n_particles; ++i)
        s.log_cumulative_weights[i] = model.log_likelihood(s.paths[i], y0);
    return s;
}

/// Advance every path one transition and accumulate the new observation's
/// log likelihood. No resampling, ever.
inline NaiveFilterState naive_step(const NaiveFilterState& s, const Obs& y,
                                   const ModelSpec& model, RngStream& rng) {
    const std::uint64_t nonce = rng.next_u64();
    NaiveFilterState out;
    out.paths.resize(s.n_particles());
    out.log_cumulative_weights.resize(s.n_particles());
    for (std::size_t i = 0; i < s.n_particles(); ++i) {
        RngStream sub = RngStream::from_key(derive_key(nonce, i));
        out.paths[i] = model.transition_sampler(s.paths[i], sub);
        out.log_cumulative_weights[i] =
            s.log_cumulative_weights[i] + model.log_likelihood(out.paths[i], y);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Conversions
// ---------------------------------------------------------------------------

/// Aggregate ensemble weight per integer state label; for ensembles living
/// on a finite state space.
inline DiscreteBelief ensemble_to_discrete(const ParticleEnsemble& e,
                                           std::size_t n_states) {
    DiscreteBelief b;
    b.probs.assign(n_states, 0.0);
    for (std::size_t i = 0; i < e.n_particles(); ++i) {
        const auto label = static_cast<std::size_t>(std::llround(e.locations[i][0]));
        b.probs[std::min(label, n_states - 1)] += e.weights[i];
    }
    return b;
}

} // namespace smc
