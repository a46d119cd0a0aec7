// Empirical tightness diagnostics and observation-structure checkers.
//
// The central long-run health indicator of a particle filter on a
// noncompact state space is the expected Lyapunov mass E pi_k^N(V): if it
// stays bounded in k the particle cloud is not leaking mass to infinity.
// tightness_trace estimates it over independent replications, together with
// the predictor-side values, and fit_update_drift regresses the per-step
// relation filter ~ c1 * predictor + c2.
//
// The two checkers certify, on sampled points, the regularity structures
// that guarantee boundedness: a two-sided likelihood envelope with an
// integrability condition (case I), and an additive-noise observation
// channel with conditioned noise matrix, enveloped noise density, and a
// Lyapunov function equivalent to a power of the observation function
// (case II). They are samplers, not provers: a violation is certified
// exactly with a witness; a pass certifies the sampled points only.
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "smc/errors.hpp"
#include "smc/format.hpp"
#include "smc/linalg.hpp"
#include "smc/model.hpp"
#include "smc/particle.hpp"
#include "smc/rng.hpp"

namespace smc {

// ---------------------------------------------------------------------------
// Tightness trace
// ---------------------------------------------------------------------------

struct TightnessTrace {
    long step = 0;
    double lyapunov_avg = 0.0;  // replication average of pi_k^N(V)
    double predictor_avg = 0.0; // replication average of the predictor-side value
    double running_max = 0.0;   // max of lyapunov_avg over steps <= this one
};

/// Per-step Monte Carlo estimates of the filter and predictor Lyapunov
/// masses, averaged over `n_replications` independent trajectories and
/// filter runs. Replications may run on several threads; the aggregation
/// order is fixed by replication index, so results do not depend on the
/// thread count.
inline std::vector<TightnessTrace> tightness_trace(
    const ModelSpec& model, const LyapunovSpec& lyapunov, std::size_t n_particles,
    std::size_t horizon, std::size_t n_replications, std::uint64_t seed,
    unsigned n_threads = 1) {
    std::vector<Vec> filter_v(n_replications), pred_v(n_replications);

    auto run_replication = [&](std::size_t rep) {
        const Trajectory traj = simulate(model, horizon, derive_key(seed, 2 * rep));
        RngStream rng(derive_key(seed, 2 * rep + 1), 0);
        Vec fv(horizon + 1), pv(horizon + 1);

        // Step 0: raw initial draws are the predictor-side ensemble.
        ParticleEnsemble draws;
        draws.locations.reserve(n_particles);
        draws.weights.assign(n_particles, 1.0 / static_cast<double>(n_particles));
        for (std::size_t i = 0; i < n_particles; ++i)
            draws.locations.push_back(model.initial_sampler(rng));
        pv[0] = integrate(draws, lyapunov.v);
        ParticleEnsemble ens = update(draws, traj.observations[0], model, 0);
        fv[0] = integrate(ens, lyapunov.v);

        for (std::size_t k = 1; k <= horizon; ++k) {
            const BootstrapStep s =
                bootstrap_step(ens, traj.observations[k], model, rng, static_cast<long>(k));
            pv[k] = integrate(s.predictor, lyapunov.v);
            fv[k] = integrate(s.filtered, lyapunov.v);
            ens = s.filtered;
        }
        filter_v[rep] = std::move(fv);
        pred_v[rep] = std::move(pv);
    };

    if (n_threads <= 1) {
        for (std::size_t rep = 0; rep < n_replications; ++rep) run_replication(rep);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < n_threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t rep = next.fetch_add(1); rep < n_replications;
                     rep = next.fetch_add(1))
                    run_replication(rep);
            });
        for (auto& th : pool) th.join();
    }

    std::vector<TightnessTrace> trace(horizon + 1);
    double running = 0.0;
    for (std::size_t k = 0; k <= horizon; ++k) {
        double f = 0.0, p = 0.0;
        for (std::size_t rep = 0; rep < n_replications; ++rep) {
            f += filter_v[rep][k];
            p += pred_v[rep][k];
        }
        f /= static_cast<double>(n_replications);
        p /= static_cast<double>(n_replications);
        running = std::max(running, f);
        trace[k] = TightnessTrace{static_cast<long>(k), f, p, running};
    }
    return trace;
}

/// Least-squares fit of lyapunov_avg ~ c1 * predictor_avg + c2 over the
/// trace. The fitted constants quantify how much one likelihood update can
/// expand the Lyapunov mass.
inline std::pair<double, double> fit_update_drift(const std::vector<TightnessTrace>& trace) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(trace.size());
    for (const auto& t : trace) {
        sx += t.predictor_avg;
        sy += t.lyapunov_avg;
        sxx += t.predictor_avg * t.predictor_avg;
        sxy += t.predictor_avg * t.lyapunov_avg;
    }
    const double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-12) return {0.0, sy / n}; // constant predictor
    const double c1 = (n * sxy - sx * sy) / denom;
    return {c1, (sy - c1 * sx) / n};
}

// ---------------------------------------------------------------------------
// Case I: two-sided likelihood envelope
// ---------------------------------------------------------------------------

struct QuadratureSpec {
    double initial_halfwidth = 32.0; // first integration window [-L, L]
    int max_doublings = 6;
    double rel_tol = 1e-9;
    double divergence_growth = 0.01; // >1% growth per doubling flags divergence
    int n_envelope_samples = 10000;
};

struct CaseIReport {
    std::function<double(const Obs&)> u_plus, u_minus;
    double integral_value = 0.0; // integral of u_+^2 / u_- against the reference
    bool finite = false;
};

namespace detail {

inline double adaptive_simpson(const std::function<double(double)>& f, double a,
                               double b, double fa, double fm, double fb, double whole,
                               double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    // Non-finite samples poison the convergence test; report divergence.
    if (!std::isfinite(flm) || !std::isfinite(frm))
        return std::numeric_limits<double>::infinity();
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

/// Adaptive Simpson to a relative tolerance (with a tiny absolute floor so
/// that identically-zero stretches terminate immediately). Non-finite
/// function values make the result +infinity rather than an endless
/// refinement.
inline double integrate_interval(const std::function<double(double)>& f, double a,
                                 double b, double rel_tol) {
    const double m = 0.5 * (a + b);
    const double fa = f(a), fm = f(m), fb = f(b);
    if (!std::isfinite(fa) || !std::isfinite(fm) || !std::isfinite(fb))
        return std::numeric_limits<double>::infinity();
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    const double tol = std::max(1e-15, rel_tol * std::abs(whole));
    return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 30);
}

} // namespace detail

/// Verify the declared envelope u_-(y) <= upsilon(x, y) <= u_+(y) on sampled
/// pairs and estimate the integral of u_+^2 / u_- against the observation
/// reference measure over doubling windows. The integral is declared
/// divergent when it keeps growing by more than `divergence_growth` across
/// three consecutive doublings beyond the initial window.
///
/// Requires a model with declared envelopes, a reference density, and a
/// one-dimensional observation space.
inline CaseIReport check_case_i(const ModelSpec& model, const QuadratureSpec& quad,
                                std::uint64_t seed) {
    if (!model.envelope_lower || !model.envelope_upper)
        throw std::invalid_argument("check_case_i: model declares no likelihood envelope");
    if (!model.reference_density)
        throw std::invalid_argument("check_case_i: model has no reference density");

    // Envelope verification on pairs (x, y): x walks the signal chain, y is
    // an observation emitted from an earlier point of the same chain, which
    // decorrelates the pair and exercises the tails.
    RngStream rng(seed, 0);
    State x = model.initial_sampler(rng);
    State x_prev = x;
    for (int i = 0; i < quad.n_envelope_samples; ++i) {
        const Obs y = model.observation_sampler(x_prev, rng);
        const double like = model.likelihood(x, y);
        const double lo = model.envelope_lower(y), hi = model.envelope_upper(y);
        if (!(like >= lo * (1.0 - 1e-12) && like <= hi * (1.0 + 1e-12))) {
            std::ostringstream w;
            w << "x=" << x[0] << " y=" << y[0] << " likelihood=" << like
              << " bounds=[" << lo << ", " << hi << "]";
            throw EnvelopeViolation(w.str());
        }
        x_prev = x;
        x = model.transition_sampler(x, rng);
    }

    const auto integrand = [&](double y) {
        const Obs yy{y};
        const double phi = model.reference_density(yy);
        // No representable reference mass here; the envelopes may have
        // overflowed long after phi vanished, so skip them entirely.
        if (phi <= 0.0) return 0.0;
        const double um = model.envelope_lower(yy), up = model.envelope_upper(yy);
        return up * up / um * phi; // may reach infinity; the integrator reports it
    };

    CaseIReport report;
    report.u_plus = model.envelope_upper;
    report.u_minus = model.envelope_lower;

    double l = quad.initial_halfwidth;
    double value = detail::integrate_interval(integrand, -l, l, quad.rel_tol);
    int growing_streak = 0;
    bool diverged = !std::isfinite(value);
    for (int d = 0; d < quad.max_doublings && !diverged; ++d) {
        const double wider =
            value + detail::integrate_interval(integrand, -2.0 * l, -l, quad.rel_tol) +
            detail::integrate_interval(integrand, l, 2.0 * l, quad.rel_tol);
        growing_streak = (wider > value * (1.0 + quad.divergence_growth)) ? growing_streak + 1 : 0;
        value = wider;
        l *= 2.0;
        if (!std::isfinite(value) || growing_streak >= 3) diverged = true;
    }
    report.integral_value = value;
    report.finite = !diverged;
    return report;
}

// ---------------------------------------------------------------------------
// Case II: additive noise with strongly unbounded observation function
// ---------------------------------------------------------------------------

/// Declaration bundle for an observation channel Y = h(X) + sigma(X) xi:
/// the structural functions, the noise density with its radial envelope,
/// and the declared constants to verify against.
struct CaseIiModel {
    int obs_dim = 1;
    std::function<Obs(const State&)> h;
    std::function<Mat(const State&)> sigma;
    std::function<double(const Vec&)> noise_density; // density of xi
    std::function<double(double)> envelope;          // nonincreasing radial envelope
    std::function<double(const Vec&)> norm;          // the norm paired with the envelope
    std::function<Vec(RngStream&)> noise_sampler;
    std::function<State(RngStream&)> state_sampler; // where to probe x-dependent items

    double epsilon = 0.0; // conditioning of sigma(x)
    double a1 = 0.0, a2 = 0.0;
    double p = 0.0; // moment order
    double b1 = 0.0, b2 = 0.0, b3 = 0.0, b4 = 0.0;
};

struct CaseIIReport {
    double epsilon = 0.0;
    double a1 = 0.0, a2 = 0.0;
    double p = 0.0;
    double b1 = 0.0, b2 = 0.0, b3 = 0.0, b4 = 0.0;
    double xi_p_moment = 0.0; // Monte Carlo estimate of E ||xi||^p
    double kappa = 0.0;       // norm-equivalence constant measured by sampling
    bool sigma_ok = false, density_positive = false, envelope_ok = false,
         sandwich_ok = false, moment_finite = false;
};

/// Verify the declared case-II structure on sampled points. Throws
/// ItemViolation naming the failing numbered item with a witness; returns
/// the aggregated report when every sampled point passes.
inline CaseIIReport check_case_ii(const CaseIiModel& decl, const LyapunovSpec& lyapunov,
                                  std::uint64_t seed, int n_samples = 4000) {
    if (!(decl.epsilon > 0.0))
        throw std::invalid_argument("check_case_ii: epsilon must be positive");
    if (!(decl.a1 <= decl.a2) || !(decl.a1 > 0.0))
        throw std::invalid_argument("check_case_ii: need 0 < a1 <= a2");
    if (!(decl.b1 > 0.0) || !(decl.b3 > 0.0) || !(decl.p > 0.0))
        throw std::invalid_argument("check_case_ii: need b1, b3, p > 0");

    RngStream rng(seed, 0);
    CaseIIReport rep;
    rep.epsilon = decl.epsilon;
    rep.a1 = decl.a1;
    rep.a2 = decl.a2;
    rep.p = decl.p;
    rep.b1 = decl.b1;
    rep.b2 = decl.b2;
    rep.b3 = decl.b3;
    rep.b4 = decl.b4;

    // Item 2: sigma(x) has singular values in [epsilon, 1/epsilon].
    for (int i = 0; i < n_samples; ++i) {
        const State x = decl.state_sampler(rng);
        const Vec sv = singular_values(decl.sigma(x));
        if (sv.front() < decl.epsilon * (1.0 - 1e-9) ||
            sv.back() > (1.0 / decl.epsilon) * (1.0 + 1e-9)) {
            std::ostringstream w;
            w << "sigma(x) singular values [" << sv.front() << ", " << sv.back()
              << "] outside [" << decl.epsilon << ", " << 1.0 / decl.epsilon
              << "] at x=" << x[0];
            throw ItemViolation(2, w.str());
        }
    }
    rep.sigma_ok = true;

    // Items 3 and 4: density strictly positive and pinched by the radial
    // envelope, a1 q(|z|) <= q_xi(z) <= a2 q(|z|).
    double kappa = 1.0;
    for (int i = 0; i < n_samples; ++i) {
        Vec z(decl.obs_dim);
        for (double& zi : z) zi = 3.0 * rng.normal(); // probe beyond typical noise range
        const double qz = decl.noise_density(z);
        if (!(qz > 0.0) || !std::isfinite(qz)) {
            std::ostringstream w;
            w << "noise density " << qz << " at |z|=" << norm2(z);
            throw ItemViolation(3, w.str());
        }
        const double env = decl.envelope(decl.norm(z));
        if (qz < decl.a1 * env * (1.0 - 1e-12) || qz > decl.a2 * env * (1.0 + 1e-12)) {
            std::ostringstream w;
            w << "density " << qz << " outside [" << decl.a1 * env << ", "
              << decl.a2 * env << "] at |z|=" << decl.norm(z);
            throw ItemViolation(4, w.str());
        }
        const double e2 = norm2(z);
        if (e2 > 0.0) {
            const double ratio = decl.norm(z) / e2;
            kappa = std::max(kappa, std::max(ratio, 1.0 / ratio));
        }
    }
    rep.density_positive = true;
    rep.envelope_ok = true;
    rep.kappa = kappa;

    // Item 5: V is sandwiched between affine functions of ||h||^p, and the
    // noise has a finite p-th moment.
    for (int i = 0; i < n_samples; ++i) {
        const State x = decl.state_sampler(rng);
        const double hp = std::pow(norm2(decl.h(x)), decl.p);
        const double v = lyapunov.v(x);
        const double lo = decl.b1 * hp + decl.b2, hi = decl.b3 * hp + decl.b4;
        const double slack = 1e-9 * std::max(1.0, std::abs(v));
        if (v < lo - slack || v > hi + slack) {
            std::ostringstream w;
            w << "V(x)=" << v << " outside [" << lo << ", " << hi << "] at x=" << x[0];
            throw ItemViolation(5, w.str());
        }
    }
    double moment = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        const Vec xi = decl.noise_sampler(rng);
        moment += std::pow(norm2(xi), decl.p);
    }
    rep.xi_p_moment = moment / n_samples;
    rep.moment_finite = std::isfinite(rep.xi_p_moment);
    rep.sandwich_ok = true;
    return rep;
}

/// Sandwich constants for V relative to ||h||^p when V is equivalent to
/// ||x||^p (constants b1'..b4') and h = h0 + h1 with h0 bi-Lipschitz
/// (constants l1 <= l2) and h1 bounded; alpha = ||h0(0)|| + sup ||h1||.
struct BiLipschitzSandwich {
    double b1 = 0.0, b2 = 0.0, b3 = 0.0, b4 = 0.0;
};

inline BiLipschitzSandwich sandwich_from_state_growth(double b1p, double b2p, double b3p,
                                                      double b4p, double p, double l1,
                                                      double l2, double alpha) {
    const double cp = std::max(1.0, std::pow(2.0, p - 1.0));
    BiLipschitzSandwich s;
    s.b1 = b1p / (cp * std::pow(l2, p));
    s.b2 = b2p - b1p * std::pow(alpha, p) / std::pow(l2, p);
    s.b3 = cp * b3p / std::pow(l1, p);
    s.b4 = cp * b3p * std::pow(alpha, p) / std::pow(l1, p) + b4p;
    return s;
}

// ---------------------------------------------------------------------------
// Testable utility inequalities
// ---------------------------------------------------------------------------

/// Covariance of two nondecreasing functions under an atomic measure;
/// always nonnegative when both really are nondecreasing on the support.
/// Returns the covariance; throws if it dips below -1e-12, which signals a
/// monotonicity bug in the caller's functions.
inline double chebyshev_covariance_check(const std::function<double(double)>& psi,
                                         const std::function<double(double)>& phi,
                                         const ParticleEnsemble& nu) {
    double e_psi = 0.0, e_phi = 0.0, e_both = 0.0;
    for (std::size_t i = 0; i < nu.n_particles(); ++i) {
        const double x = nu.locations[i][0], w = nu.weights[i];
        e_psi += w * psi(x);
        e_phi += w * phi(x);
        e_both += w * psi(x) * phi(x);
    }
    const double cov = e_both - e_psi * e_phi;
    if (cov < -1e-12)
        throw std::logic_error("chebyshev_covariance_check: covariance " +
                               format_double(cov) + " below -1e-12; inputs not monotone?");
    return cov;
}

/// Verify the discrete recursion bound: if alpha_k <= A + sum_{l<=k} B_l
/// alpha_{l-1} for every k (checked; HypothesisNotMet otherwise), then
/// alpha_k <= A exp(sum_{l<=k} B_l) must hold; returns whether it does.
/// alpha has K+1 entries (k = 0..K) and B has K entries (B[l-1] = B_l).
inline bool gronwall_bound(double a, const Vec& b, const Vec& alpha) {
    if (alpha.empty() || b.size() + 1 != alpha.size())
        throw std::invalid_argument("gronwall_bound: need |alpha| = |B| + 1");
    double weighted = 0.0; // sum of B_l alpha_{l-1}
    for (std::size_t k = 0; k < alpha.size(); ++k) {
        if (k > 0) weighted += b[k - 1] * alpha[k - 1];
        const double rhs = a + weighted;
        if (alpha[k] > rhs * (1.0 + 1e-12) + 1e-12)
            throw HypothesisNotMet("gronwall_bound: alpha_" + std::to_string(k) +
                                   " = " + format_double(alpha[k]) +
                                   " exceeds hypothesis bound " + format_double(rhs));
    }
    double b_sum = 0.0;
    for (std::size_t k = 0; k < alpha.size(); ++k) {
        if (k > 0) b_sum += b[k - 1];
        const double bound = a * std::exp(b_sum);
        if (alpha[k] > bound * (1.0 + 1e-12) + 1e-12) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Flat key-value serialization
// ---------------------------------------------------------------------------

inline std::string to_key_values(const CaseIReport& r) {
    std::string out;
    out += "integral_value=" + format_double(r.integral_value) + "\n";
    out += "finite=" + std::string(r.finite ? "1" : "0") + "\n";
    return out;
}

inline std::string to_key_values(const CaseIIReport& r) {
    std::string out;
    out += "epsilon=" + format_double(r.epsilon) + "\n";
    out += "a1=" + format_double(r.a1) + "\n";
    out += "a2=" + format_double(r.a2) + "\n";
    out += "p=" + format_double(r.p) + "\n";
    out += "b1=" + format_double(r.b1) + "\n";
    out += "b2=" + format_double(r.b2) + "\n";
    out += "b3=" + format_double(r.b3) + "\n";
    out += "b4=" + format_double(r.b4) + "\n";
    out += "xi_p_moment=" + format_double(r.xi_p_moment) + "\n";
    out += "kappa=" + format_double(r.kappa) + "\n";
    out += "sigma_ok=" + std::string(r.sigma_ok ? "1" : "0") + "\n";
    out += "density_positive=" + std::string(r.density_positive ? "1" : "0") + "\n";
    out += "envelope_ok=" + std::string(r.envelope_ok ? "1" : "0") + "\n";
    out += "sandwich_ok=" + std::string(r.sandwich_ok ? "1" : "0") + "\n";
    out += "moment_finite=" + std::string(r.moment_finite ? "1" : "0") + "\n";
    return out;
}

inline std::string to_key_values(const std::vector<TightnessTrace>& trace) {
    std::string out;
    if (trace.empty()) return out;
    const auto [c1, c2] = fit_update_drift(trace);
    out += "horizon=" + format_u64(trace.size() - 1) + "\n";
    out += "running_max=" + format_double(trace.back().running_max) + "\n";
    out += "final_lyapunov_avg=" + format_double(trace.back().lyapunov_avg) + "\n";
    out += "update_drift_c1=" + format_double(c1) + "\n";
    out += "update_drift_c2=" + format_double(c2) + "\n";
    return out;
}

} // namespace smc
