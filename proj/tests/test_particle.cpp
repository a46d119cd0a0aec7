#include "doctest.h"

#include <cmath>

#include "smc/exact.hpp"
#include "smc/metrics.hpp"
#include "smc/model.hpp"
#include "smc/particle.hpp"
#include "smc/rng.hpp"

using namespace smc;

namespace {

const ModelSpec& two_state_hmm() {
    static const ModelSpec m = make_finite_hmm({{0.9, 0.1}, {0.1, 0.9}},
                                               {{0.8, 0.2}, {0.2, 0.8}}, {0.5, 0.5});
    return m;
}

ParticleEnsemble three_atom() {
    return ParticleEnsemble{{State{0.0}, State{1.0}, State{3.0}}, Vec{0.5, 0.3, 0.2}};
}

} // namespace

TEST_CASE("update: constant likelihood is the identity on weights") {
    // uniform emissions make the likelihood constant in x
    const ModelSpec m = make_finite_hmm({{0.9, 0.1}, {0.1, 0.9}}, {{0.5, 0.5}, {0.5, 0.5}},
                                        {0.5, 0.5});
    const ParticleEnsemble e{{State{0.0}, State{1.0}, State{1.0}}, Vec{0.2, 0.5, 0.3}};
    const ParticleEnsemble out = update(e, Obs{1.0}, m);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out.weights[i] == doctest::Approx(e.weights[i]).epsilon(1e-14));
        CHECK(out.locations[i] == e.locations[i]);
    }
}

TEST_CASE("update: two-atom Gaussian reweighting against the hand values") {
    const ModelSpec m = make_linear_gaussian(0.9, 1.0, 1.0, 0.0);
    const ParticleEnsemble e{{State{0.0}, State{1.0}}, Vec{0.5, 0.5}};
    const ParticleEnsemble out = update(e, Obs{0.0}, m);
    const double w0 = 1.0 / (1.0 + std::exp(-0.5));
    CHECK(out.weights[0] == doctest::Approx(w0).epsilon(1e-12));
    CHECK(out.weights[1] == doctest::Approx(1.0 - w0).epsilon(1e-12));
    // five-place values
    CHECK(out.weights[0] == doctest::Approx(0.62246).epsilon(1e-4));
    CHECK(out.weights[1] == doctest::Approx(0.37754).epsilon(1e-4));
    CHECK(ensemble_valid(out));
}

TEST_CASE("update: single atom renormalizes to one whatever the observation") {
    const ModelSpec m = make_linear_gaussian(0.9, 1.0, 1.0, 0.0);
    const ParticleEnsemble e{{State{2.0}}, Vec{1.0}};
    for (double y : {-11.0, 0.0, 7.5})
        CHECK(update(e, Obs{y}, m).weights[0] == 1.0);
}

TEST_CASE("update: underflow carries the step index") {
    ModelSpec m = make_linear_gaussian(0.9, 1.0, 1.0, 0.0);
    m.likelihood = [](const State&, const Obs&) { return 1e-320; };
    const ParticleEnsemble e{{State{0.0}}, Vec{1.0}};
    try {
        update(e, Obs{0.0}, m, 17);
        FAIL("expected UnderflowError");
    } catch (const UnderflowError& err) {
        CHECK(err.step == 17);
    }
}

TEST_CASE("resample: point mass is a fixed point") {
    const ParticleEnsemble e{{State{4.2}}, Vec{1.0}};
    RngStream rng(21, 0);
    ParticleEnsemble big;
    big.locations.assign(64, State{4.2});
    big.weights.assign(64, 1.0 / 64.0);
    const ParticleEnsemble out = resample(big, rng);
    CHECK(out.n_particles() == 64);
    for (std::size_t i = 0; i < out.n_particles(); ++i) {
        CHECK(out.locations[i][0] == 4.2);
        CHECK(out.weights[i] == doctest::Approx(1.0 / 64.0));
    }
    (void)e;
}

TEST_CASE("resample: barycenter and variance identities on the fixed ensemble") {
    const ParticleEnsemble rho = three_atom();
    const double mean_f = 0.9;           // 0.5*0 + 0.3*1 + 0.2*3
    const double var_f = 2.1 - 0.81;     // rho(f^2) - rho(f)^2 = 1.29
    const std::size_t n = 100;
    const int reps = 100000;

    RngStream rng(22, 0);
    double sum = 0.0, sum2 = 0.0;
    for (int r = 0; r < reps; ++r) {
        const ParticleEnsemble out = resample(rho, n, rng);
        CHECK(out.n_particles() == n);
        const double v = mean_coordinate(out);
        sum += v;
        sum2 += v * v;
    }
    const double emp_mean = sum / reps;
    const double emp_var = sum2 / reps - emp_mean * emp_mean;

    const double se_mean = std::sqrt(var_f / double(n)) / std::sqrt(double(reps));
    CHECK(std::abs(emp_mean - mean_f) < 3.0 * se_mean);
    CHECK(std::abs(emp_var - var_f / double(n)) < 0.05 * var_f / double(n));
}

TEST_CASE("propagate: identity transition leaves locations alone") {
    const ModelSpec chain = make_finite_hmm({{1.0, 0.0}, {0.0, 1.0}},
                                            {{0.8, 0.2}, {0.2, 0.8}}, {0.5, 0.5});
    ParticleEnsemble e{{State{0.0}, State{1.0}, State{1.0}}, Vec{0.25, 0.5, 0.25}};
    RngStream rng(23, 0);
    const ParticleEnsemble out = propagate(e, chain, rng);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out.locations[i][0] == e.locations[i][0]);
        CHECK(out.weights[i] == e.weights[i]);
    }
}

TEST_CASE("propagate: one-step spread matches the transition noise") {
    const ModelSpec m = make_linear_gaussian(0.9, 1.0, 1.0, 0.0);
    const std::size_t n = 100000;
    ParticleEnsemble e;
    e.locations.assign(n, State{0.0});
    e.weights.assign(n, 1.0 / double(n));
    RngStream rng(24, 0);
    const ParticleEnsemble out = propagate(e, m, rng);
    double s = 0.0, s2 = 0.0;
    for (const State& x : out.locations) {
        s += x[0];
        s2 += x[0] * x[0];
    }
    const double mean = s / n, var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 3.0 / std::sqrt(double(n)));
    CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / double(n)));
}

TEST_CASE("propagate: identical streams give identical output") {
    const ModelSpec m = make_linear_gaussian(0.9, 1.0, 1.0, 0.0);
    ParticleEnsemble e;
    e.locations = {State{0.0}, State{1.0}, State{-2.0}};
    e.weights.assign(3, 1.0 / 3.0);
    RngStream r1(77, 9), r2(77, 9);
    const ParticleEnsemble o1 = propagate(e, m, r1);
    const ParticleEnsemble o2 = propagate(e, m, r2);
    for (std::size_t i = 0; i < 3; ++i) CHECK(o1.locations[i][0] == o2.locations[i][0]);
}

TEST_CASE("bootstrap step: uninformative likelihood keeps the predictor") {
    const ModelSpec m = make_finite_hmm({{0.9, 0.1}, {0.1, 0.9}}, {{0.5, 0.5}, {0.5, 0.5}},
                                        {0.5, 0.5});
    ParticleEnsemble e{{State{0.0}, State{1.0}}, Vec{0.3, 0.7}};
    RngStream rng(25, 0);
    const BootstrapStep s = bootstrap_step(e, Obs{0.0}, m, rng);
    CHECK(s.filtered.n_particles() == s.predictor.n_particles());
    for (std::size_t i = 0; i < s.filtered.n_particles(); ++i) {
        CHECK(s.filtered.locations[i][0] == s.predictor.locations[i][0]);
        CHECK(s.filtered.weights[i] == doctest::Approx(s.predictor.weights[i]).epsilon(1e-12));
    }
}

TEST_CASE("bootstrap step: one step from the exact prior matches the forward oracle") {
    const ModelSpec& m = two_state_hmm();
    const DiscreteBelief prior{Vec{0.5, 0.5}};
    const std::size_t n = 100000;

    // spread the exact prior over n particles
    ParticleEnsemble e;
    e.locations.reserve(n);
    e.weights.assign(n, 1.0 / double(n));
    for (std::size_t i = 0; i < n; ++i)
        e.locations.push_back(State{i < n / 2 ? 0.0 : 1.0});

    RngStream rng(26, 0);
    const BootstrapStep s = bootstrap_step(e, Obs{0.0}, m, rng);
    const DiscreteBelief approx = ensemble_to_discrete(s.filtered, 2);
    const DiscreteBelief exact = forward_step(prior, Obs{0.0}, m);
    CHECK(tv_distance(approx, exact) <= 0.01);
}

TEST_CASE("bootstrap filter tracks the forward oracle over the first ten steps") {
    const ModelSpec& m = two_state_hmm();
    const std::size_t n = 100000;
    double tv_sum = 0.0;
    long count = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Trajectory traj = simulate(m, 10, derive_key(9100, seed));
        RngStream rng(derive_key(9200, seed), 0);
        DiscreteBelief exact = forward_init(m, traj.observations[0]);
        ParticleEnsemble ens = bootstrap_init(m, n, traj.observations[0], rng);
        for (std::size_t k = 1; k <= 10; ++k) {
            exact = forward_step(exact, traj.observations[k], m);
            ens = bootstrap_step(ens, traj.observations[k], m, rng, long(k)).filtered;
            tv_sum += tv_distance(ensemble_to_discrete(ens, 2), exact);
            ++count;
        }
    }
    CHECK(tv_sum / double(count) <= 0.02);
}

TEST_CASE("bootstrap with one particle collapses but stays a valid measure") {
    const ModelSpec m = make_linear_gaussian(0.9, 1.0, 1.0, 0.0);
    RngStream rng(27, 0);
    ParticleEnsemble e = bootstrap_init(m, 1, Obs{0.4}, rng);
    CHECK(e.n_particles() == 1);
    CHECK(e.weights[0] == 1.0);
    GaussianBelief kal = kalman_update(GaussianBelief::scalar(0.0, 0.0), 0.4, 1.0);
    for (int k = 1; k <= 10; ++k) {
        e = bootstrap_step(e, Obs{0.1 * k}, m, rng).filtered;
        kal = kalman_step(kal, 0.1 * k, 0.9, 1.0, 1.0);
        CHECK(e.weights[0] == 1.0);
    }
    // the metric between any two probability measures stays within its bound
    ParticleEnsemble kal_atoms{{State{kal.mean1()}}, Vec{1.0}};
    CHECK(bl_distance(e, kal_atoms) <= 2.0);
}

TEST_CASE("bootstrap init: matches the forward oracle at step zero") {
    const ModelSpec& m = two_state_hmm();
    RngStream rng(28, 0);
    const ParticleEnsemble e = bootstrap_init(m, 100000, Obs{1.0}, rng);
    CHECK(ensemble_valid(e));
    const DiscreteBelief exact = forward_init(m, Obs{1.0});
    CHECK(tv_distance(ensemble_to_discrete(e, 2), exact) <= 0.01);
}

TEST_CASE("naive filter: coincides with the bootstrap filter at step zero") {
    const ModelSpec m = make_linear_gaussian(0.9, 1.0, 1.0, 0.0);
    RngStream r1(29, 0), r2(29, 0);
    const ParticleEnsemble boot = bootstrap_init(m, 500, Obs{0.8}, r1);
    const NaiveFilterState naive = naive_init(m, 500, Obs{0.8}, r2);
    const ParticleEnsemble ne = naive_ensemble(naive);
    CHECK(mean_coordinate(ne) == doctest::Approx(mean_coordinate(boot)).epsilon(1e-12));
}

TEST_CASE("naive filter: uniform emissions keep the weights uniform") {
    const ModelSpec m = make_finite_hmm({{0.9, 0.1}, {0.1, 0.9}}, {{0.5, 0.5}, {0.5, 0.5}},
                                        {0.5, 0.5});
    RngStream rng(30, 0);
    NaiveFilterState s = naive_init(m, 64, Obs{0.0}, rng);
    for (int k = 1; k <= 20; ++k) s = naive_step(s, Obs{k % 2 ? 1.0 : 0.0}, m, rng);
    const Vec w = naive_weights(s);
    for (double wi : w) CHECK(wi == doctest::Approx(1.0 / 64.0).epsilon(1e-12));
}

TEST_CASE("naive filter: log weights stay finite over a long run") {
    const ModelSpec m = make_linear_gaussian(0.9, 1.0, 1.0, 0.0);
    const Trajectory traj = simulate(m, 300, 500);
    RngStream rng(31, 0);
    NaiveFilterState s = naive_init(m, 100, traj.observations[0], rng);
    for (std::size_t k = 1; k <= 300; ++k) {
        s = naive_step(s, traj.observations[k], m, rng);
        for (double lw : s.log_cumulative_weights) CHECK(std::isfinite(lw));
    }
    CHECK(ensemble_valid(naive_ensemble(s)));
}

TEST_CASE("predictor recovery inverts the update") {
    const ModelSpec m = make_linear_gaussian(0.9, 1.0, 1.0, 0.0);
    RngStream rng(32, 0);
    ParticleEnsemble e;
    double total = 0.0;
    for (int i = 0; i < 50; ++i) {
        e.locations.push_back(State{2.0 * rng.normal()});
        e.weights.push_back(rng.uniform());
        total += e.weights.back();
    }
    for (double& w : e.weights) w /= total;

    for (double y : {-1.0, 0.3, 2.2}) {
        const ParticleEnsemble round = predictor_from_filter(update(e, Obs{y}, m), Obs{y}, m);
        for (std::size_t i = 0; i < e.n_particles(); ++i)
            CHECK(std::abs(round.weights[i] - e.weights[i]) < 1e-12);
    }
}

TEST_CASE("predictor recovery: constant likelihood is the identity") {
    const ModelSpec m = make_finite_hmm({{0.9, 0.1}, {0.1, 0.9}}, {{0.5, 0.5}, {0.5, 0.5}},
                                        {0.5, 0.5});
    const ParticleEnsemble e{{State{0.0}, State{1.0}}, Vec{0.35, 0.65}};
    const ParticleEnsemble out = predictor_from_filter(e, Obs{0.0}, m);
    CHECK(out.weights[0] == doctest::Approx(0.35).epsilon(1e-14));
    CHECK(out.weights[1] == doctest::Approx(0.65).epsilon(1e-14));
}

TEST_CASE("ensemble operations preserve weight normalization") {
    const ModelSpec m = make_linear_gaussian(0.9, 1.0, 1.0, 0.0);
    RngStream rng(33, 0);
    ParticleEnsemble e = bootstrap_init(m, 256, Obs{0.0}, rng);
    CHECK(ensemble_valid(e));
    for (int k = 1; k <= 50; ++k) {
        const BootstrapStep s = bootstrap_step(e, Obs{0.2 * rng.normal()}, m, rng, k);
        CHECK(ensemble_valid(s.predictor));
        CHECK(ensemble_valid(s.filtered));
        e = s.filtered;
    }
}

TEST_CASE("ess report matches its definition") {
    const ParticleEnsemble e{{State{0.0}, State{1.0}, State{2.0}, State{3.0}},
                             Vec{0.4, 0.3, 0.2, 0.1}};
    const EssReport r = make_ess_report(5, e);
    CHECK(r.step == 5);
    CHECK(r.max_weight == 0.4);
    const double expected = 1.0 / (0.16 + 0.09 + 0.04 + 0.01);
    CHECK(std::abs(r.ess - expected) <= 1e-9);
    CHECK(r.ess >= 1.0);
    CHECK(r.ess <= 4.0);
}
