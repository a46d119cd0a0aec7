#include "doctest.h"

#include <cmath>

#include "smc/exact.hpp"
#include "smc/model.hpp"
#include "smc/rng.hpp"

using namespace smc;

// Steady-state filtered variance of the a=0.9, q=r=1 recursion, frozen from
// an independent fixed-point iteration (closed form of
// 0.81 s^2 + 1.19 s - 1 = 0 gives the same digits).
static constexpr double kSteadyStateVar = 0.597407287257592;

TEST_CASE("kalman variance recursion: fixed point and monotone convergence") {
    for (double start : {1.0, 5.0, 0.01, 0.597}) {
        GaussianBelief b = GaussianBelief::scalar(0.0, start);
        double prev = start;
        const bool from_below = start < kSteadyStateVar;
        int k = 0;
        for (; k < 200; ++k) {
            b = kalman_step(b, 0.0, 0.9, 1.0, 1.0);
            if (from_below)
                CHECK(b.var1() >= prev - 1e-15);
            else
                CHECK(b.var1() <= prev + 1e-15);
            if (std::abs(b.var1() - prev) < 1e-14) break;
            prev = b.var1();
        }
        CHECK(k < 200);
        CHECK(b.var1() == doctest::Approx(kSteadyStateVar).epsilon(1e-12));
    }
}

TEST_CASE("kalman: uninformative observation leaves the prediction") {
    GaussianBelief b = GaussianBelief::scalar(0.0, 1.0);
    b = kalman_step(b, 123.0, 0.0, 1.0, 1e12);
    CHECK(std::abs(b.mean1()) < 1e-6);
    CHECK(b.var1() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("kalman: degenerate prior pins the filtered mean") {
    GaussianBelief b = GaussianBelief::scalar(2.5, 0.0);
    const GaussianBelief out = kalman_step(b, -57.0, 0.9, 0.0, 1.0);
    CHECK(out.mean1() == 0.9 * 2.5); // gain is exactly zero
}

TEST_CASE("matrix kalman agrees with the scalar recursion") {
    RngStream rng(11, 0);
    GaussianBelief scalar = GaussianBelief::scalar(0.3, 0.8);
    GaussianBelief matrix = scalar;
    Mat a(1, 1), q(1, 1), h(1, 1), r(1, 1);
    a(0, 0) = 0.9;
    q(0, 0) = 1.0;
    h(0, 0) = 1.0;
    r(0, 0) = 1.0;
    for (int k = 0; k < 50; ++k) {
        const double y = 2.0 * rng.normal();
        scalar = kalman_step(scalar, y, 0.9, 1.0, 1.0);
        matrix = kalman_step(matrix, Vec{y}, a, q, h, r);
        CHECK(matrix.mean[0] == doctest::Approx(scalar.mean1()).epsilon(1e-12));
        CHECK(matrix.covariance(0, 0) == doctest::Approx(scalar.var1()).epsilon(1e-12));
    }
}

TEST_CASE("matrix kalman keeps covariances symmetric and PSD (2-d)") {
    RngStream rng(12, 0);
    Mat a(2, 2), q(2, 2), h(2, 2), r(2, 2);
    a(0, 0) = 0.9;
    a(0, 1) = 0.1;
    a(1, 0) = -0.2;
    a(1, 1) = 0.7;
    q = Mat::identity(2);
    h = Mat::identity(2);
    r = Mat::identity(2);
    GaussianBelief b{Vec{0.0, 0.0}, Mat::identity(2)};
    for (int k = 0; k < 100; ++k) {
        b = kalman_step(b, Vec{rng.normal(), rng.normal()}, a, q, h, r);
        CHECK(gaussian_belief_valid(b));
    }
}

TEST_CASE("forward step: uninformative emissions reduce to prediction") {
    const ModelSpec m = make_finite_hmm({{0.9, 0.1}, {0.3, 0.7}}, {{0.5, 0.5}, {0.5, 0.5}},
                                        {0.6, 0.4});
    const DiscreteBelief prior{Vec{0.6, 0.4}};
    const DiscreteBelief post = forward_step(prior, Obs{0.0}, m);
    CHECK(post.probs[0] == doctest::Approx(0.6 * 0.9 + 0.4 * 0.3).epsilon(1e-14));
    CHECK(post.probs[1] == doctest::Approx(0.6 * 0.1 + 0.4 * 0.7).epsilon(1e-14));
}

TEST_CASE("forward step: single Bayes update against the hand computation") {
    const ModelSpec m = make_finite_hmm({{1.0, 0.0}, {0.0, 1.0}}, {{0.8, 0.2}, {0.2, 0.8}},
                                        {0.5, 0.5});
    const DiscreteBelief post = forward_step(DiscreteBelief{Vec{0.5, 0.5}}, Obs{0.0}, m);
    CHECK(post.probs[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(post.probs[1] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("forward step: delta prior with identity transition stays a delta") {
    const ModelSpec m = make_finite_hmm({{1.0, 0.0}, {0.0, 1.0}}, {{0.8, 0.2}, {0.2, 0.8}},
                                        {0.5, 0.5});
    DiscreteBelief b{Vec{0.0, 1.0}};
    RngStream rng(13, 0);
    for (int k = 0; k < 20; ++k) {
        b = forward_step(b, Obs{rng.uniform() < 0.5 ? 0.0 : 1.0}, m);
        CHECK(b.probs[0] == 0.0);
        CHECK(b.probs[1] == 1.0);
    }
}

TEST_CASE("forward step preserves normalization over ten thousand steps") {
    const ModelSpec m = make_finite_hmm({{0.9, 0.1}, {0.1, 0.9}}, {{0.8, 0.2}, {0.2, 0.8}},
                                        {0.5, 0.5});
    DiscreteBelief b = forward_init(m, Obs{0.0});
    RngStream rng(14, 0);
    for (int k = 0; k < 10000; ++k) {
        b = forward_step(b, Obs{rng.uniform() < 0.5 ? 0.0 : 1.0}, m);
        double s = 0.0;
        for (double p : b.probs) s += p;
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("forward step commutes with state relabeling") {
    const std::vector<Vec> p = {{0.7, 0.2, 0.1}, {0.3, 0.5, 0.2}, {0.25, 0.25, 0.5}};
    const std::vector<Vec> e = {{0.6, 0.4}, {0.3, 0.7}, {0.5, 0.5}};
    const Vec init = {0.2, 0.5, 0.3};
    const ModelSpec m = make_finite_hmm(p, e, init);

    // permutation 0 -> 2, 1 -> 0, 2 -> 1 (perm[i] = new label of old i)
    const std::size_t perm[3] = {2, 0, 1};
    std::vector<Vec> pp(3, Vec(3)), ep(3, Vec(2));
    Vec initp(3);
    for (std::size_t i = 0; i < 3; ++i) {
        initp[perm[i]] = init[i];
        ep[perm[i]] = e[i];
        for (std::size_t j = 0; j < 3; ++j) pp[perm[i]][perm[j]] = p[i][j];
    }
    const ModelSpec mp = make_finite_hmm(pp, ep, initp);

    DiscreteBelief b{init}, bp{initp};
    RngStream rng(15, 0);
    for (int k = 0; k < 50; ++k) {
        const Obs y{rng.uniform() < 0.5 ? 0.0 : 1.0};
        b = forward_step(b, y, m);
        bp = forward_step(bp, y, mp);
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(bp.probs[perm[i]] == doctest::Approx(b.probs[i]).epsilon(1e-13));
    }
}

TEST_CASE("grid filter tracks the kalman filter on a fine grid") {
    const ModelSpec m = make_linear_gaussian(0.9, 1.0, 1.0, 0.0);
    const Trajectory traj = simulate(m, 50, 2024);

    GridBelief grid = grid_point_mass(make_uniform_grid(-10.0, 10.0, 2001), 0.0);
    const Mat kernel = grid_transition_kernel(grid.nodes, m.transition_density);
    GaussianBelief kal = GaussianBelief::scalar(0.0, 0.0);

    grid = grid_update(grid, traj.observations[0], m);
    kal = kalman_update(kal, traj.observations[0][0], 1.0);
    double err = std::abs(grid_mean(grid) - kal.mean1());
    for (std::size_t k = 1; k <= 50; ++k) {
        grid = grid_filter_step(grid, traj.observations[k], m, kernel);
        kal = kalman_step(kal, traj.observations[k][0], 0.9, 1.0, 1.0);
        err += std::abs(grid_mean(grid) - kal.mean1());
        CHECK_FALSE(grid.coverage_warning);
    }
    CHECK(err / 51.0 <= 1e-3);
}

TEST_CASE("grid filter refinement reduces the error") {
    const ModelSpec m = make_linear_gaussian(0.9, 1.0, 1.0, 0.0);
    const Trajectory traj = simulate(m, 20, 99);

    auto run = [&](std::size_t nodes) {
        GridBelief g = grid_point_mass(make_uniform_grid(-10.0, 10.0, nodes), 0.0);
        const Mat kernel = grid_transition_kernel(g.nodes, m.transition_density);
        GaussianBelief kal = GaussianBelief::scalar(0.0, 0.0);
        g = grid_update(g, traj.observations[0], m);
        kal = kalman_update(kal, traj.observations[0][0], 1.0);
        double err = 0.0;
        for (std::size_t k = 1; k <= 20; ++k) {
            g = grid_filter_step(g, traj.observations[k], m, kernel);
            kal = kalman_step(kal, traj.observations[k][0], 0.9, 1.0, 1.0);
            err += std::abs(grid_mean(g) - kal.mean1());
        }
        return err / 20.0;
    };
    // coarse pair: the quadrature error is resolvable and must shrink
    CHECK(run(41) <= run(11));
    CHECK(run(41) < 0.1 * run(11));
    // fine pair: both sit at the rounding floor, refinement must not hurt
    // beyond it
    CHECK(run(2001) <= run(501) + 1e-12);
}

TEST_CASE("grid filter: single node and symmetric step") {
    const ModelSpec m = make_linear_gaussian(0.9, 1.0, 1.0, 0.0);

    GridBelief single = make_uniform_grid(0.0, 0.0, 1);
    const GridBelief stepped = grid_filter_step(single, Obs{3.0}, m, m.transition_density);
    CHECK(stepped.masses[0] == doctest::Approx(1.0).epsilon(1e-15));

    // symmetric prior, symmetric dynamics, observation at the center
    GridBelief sym = make_uniform_grid(-5.0, 5.0, 501);
    const GridBelief out = grid_filter_step(sym, Obs{0.0}, m, m.transition_density);
    CHECK(std::abs(grid_mean(out)) <= 1e-10);
}

TEST_CASE("grid filter flags insufficient coverage") {
    const ModelSpec m = make_linear_gaussian(0.9, 1.0, 1.0, 0.0);
    GridBelief narrow = make_uniform_grid(-0.5, 0.5, 51);
    const GridBelief out = grid_update(narrow, Obs{0.0}, m);
    CHECK(out.coverage_warning); // half-width 0.5 cannot cover six posterior sds
}
