// Config-driven experiment runner.
//
// One JSON config file describes a model, a list of filters, a horizon,
// replication and seed counts, and the per-step metrics to record. The
// runner simulates trajectories, feeds the identical observation sequence
// to every configured filter, and writes two CSV files: per-step rows
// (runs.csv) and time-averaged metrics per filter at horizon prefixes
// (summary.csv). All numeric cells use shortest round-trip formatting and
// the whole pipeline is deterministic for a fixed (config, seed), whatever
// the thread count.
//
// Numbered observation steps follow the filter convention of exact.hpp:
// step 0 applies the initial law and the first observation, each later
// step one transition and one observation.
#pragma once

#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "smc/diagnostics.hpp"
#include "smc/errors.hpp"
#include "smc/exact.hpp"
#include "smc/format.hpp"
#include "smc/metrics.hpp"
#include "smc/model.hpp"
#include "smc/particle.hpp"
#include "smc/rng.hpp"

namespace smc {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct FilterSpec {
    std::string kind; // kalman | forward | grid | bootstrap | naive
    std::size_t n_particles = 0;
    std::size_t grid_nodes = 0;
    double grid_lo = 0.0, grid_hi = 0.0;
    std::string name; // unique column prefix, assigned at validation
};

struct ModelConfig {
    std::string kind; // linear_gaussian | finite_hmm | bounded_gaussian
    // linear_gaussian (also the signal of bounded_gaussian)
    double a = 0.0, q = 1.0, r = 1.0, x0 = 0.0;
    // finite_hmm
    std::vector<Vec> transition, emission;
    Vec initial;
    // bounded_gaussian observation channel
    std::string h_kind = "tanh"; // tanh | zero
    double h_scale = 1.0;
    double sigma = 1.0;
};

struct ExperimentConfig {
    ModelConfig model;
    std::vector<FilterSpec> filters;
    std::size_t horizon = 1;
    std::size_t replications = 1;
    std::uint64_t seed = 0;
    std::vector<std::string> metrics; // subset of {mean_abs_err, tv, bl, mse}
    std::string output_dir;
    bool lyapunov_quadratic = false;
    std::size_t coarsen_bins = 200;
    unsigned threads = 1;
    // sweep block
    std::vector<std::size_t> sweep_n_values;
    std::vector<std::size_t> sweep_t_values;
};

namespace detail {

inline const nlohmann::json& require_key(const nlohmann::json& j, const std::string& prefix,
                                         const std::string& key) {
    if (!j.is_object() || !j.contains(key))
        throw ConfigError(prefix.empty() ? key : prefix + "." + key, "missing required key");
    return j.at(key);
}

inline double as_number(const nlohmann::json& j, const std::string& path) {
    if (!j.is_number()) throw ConfigError(path, "expected a number");
    return j.get<double>();
}

inline std::uint64_t as_u64(const nlohmann::json& j, const std::string& path) {
    if (!j.is_number_unsigned() && !j.is_number_integer())
        throw ConfigError(path, "expected a nonnegative integer");
    const auto v = j.get<std::int64_t>();
    if (v < 0) throw ConfigError(path, "expected a nonnegative integer");
    return static_cast<std::uint64_t>(v);
}

inline std::vector<Vec> as_matrix(const nlohmann::json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a nonempty array of rows");
    std::vector<Vec> m;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& row = j.at(i);
        if (!row.is_array())
            throw ConfigError(path + "[" + std::to_string(i) + "]", "expected an array");
        Vec r;
        for (std::size_t k = 0; k < row.size(); ++k)
            r.push_back(as_number(row.at(k), path + "[" + std::to_string(i) + "][" +
                                                 std::to_string(k) + "]"));
        m.push_back(std::move(r));
    }
    return m;
}

} // namespace detail

inline ModelConfig parse_model_config(const nlohmann::json& j) {
    ModelConfig m;
    m.kind = detail::require_key(j, "model", "kind").get<std::string>();
    if (m.kind == "linear_gaussian") {
        m.a = detail::as_number(detail::require_key(j, "model", "a"), "model.a");
        m.q = detail::as_number(detail::require_key(j, "model", "q"), "model.q");
        m.r = detail::as_number(detail::require_key(j, "model", "r"), "model.r");
        m.x0 = detail::as_number(detail::require_key(j, "model", "x0"), "model.x0");
        if (!(m.q > 0.0)) throw ConfigError("model.q", "must be positive");
        if (!(m.r > 0.0)) throw ConfigError("model.r", "must be positive");
    } else if (m.kind == "finite_hmm") {
        m.transition = detail::as_matrix(detail::require_key(j, "model", "transition"),
                                         "model.transition");
        m.emission =
            detail::as_matrix(detail::require_key(j, "model", "emission"), "model.emission");
        const auto init = detail::as_matrix(nlohmann::json::array({detail::require_key(
                                                j, "model", "initial")}),
                                            "model.initial");
        m.initial = init[0];
    } else if (m.kind == "bounded_gaussian") {
        m.a = detail::as_number(detail::require_key(j, "model", "a"), "model.a");
        m.q = detail::as_number(detail::require_key(j, "model", "q"), "model.q");
        m.x0 = detail::as_number(detail::require_key(j, "model", "x0"), "model.x0");
        m.sigma = detail::as_number(detail::require_key(j, "model", "sigma"), "model.sigma");
        if (!(m.q > 0.0)) throw ConfigError("model.q", "must be positive");
        if (!(m.sigma > 0.0)) throw ConfigError("model.sigma", "must be positive");
        if (j.contains("h")) {
            const auto& h = j.at("h");
            m.h_kind = detail::require_key(h, "model.h", "kind").get<std::string>();
            if (m.h_kind != "tanh" && m.h_kind != "zero")
                throw ConfigError("model.h.kind", "expected 'tanh' or 'zero'");
            if (h.contains("scale"))
                m.h_scale = detail::as_number(h.at("scale"), "model.h.scale");
        }
    } else {
        throw ConfigError("model.kind",
                          "unknown kind '" + m.kind +
                              "' (expected linear_gaussian, finite_hmm, bounded_gaussian)");
    }
    return m;
}

inline ModelSpec build_model(const ModelConfig& m) {
    if (m.kind == "linear_gaussian") return make_linear_gaussian(m.a, m.q, m.r, m.x0);
    if (m.kind == "finite_hmm") {
        try {
            return make_finite_hmm(m.transition, m.emission, m.initial);
        } catch (const std::invalid_argument& err) {
            throw ConfigError("model", err.what());
        }
    }
    // bounded_gaussian
    const ModelSpec base = make_linear_gaussian(m.a, m.q, 1.0, m.x0);
    Mat sigma(1, 1);
    sigma(0, 0) = m.sigma;
    const double scale = m.h_scale;
    std::function<Obs(const State&)> h;
    double h_sup = 0.0;
    if (m.h_kind == "zero") {
        h = [](const State&) { return Obs{0.0}; };
    } else {
        h = [scale](const State& x) { return Obs{scale * std::tanh(x[0])}; };
        h_sup = std::abs(scale);
    }
    return make_bounded_obs_model(base, h, h_sup, sigma);
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    ExperimentConfig c;
    c.model = parse_model_config(detail::require_key(j, "", "model"));

    const nlohmann::json filters = j.contains("filters") ? j.at("filters") : nlohmann::json::array();
    if (!filters.is_array()) throw ConfigError("filters", "expected an array");
    for (std::size_t i = 0; i < filters.size(); ++i) {
        const std::string path = "filters[" + std::to_string(i) + "]";
        const auto& f = filters.at(i);
        FilterSpec spec;
        spec.kind = detail::require_key(f, path, "type").get<std::string>();
        if (spec.kind == "bootstrap" || spec.kind == "naive") {
            spec.n_particles = detail::as_u64(detail::require_key(f, path, "n"), path + ".n");
            if (spec.n_particles == 0) throw ConfigError(path + ".n", "must be at least 1");
        } else if (spec.kind == "grid") {
            spec.grid_nodes =
                detail::as_u64(detail::require_key(f, path, "nodes"), path + ".nodes");
            spec.grid_lo = detail::as_number(detail::require_key(f, path, "lo"), path + ".lo");
            spec.grid_hi = detail::as_number(detail::require_key(f, path, "hi"), path + ".hi");
            if (spec.grid_nodes == 0) throw ConfigError(path + ".nodes", "must be at least 1");
            if (!(spec.grid_lo < spec.grid_hi))
                throw ConfigError(path + ".lo", "grid span must be nonempty");
        } else if (spec.kind != "kalman" && spec.kind != "forward") {
            throw ConfigError(path + ".type", "unknown filter type '" + spec.kind + "'");
        }
        if (spec.kind == "kalman" && c.model.kind != "linear_gaussian")
            throw ConfigError(path, "kalman filter requires a linear_gaussian model");
        if (spec.kind == "forward" && c.model.kind != "finite_hmm")
            throw ConfigError(path, "forward filter requires a finite_hmm model");
        if (spec.kind == "grid" && c.model.kind == "finite_hmm")
            throw ConfigError(path, "grid filter requires a continuous model");
        c.filters.push_back(spec);
    }
    // Column names: bare kind when unique, kind + particle count otherwise.
    for (auto& f : c.filters) {
        int same_kind = 0;
        for (const auto& g : c.filters) same_kind += g.kind == f.kind;
        f.name = same_kind == 1 ? f.kind : f.kind + std::to_string(f.n_particles);
    }
    for (std::size_t i = 0; i < c.filters.size(); ++i)
        for (std::size_t k = i + 1; k < c.filters.size(); ++k)
            if (c.filters[i].name == c.filters[k].name)
                throw ConfigError("filters[" + std::to_string(k) + "]",
                                  "duplicate filter instance '" + c.filters[k].name + "'");

    c.horizon = detail::as_u64(detail::require_key(j, "", "horizon"), "horizon");
    if (c.horizon < 1) throw ConfigError("horizon", "must be at least 1");
    c.replications =
        j.contains("replications") ? detail::as_u64(j.at("replications"), "replications") : 1;
    if (c.replications < 1) throw ConfigError("replications", "must be at least 1");
    c.seed = detail::as_u64(detail::require_key(j, "", "seed"), "seed");

    if (j.contains("metrics")) {
        const auto& ms = j.at("metrics");
        if (!ms.is_array()) throw ConfigError("metrics", "expected an array");
        for (std::size_t i = 0; i < ms.size(); ++i) {
            const std::string m = ms.at(i).get<std::string>();
            if (m != "mean_abs_err" && m != "tv" && m != "bl" && m != "mse")
                throw ConfigError("metrics[" + std::to_string(i) + "]",
                                  "unknown metric '" + m + "'");
            c.metrics.push_back(m);
        }
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("lyapunov")) {
        const std::string kind =
            detail::require_key(j.at("lyapunov"), "lyapunov", "kind").get<std::string>();
        if (kind != "quadratic") throw ConfigError("lyapunov.kind", "expected 'quadratic'");
        c.lyapunov_quadratic = true;
    }
    if (j.contains("coarsen_bins"))
        c.coarsen_bins = detail::as_u64(j.at("coarsen_bins"), "coarsen_bins");
    if (j.contains("threads"))
        c.threads = static_cast<unsigned>(detail::as_u64(j.at("threads"), "threads"));
    if (c.threads == 0) c.threads = 1;
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        for (const auto& v : detail::require_key(s, "sweep", "n_values"))
            c.sweep_n_values.push_back(detail::as_u64(v, "sweep.n_values"));
        for (const auto& v : detail::require_key(s, "sweep", "t_values"))
            c.sweep_t_values.push_back(detail::as_u64(v, "sweep.t_values"));
    }

    const bool any_metric = !c.metrics.empty();
    const bool has_exact = [&] {
        for (const auto& f : c.filters)
            if (f.kind == "kalman" || f.kind == "forward" || f.kind == "grid") return true;
        return false;
    }();
    if (any_metric && !has_exact)
        throw ConfigError("filters", "metrics requested but no exact filter configured");
    const bool wants_distance = [&] {
        for (const auto& m : c.metrics)
            if (m == "tv" || m == "bl") return true;
        return false;
    }();
    if (wants_distance && c.model.kind != "finite_hmm") {
        bool has_grid = false;
        for (const auto& f : c.filters) has_grid |= f.kind == "grid";
        if (!has_grid)
            throw ConfigError("filters",
                              "tv/bl on a continuous model needs a grid filter as the "
                              "atomic reference");
    }
    return c;
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config", std::string("JSON parse failure: ") + e.what());
    }
    return parse_config(j);
}

// ---------------------------------------------------------------------------
// Filter runners
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a_obs(std::uint64_t h, const Obs& y) {
    for (double v : y) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

} // namespace detail

/// One filter instance consuming a stream of observations. Every runner
/// hashes the observations it consumes so the harness can verify that all
/// filters in a run saw the identical sequence.
class FilterRunner {
  public:
    virtual ~FilterRunner() = default;

    void consume(std::size_t k, const Obs& y) {
        obs_hash_ = detail::fnv1a_obs(obs_hash_, y);
        if (k == 0)
            init(y);
        else
            step(k, y);
    }

    virtual double mean() const = 0;
    virtual double integral(const std::function<double(double)>& f) const = 0;
    virtual bool is_exact() const = 0;
    virtual bool is_particle() const { return false; }
    virtual ParticleEnsemble atoms() const {
        throw std::logic_error("filter has no atomic representation");
    }
    virtual DiscreteBelief discrete(std::size_t) const {
        throw std::logic_error("filter has no finite-state representation");
    }
    virtual double ess() const { return 0.0; }

    std::uint64_t observation_hash() const { return obs_hash_; }

  protected:
    virtual void init(const Obs& y0) = 0;
    virtual void step(std::size_t k, const Obs& y) = 0;

  private:
    std::uint64_t obs_hash_ = 0xcbf29ce484222325ULL;
};

class KalmanRunner final : public FilterRunner {
  public:
    KalmanRunner(double a, double q, double r, double x0)
        : a_(a), q_(q), r_(r), belief_(GaussianBelief::scalar(x0, 0.0)) {}

    double mean() const override { return belief_.mean1(); }
    double integral(const std::function<double(double)>& f) const override {
        // Expectation under N(mean, var) by adaptive quadrature on +-8 sd.
        const double m = belief_.mean1(), sd = std::sqrt(std::max(belief_.var1(), 0.0));
        if (sd < 1e-12) return f(m);
        const auto g = [&](double x) {
            const double z = (x - m) / sd;
            return f(x) * std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * 3.14159265358979323846));
        };
        return detail::integrate_interval(g, m - 8.0 * sd, m + 8.0 * sd, 1e-10);
    }
    bool is_exact() const override { return true; }

  protected:
    void init(const Obs& y0) override { belief_ = kalman_update(belief_, y0[0], r_); }
    void step(std::size_t, const Obs& y) override {
        belief_ = kalman_step(belief_, y[0], a_, q_, r_);
    }

  private:
    double a_, q_, r_;
    GaussianBelief belief_;
};

class ForwardRunner final : public FilterRunner {
  public:
    explicit ForwardRunner(const ModelSpec& model) : model_(&model) {}

    double mean() const override {
        double m = 0.0;
        for (std::size_t i = 0; i < belief_.probs.size(); ++i)
            m += static_cast<double>(i) * belief_.probs[i];
        return m;
    }
    double integral(const std::function<double(double)>& f) const override {
        double s = 0.0;
        for (std::size_t i = 0; i < belief_.probs.size(); ++i)
            s += f(static_cast<double>(i)) * belief_.probs[i];
        return s;
    }
    bool is_exact() const override { return true; }
    DiscreteBelief discrete(std::size_t) const override { return belief_; }
    ParticleEnsemble atoms() const override {
        ParticleEnsemble e;
        for (std::size_t i = 0; i < belief_.probs.size(); ++i) {
            e.locations.push_back(State{static_cast<double>(i)});
            e.weights.push_back(belief_.probs[i]);
        }
        return e;
    }

  protected:
    void init(const Obs& y0) override { belief_ = forward_init(*model_, y0); }
    void step(std::size_t, const Obs& y) override { belief_ = forward_step(belief_, y, *model_); }

  private:
    const ModelSpec* model_;
    DiscreteBelief belief_;
};

class GridRunner final : public FilterRunner {
  public:
    GridRunner(const ModelSpec& model, std::size_t nodes, double lo, double hi, double x0)
        : model_(&model), belief_(grid_point_mass(make_uniform_grid(lo, hi, nodes), x0)) {
        kernel_ = grid_transition_kernel(belief_.nodes, model.transition_density);
    }

    double mean() const override { return grid_mean(belief_); }
    double integral(const std::function<double(double)>& f) const override {
        double s = 0.0;
        for (std::size_t j = 0; j < belief_.nodes.size(); ++j)
            s += f(belief_.nodes[j]) * belief_.masses[j];
        return s;
    }
    bool is_exact() const override { return true; }
    ParticleEnsemble atoms() const override {
        ParticleEnsemble e;
        for (std::size_t j = 0; j < belief_.nodes.size(); ++j) {
            if (belief_.masses[j] == 0.0) continue;
            e.locations.push_back(State{belief_.nodes[j]});
            e.weights.push_back(belief_.masses[j]);
        }
        return e;
    }
    bool coverage_warning() const { return belief_.coverage_warning; }

  protected:
    void init(const Obs& y0) override { belief_ = grid_update(belief_, y0, *model_); }
    void step(std::size_t, const Obs& y) override {
        belief_ = grid_filter_step(belief_, y, *model_, kernel_);
    }

  private:
    const ModelSpec* model_;
    GridBelief belief_;
    Mat kernel_;
};

class BootstrapRunner final : public FilterRunner {
  public:
    BootstrapRunner(const ModelSpec& model, std::size_t n, RngStream rng)
        : model_(&model), n_(n), rng_(rng) {}

    double mean() const override { return mean_coordinate(ens_); }
    double integral(const std::function<double(double)>& f) const override {
        return integrate(ens_, [&](const State& x) { return f(x[0]); });
    }
    bool is_exact() const override { return false; }
    bool is_particle() const override { return true; }
    ParticleEnsemble atoms() const override { return ens_; }
    DiscreteBelief discrete(std::size_t n_states) const override {
        return ensemble_to_discrete(ens_, n_states);
    }
    double ess() const override { return make_ess_report(0, ens_).ess; }

  protected:
    void init(const Obs& y0) override { ens_ = bootstrap_init(*model_, n_, y0, rng_); }
    void step(std::size_t k, const Obs& y) override {
        ens_ = bootstrap_step(ens_, y, *model_, rng_, static_cast<long>(k)).filtered;
    }

  private:
    const ModelSpec* model_;
    std::size_t n_;
    RngStream rng_;
    ParticleEnsemble ens_;
};

class NaiveRunner final : public FilterRunner {
  public:
    NaiveRunner(const ModelSpec& model, std::size_t n, RngStream rng)
        : model_(&model), n_(n), rng_(rng) {}

    double mean() const override { return mean_coordinate(naive_ensemble(state_)); }
    double integral(const std::function<double(double)>& f) const override {
        return integrate(naive_ensemble(state_), [&](const State& x) { return f(x[0]); });
    }
    bool is_exact() const override { return false; }
    bool is_particle() const override { return true; }
    ParticleEnsemble atoms() const override { return naive_ensemble(state_); }
    DiscreteBelief discrete(std::size_t n_states) const override {
        return ensemble_to_discrete(naive_ensemble(state_), n_states);
    }
    double ess() const override { return make_ess_report(0, naive_ensemble(state_)).ess; }

  protected:
    void init(const Obs& y0) override { state_ = naive_init(*model_, n_, y0, rng_); }
    void step(std::size_t, const Obs& y) override {
        state_ = naive_step(state_, y, *model_, rng_);
    }

  private:
    const ModelSpec* model_;
    std::size_t n_;
    RngStream rng_;
    NaiveFilterState state_;
};

inline std::unique_ptr<FilterRunner> make_runner(const FilterSpec& spec,
                                                 const ExperimentConfig& config,
                                                 const ModelSpec& model, RngStream rng) {
    if (spec.kind == "kalman")
        return std::make_unique<KalmanRunner>(config.model.a, config.model.q, config.model.r,
                                              config.model.x0);
    if (spec.kind == "forward") return std::make_unique<ForwardRunner>(model);
    if (spec.kind == "grid")
        return std::make_unique<GridRunner>(model, spec.grid_nodes, spec.grid_lo,
                                            spec.grid_hi, config.model.x0);
    if (spec.kind == "bootstrap")
        return std::make_unique<BootstrapRunner>(model, spec.n_particles, rng);
    return std::make_unique<NaiveRunner>(model, spec.n_particles, rng);
}

// ---------------------------------------------------------------------------
// Experiment loop
// ---------------------------------------------------------------------------

struct SummaryRow {
    std::string filter, metric;
    std::size_t t = 0;
    double value = 0.0, stderr_ = 0.0;
};

struct UnderflowEvent {
    std::size_t replication = 0;
    long step = 0;
};

struct RunResult {
    std::string runs_csv;    // full file content, header included
    std::string summary_csv; // full file content, header included
    std::vector<SummaryRow> summary;
    std::vector<UnderflowEvent> underflows;
    std::string runs_path, summary_path; // set when files were written
};

namespace detail {

// Atoms below this mass cannot move any distance by more than ~1e-9 in
// total; dropping them keeps the coarsening span tied to the effective
// support instead of far tails.
inline ParticleEnsemble prune_negligible(const ParticleEnsemble& e) {
    ParticleEnsemble out;
    double total = 0.0;
    for (std::size_t i = 0; i < e.n_particles(); ++i) {
        if (e.weights[i] < 1e-12) continue;
        out.locations.push_back(e.locations[i]);
        out.weights.push_back(e.weights[i]);
        total += e.weights[i];
    }
    for (double& w : out.weights) w /= total;
    return out;
}

struct ReplicationData {
    std::string rows;                     // CSV rows for this replication
    std::vector<Vec> abs_err;             // per approx filter, per step
    std::vector<Vec> tv, bl;              // per approx filter, per step
    std::vector<Vec> means_f;             // per filter, integral of the mse test fn
    Vec exact_means_f;                    // reference filter, same test fn
    Trajectory trajectory;
    bool underflowed = false;
    long underflow_step = -1;
};

inline void ensure_finite(double v, const char* what) {
    if (!std::isfinite(v))
        throw std::runtime_error(std::string("numeric failure: non-finite ") + what);
}

} // namespace detail

inline double mse_test_function(double x) { return std::tanh(x); }

/// Run every configured filter over `replications` simulated trajectories
/// and aggregate the configured metrics. Replications are distributed over
/// config.threads workers; outputs are assembled in replication order.
inline RunResult run_experiment(const ExperimentConfig& config) {
    if (config.filters.empty()) throw ConfigError("filters", "need at least one filter");
    const ModelSpec model = build_model(config.model);
    const std::size_t horizon = config.horizon;
    const LyapunovSpec lyap = make_quadratic_lyapunov();

    const bool want_abs = std::count(config.metrics.begin(), config.metrics.end(),
                                     std::string("mean_abs_err")) > 0;
    const bool want_tv = std::count(config.metrics.begin(), config.metrics.end(),
                                    std::string("tv")) > 0;
    const bool want_bl = std::count(config.metrics.begin(), config.metrics.end(),
                                    std::string("bl")) > 0;
    const bool want_mse = std::count(config.metrics.begin(), config.metrics.end(),
                                     std::string("mse")) > 0;
    const bool any_metric = want_abs || want_tv || want_bl || want_mse;

    // Reference = first exact filter.
    std::size_t reference_index = config.filters.size();
    for (std::size_t i = 0; i < config.filters.size(); ++i) {
        const auto& k = config.filters[i].kind;
        if (k == "kalman" || k == "forward" || k == "grid") {
            reference_index = i;
            break;
        }
    }
    // Atomic reference for tv/bl on continuous models = first grid filter.
    std::size_t atomic_reference_index = reference_index;
    if ((want_tv || want_bl) && config.model.kind != "finite_hmm")
        for (std::size_t i = 0; i < config.filters.size(); ++i)
            if (config.filters[i].kind == "grid") {
                atomic_reference_index = i;
                break;
            }

    std::vector<std::size_t> approx_indices;
    for (std::size_t i = 0; i < config.filters.size(); ++i)
        if (config.filters[i].kind == "bootstrap" || config.filters[i].kind == "naive")
            approx_indices.push_back(i);

    // Header.
    std::string header = "rep,k";
    for (const auto& f : config.filters) header += "," + f.name + "_mean";
    if (want_abs)
        for (auto i : approx_indices) header += ",abs_err_" + config.filters[i].name;
    if (want_tv)
        for (auto i : approx_indices) header += ",tv_" + config.filters[i].name;
    if (want_bl)
        for (auto i : approx_indices) header += ",bl_" + config.filters[i].name;
    for (auto i : approx_indices) header += ",ess_" + config.filters[i].name;
    if (config.lyapunov_quadratic)
        for (const auto& f : config.filters) header += ",lyap_" + f.name;
    header += "\n";

    std::vector<detail::ReplicationData> reps(config.replications);

    auto run_replication = [&](std::size_t rep) {
        detail::ReplicationData data;
        data.trajectory = simulate(model, horizon, derive_key(config.seed, 2 * rep));

        std::vector<std::unique_ptr<FilterRunner>> runners;
        for (std::size_t i = 0; i < config.filters.size(); ++i)
            runners.push_back(make_runner(config.filters[i], config, model,
                                          RngStream(derive_key(config.seed, 2 * rep + 1), i)));

        data.abs_err.assign(approx_indices.size(), Vec(horizon + 1, 0.0));
        data.tv.assign(approx_indices.size(), Vec(horizon + 1, 0.0));
        data.bl.assign(approx_indices.size(), Vec(horizon + 1, 0.0));
        data.means_f.assign(config.filters.size(), Vec(horizon + 1, 0.0));
        data.exact_means_f.assign(horizon + 1, 0.0);

        std::ostringstream rows;
        try {
            for (std::size_t k = 0; k <= horizon; ++k) {
                const Obs& y = data.trajectory.observations[k];
                for (auto& r : runners) r->consume(k, y);
                if (k == horizon) {
                    const std::uint64_t h0 = runners.front()->observation_hash();
                    for (const auto& r : runners)
                        if (r->observation_hash() != h0)
                            throw std::logic_error(
                                "filters consumed different observation sequences");
                }

                rows << rep + 1 << ',' << k;
                Vec means(config.filters.size());
                for (std::size_t i = 0; i < runners.size(); ++i) {
                    means[i] = runners[i]->mean();
                    detail::ensure_finite(means[i], "filter mean");
                    rows << ',' << format_double(means[i]);
                }
                if (want_mse && reference_index < runners.size())
                    data.exact_means_f[k] = runners[reference_index]->integral(mse_test_function);
                if (want_mse)
                    for (std::size_t i = 0; i < runners.size(); ++i)
                        data.means_f[i][k] = runners[i]->integral(mse_test_function);

                if (want_abs)
                    for (std::size_t a = 0; a < approx_indices.size(); ++a) {
                        const double err =
                            std::abs(means[approx_indices[a]] - means[reference_index]);
                        data.abs_err[a][k] = err;
                        rows << ',' << format_double(err);
                    }
                if (want_tv || want_bl) {
                    for (std::size_t a = 0; a < approx_indices.size(); ++a) {
                        double tv_val = 0.0, bl_val = 0.0;
                        if (config.model.kind == "finite_hmm") {
                            const DiscreteBelief da =
                                runners[approx_indices[a]]->discrete(model.n_states());
                            const DiscreteBelief de =
                                runners[atomic_reference_index]->discrete(model.n_states());
                            if (want_tv) tv_val = tv_distance(da, de);
                            if (want_bl) bl_val = bl_distance(da, de);
                        } else {
                            ParticleEnsemble ea =
                                detail::prune_negligible(runners[approx_indices[a]]->atoms());
                            ParticleEnsemble ee = detail::prune_negligible(
                                runners[atomic_reference_index]->atoms());
                            double lo = 1e300, hi = -1e300;
                            for (const auto& x : ea.locations) {
                                lo = std::min(lo, x[0]);
                                hi = std::max(hi, x[0]);
                            }
                            for (const auto& x : ee.locations) {
                                lo = std::min(lo, x[0]);
                                hi = std::max(hi, x[0]);
                            }
                            ea = coarsen(ea, config.coarsen_bins, lo, hi);
                            ee = coarsen(ee, config.coarsen_bins, lo, hi);
                            if (want_tv) tv_val = tv_distance(ea, ee);
                            if (want_bl) bl_val = bl_distance(ea, ee);
                        }
                        data.tv[a][k] = tv_val;
                        data.bl[a][k] = bl_val;
                        if (want_tv) rows << ',' << format_double(tv_val);
                        if (want_bl) rows << ',' << format_double(bl_val);
                    }
                }
                for (auto i : approx_indices) {
                    const double e = runners[i]->ess();
                    detail::ensure_finite(e, "ess");
                    rows << ',' << format_double(e);
                }
                if (config.lyapunov_quadratic)
                    for (auto& r : runners) {
                        double lv;
                        if (r->is_particle())
                            lv = integrate(r->atoms(), lyap.v);
                        else
                            lv = r->integral([](double x) { return 1.0 + x * x; });
                        detail::ensure_finite(lv, "lyapunov average");
                        rows << ',' << format_double(lv);
                    }
                rows << '\n';
            }
        } catch (const UnderflowError& e) {
            data.underflowed = true;
            data.underflow_step = e.step;
            data.rows.clear();
            reps[rep] = std::move(data);
            return;
        }
        data.rows = rows.str();
        reps[rep] = std::move(data);
    };

    if (config.threads <= 1) {
        for (std::size_t rep = 0; rep < config.replications; ++rep) run_replication(rep);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < config.threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t rep = next.fetch_add(1); rep < config.replications;
                     rep = next.fetch_add(1))
                    run_replication(rep);
            });
        for (auto& th : pool) th.join();
    }

    RunResult result;
    result.runs_csv = header;
    for (auto& rep : reps) {
        if (rep.underflowed) continue;
        result.runs_csv += rep.rows;
    }
    for (std::size_t rep = 0; rep < reps.size(); ++rep)
        if (reps[rep].underflowed)
            result.underflows.push_back(UnderflowEvent{rep + 1, reps[rep].underflow_step});

    // Summary: time averages over k = 1..t at ten horizon prefixes.
    std::vector<std::size_t> prefixes;
    for (std::size_t j = 1; j <= 10; ++j) {
        const std::size_t t = std::max<std::size_t>(1, horizon * j / 10);
        if (prefixes.empty() || prefixes.back() != t) prefixes.push_back(t);
    }

    result.summary_csv = "filter,metric,t,value,stderr\n";
    auto add_summary = [&](const std::string& filter, const std::string& metric,
                           std::size_t t, const Vec& per_rep) {
        double mean = 0.0;
        for (double v : per_rep) mean += v;
        mean /= static_cast<double>(per_rep.size());
        double var = 0.0;
        for (double v : per_rep) var += (v - mean) * (v - mean);
        const double se = per_rep.size() > 1
                              ? std::sqrt(var / (static_cast<double>(per_rep.size()) - 1.0) /
                                          static_cast<double>(per_rep.size()))
                              : 0.0;
        result.summary.push_back(SummaryRow{filter, metric, t, mean, se});
        result.summary_csv += filter + "," + metric + "," + format_u64(t) + "," +
                              format_double(mean) + "," + format_double(se) + "\n";
    };

    if (any_metric) {
        for (std::size_t a = 0; a < approx_indices.size(); ++a) {
            const std::string& name = config.filters[approx_indices[a]].name;
            for (const std::string& metric : config.metrics) {
                for (std::size_t t : prefixes) {
                    Vec per_rep;
                    for (const auto& rep : reps) {
                        if (rep.underflowed) continue;
                        if (metric == "mse") {
                            per_rep.push_back(mse_comparison(
                                rep.trajectory, rep.exact_means_f,
                                rep.means_f[approx_indices[a]],
                                [](const State& x) { return mse_test_function(x[0]); }, t));
                        } else {
                            const Vec* series = metric == "mean_abs_err" ? &rep.abs_err[a]
                                                : metric == "tv"         ? &rep.tv[a]
                                                                         : &rep.bl[a];
                            double s = 0.0;
                            for (std::size_t k = 1; k <= t; ++k) s += (*series)[k];
                            per_rep.push_back(s / static_cast<double>(t));
                        }
                    }
                    if (!per_rep.empty()) add_summary(name, metric, t, per_rep);
                }
            }
        }
    }

    if (!config.output_dir.empty()) {
        std::filesystem::create_directories(config.output_dir);
        result.runs_path = (std::filesystem::path(config.output_dir) / "runs.csv").string();
        result.summary_path =
            (std::filesystem::path(config.output_dir) / "summary.csv").string();
        std::ofstream(result.runs_path, std::ios::binary) << result.runs_csv;
        std::ofstream(result.summary_path, std::ios::binary) << result.summary_csv;
        if (!result.underflows.empty()) {
            std::ofstream log((std::filesystem::path(config.output_dir) / "errors.log").string(),
                              std::ios::binary);
            for (const auto& u : result.underflows)
                log << "replication " << u.replication << " aborted: weight underflow at step "
                    << u.step << "\n";
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Uniformity sweep
// ---------------------------------------------------------------------------

struct SweepResult {
    std::string grid_csv; // n,t,metric,value,stderr
    std::string max_csv;  // n,metric,max_over_t,argmax_t,stderr_at_argmax
    struct MaxRow {
        std::size_t n = 0;
        double max_over_t = 0.0;
        std::size_t argmax_t = 0;
        double stderr_at_argmax = 0.0;
    };
    std::vector<MaxRow> max_rows;
    std::string grid_path, max_path;
};

/// Estimate the time-average distance between the (single) particle filter
/// in the config and the exact reference, on a grid of particle counts and
/// horizon prefixes; report the max over prefixes per particle count as the
/// empirical proxy for the supremum over horizons.
inline SweepResult sweep_uniformity(const ExperimentConfig& base,
                                    const std::vector<std::size_t>& n_values,
                                    const std::vector<std::size_t>& t_values) {
    if (n_values.empty() || t_values.empty())
        throw ConfigError("sweep", "n_values and t_values must be nonempty");
    std::string metric = "tv";
    for (const auto& m : base.metrics)
        if (m == "tv" || m == "bl") {
            metric = m;
            break;
        }

    std::size_t template_index = base.filters.size();
    for (std::size_t i = 0; i < base.filters.size(); ++i)
        if (base.filters[i].kind == "bootstrap" || base.filters[i].kind == "naive") {
            template_index = i;
            break;
        }
    if (template_index == base.filters.size())
        throw ConfigError("filters", "sweep needs a bootstrap or naive filter to vary");

    const std::size_t t_max = *std::max_element(t_values.begin(), t_values.end());

    SweepResult out;
    out.grid_csv = "n,t,metric,value,stderr\n";
    out.max_csv = "n,metric,max_over_t,argmax_t,stderr_at_argmax\n";

    for (std::size_t n : n_values) {
        ExperimentConfig cfg = base;
        cfg.horizon = t_max;
        cfg.output_dir.clear();
        cfg.metrics = {metric};
        cfg.filters[template_index].n_particles = n;
        // Re-derive instance names for the overridden particle count.
        for (auto& f : cfg.filters) {
            int same_kind = 0;
            for (const auto& g : cfg.filters) same_kind += g.kind == f.kind;
            f.name = same_kind == 1 ? f.kind : f.kind + std::to_string(f.n_particles);
        }
        // The seed is shared across particle counts: every n sees the same
        // trajectories (common random numbers), and a one-point sweep
        // reproduces the run_experiment summary exactly.

        // Focused loop: only the per-step distance series is needed.
        const ModelSpec model = build_model(cfg.model);
        std::vector<Vec> series(cfg.replications);

        std::size_t exact_index = cfg.filters.size();
        for (std::size_t i = 0; i < cfg.filters.size(); ++i) {
            const auto& k = cfg.filters[i].kind;
            if (k == "kalman" || k == "forward" || k == "grid") {
                exact_index = i;
                break;
            }
        }
        if (exact_index == cfg.filters.size())
            throw ConfigError("filters", "sweep needs an exact filter");

        auto run_one = [&](std::size_t rep) {
            // Stream ids mirror run_experiment (keyed by filter list position).
            const Trajectory traj = simulate(model, t_max, derive_key(cfg.seed, 2 * rep));
            auto exact = make_runner(cfg.filters[exact_index], cfg, model,
                                     RngStream(derive_key(cfg.seed, 2 * rep + 1), exact_index));
            auto approx = make_runner(cfg.filters[template_index], cfg, model,
                                      RngStream(derive_key(cfg.seed, 2 * rep + 1), template_index));
            Vec dist(t_max + 1, 0.0);
            for (std::size_t k = 0; k <= t_max; ++k) {
                const Obs& y = traj.observations[k];
                exact->consume(k, y);
                approx->consume(k, y);
                if (cfg.model.kind == "finite_hmm") {
                    const auto da = approx->discrete(model.n_states());
                    const auto de = exact->discrete(model.n_states());
                    dist[k] = metric == "tv" ? tv_distance(da, de) : bl_distance(da, de);
                } else {
                    ParticleEnsemble ea = detail::prune_negligible(approx->atoms());
                    ParticleEnsemble ee = detail::prune_negligible(exact->atoms());
                    double lo = 1e300, hi = -1e300;
                    for (const auto& x : ea.locations) {
                        lo = std::min(lo, x[0]);
                        hi = std::max(hi, x[0]);
                    }
                    for (const auto& x : ee.locations) {
                        lo = std::min(lo, x[0]);
                        hi = std::max(hi, x[0]);
                    }
                    ea = coarsen(ea, cfg.coarsen_bins, lo, hi);
                    ee = coarsen(ee, cfg.coarsen_bins, lo, hi);
                    dist[k] = metric == "tv" ? tv_distance(ea, ee) : bl_distance(ea, ee);
                }
            }
            series[rep] = std::move(dist);
        };

        if (cfg.threads <= 1) {
            for (std::size_t rep = 0; rep < cfg.replications; ++rep) run_one(rep);
        } else {
            std::atomic<std::size_t> next{0};
            std::vector<std::thread> pool;
            for (unsigned t = 0; t < cfg.threads; ++t)
                pool.emplace_back([&] {
                    for (std::size_t rep = next.fetch_add(1); rep < cfg.replications;
                         rep = next.fetch_add(1))
                        run_one(rep);
                });
            for (auto& th : pool) th.join();
        }

        SweepResult::MaxRow best;
        best.n = n;
        for (std::size_t t : t_values) {
            Vec per_rep;
            for (const auto& s : series) {
                double sum = 0.0;
                for (std::size_t k = 1; k <= t; ++k) sum += s[k];
                per_rep.push_back(sum / static_cast<double>(t));
            }
            double mean = 0.0;
            for (double v : per_rep) mean += v;
            mean /= static_cast<double>(per_rep.size());
            double var = 0.0;
            for (double v : per_rep) var += (v - mean) * (v - mean);
            const double se = per_rep.size() > 1
                                  ? std::sqrt(var / (static_cast<double>(per_rep.size()) - 1.0) /
                                              static_cast<double>(per_rep.size()))
                                  : 0.0;
            out.grid_csv += format_u64(n) + "," + format_u64(t) + "," + metric + "," +
                            format_double(mean) + "," + format_double(se) + "\n";
            if (mean >= best.max_over_t) {
                best.max_over_t = mean;
                best.argmax_t = t;
                best.stderr_at_argmax = se;
            }
        }
        out.max_rows.push_back(best);
        out.max_csv += format_u64(n) + "," + metric + "," + format_double(best.max_over_t) +
                       "," + format_u64(best.argmax_t) + "," +
                       format_double(best.stderr_at_argmax) + "\n";
    }

    if (!base.output_dir.empty()) {
        std::filesystem::create_directories(base.output_dir);
        out.grid_path = (std::filesystem::path(base.output_dir) / "sweep.csv").string();
        out.max_path = (std::filesystem::path(base.output_dir) / "sweep_max.csv").string();
        std::ofstream(out.grid_path, std::ios::binary) << out.grid_csv;
        std::ofstream(out.max_path, std::ios::binary) << out.max_csv;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Plot scripts
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_header(const std::string& line) {
    std::vector<std::string> cols;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cols.push_back(cur);
            cur.clear();
        } else if (ch != '\r' && ch != '\n') {
            cur += ch;
        }
    }
    cols.push_back(cur);
    return cols;
}

} // namespace detail

/// Write a self-contained gnuplot script rendering either the per-step
/// error columns of a runs.csv ("error_vs_time", one panel per particle
/// count) or the max-over-horizon column of a sweep_max.csv against the
/// particle count on log-log axes with a slope -1/2 reference line
/// ("error_vs_n"). Throws SchemaError when the CSV header does not match
/// the expected layout.
inline std::string emit_plot_script(const std::string& csv_path, const std::string& plot_kind,
                                    const std::string& script_path) {
    std::ifstream in(csv_path);
    if (!in) throw SchemaError("cannot open CSV '" + csv_path + "'");
    std::string header_line;
    std::getline(in, header_line);
    const auto cols = detail::split_csv_header(header_line);

    std::ostringstream script;
    script << "# gnuplot script generated from " << csv_path << "\n";
    script << "set datafile separator ','\n";
    script << "csv = '" << csv_path << "'\n";

    if (plot_kind == "error_vs_time") {
        if (cols.size() < 3 || cols[0] != "rep" || cols[1] != "k")
            throw SchemaError("expected runs CSV starting with 'rep,k', got '" + header_line +
                              "'");
        // Columns to draw: abs_err_* when present, otherwise the mean columns.
        std::vector<std::pair<std::string, std::size_t>> targets; // (name, 1-based col)
        for (std::size_t i = 0; i < cols.size(); ++i)
            if (cols[i].rfind("abs_err_", 0) == 0)
                targets.emplace_back(cols[i].substr(8), i + 1);
        if (targets.empty())
            for (std::size_t i = 0; i < cols.size(); ++i)
                if (cols[i].size() > 5 && cols[i].substr(cols[i].size() - 5) == "_mean")
                    targets.emplace_back(cols[i].substr(0, cols[i].size() - 5), i + 1);
        if (targets.empty())
            throw SchemaError("runs CSV has no abs_err_* or *_mean columns: '" + header_line +
                              "'");

        // Group filter instances by trailing particle count so a config that
        // varies N yields one panel per N.
        auto group_of = [](const std::string& name) {
            std::size_t pos = name.size();
            while (pos > 0 && std::isdigit(static_cast<unsigned char>(name[pos - 1]))) --pos;
            return name.substr(pos);
        };
        std::vector<std::string> groups;
        for (const auto& [name, col] : targets) {
            const std::string g = group_of(name);
            if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
        }

        script << "set key top right\nset xlabel 'step k'\nset ylabel 'value'\n";
        script << "set multiplot layout 1," << groups.size() << "\n";
        for (const auto& g : groups) {
            script << "set title '" << (g.empty() ? std::string("filters") : "N = " + g)
                   << "'\n";
            script << "plot ";
            bool first = true;
            for (const auto& [name, col] : targets) {
                if (group_of(name) != g) continue;
                if (!first) script << ", \\\n     ";
                // Restrict to the first replication.
                script << "csv using 2:($1==1 ? $" << col << " : 1/0) with lines title '"
                       << name << "'";
                first = false;
            }
            script << "\n";
        }
        script << "unset multiplot\n";
    } else if (plot_kind == "error_vs_n") {
        const std::vector<std::string> expect = {"n", "metric", "max_over_t", "argmax_t",
                                                 "stderr_at_argmax"};
        if (cols != expect)
            throw SchemaError("expected sweep max CSV header "
                              "'n,metric,max_over_t,argmax_t,stderr_at_argmax', got '" +
                              header_line + "'");
        // Anchor the slope -1/2 reference line at the first data row.
        std::string first_row;
        std::getline(in, first_row);
        double ref_n = 1.0, ref_v = 1.0;
        if (!first_row.empty()) {
            const auto vals = detail::split_csv_header(first_row);
            ref_n = std::stod(vals[0]);
            ref_v = std::stod(vals[2]);
        }
        script << "set logscale xy\n";
        script << "set xlabel 'particles N'\nset ylabel 'max over T of time-average error'\n";
        script << "ref(x) = " << format_double(ref_v) << " * sqrt(" << format_double(ref_n)
               << " / x)\n";
        script << "plot csv using 1:3:5 with yerrorlines title 'measured', \\\n"
               << "     ref(x) with lines dashtype 2 title 'slope -1/2 reference'\n";
    } else {
        throw SchemaError("unknown plot kind '" + plot_kind +
                          "' (expected error_vs_time or error_vs_n)");
    }

    std::ofstream out(script_path, std::ios::binary);
    if (!out) throw SchemaError("cannot write script '" + script_path + "'");
    out << script.str();
    return script_path;
}

// ---------------------------------------------------------------------------
// Single-trajectory outputs for the simulate / filter subcommands
// ---------------------------------------------------------------------------

inline std::string trajectory_csv(const Trajectory& traj) {
    std::string out = "k";
    const std::size_t d = traj.states[0].size(), m = traj.observations[0].size();
    for (std::size_t i = 0; i < d; ++i) out += ",x_" + format_u64(i);
    for (std::size_t i = 0; i < m; ++i) out += ",y_" + format_u64(i);
    out += "\n";
    for (std::size_t k = 0; k < traj.states.size(); ++k) {
        out += format_u64(k);
        for (double v : traj.states[k]) out += "," + format_double(v);
        for (double v : traj.observations[k]) out += "," + format_double(v);
        out += "\n";
    }
    return out;
}

/// Filter a single simulated trajectory with every configured filter;
/// returns a per-step CSV of conditional means (plus effective sample
/// sizes for the particle filters).
inline std::string filter_single_csv(const ExperimentConfig& config) {
    if (config.filters.empty()) throw ConfigError("filters", "need at least one filter");
    const ModelSpec model = build_model(config.model);
    const Trajectory traj = simulate(model, config.horizon, derive_key(config.seed, 0));

    std::vector<std::unique_ptr<FilterRunner>> runners;
    for (std::size_t i = 0; i < config.filters.size(); ++i)
        runners.push_back(make_runner(config.filters[i], config, model,
                                      RngStream(derive_key(config.seed, 1), i)));

    std::string out = "k";
    const std::size_t m = traj.observations[0].size();
    for (std::size_t i = 0; i < m; ++i) out += ",y_" + format_u64(i);
    for (const auto& f : config.filters) out += "," + f.name + "_mean";
    for (const auto& f : config.filters)
        if (f.kind == "bootstrap" || f.kind == "naive") out += ",ess_" + f.name;
    out += "\n";

    for (std::size_t k = 0; k <= config.horizon; ++k) {
        const Obs& y = traj.observations[k];
        for (auto& r : runners) r->consume(k, y);
        out += format_u64(k);
        for (double v : y) out += "," + format_double(v);
        for (auto& r : runners) out += "," + format_double(r->mean());
        for (std::size_t i = 0; i < runners.size(); ++i)
            if (config.filters[i].kind == "bootstrap" || config.filters[i].kind == "naive")
                out += "," + format_double(runners[i]->ess());
        out += "\n";
    }
    return out;
}

} // namespace smc
