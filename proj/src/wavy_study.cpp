#include "ptmap/wavy_study.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "ptmap/log.hpp"
#include "ptmap/objective.hpp"
#include "ptmap/parallel.hpp"

namespace ptmap {

Ensemble sample_wavy(int n, std::uint64_t seed, const WavyGenerator& generator) {
    if (n < 8) throw std::invalid_argument("wavy ensemble needs at least 8 samples");
    if (generator.name != "sine") throw std::invalid_argument("unknown wavy generator '" + generator.name + "'");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd x(n, 2);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = normal(rng);
        x(i, 1) = std::sin(generator.omega * x(i, 0)) + generator.noise * normal(rng);
    }
    return Ensemble(std::move(x), {"x1", "x2"});
}

std::vector<double> default_wavy_grid() {
    std::vector<double> g;
    for (int k = 0; k <= 40; ++k) g.push_back(-10.0 + 0.5 * k);
    return g;
}

void WavyConfig::validate() const {
    if (n < 8) throw std::invalid_argument("wavy n must be at least 8");
    if (num_knots < 2) throw std::invalid_argument("wavy num_knots must be at least 2");
    if (grid.empty()) throw std::invalid_argument("wavy grid is empty");
    for (std::size_t k = 1; k < grid.size(); ++k)
        if (!(grid[k] > grid[k - 1])) throw std::invalid_argument("wavy grid must be strictly ascending");
    if (cloud_size < 1) throw std::invalid_argument("cloud_size must be positive");
    if (generator.name != "sine") throw std::invalid_argument("unknown wavy generator '" + generator.name + "'");
}

namespace {

struct Problem {
    Ensemble ensemble;
    std::vector<Standardization> stdz;
    Eigen::MatrixXd u;
    MapComponent first;   // S_1, fixed monotone
    MapComponent second;  // S_2, coefficients set per grid point
    DesignCache cache;
};

std::vector<double> column(const Eigen::MatrixXd& m, int j) { return {m.col(j).data(), m.col(j).data() + m.rows()}; }

Problem build(const WavyConfig& cfg) {
    cfg.validate();
    Ensemble e = sample_wavy(cfg.n, cfg.seed, cfg.generator);
    std::vector<Standardization> stdz(2);
    Eigen::MatrixXd u(e.size(), 2);
    for (int j = 0; j < 2; ++j) {
        stdz[j] = standardization_of(column(e.data, j));
        u.col(j) = (e.data.col(j).array() - stdz[j].center) / stdz[j].scale;
    }
    const SplineBasis b1(make_knots(column(u, 0), 3, cfg.num_knots));
    const SplineBasis b2(make_knots(column(u, 1), 3, cfg.num_knots));
    MapComponent first(0, {}, {}, b1);
    MapComponent second(1, {0}, {b1}, b2);

    const DesignCache c1 = make_design_cache(first, u);
    const Eigen::VectorXd ll1 = Eigen::VectorXd::Constant(1, cfg.monotone_log_lambda);
    const InnerSolution s1 = solve_inner(PenalizedSystem(c1, ll1));
    first.set_coefficients(s1.beta_non, s1.raw);
    first.set_log_lambdas(ll1);

    DesignCache c2 = make_design_cache(second, u);
    return {std::move(e), std::move(stdz), std::move(u), std::move(first), std::move(second), std::move(c2)};
}

Eigen::Vector2d lambdas(const WavyConfig& cfg, double nonmonotone) { return {nonmonotone, cfg.monotone_log_lambda}; }

TriangularMap map_at(const Problem& p, const InnerSolution& s, const Eigen::VectorXd& ll) {
    MapComponent second = p.second;
    second.set_coefficients(s.beta_non, s.raw);
    second.set_log_lambdas(ll);
    return TriangularMap(p.ensemble.names, p.stdz, {p.first, std::move(second)});
}

// Inner fit at fixed smoothing; the AICc is NaN where it is undefined.
FitReport evaluate(const Problem& p, const Eigen::VectorXd& ll, InnerSolution& s) {
    const PenalizedSystem system(p.cache, ll);
    s = solve_inner(system);
    if (!s.converged) log().debug("wavy log-lambdas ({}, {}): inner solve not converged", ll[0], ll[1]);
    FitReport r;
    r.log_lambdas = ll;
    r.nll = nll(p.cache, s.beta_non, s.raw);
    const EdfResult e = edf(system, s);
    r.edf = e.total;
    r.block_edf = e.per_block;
    r.num_samples = p.cache.n();
    r.num_parameters = p.cache.dim();
    r.inner_iterations = s.iterations;
    r.converged = s.converged;
    r.ridge = p.cache.ridge;
    for (bool f : s.free) r.num_pinned += f ? 0 : 1;
    r.aicc = r.edf < r.num_samples - 1.0 ? r.nll + aicc_penalty(r.edf, r.num_samples)
                                         : std::numeric_limits<double>::quiet_NaN();
    return r;
}

}  // namespace

FitReport fit_wavy_at(const WavyConfig& config, double nonmonotone_log_lambda, double monotone_log_lambda) {
    const Problem p = build(config);
    InnerSolution s;
    return evaluate(p, Eigen::Vector2d(nonmonotone_log_lambda, monotone_log_lambda), s);
}

WavyProfile profile_lambda(const WavyConfig& cfg) {
    const Problem p = build(cfg);
    WavyProfile out;
    out.ensemble = p.ensemble;
    const int g = static_cast<int>(cfg.grid.size());
    out.rows.resize(g);
    std::vector<std::optional<InnerSolution>> solutions(g);
    const double nan = std::numeric_limits<double>::quiet_NaN();

    parallel_for(g, cfg.threads, [&](int k) {
        ProfileRow& row = out.rows[k];
        row.log_lambda = cfg.grid[k];
        try {
            InnerSolution s;
            const FitReport r = evaluate(p, lambdas(cfg, cfg.grid[k]), s);
            row.nll = r.nll;
            row.edf = r.edf;
            row.aicc = r.aicc;
            solutions[k] = std::move(s);
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
            row.nll = row.edf = row.aicc = nan;
            log().warn("wavy log-lambda {}: {}", cfg.grid[k], e.what());
        }
    });

    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < g; ++k)
        if (out.rows[k].ok && std::isfinite(out.rows[k].aicc) && out.rows[k].aicc < best) {
            best = out.rows[k].aicc;
            out.argmin = k;
        }

    std::vector<int> picks;
    if (cfg.cloud_log_lambdas.empty()) {
        picks = {0, g / 4, out.argmin, (3 * g) / 4, g - 1};
    } else {
        for (double v : cfg.cloud_log_lambdas) {
            const auto it = std::min_element(cfg.grid.begin(), cfg.grid.end(),
                                             [v](double a, double b) { return std::abs(a - v) < std::abs(b - v); });
            picks.push_back(static_cast<int>(it - cfg.grid.begin()));
        }
    }
    std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd z(cfg.cloud_size, 2);
    for (int i = 0; i < cfg.cloud_size; ++i) z.row(i) << normal(rng), normal(rng);
    for (int k : picks) {
        if (k < 0 || !solutions[k]) continue;
        const TriangularMap map = map_at(p, *solutions[k], lambdas(cfg, cfg.grid[k]));
        SampleCloud cloud;
        cloud.log_lambda = cfg.grid[k];
        cloud.pushforward = map.pushforward_ensemble(p.ensemble.data);
        cloud.pullback.resize(cfg.cloud_size, 2);
        for (int i = 0; i < cfg.cloud_size; ++i) {
            const double zi[2] = {z(i, 0), z(i, 1)};
            cloud.pullback.row(i) = map.inverse(zi).transpose();
        }
        out.clouds.push_back(std::move(cloud));
    }
    return out;
}

FitReport optimize_wavy(const WavyConfig& cfg, double start) {
    const Problem p = build(cfg);
    AdaptOptions opt;
    opt.fixed_monotone = true;
    opt.fixed_monotone_log_lambda = cfg.monotone_log_lambda;
    opt.initial_log_lambda = start;
    return adapt(p.cache, opt).report;
}

}  // namespace ptmap
