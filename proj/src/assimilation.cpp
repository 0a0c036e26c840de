#include "ptmap/assimilation.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "ptmap/log.hpp"

namespace ptmap {

void Lorenz63Params::validate() const {
    for (double v : {sigma, beta, rho, dt, obs_interval, obs_sigma})
        if (!(v > 0.0)) throw std::invalid_argument("Lorenz-63 parameters must be positive");
    if (steps <= 0 || spinup < 0) throw std::invalid_argument("steps must be positive and spinup nonnegative");
    const double ratio = obs_interval / dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 || std::round(ratio) < 1)
        throw std::invalid_argument("obs_interval must be an integer multiple of dt");
}

int Lorenz63Params::substeps() const { return static_cast<int>(std::lround(obs_interval / dt)); }

Eigen::Vector3d lorenz63_rhs(const Eigen::Vector3d& x, const Lorenz63Params& p) {
    return {p.sigma * (x[1] - x[0]), x[0] * (p.rho - x[2]) - x[1], x[0] * x[1] - p.beta * x[2]};
}

Eigen::Vector3d rk4_step(const Eigen::Vector3d& x, const Lorenz63Params& p, double dt) {
    if (!x.allFinite()) throw std::runtime_error("non-finite model state");
    const Eigen::Vector3d k1 = lorenz63_rhs(x, p);
    const Eigen::Vector3d k2 = lorenz63_rhs(x + 0.5 * dt * k1, p);
    const Eigen::Vector3d k3 = lorenz63_rhs(x + 0.5 * dt * k2, p);
    const Eigen::Vector3d k4 = lorenz63_rhs(x + dt * k3, p);
    Eigen::Vector3d out = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!out.allFinite()) throw std::runtime_error("model state diverged");
    return out;
}

Eigen::Vector3d forecast(const Eigen::Vector3d& x, const Lorenz63Params& p) {
    Eigen::Vector3d s = x;
    for (int k = 0; k < p.substeps(); ++k) s = rk4_step(s, p, p.dt);
    return s;
}

TwinTruth simulate_truth(const Lorenz63Params& params, std::uint64_t seed) {
    params.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Eigen::Vector3d x(normal(rng), normal(rng), normal(rng));
    for (int s = 0; s < params.spinup; ++s) x = forecast(x, params);
    TwinTruth out;
    out.states.reserve(params.steps);
    out.observations.reserve(params.steps);
    for (int step = 1; step <= params.steps; ++step) {
        x = forecast(x, params);
        Eigen::Vector3d y;
        for (int k = 0; k < 3; ++k) y[k] = x[k] + params.obs_sigma * normal(rng);
        out.states.push_back(x);
        out.observations.push_back(y);
    }
    return out;
}

std::string to_string(FilterMethod m) { return m == FilterMethod::transport ? "transport" : "linear"; }

FilterMethod filter_method_from_string(const std::string& s) {
    if (s == "transport") return FilterMethod::transport;
    if (s == "linear" || s == "linear-baseline") return FilterMethod::linear;
    throw std::invalid_argument("unknown filter method '" + s + "'");
}

double ensemble_rmse(const Eigen::MatrixXd& ensemble, const Eigen::VectorXd& truth) {
    const auto d = static_cast<double>(truth.size());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < ensemble.rows(); ++i)
        acc += std::sqrt((ensemble.row(i).transpose() - truth).squaredNorm() / d);
    return acc / static_cast<double>(ensemble.rows());
}

double ensemble_mean_rmse(const Eigen::MatrixXd& ensemble, const Eigen::VectorXd& truth) {
    const Eigen::VectorXd mean = ensemble.colwise().mean().transpose();
    return std::sqrt((mean - truth).squaredNorm() / static_cast<double>(truth.size()));
}

void linear_baseline_update(Eigen::MatrixXd& ensemble, int observed, double obs, double obs_sigma,
                            std::mt19937_64& rng) {
    const auto n = ensemble.rows();
    std::normal_distribution<double> noise(0.0, obs_sigma);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = ensemble(i, observed) + noise(rng);
    const Eigen::VectorXd yc = y.array() - y.mean();
    const Eigen::MatrixXd xc = ensemble.rowwise() - ensemble.colwise().mean();
    const double cyy = yc.squaredNorm() / static_cast<double>(n - 1);
    if (!(cyy > 0.0)) throw std::runtime_error("singular innovation covariance");
    const Eigen::VectorXd gain = xc.transpose() * yc / static_cast<double>(n - 1) / cyy;
    for (Eigen::Index i = 0; i < n; ++i) ensemble.row(i) += gain.transpose() * (obs - y[i]);
}

std::vector<std::vector<int>> observation_map_parents() { return {{}, {0}, {1}, {1, 2}}; }

namespace {

struct TransportState {
    // Warm-start log-lambdas per observed variable and component.
    std::array<std::vector<std::optional<Eigen::VectorXd>>, 3> warm;
};

// One transport update for an observation of state variable v; returns edf fractions of S_2..S_4.
std::array<double, 3> transport_update(Eigen::MatrixXd& ens, int v, double obs, const Lorenz63Params& p,
                                       const FilterOptions& opt, TransportState& state, std::mt19937_64& rng) {
    const auto n = ens.rows();
    std::normal_distribution<double> noise(0.0, p.obs_sigma);
    Eigen::MatrixXd joint(n, 4);
    for (Eigen::Index i = 0; i < n; ++i) {
        joint(i, 0) = ens(i, v) + noise(rng);
        for (int k = 0; k < 3; ++k) joint(i, 1 + k) = ens(i, (v + k) % 3);
    }
    MapFitConfig cfg;
    cfg.adapt = opt.adapt;
    cfg.block_split = 1;
    cfg.fit_block_a = false;
    cfg.threads = opt.threads;
    if (opt.warm_start && !state.warm[v].empty()) cfg.warm_log_lambdas = state.warm[v];
    const MapFitResult res = fit(Ensemble(joint), observation_map_parents(), cfg);

    std::array<double, 3> frac{};
    state.warm[v].assign(4, std::nullopt);
    for (int j = 1; j < 4; ++j) {
        const FitReport& r = *res.reports[j];
        frac[j - 1] = r.edf / static_cast<double>(r.num_parameters);
        state.warm[v][j] = r.log_lambdas;
    }
    const double ystar[1] = {obs};
    const Eigen::MatrixXd updated = res.map.conditional_update(joint, ystar, opt.threads);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) ens(i, (v + k) % 3) = updated(i, k);
    return frac;
}

}  // namespace

FilterRunResult run_filter(const Lorenz63Params& params, int n_ensemble, std::uint64_t seed, FilterMethod method,
                           const FilterOptions& options) {
    params.validate();
    if (n_ensemble < 16) throw std::invalid_argument("ensemble size must be at least 16");
    FilterRunResult out;
    out.method = method;
    out.n = n_ensemble;
    out.seed = seed;

    // Separate streams so the truth and observations do not depend on the method or n.
    const TwinTruth twin = simulate_truth(params, seed);
    std::mt19937_64 ens_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal;

    Eigen::MatrixXd ens(n_ensemble, 3);
    for (int i = 0; i < n_ensemble; ++i) {
        Eigen::Vector3d x(normal(ens_rng), normal(ens_rng), normal(ens_rng));
        for (int s = 0; s < params.spinup; ++s) x = forecast(x, params);
        ens.row(i) = x.transpose();
    }

    TransportState tstate;
    double sum = 0.0, sum_mean = 0.0;
    for (int step = 1; step <= params.steps; ++step) {
        const Eigen::Vector3d& truth = twin.states[step - 1];
        const Eigen::Vector3d& obs = twin.observations[step - 1];

        StepRecord rec;
        rec.step = step;
        try {
            for (Eigen::Index i = 0; i < ens.rows(); ++i)
                ens.row(i) = forecast(ens.row(i).transpose(), params).transpose();
            rec.edf_fraction.fill(method == FilterMethod::linear ? std::numeric_limits<double>::quiet_NaN() : 0.0);
            for (int v : options.order) {
                if (method == FilterMethod::linear) {
                    linear_baseline_update(ens, v, obs[v], params.obs_sigma, ens_rng);
                } else {
                    const auto f = transport_update(ens, v, obs[v], params, options, tstate, ens_rng);
                    for (int k = 0; k < 3; ++k) rec.edf_fraction[k] += f[k] / 3.0;
                }
            }
            rec.rmse = ensemble_rmse(ens, truth);
            rec.mean_rmse = ensemble_mean_rmse(ens, truth);
        } catch (const std::exception& e) {
            out.diverged = true;
            out.failure = "step " + std::to_string(step) + ": " + e.what();
            log().warn("{} n={} seed={}: {}", to_string(method), n_ensemble, seed, out.failure);
            break;
        }
        out.steps.push_back(rec);
        sum += rec.rmse;
        sum_mean += rec.mean_rmse;
        if (!std::isfinite(rec.rmse) || rec.rmse > 100.0) {
            out.diverged = true;
            out.failure = "step " + std::to_string(step) + ": RMSE " + std::to_string(rec.rmse);
            log().warn("{} n={} seed={}: diverged ({})", to_string(method), n_ensemble, seed, out.failure);
            break;
        }
    }
    const auto count = static_cast<double>(std::max<std::size_t>(1, out.steps.size()));
    out.time_avg_rmse = out.steps.empty() ? std::numeric_limits<double>::infinity() : sum / count;
    out.time_avg_mean_rmse = out.steps.empty() ? std::numeric_limits<double>::infinity() : sum_mean / count;
    if (out.diverged) {
        // A run that stopped early is not comparable with completed ones.
        out.time_avg_rmse = std::max(out.time_avg_rmse, 100.0);
        out.time_avg_mean_rmse = std::max(out.time_avg_mean_rmse, 100.0);
    }
    return out;
}

}  // namespace ptmap
