#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ptmap/triangular_map.hpp"

namespace ptmap {

struct Lorenz63Params {
    double sigma = 10.0;
    double beta = 8.0 / 3.0;
    double rho = 28.0;
    double dt = 0.05;
    double obs_interval = 0.1;
    double obs_sigma = 0.25;
    int steps = 1000;
    int spinup = 250;

    /// Throws std::invalid_argument on nonpositive values or a non-integer
    /// number of integration steps per observation interval.
    void validate() const;
    int substeps() const;
};

Eigen::Vector3d lorenz63_rhs(const Eigen::Vector3d& x, const Lorenz63Params& p);
/// Classical RK4; throws std::runtime_error on a non-finite result.
Eigen::Vector3d rk4_step(const Eigen::Vector3d& x, const Lorenz63Params& p, double dt);
/// Advance by one observation interval.
Eigen::Vector3d forecast(const Eigen::Vector3d& x, const Lorenz63Params& p);

/// Truth trajectory after spin-up and the observations at steps 1..steps.
struct TwinTruth {
    std::vector<Eigen::Vector3d> states;
    std::vector<Eigen::Vector3d> observations;
};
/// Depends only on the parameters and seed, never on the filter.
TwinTruth simulate_truth(const Lorenz63Params& params, std::uint64_t seed);

enum class FilterMethod { transport, linear };
std::string to_string(FilterMethod m);
FilterMethod filter_method_from_string(const std::string& s);

/// Mean over members of the per-member RMSE against the truth.
double ensemble_rmse(const Eigen::MatrixXd& ensemble, const Eigen::VectorXd& truth);
/// RMSE of the ensemble mean.
double ensemble_mean_rmse(const Eigen::MatrixXd& ensemble, const Eigen::VectorXd& truth);

/// Stochastic EnKF update of every column from a scalar observation of column
/// `observed`, with perturbed observations y_i = x_i + eps_i.
void linear_baseline_update(Eigen::MatrixXd& ensemble, int observed, double obs, double obs_sigma,
                            std::mt19937_64& rng);

/// Parent sets of the four-variable observation map (y, x_v, x_v+1, x_v+2).
std::vector<std::vector<int>> observation_map_parents();

struct FilterOptions {
    AdaptOptions adapt;
    bool warm_start = true;
    std::array<int, 3> order{0, 1, 2};
    int threads = 1;
};

struct StepRecord {
    int step = 0;
    double rmse = 0.0;
    double mean_rmse = 0.0;
    /// edf / basis size for S_2, S_3, S_4, averaged over the three updates (NaN for the baseline).
    std::array<double, 3> edf_fraction{};
};

struct FilterRunResult {
    FilterMethod method = FilterMethod::transport;
    int n = 0;
    std::uint64_t seed = 0;
    std::vector<StepRecord> steps;
    double time_avg_rmse = 0.0;
    double time_avg_mean_rmse = 0.0;
    bool diverged = false;
    std::string failure;
};

FilterRunResult run_filter(const Lorenz63Params& params, int n_ensemble, std::uint64_t seed, FilterMethod method,
                           const FilterOptions& options = {});

}  // namespace ptmap
