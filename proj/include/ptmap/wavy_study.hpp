#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ptmap/triangular_map.hpp"

namespace ptmap {

/// Bivariate target x1 ~ N(0,1), x2 = sin(omega x1) + noise * eps. The
/// density is defined by this artifact, not taken from a reference.
struct WavyGenerator {
    std::string name = "sine";
    double omega = 3.0;
    double noise = 0.25;
};

/// Throws std::invalid_argument for n < 8 or an unknown generator name.
Ensemble sample_wavy(int n, std::uint64_t seed, const WavyGenerator& generator = {});

std::vector<double> default_wavy_grid();

struct WavyConfig {
    int n = 30;
    int num_knots = 50;
    double monotone_log_lambda = 10.0;
    std::vector<double> grid = default_wavy_grid();
    std::uint64_t seed = 1;
    WavyGenerator generator;
    /// Size of each pushforward / pullback cloud.
    int cloud_size = 500;
    /// Cloud log-lambdas; empty selects the grid ends, quartiles and the AICc argmin.
    std::vector<double> cloud_log_lambdas;
    int threads = 1;

    void validate() const;
};

struct ProfileRow {
    double log_lambda = 0.0;
    double nll = 0.0;
    double edf = 0.0;
    double aicc = 0.0;  // NaN where n - edf - 1 <= 0
    bool ok = true;
    std::string error;
};

struct SampleCloud {
    double log_lambda = 0.0;
    Eigen::MatrixXd pushforward;  // S(x) of the ensemble
    Eigen::MatrixXd pullback;     // S^{-1}(z) of reference draws
};

struct WavyProfile {
    Ensemble ensemble;
    std::vector<ProfileRow> rows;
    std::vector<SampleCloud> clouds;
    /// Grid index of the smallest finite AICc, or -1.
    int argmin = -1;
};

/// Fits S_2 at each grid value of the nonmonotone log-lambda with the
/// monotone log-lambda fixed; S_1 uses the fixed monotone value too.
WavyProfile profile_lambda(const WavyConfig& config);

/// Single inner fit of S_2 at the given smoothing parameters.
FitReport fit_wavy_at(const WavyConfig& config, double nonmonotone_log_lambda, double monotone_log_lambda);

/// Gradient-based adaptation of the same problem from `start`; returns the
/// selected nonmonotone log-lambda and its report.
FitReport optimize_wavy(const WavyConfig& config, double start = 2.0);

}  // namespace ptmap
