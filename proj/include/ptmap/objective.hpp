#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "ptmap/map_component.hpp"

namespace ptmap {

/// Signals an indefinite or singular system, or a violated log barrier.
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// n - edf - 1 <= 0: the corrected criterion is undefined.
class ModelTooComplex : public FitError {
public:
    using FitError::FitError;
};

/// Basis evaluations at the training samples for one component.
///
/// Coefficients are ordered (beta_non, raw) where raw are the monotone
/// parameters before the cumulative sum. Smoothing block k < num_parents is
/// parent term k; the last block is the monotone term.
struct DesignCache {
    Eigen::MatrixXd P_non;  // n x m
    Eigen::MatrixXd P_mon;  // n x p
    Eigen::MatrixXd b;      // n x p, x_j-derivatives of the monotone basis
    Eigen::MatrixXd T;      // p x p cumulative sum

    // Derived once at construction.
    Eigen::MatrixXd bT;        // b T
    Eigen::MatrixXd PmonT;     // P_mon T
    Eigen::MatrixXd PtP_non;   // P_non^T P_non
    Eigen::MatrixXd PtP_cross; // P_non^T P_mon
    Eigen::MatrixXd PtP_mon;   // P_mon^T P_mon

    std::vector<Eigen::MatrixXd> grams;  // unscaled D^T D, one per block
    std::vector<int> block_offsets;      // offsets into beta_non, plus m for the monotone block
    std::vector<int> block_sizes;
    Eigen::VectorXd identity_raw;        // raw parameters giving f(x) = x
    double ridge = 1e-8;

    int n() const { return static_cast<int>(P_mon.rows()); }
    int m() const { return static_cast<int>(P_non.cols()); }
    int p() const { return static_cast<int>(P_mon.cols()); }
    int num_blocks() const { return static_cast<int>(grams.size()); }
    int dim() const { return m() + p(); }
};

/// `data` holds one sample per row in the component's input coordinates.
DesignCache make_design_cache(const MapComponent& component, const Eigen::MatrixXd& data,
                              double ridge = 1e-8);

/// Build a cache directly from basis evaluations (used by tests and toy problems).
DesignCache make_design_cache(Eigen::MatrixXd P_non, Eigen::MatrixXd P_mon, Eigen::MatrixXd b,
                              std::vector<int> parent_block_sizes, Eigen::VectorXd identity_raw,
                              double ridge = 1e-8);

/// Sample-summed transport objective: sum_i 0.5 S(x_i)^2 - log dS/dx_j(x_i).
double nll(const DesignCache& cache, const Eigen::VectorXd& beta_non, const Eigen::VectorXd& raw);

/// nll plus 0.5 beta^T S beta with S the lambda-scaled grams plus the ridge.
double penalized_objective(const DesignCache& cache, const Eigen::VectorXd& log_lambdas,
                           const Eigen::VectorXd& beta_non, const Eigen::VectorXd& raw);

/// Penalty pieces at fixed smoothing parameters.
class PenalizedSystem {
public:
    PenalizedSystem(const DesignCache& cache, const Eigen::VectorXd& log_lambdas);

    const DesignCache& cache() const { return *cache_; }
    const Eigen::VectorXd& log_lambdas() const { return log_lambdas_; }
    const Eigen::MatrixXd& S_non() const { return S_non_; }
    const Eigen::MatrixXd& S_mon() const { return S_mon_; }
    /// T^T (A^T A + D^T S_non D + S_mon) T in raw coordinates.
    const Eigen::MatrixXd& reduced_quadratic() const { return Q_raw_; }

    /// Minimizer over beta_non with the monotone parameters held fixed.
    Eigen::VectorXd solve_non(const Eigen::VectorXd& raw) const;

private:
    const DesignCache* cache_;
    Eigen::VectorXd log_lambdas_;
    Eigen::MatrixXd S_non_;
    Eigen::MatrixXd S_mon_;
    Eigen::LLT<Eigen::MatrixXd> normal_;  // P_non^T P_non + S_non
    Eigen::MatrixXd Q_raw_;
};

Eigen::VectorXd solve_non_closed_form(const DesignCache& cache, const Eigen::VectorXd& log_lambdas,
                                      const Eigen::VectorXd& raw);

struct ReducedObjective {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

/// Penalized objective with beta_non eliminated, in raw monotone coordinates.
ReducedObjective reduced_penalized_objective(const PenalizedSystem& system, const Eigen::VectorXd& raw,
                                             bool with_hessian = true);
ReducedObjective reduced_penalized_objective(const DesignCache& cache, const Eigen::VectorXd& log_lambdas,
                                             const Eigen::VectorXd& raw);

struct InnerOptions {
    double tolerance = 1e-8;
    int max_iterations = 500;
};

struct InnerSolution {
    Eigen::VectorXd beta_non;
    Eigen::VectorXd raw;
    std::vector<bool> free;  // per full coordinate; pinned increments are false
    double penalized_value = 0.0;
    double projected_gradient_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Projected Newton on the reduced objective with raw[1..] >= 0.
InnerSolution solve_inner(const PenalizedSystem& system, const std::optional<Eigen::VectorXd>& warm_raw = {},
                          const InnerOptions& options = {});

struct EdfResult {
    double total = 0.0;
    /// Per block: tr(Hpen_bb^{-1} H_bb), the edf of one block with the others held fixed.
    Eigen::VectorXd per_block;
};

/// tr(Hpen^{-1} H) over the free coordinates of an inner solution.
EdfResult edf(const PenalizedSystem& system, const InnerSolution& solution);
EdfResult edf(const DesignCache& cache, const Eigen::VectorXd& beta_non, const Eigen::VectorXd& raw,
              const Eigen::VectorXd& log_lambdas);

/// edf + edf (edf + 1) / (n - edf - 1).
double aicc_penalty(double edf, int n);
double aicc_penalty_derivative(double edf, int n);

struct FitReport {
    double nll = 0.0;
    double edf = 0.0;
    double aicc = 0.0;
    Eigen::VectorXd block_edf;
    Eigen::VectorXd log_lambdas;
    int inner_iterations = 0;
    int outer_iterations = 0;
    bool converged = false;
    double grad_norm = 0.0;
    int num_samples = 0;
    int num_parameters = 0;
    int num_pinned = 0;
    double ridge = 0.0;
};

struct OuterEvaluation {
    double aicc = 0.0;
    FitReport report;
    InnerSolution solution;
    Eigen::VectorXd gradient;  // empty unless requested
};

/// Inner fit at `log_lambdas`, then nll + AICc penalty. Throws ModelTooComplex
/// when the correction is undefined.
OuterEvaluation outer_objective(const DesignCache& cache, const Eigen::VectorXd& log_lambdas,
                                const std::optional<Eigen::VectorXd>& warm_raw = {},
                                bool with_gradient = false, const InnerOptions& inner = {});

/// Total derivative of the outer objective with respect to each log-lambda,
/// by implicit differentiation of the inner optimality conditions.
Eigen::VectorXd outer_gradient(const DesignCache& cache, const Eigen::VectorXd& log_lambdas,
                               const std::optional<Eigen::VectorXd>& warm_raw = {},
                               const InnerOptions& inner = {});

struct AdaptOptions {
    int max_outer_iterations = 50;
    double initial_log_lambda = 2.0;
    bool fixed_monotone = false;
    double fixed_monotone_log_lambda = 10.0;
    double gradient_tolerance = 1e-4;
    double value_tolerance = 1e-6;
    double log_lambda_bound = 20.0;
    double max_step = 3.0;
    InnerOptions inner;
};

/// Descent on log-lambda with Armijo backtracking and BFGS directions.
/// `start` overrides the initial point (warm start); fixed blocks keep their
/// start value.
OuterEvaluation adapt(const DesignCache& cache, const AdaptOptions& options,
                      const std::optional<Eigen::VectorXd>& start = {},
                      const std::optional<Eigen::VectorXd>& warm_raw = {});

}  // namespace ptmap
