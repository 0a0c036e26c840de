#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "ptmap/spline_basis.hpp"

namespace ptmap {

/// One triangular component S_j(x) = sum_{k in parents} s_k(x_k) + f(x_j).
///
/// The parent terms s_k are unconstrained P-splines. The last term f is a
/// monotone P-spline whose coefficients are the cumulative sum of the raw
/// parameters: raw[0] is a free level, raw[1..] are nonnegative increments.
class MapComponent {
public:
    MapComponent(int index, std::vector<int> parents, std::vector<SplineBasis> parent_bases,
                 SplineBasis monotone_basis);

    int index() const { return index_; }
    const std::vector<int>& parents() const { return parents_; }
    const std::vector<SplineBasis>& parent_bases() const { return parent_bases_; }
    const SplineBasis& monotone_basis() const { return monotone_basis_; }

    /// Total number of nonmonotone coefficients (sum over parent bases).
    int num_nonmonotone() const { return num_nonmonotone_; }
    int num_monotone() const { return monotone_basis_.size(); }
    /// Offset of parent term k inside the concatenated nonmonotone vector.
    int parent_offset(std::size_t k) const { return offsets_[k]; }
    /// Number of smoothing blocks: one per parent plus the monotone term.
    int num_blocks() const { return static_cast<int>(parents_.size()) + 1; }

    const Eigen::VectorXd& beta_non() const { return beta_non_; }
    const Eigen::VectorXd& beta_mon_raw() const { return beta_mon_raw_; }
    /// Cumulative sum of the raw monotone parameters.
    const Eigen::VectorXd& beta_mon() const { return beta_mon_; }
    const Eigen::VectorXd& log_lambdas() const { return log_lambdas_; }

    void set_coefficients(Eigen::VectorXd beta_non, Eigen::VectorXd beta_mon_raw);
    void set_log_lambdas(Eigen::VectorXd log_lambdas);

    /// Sum of the parent terms at the parent coordinates of `x_row`.
    double nonmonotone_part(std::span<const double> x_row) const;
    double monotone_part(double x_last) const;

    double eval(std::span<const double> x_row) const;
    /// dS_j/dx_j. Only the monotone term depends on x_j.
    double ddx(std::span<const double> x_row) const;

    /// Solve S_j(x_parents, x_j) = z_target for x_j. `x_row` supplies the
    /// parent coordinates; entries at index() and beyond are ignored.
    double invert_in_last(std::span<const double> x_row, double z_target) const;

private:
    int index_;
    std::vector<int> parents_;
    std::vector<SplineBasis> parent_bases_;
    SplineBasis monotone_basis_;
    std::vector<int> offsets_;
    int num_nonmonotone_ = 0;

    Eigen::VectorXd beta_non_;
    Eigen::VectorXd beta_mon_raw_;
    Eigen::VectorXd beta_mon_;
    Eigen::VectorXd log_lambdas_;
};

/// Lower-triangular ones matrix: beta_mon = cumsum_matrix(p) * raw.
Eigen::MatrixXd cumsum_matrix(int p);

void to_json(nlohmann::json& j, const MapComponent& c);
MapComponent component_from_json(const nlohmann::json& j);

}  // namespace ptmap
