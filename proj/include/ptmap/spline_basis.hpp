#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace ptmap {

/// Thrown when a sample dimension carries no spread (all values equal, or
/// the 10% and 90% quantiles coincide). Callers may drop the term.
class DegenerateDimension : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Real knots plus `degree` repeated boundary knots on each side.
class KnotVector {
public:
    KnotVector(std::vector<double> real_knots, int degree);

    const std::vector<double>& real() const { return real_; }
    const std::vector<double>& padded() const { return padded_; }
    int degree() const { return degree_; }
    double first() const { return real_.front(); }
    double last() const { return real_.back(); }

private:
    std::vector<double> real_;
    std::vector<double> padded_;
    int degree_;
};

/// Real knots equally spaced between the empirical 10% and 90% quantiles.
/// The knot count is ceil(n_unique^(1/3)) + 2 unless `num_knots` is given.
KnotVector make_knots(std::span<const double> samples, int degree = 3,
                      std::optional<int> num_knots = std::nullopt);

/// Type-7 (linear interpolation) empirical quantile of an ascending sample.
double quantile_sorted(std::span<const double> sorted, double prob);

/// B-spline basis with linear extension beyond the outermost real knots.
///
/// Inside [first, last] the basis is the usual Cox-de Boor basis on the padded
/// knot vector. Outside, every basis function continues along its tangent at
/// the nearest boundary knot, so any spline built on it is affine in the tails.
class SplineBasis {
public:
    explicit SplineBasis(KnotVector knots);

    const KnotVector& knots() const { return knots_; }
    int degree() const { return knots_.degree(); }
    /// Number of basis functions (real knots + degree - 1).
    int size() const { return size_; }

    Eigen::VectorXd eval(double x) const;
    Eigen::VectorXd eval_deriv(double x) const;

    /// f(x) = sum_i coeffs[i] B_i(x), evaluated through the local support only.
    double value(double x, const Eigen::Ref<const Eigen::VectorXd>& coeffs) const;
    double deriv(double x, const Eigen::Ref<const Eigen::VectorXd>& coeffs) const;

    /// One row per sample.
    Eigen::MatrixXd eval_matrix(std::span<const double> xs) const;
    Eigen::MatrixXd deriv_matrix(std::span<const double> xs) const;

    /// Knot averages; these coefficients reproduce f(x) = x exactly.
    Eigen::VectorXd greville() const;

private:
    struct Local {
        int first = 0;  // index of the first nonzero basis function
        std::vector<double> value;
        std::vector<double> deriv;
    };

    // Values and derivatives of the degree+1 active functions at x, with the
    // tail extension applied.
    void local(double x, Local& out) const;
    void local_interior(double x, int span, Local& out) const;
    int find_span(double x) const;

    KnotVector knots_;
    int size_;
};

struct PenaltyMatrix {
    int order = 2;
    Eigen::MatrixXd difference;  // (num_basis - order) x num_basis
    Eigen::MatrixXd gram;        // difference^T difference
};

PenaltyMatrix make_penalty(int num_basis, int order = 2);

}  // namespace ptmap
