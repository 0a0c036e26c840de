#include "ptmap/spline_basis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ptmap/log.hpp"

namespace ptmap {

namespace {

// Smallest c with c^3 >= n.
int ceil_cbrt(long n) {
    long c = static_cast<long>(std::cbrt(static_cast<double>(n)));
    while (c * c * c < n) ++c;
    while (c > 1 && (c - 1) * (c - 1) * (c - 1) >= n) --c;
    return static_cast<int>(c);
}

void check_finite(double x) {
    if (std::isnan(x)) throw std::invalid_argument("spline evaluation at NaN");
}

}  // namespace

KnotVector::KnotVector(std::vector<double> real_knots, int degree)
    : real_(std::move(real_knots)), degree_(degree) {
    if (degree_ < 0) throw std::invalid_argument("negative spline degree");
    if (real_.size() < 2) throw std::invalid_argument("at least two real knots are required");
    for (std::size_t i = 1; i < real_.size(); ++i) {
        if (!(real_[i] > real_[i - 1]))
            throw std::invalid_argument("real knots must be strictly increasing");
    }
    padded_.reserve(real_.size() + 2 * degree_);
    padded_.insert(padded_.end(), degree_, real_.front());
    padded_.insert(padded_.end(), real_.begin(), real_.end());
    padded_.insert(padded_.end(), degree_, real_.back());
}

double quantile_sorted(std::span<const double> sorted, double prob) {
    if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

KnotVector make_knots(std::span<const double> samples, int degree, std::optional<int> num_knots) {
    std::vector<double> sorted(samples.begin(), samples.end());
    for (double v : sorted) {
        if (!std::isfinite(v)) throw std::invalid_argument("make_knots: non-finite sample");
    }
    if (sorted.size() < 8)
        throw std::invalid_argument("make_knots: need at least 8 samples, got " +
                                    std::to_string(sorted.size()));
    std::sort(sorted.begin(), sorted.end());

    std::vector<double> unique = sorted;
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    if (unique.size() < 2) throw DegenerateDimension("make_knots: all samples are equal");

    int count = 0;
    if (num_knots) {
        count = *num_knots;
        if (count < 2) throw std::invalid_argument("make_knots: need at least two knots");
    } else if (unique.size() >= 8) {
        count = ceil_cbrt(static_cast<long>(unique.size())) + 2;
    } else {
        count = std::max(4, static_cast<int>(unique.size()) - 1);
        log().warn("make_knots: only {} unique samples, using {} knots", unique.size(), count);
    }

    const double q10 = quantile_sorted(sorted, 0.1);
    const double q90 = quantile_sorted(sorted, 0.9);
    if (!(q90 > q10)) throw DegenerateDimension("make_knots: 10% and 90% quantiles coincide");

    std::vector<double> real(count);
    const double step = (q90 - q10) / (count - 1);
    for (int i = 0; i < count; ++i) real[i] = q10 + step * i;
    real.back() = q90;
    return KnotVector(std::move(real), degree);
}

SplineBasis::SplineBasis(KnotVector knots)
    : knots_(std::move(knots)),
      size_(static_cast<int>(knots_.real().size()) + knots_.degree() - 1) {}

int SplineBasis::find_span(double x) const {
    const auto& t = knots_.padded();
    const int d = degree();
    const int lo = d;
    const int hi = d + static_cast<int>(knots_.real().size()) - 2;  // last real interval
    const auto it = std::upper_bound(t.begin() + lo, t.begin() + hi + 1, x);
    const int span = static_cast<int>(it - t.begin()) - 1;
    return std::clamp(span, lo, hi);
}

void SplineBasis::local_interior(double x, int span, Local& out) const {
    const auto& t = knots_.padded();
    const int d = degree();
    out.first = span - d;
    out.value.assign(d + 1, 0.0);
    out.deriv.assign(d + 1, 0.0);

    std::vector<double> left(d + 1), right(d + 1), lower(d, 0.0);
    auto& n = out.value;
    n[0] = 1.0;
    for (int j = 1; j <= d; ++j) {
        if (j == d) std::copy(n.begin(), n.begin() + d, lower.begin());
        left[j] = x - t[span + 1 - j];
        right[j] = t[span + j] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    if (d == 0) return;

    // lower[k] holds B_{span-d+1+k, d-1}; B_{span-d, d-1} and B_{span+1, d-1} vanish.
    for (int k = 0; k <= d; ++k) {
        const int i = span - d + k;
        double acc = 0.0;
        if (k >= 1) {
            const double den = t[i + d] - t[i];
            if (den > 0.0) acc += lower[k - 1] / den;
        }
        if (k < d) {
            const double den = t[i + d + 1] - t[i + 1];
            if (den > 0.0) acc -= lower[k] / den;
        }
        out.deriv[k] = d * acc;
    }
}

void SplineBasis::local(double x, Local& out) const {
    check_finite(x);
    const double first = knots_.first();
    const double last = knots_.last();
    if (x < first) {
        local_interior(first, find_span(first), out);
        for (std::size_t k = 0; k < out.value.size(); ++k) out.value[k] += (x - first) * out.deriv[k];
    } else if (x > last) {
        local_interior(last, find_span(last), out);
        for (std::size_t k = 0; k < out.value.size(); ++k) out.value[k] += (x - last) * out.deriv[k];
    } else {
        local_interior(x, find_span(x), out);
    }
}

Eigen::VectorXd SplineBasis::eval(double x) const {
    Local loc;
    local(x, loc);
    Eigen::VectorXd row = Eigen::VectorXd::Zero(size_);
    for (std::size_t k = 0; k < loc.value.size(); ++k) row[loc.first + k] = loc.value[k];
    return row;
}

Eigen::VectorXd SplineBasis::eval_deriv(double x) const {
    Local loc;
    local(x, loc);
    Eigen::VectorXd row = Eigen::VectorXd::Zero(size_);
    for (std::size_t k = 0; k < loc.deriv.size(); ++k) row[loc.first + k] = loc.deriv[k];
    return row;
}

double SplineBasis::value(double x, const Eigen::Ref<const Eigen::VectorXd>& coeffs) const {
    Local loc;
    local(x, loc);
    double acc = 0.0;
    for (std::size_t k = 0; k < loc.value.size(); ++k) acc += coeffs[loc.first + k] * loc.value[k];
    return acc;
}

double SplineBasis::deriv(double x, const Eigen::Ref<const Eigen::VectorXd>& coeffs) const {
    Local loc;
    local(x, loc);
    double acc = 0.0;
    for (std::size_t k = 0; k < loc.deriv.size(); ++k) acc += coeffs[loc.first + k] * loc.deriv[k];
    return acc;
}

Eigen::MatrixXd SplineBasis::eval_matrix(std::span<const double> xs) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(xs.size()), size_);
    Local loc;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        local(xs[i], loc);
        for (std::size_t k = 0; k < loc.value.size(); ++k) out(i, loc.first + k) = loc.value[k];
    }
    return out;
}

Eigen::MatrixXd SplineBasis::deriv_matrix(std::span<const double> xs) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(xs.size()), size_);
    Local loc;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        local(xs[i], loc);
        for (std::size_t k = 0; k < loc.deriv.size(); ++k) out(i, loc.first + k) = loc.deriv[k];
    }
    return out;
}

Eigen::VectorXd SplineBasis::greville() const {
    const auto& t = knots_.padded();
    const int d = degree();
    Eigen::VectorXd g(size_);
    for (int i = 0; i < size_; ++i) {
        if (d == 0) {
            g[i] = 0.5 * (t[i] + t[i + 1]);
            continue;
        }
        double acc = 0.0;
        for (int k = 1; k <= d; ++k) acc += t[i + k];
        g[i] = acc / d;
    }
    return g;
}

PenaltyMatrix make_penalty(int num_basis, int order) {
    if (order < 1) throw std::invalid_argument("penalty order must be at least 1");
    if (num_basis <= order)
        throw std::invalid_argument("penalty needs more basis functions than its order");

    // Rows of the order-th forward difference: (-1)^(order-k) C(order, k).
    Eigen::VectorXd stencil(order + 1);
    double binom = 1.0;
    for (int k = 0; k <= order; ++k) {
        stencil[k] = ((order - k) % 2 == 0 ? 1.0 : -1.0) * binom;
        binom = binom * (order - k) / (k + 1);
    }

    PenaltyMatrix pen;
    pen.order = order;
    pen.difference = Eigen::MatrixXd::Zero(num_basis - order, num_basis);
    for (int r = 0; r < num_basis - order; ++r) pen.difference.row(r).segment(r, order + 1) = stencil.transpose();
    pen.gram = pen.difference.transpose() * pen.difference;
    return pen;
}

}  // namespace ptmap
