#include "ptmap/map_component.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "ptmap/log.hpp"

namespace ptmap {

Eigen::MatrixXd cumsum_matrix(int p) {
    return Eigen::MatrixXd::Ones(p, p).triangularView<Eigen::Lower>();
}

MapComponent::MapComponent(int index, std::vector<int> parents, std::vector<SplineBasis> parent_bases,
                           SplineBasis monotone_basis)
    : index_(index),
      parents_(std::move(parents)),
      parent_bases_(std::move(parent_bases)),
      monotone_basis_(std::move(monotone_basis)) {
    if (parents_.size() != parent_bases_.size())
        throw std::invalid_argument("one basis per parent is required");
    for (int p : parents_) {
        if (p < 0 || p >= index_)
            throw std::invalid_argument("component " + std::to_string(index_) +
                                        ": parent " + std::to_string(p) + " is not below it");
    }
    for (const auto& b : parent_bases_) {
        offsets_.push_back(num_nonmonotone_);
        num_nonmonotone_ += b.size();
    }
    beta_non_ = Eigen::VectorXd::Zero(num_nonmonotone_);
    beta_mon_raw_ = Eigen::VectorXd::Zero(num_monotone());
    beta_mon_ = Eigen::VectorXd::Zero(num_monotone());
    log_lambdas_ = Eigen::VectorXd::Zero(num_blocks());
}

void MapComponent::set_coefficients(Eigen::VectorXd beta_non, Eigen::VectorXd beta_mon_raw) {
    if (beta_non.size() != num_nonmonotone_ || beta_mon_raw.size() != num_monotone())
        throw std::invalid_argument("coefficient vector sizes do not match the bases");
    for (Eigen::Index i = 1; i < beta_mon_raw.size(); ++i) {
        if (beta_mon_raw[i] < 0.0) throw std::invalid_argument("monotone increments must be nonnegative");
    }
    beta_non_ = std::move(beta_non);
    beta_mon_raw_ = std::move(beta_mon_raw);
    beta_mon_.resize(beta_mon_raw_.size());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < beta_mon_raw_.size(); ++i) beta_mon_[i] = acc += beta_mon_raw_[i];
}

void MapComponent::set_log_lambdas(Eigen::VectorXd log_lambdas) {
    if (log_lambdas.size() != num_blocks())
        throw std::invalid_argument("one smoothing parameter per block is required");
    log_lambdas_ = std::move(log_lambdas);
}

double MapComponent::nonmonotone_part(std::span<const double> x_row) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < parents_.size(); ++k) {
        const auto& basis = parent_bases_[k];
        acc += basis.value(x_row[parents_[k]], beta_non_.segment(offsets_[k], basis.size()));
    }
    return acc;
}

double MapComponent::monotone_part(double x_last) const {
    return monotone_basis_.value(x_last, beta_mon_);
}

double MapComponent::eval(std::span<const double> x_row) const {
    if (static_cast<int>(x_row.size()) <= index_) throw std::invalid_argument("input row too short");
    return nonmonotone_part(x_row) + monotone_part(x_row[index_]);
}

double MapComponent::ddx(std::span<const double> x_row) const {
    if (static_cast<int>(x_row.size()) <= index_) throw std::invalid_argument("input row too short");
    const double d = monotone_basis_.deriv(x_row[index_], beta_mon_);
    if (!(d > 0.0)) log().debug("component {}: nonpositive derivative {} at x={}", index_, d, x_row[index_]);
    return d;
}

double MapComponent::invert_in_last(std::span<const double> x_row, double z_target) const {
    if (std::isnan(z_target)) throw std::invalid_argument("inversion target is NaN");
    if (beta_mon_raw_.size() < 2 || beta_mon_raw_.tail(beta_mon_raw_.size() - 1).maxCoeff() <= 0.0)
        throw std::domain_error("component " + std::to_string(index_) + ": flat monotone term is not invertible");

    const double target = z_target - nonmonotone_part(x_row);
    const double tol = 1e-10 * std::max(1.0, std::abs(z_target));
    const auto& mb = monotone_basis_;
    const double lo_x = mb.knots().first();
    const double hi_x = mb.knots().last();
    const double f_lo = mb.value(lo_x, beta_mon_);
    const double f_hi = mb.value(hi_x, beta_mon_);

    // Affine tails: closed-form solve.
    if (target < f_lo) {
        const double slope = mb.deriv(lo_x, beta_mon_);
        if (!(slope > 0.0))
            throw std::domain_error("component " + std::to_string(index_) + ": target below a flat left tail");
        return lo_x + (target - f_lo) / slope;
    }
    if (target > f_hi) {
        const double slope = mb.deriv(hi_x, beta_mon_);
        if (!(slope > 0.0))
            throw std::domain_error("component " + std::to_string(index_) + ": target above a flat right tail");
        return hi_x + (target - f_hi) / slope;
    }

    // Safeguarded Newton on the bracket [a, b] with f(a) <= target <= f(b).
    double a = lo_x, b = hi_x;
    double x = (f_hi > f_lo) ? lo_x + (target - f_lo) / (f_hi - f_lo) * (hi_x - lo_x) : 0.5 * (a + b);
    for (int iter = 0; iter < 200; ++iter) {
        const double r = mb.value(x, beta_mon_) - target;
        if (std::abs(r) <= tol) return x;
        if (r < 0.0) a = x; else b = x;
        const double slope = mb.deriv(x, beta_mon_);
        double next = (slope > 0.0) ? x - r / slope : a - 1.0;
        if (!(next > a && next < b)) next = 0.5 * (a + b);
        if (b - a <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x))) return next;
        x = next;
    }
    throw std::runtime_error("component " + std::to_string(index_) + ": inversion did not converge");
}

void to_json(nlohmann::json& j, const MapComponent& c) {
    nlohmann::json terms = nlohmann::json::array();
    for (std::size_t k = 0; k < c.parents().size(); ++k) {
        const auto& basis = c.parent_bases()[k];
        const auto coef = c.beta_non().segment(c.parent_offset(k), basis.size());
        terms.push_back({{"parent", c.parents()[k]},
                         {"degree", basis.degree()},
                         {"knots", basis.knots().real()},
                         {"coefficients", std::vector<double>(coef.begin(), coef.end())}});
    }
    const auto& mb = c.monotone_basis();
    const auto& raw = c.beta_mon_raw();
    const auto& ll = c.log_lambdas();
    j = {{"index", c.index()},
         {"parent_terms", terms},
         {"monotone_term",
          {{"degree", mb.degree()},
           {"knots", mb.knots().real()},
           {"raw_coefficients", std::vector<double>(raw.begin(), raw.end())}}},
         {"log_lambdas", std::vector<double>(ll.begin(), ll.end())}};
}

MapComponent component_from_json(const nlohmann::json& j) {
    std::vector<int> parents;
    std::vector<SplineBasis> bases;
    std::vector<double> non;
    for (const auto& t : j.at("parent_terms")) {
        parents.push_back(t.at("parent").get<int>());
        bases.emplace_back(KnotVector(t.at("knots").get<std::vector<double>>(), t.at("degree").get<int>()));
        const auto coef = t.at("coefficients").get<std::vector<double>>();
        if (static_cast<int>(coef.size()) != bases.back().size())
            throw std::invalid_argument("parent term coefficient count does not match its basis");
        non.insert(non.end(), coef.begin(), coef.end());
    }
    const auto& m = j.at("monotone_term");
    SplineBasis mb(KnotVector(m.at("knots").get<std::vector<double>>(), m.at("degree").get<int>()));
    MapComponent c(j.at("index").get<int>(), std::move(parents), std::move(bases), std::move(mb));
    const auto raw = m.at("raw_coefficients").get<std::vector<double>>();
    c.set_coefficients(Eigen::Map<const Eigen::VectorXd>(non.data(), static_cast<Eigen::Index>(non.size())),
                       Eigen::Map<const Eigen::VectorXd>(raw.data(), static_cast<Eigen::Index>(raw.size())));
    const auto ll = j.at("log_lambdas").get<std::vector<double>>();
    c.set_log_lambdas(Eigen::Map<const Eigen::VectorXd>(ll.data(), static_cast<Eigen::Index>(ll.size())));
    return c;
}

}  // namespace ptmap
