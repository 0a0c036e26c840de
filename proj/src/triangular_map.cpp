#include "ptmap/triangular_map.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "ptmap/log.hpp"
#include "ptmap/parallel.hpp"

namespace ptmap {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // 0.5 log(2 pi)

double log_normal_pdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }

std::vector<double> column(const Eigen::MatrixXd& m, int j) {
    std::vector<double> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[i] = m(i, j);
    return out;
}

}  // namespace

Ensemble::Ensemble(Eigen::MatrixXd data_, std::vector<std::string> names_)
    : data(std::move(data_)), names(std::move(names_)) {
    if (!data.allFinite()) throw std::invalid_argument("ensemble contains NaN or Inf entries");
    if (data.rows() < 8) throw std::invalid_argument("ensemble needs at least 8 members");
    if (names.empty()) {
        for (Eigen::Index j = 0; j < data.cols(); ++j) names.push_back("x" + std::to_string(j + 1));
    }
    if (static_cast<Eigen::Index>(names.size()) != data.cols())
        throw std::invalid_argument("expected one name per ensemble column");
}

Ensemble permute(const Ensemble& e, const std::vector<int>& order) {
    if (static_cast<int>(order.size()) != e.dim()) throw std::invalid_argument("permutation has the wrong length");
    std::vector<int> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (int k = 0; k < e.dim(); ++k)
        if (sorted[k] != k) throw std::invalid_argument("not a permutation");
    Ensemble out;
    out.data.resize(e.size(), e.dim());
    for (int k = 0; k < e.dim(); ++k) {
        out.data.col(k) = e.data.col(order[k]);
        out.names.push_back(e.names[order[k]]);
    }
    return out;
}

Standardization standardization_of(std::span<const double> values) {
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const double q25 = quantile_sorted(v, 0.25), q75 = quantile_sorted(v, 0.75);
    Standardization s;
    s.center = quantile_sorted(v, 0.5);
    s.scale = q75 - q25;
    if (!(s.scale > 0.0)) {
        // Heavily tied data: fall back to the range before giving up.
        s.scale = v.back() - v.front();
        if (!(s.scale > 0.0)) throw DegenerateDimension("constant variable cannot be standardized");
    }
    return s;
}

void validate_parent_sets(const std::vector<std::vector<int>>& parent_sets, int dim) {
    if (static_cast<int>(parent_sets.size()) != dim)
        throw std::invalid_argument("expected " + std::to_string(dim) + " parent sets, got " +
                                    std::to_string(parent_sets.size()));
    for (int j = 0; j < dim; ++j) {
        std::set<int> seen;
        for (int p : parent_sets[j]) {
            if (p < 0 || p >= j)
                throw std::invalid_argument("component " + std::to_string(j) + " lists parent " + std::to_string(p) +
                                            ", violating triangularity");
            if (!seen.insert(p).second)
                throw std::invalid_argument("component " + std::to_string(j) + " lists parent " + std::to_string(p) +
                                            " twice");
        }
    }
}

TriangularMap::TriangularMap(std::vector<std::string> names, std::vector<Standardization> standardization,
                             std::vector<std::optional<MapComponent>> components, int block_split)
    : names_(std::move(names)),
      standardization_(std::move(standardization)),
      components_(std::move(components)),
      block_split_(block_split) {
    const int d = dim();
    if (static_cast<int>(standardization_.size()) != d || static_cast<int>(components_.size()) != d)
        throw std::invalid_argument("names, standardization and components must have the same length");
    if (block_split_ < 0 || block_split_ > d) throw std::invalid_argument("block split out of range");
    for (int j = 0; j < d; ++j) {
        if (!(standardization_[j].scale > 0.0)) throw std::invalid_argument("standardization scale must be positive");
        if (!components_[j]) {
            if (j >= block_split_) throw std::invalid_argument("block b component " + std::to_string(j) + " is missing");
            continue;
        }
        if (components_[j]->index() != j)
            throw std::invalid_argument("component at position " + std::to_string(j) + " has index " +
                                        std::to_string(components_[j]->index()));
    }
}

void TriangularMap::require_component(int j) const {
    if (!components_[j]) throw std::logic_error("component " + std::to_string(j) + " was not fitted");
}

std::vector<double> TriangularMap::standardize(std::span<const double> x) const {
    std::vector<double> u(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        if (std::isnan(x[j])) throw std::invalid_argument("NaN input");
        u[j] = (x[j] - standardization_[j].center) / standardization_[j].scale;
    }
    return u;
}

Eigen::VectorXd TriangularMap::pushforward(std::span<const double> x, int first) const {
    if (static_cast<int>(x.size()) != dim()) throw std::invalid_argument("input has the wrong dimension");
    const auto u = standardize(x);
    Eigen::VectorXd z(dim() - first);
    for (int j = first; j < dim(); ++j) {
        require_component(j);
        z[j - first] = components_[j]->eval(u);
    }
    return z;
}

Eigen::MatrixXd TriangularMap::pushforward_ensemble(const Eigen::MatrixXd& x, int first) const {
    Eigen::MatrixXd z(x.rows(), dim() - first);
    std::vector<double> row(dim());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (int j = 0; j < dim(); ++j) row[j] = x(i, j);
        z.row(i) = pushforward(row, first).transpose();
    }
    return z;
}

LogDensity TriangularMap::log_pullback_density(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != dim()) throw std::invalid_argument("input has the wrong dimension");
    const auto u = standardize(x);
    LogDensity out;
    for (int j = 0; j < dim(); ++j) {
        require_component(j);
        const auto& c = *components_[j];
        const double d = c.ddx(u);
        if (!(d > 0.0)) {
            out.valid = false;
            out.value = -std::numeric_limits<double>::infinity();
            return out;
        }
        out.value += log_normal_pdf(c.eval(u)) + std::log(d) - std::log(standardization_[j].scale);
    }
    return out;
}

Eigen::VectorXd TriangularMap::inverse(std::span<const double> z) const {
    if (static_cast<int>(z.size()) != dim()) throw std::invalid_argument("input has the wrong dimension");
    std::vector<double> u(dim(), 0.0);
    Eigen::VectorXd x(dim());
    for (int j = 0; j < dim(); ++j) {
        require_component(j);
        u[j] = components_[j]->invert_in_last(u, z[j]);
        x[j] = standardization_[j].center + standardization_[j].scale * u[j];
    }
    return x;
}

Eigen::VectorXd TriangularMap::invert_block(std::span<const double> x_a, std::span<const double> z_b) const {
    const int a = block_split_;
    if (static_cast<int>(x_a.size()) != a || static_cast<int>(z_b.size()) != dim() - a)
        throw std::invalid_argument("block sizes do not match the map");
    std::vector<double> u(dim(), 0.0);
    for (int j = 0; j < a; ++j) {
        if (std::isnan(x_a[j])) throw std::invalid_argument("NaN conditioning value");
        u[j] = (x_a[j] - standardization_[j].center) / standardization_[j].scale;
    }
    Eigen::VectorXd x_b(dim() - a);
    for (int j = a; j < dim(); ++j) {
        u[j] = components_[j]->invert_in_last(u, z_b[j - a]);
        x_b[j - a] = standardization_[j].center + standardization_[j].scale * u[j];
    }
    return x_b;
}

Eigen::MatrixXd TriangularMap::conditional_update(const Eigen::MatrixXd& members, std::span<const double> x_a_star,
                                                  int threads) const {
    const int a = block_split_;
    if (members.cols() != dim()) throw std::invalid_argument("members must have one column per variable");
    if (static_cast<int>(x_a_star.size()) != a) throw std::invalid_argument("conditioning vector has the wrong size");
    Eigen::MatrixXd out(members.rows(), dim() - a);
    parallel_for(static_cast<int>(members.rows()), threads, [&](int i) {
        std::vector<double> row(dim());
        for (int j = 0; j < dim(); ++j) row[j] = members(i, j);
        try {
            const Eigen::VectorXd z_b = pushforward(row, a);
            out.row(i) = invert_block(x_a_star, std::span<const double>(z_b.data(), z_b.size())).transpose();
        } catch (const std::exception& e) {
            throw std::runtime_error("conditional update failed for member " + std::to_string(i) + ": " + e.what());
        }
    });
    return out;
}

Eigen::MatrixXd TriangularMap::sample_conditional(std::span<const double> x_a_star, int num, std::uint64_t seed) const {
    const int db = dim() - block_split_;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd z(num, db);
    for (int i = 0; i < num; ++i)
        for (int k = 0; k < db; ++k) z(i, k) = normal(rng);
    Eigen::MatrixXd out(num, db);
    std::vector<double> zb(db);
    for (int i = 0; i < num; ++i) {
        for (int k = 0; k < db; ++k) zb[k] = z(i, k);
        try {
            out.row(i) = invert_block(x_a_star, zb).transpose();
        } catch (const std::exception& e) {
            throw std::runtime_error("conditional sample " + std::to_string(i) + " failed: " + e.what());
        }
    }
    return out;
}

MapFitResult fit(const Ensemble& ensemble, const std::vector<std::vector<int>>& parent_sets,
                 const MapFitConfig& config) {
    const int d = ensemble.dim();
    validate_parent_sets(parent_sets, d);
    if (config.block_split < 0 || config.block_split > d) throw std::invalid_argument("block split out of range");
    if (!config.warm_log_lambdas.empty() && static_cast<int>(config.warm_log_lambdas.size()) != d)
        throw std::invalid_argument("warm-start log-lambdas need one entry per component");

    const int first = config.fit_block_a ? 0 : config.block_split;
    // Standardize every variable a fitted component reads.
    std::vector<bool> needed(d, false);
    for (int j = first; j < d; ++j) {
        needed[j] = true;
        for (int p : parent_sets[j]) needed[p] = true;
    }
    std::vector<Standardization> stdz(d);
    Eigen::MatrixXd u(ensemble.size(), d);
    for (int j = 0; j < d; ++j) {
        const auto col = column(ensemble.data, j);
        if (needed[j]) {
            try {
                stdz[j] = standardization_of(col);
            } catch (const std::exception& e) {
                throw ComponentFitError(j, "variable " + std::to_string(j) + " (" + ensemble.names[j] + "): " + e.what());
            }
        }
        u.col(j) = (ensemble.data.col(j).array() - stdz[j].center) / stdz[j].scale;
    }

    std::vector<std::optional<MapComponent>> components(d);
    std::vector<std::optional<FitReport>> reports(d);
    parallel_for(d - first, config.threads, [&](int k) {
        const int j = first + k;
        try {
            std::vector<SplineBasis> bases;
            for (int p : parent_sets[j]) bases.emplace_back(make_knots(column(u, p), config.degree, config.num_knots));
            SplineBasis mb(make_knots(column(u, j), config.degree, config.num_knots));
            MapComponent comp(j, parent_sets[j], std::move(bases), std::move(mb));
            const DesignCache cache = make_design_cache(comp, u, config.ridge);
            std::optional<Eigen::VectorXd> start;
            if (!config.warm_log_lambdas.empty() && config.warm_log_lambdas[j] &&
                config.warm_log_lambdas[j]->size() == comp.num_blocks())
                start = config.warm_log_lambdas[j];
            const OuterEvaluation best = adapt(cache, config.adapt, start);
            comp.set_coefficients(best.solution.beta_non, best.solution.raw);
            comp.set_log_lambdas(best.report.log_lambdas);
            if (comp.beta_mon_raw().size() < 2 || comp.beta_mon_raw().tail(comp.num_monotone() - 1).maxCoeff() <= 0.0)
                throw FitError("fitted monotone term is flat and cannot be inverted");
            if (!best.report.converged)
                log().info("component {} ({}): outer loop stopped after {} iterations, |g|={:.3g}", j,
                           ensemble.names[j], best.report.outer_iterations, best.report.grad_norm);
            components[j] = std::move(comp);
            reports[j] = best.report;
        } catch (const std::exception& e) {
            throw ComponentFitError(j, "component " + std::to_string(j) + " (" + ensemble.names[j] + "): " + e.what());
        }
    });
    return {TriangularMap(ensemble.names, stdz, std::move(components), config.block_split), std::move(reports)};
}

void to_json(nlohmann::json& j, const TriangularMap& map) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : map.components()) comps.push_back(c ? nlohmann::json(*c) : nlohmann::json(nullptr));
    nlohmann::json stdz = nlohmann::json::array();
    for (const auto& s : map.standardization()) stdz.push_back({{"center", s.center}, {"scale", s.scale}});
    j = {{"format", "ptmap-triangular-map"},
         {"version", kMapFormatVersion},
         {"dim", map.dim()},
         {"names", map.names()},
         {"block_split", map.block_split()},
         {"standardization", stdz},
         {"components", comps}};
}

TriangularMap map_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "ptmap-triangular-map") throw std::invalid_argument("not a serialized map");
    const int version = j.at("version").get<int>();
    if (version != kMapFormatVersion)
        throw std::invalid_argument("unsupported map format version " + std::to_string(version));
    const int d = j.at("dim").get<int>();
    auto names = j.at("names").get<std::vector<std::string>>();
    std::vector<Standardization> stdz;
    for (const auto& s : j.at("standardization")) stdz.push_back({s.at("center").get<double>(), s.at("scale").get<double>()});
    std::vector<std::optional<MapComponent>> comps;
    for (const auto& c : j.at("components")) {
        if (c.is_null()) comps.emplace_back();
        else comps.emplace_back(component_from_json(c));
    }
    if (static_cast<int>(names.size()) != d) throw std::invalid_argument("map dimension does not match its names");
    return TriangularMap(std::move(names), std::move(stdz), std::move(comps), j.at("block_split").get<int>());
}

void save_map(const TriangularMap& map, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << nlohmann::json(map).dump(2) << '\n';
}

TriangularMap load_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    return map_from_json(nlohmann::json::parse(in));
}

void to_json(nlohmann::json& j, const FitReport& r) {
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.begin(), v.end()); };
    j = {{"nll", r.nll},
         {"edf", r.edf},
         {"aicc", r.aicc},
         {"block_edf", vec(r.block_edf)},
         {"log_lambdas", vec(r.log_lambdas)},
         {"inner_iterations", r.inner_iterations},
         {"outer_iterations", r.outer_iterations},
         {"converged", r.converged},
         {"grad_norm", r.grad_norm},
         {"num_samples", r.num_samples},
         {"num_parameters", r.num_parameters},
         {"num_pinned", r.num_pinned},
         {"ridge", r.ridge}};
}

}  // namespace ptmap
