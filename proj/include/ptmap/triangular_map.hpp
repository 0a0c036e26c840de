#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "ptmap/map_component.hpp"
#include "ptmap/objective.hpp"

namespace ptmap {

/// Samples as rows.
struct Ensemble {
    Eigen::MatrixXd data;
    std::vector<std::string> names;

    Ensemble() = default;
    /// Names default to x1..xd. Throws on NaN/Inf, n < 8 or a name count mismatch.
    explicit Ensemble(Eigen::MatrixXd data, std::vector<std::string> names = {});

    int size() const { return static_cast<int>(data.rows()); }
    int dim() const { return static_cast<int>(data.cols()); }
};

/// Reorder variables; `order[k]` is the old index of new variable k.
Ensemble permute(const Ensemble& ensemble, const std::vector<int>& order);

/// Affine pre-transform u = (x - center) / scale.
struct Standardization {
    double center = 0.0;
    double scale = 1.0;
};

/// Median / interquartile-range standardization of one column.
Standardization standardization_of(std::span<const double> values);

/// Throws std::invalid_argument unless parent_sets[j] lists distinct indices in [0, j).
void validate_parent_sets(const std::vector<std::vector<int>>& parent_sets, int dim);

class ComponentFitError : public std::runtime_error {
public:
    ComponentFitError(int component, const std::string& what)
        : std::runtime_error(what), component_(component) {}
    int component() const { return component_; }

private:
    int component_;
};

struct LogDensity {
    double value = 0.0;
    bool valid = true;  // false when some derivative is nonpositive; value is then -inf
};

class TriangularMap {
public:
    /// Components may be missing (not fitted) for indices below `block_split`.
    TriangularMap(std::vector<std::string> names, std::vector<Standardization> standardization,
                  std::vector<std::optional<MapComponent>> components, int block_split = 0);

    int dim() const { return static_cast<int>(names_.size()); }
    int block_split() const { return block_split_; }
    const std::vector<std::string>& names() const { return names_; }
    const std::vector<Standardization>& standardization() const { return standardization_; }
    const std::vector<std::optional<MapComponent>>& components() const { return components_; }
    bool has_component(int j) const { return components_[j].has_value(); }

    /// z = S(x) for components first..d-1 (the whole map by default).
    Eigen::VectorXd pushforward(std::span<const double> x, int first = 0) const;
    Eigen::MatrixXd pushforward_ensemble(const Eigen::MatrixXd& x, int first = 0) const;

    LogDensity log_pullback_density(std::span<const double> x) const;

    /// Inverse of the full map.
    Eigen::VectorXd inverse(std::span<const double> z) const;

    /// Lower-block solve: x_b with S_b(x_a, x_b) = z_b.
    Eigen::VectorXd invert_block(std::span<const double> x_a, std::span<const double> z_b) const;

    /// Replace each member's block a by x_a_star: x_b <- S_b^{-1}(x_a*, S_b(x_a, x_b)).
    /// `members` holds full rows (n x d); the result is the updated block b (n x d_b).
    Eigen::MatrixXd conditional_update(const Eigen::MatrixXd& members, std::span<const double> x_a_star,
                                       int threads = 1) const;

    /// num draws from the conditional of block b given x_a_star.
    Eigen::MatrixXd sample_conditional(std::span<const double> x_a_star, int num, std::uint64_t seed) const;

private:
    void require_component(int j) const;
    std::vector<double> standardize(std::span<const double> x) const;

    std::vector<std::string> names_;
    std::vector<Standardization> standardization_;
    std::vector<std::optional<MapComponent>> components_;
    int block_split_ = 0;
};

struct MapFitConfig {
    AdaptOptions adapt;
    int degree = 3;
    std::optional<int> num_knots;
    double ridge = 1e-8;
    int threads = 1;
    /// Index of the first block-b variable. With fit_block_a = false only
    /// components block_split..d-1 are fitted.
    int block_split = 0;
    bool fit_block_a = true;
    /// Optional per-component starting log-lambdas (e.g. from the previous cycle).
    std::vector<std::optional<Eigen::VectorXd>> warm_log_lambdas;
};

struct MapFitResult {
    TriangularMap map;
    std::vector<std::optional<FitReport>> reports;
};

MapFitResult fit(const Ensemble& ensemble, const std::vector<std::vector<int>>& parent_sets,
                 const MapFitConfig& config = {});

inline constexpr int kMapFormatVersion = 1;

void to_json(nlohmann::json& j, const TriangularMap& map);
TriangularMap map_from_json(const nlohmann::json& j);
void save_map(const TriangularMap& map, const std::string& path);
TriangularMap load_map(const std::string& path);

void to_json(nlohmann::json& j, const FitReport& report);

}  // namespace ptmap
