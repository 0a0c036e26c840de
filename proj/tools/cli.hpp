#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ptmap/assimilation.hpp"
#include "ptmap/triangular_map.hpp"
#include "ptmap/wavy_study.hpp"

namespace ptmap::cli {

/// Malformed configuration or unreadable input; maps to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitCompute = 3;

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
/// Hash of the canonical (sorted-key, compact) dump of a config document.
std::string config_hash(const nlohmann::json& config);

struct EnsembleSource {
    std::optional<std::filesystem::path> path;
    char delimiter = ',';
    std::string generator;  // "wavy" or "gaussian" when no path is given
    int n = 0;
    WavyGenerator wavy;
    Eigen::MatrixXd covariance;
};

struct FitRunConfig {
    EnsembleSource ensemble;
    std::optional<std::vector<std::vector<int>>> parent_sets;
    MapFitConfig fit;
    std::vector<std::uint64_t> seeds{0};
};

struct WavyRunConfig {
    WavyConfig study;
    std::vector<std::uint64_t> seeds{1};
    double optimizer_start = 2.0;
};

struct LorenzRunConfig {
    Lorenz63Params model;
    std::vector<FilterMethod> methods{FilterMethod::transport, FilterMethod::linear};
    std::vector<int> ensemble_sizes{50, 250, 1000};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    FilterOptions filter;
};

/// Parsed config plus its hash and the directory relative paths resolve against.
template <class T>
struct Loaded {
    T config;
    std::string hash;
    std::optional<std::filesystem::path> output_dir;
};

nlohmann::json read_config_document(const std::filesystem::path& path);
Loaded<FitRunConfig> parse_fit_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
Loaded<WavyRunConfig> parse_wavy_config(const nlohmann::json& doc);
Loaded<LorenzRunConfig> parse_lorenz_config(const nlohmann::json& doc);

/// Header row of names, then one row per member; blank lines and lines
/// starting with '#' are skipped.
Ensemble read_ensemble(const std::filesystem::path& path, char delimiter = ',');

struct RunOptions {
    std::filesystem::path out;
    std::int64_t seed_offset = 0;
    int threads = 0;
};

int cmd_fit(const std::filesystem::path& config_path, const RunOptions& options);
int cmd_wavy(const std::filesystem::path& config_path, const RunOptions& options);
int cmd_lorenz63(const std::filesystem::path& config_path, const RunOptions& options);

/// Entry point shared by the executable and the tests.
int run(int argc, char** argv);

}  // namespace ptmap::cli
