#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "cli.hpp"

namespace ptmap::cli {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_hash(const json& config) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
    return buf;
}

namespace {

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, value] : obj.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

std::vector<std::uint64_t> parse_seeds(const json& doc, std::vector<std::uint64_t> fallback) {
    if (!doc.contains("seeds")) return fallback;
    const auto& s = doc.at("seeds");
    if (!s.is_array() || s.empty()) throw ConfigError("seeds must be a nonempty array");
    std::vector<std::uint64_t> out;
    for (const auto& v : s) {
        if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("seeds must be nonnegative integers");
        out.push_back(v.get<std::uint64_t>());
    }
    return out;
}

AdaptOptions parse_adaptation(const json& doc) {
    AdaptOptions a;
    if (!doc.contains("adaptation")) return a;
    const auto& j = doc.at("adaptation");
    const std::string where = "adaptation";
    check_keys(j,
               {"criterion", "max_outer_iterations", "fixed_monotone", "monotone_log_lambda", "initial_log_lambda",
                "gradient_tolerance", "log_lambda_bound", "max_inner_iterations"},
               where);
    if (get_or<std::string>(j, "criterion", "aicc", where) != "aicc")
        throw ConfigError("adaptation.criterion: only \"aicc\" is supported");
    a.max_outer_iterations = get_or(j, "max_outer_iterations", a.max_outer_iterations, where);
    a.fixed_monotone = get_or(j, "fixed_monotone", a.fixed_monotone, where);
    a.fixed_monotone_log_lambda = get_or(j, "monotone_log_lambda", a.fixed_monotone_log_lambda, where);
    a.initial_log_lambda = get_or(j, "initial_log_lambda", a.initial_log_lambda, where);
    a.gradient_tolerance = get_or(j, "gradient_tolerance", a.gradient_tolerance, where);
    a.log_lambda_bound = get_or(j, "log_lambda_bound", a.log_lambda_bound, where);
    a.inner.max_iterations = get_or(j, "max_inner_iterations", a.inner.max_iterations, where);
    if (a.max_outer_iterations < 0 || a.inner.max_iterations < 1 || !(a.gradient_tolerance > 0) ||
        !(a.log_lambda_bound > 0))
        throw ConfigError("adaptation: iteration counts and tolerances must be positive");
    return a;
}

WavyGenerator parse_wavy_generator(const json& j, const std::string& where) {
    WavyGenerator g;
    g.name = get_or<std::string>(j, "name", g.name, where);
    g.omega = get_or(j, "omega", g.omega, where);
    g.noise = get_or(j, "noise", g.noise, where);
    if (g.name != "sine") throw ConfigError(where + ".name: unknown generator '" + g.name + "'");
    if (!(g.noise >= 0)) throw ConfigError(where + ".noise must be nonnegative");
    return g;
}

template <class T>
Loaded<T> finish(const json& doc, T cfg, const char* experiment) {
    if (doc.contains("experiment") && doc.at("experiment") != experiment)
        throw ConfigError(std::string("config is for experiment ") + doc.at("experiment").dump() + ", not \"" +
                          experiment + "\"");
    Loaded<T> out{std::move(cfg), config_hash(doc), std::nullopt};
    if (doc.contains("output_dir")) out.output_dir = get_or<std::string>(doc, "output_dir", "", "config");
    return out;
}

}  // namespace

json read_config_document(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
}

Loaded<FitRunConfig> parse_fit_config(const json& doc, const std::filesystem::path& base_dir) {
    check_keys(doc,
               {"experiment", "ensemble", "parent_sets", "adaptation", "num_knots", "degree", "block_split",
                "fit_block_a", "seeds", "output_dir"},
               "config");
    FitRunConfig cfg;
    if (!doc.contains("ensemble")) throw ConfigError("config.ensemble is required");
    const auto& e = doc.at("ensemble");
    check_keys(e, {"path", "delimiter", "generator", "n", "omega", "noise", "covariance"}, "ensemble");
    if (e.contains("path") == e.contains("generator"))
        throw ConfigError("ensemble needs exactly one of 'path' and 'generator'");
    if (e.contains("path")) {
        cfg.ensemble.path = base_dir / get_or<std::string>(e, "path", "", "ensemble");
        const auto delim = get_or<std::string>(e, "delimiter", ",", "ensemble");
        if (delim == "\\t" || delim == "tab") cfg.ensemble.delimiter = '\t';
        else if (delim.size() == 1) cfg.ensemble.delimiter = delim[0];
        else throw ConfigError("ensemble.delimiter must be a single character");
        for (const char* k : {"n", "omega", "noise", "covariance"})
            if (e.contains(k)) throw ConfigError(std::string("ensemble.") + k + " only applies to generators");
        if (!std::filesystem::exists(*cfg.ensemble.path))
            throw ConfigError("ensemble file " + cfg.ensemble.path->string() + " does not exist");
    } else {
        cfg.ensemble.generator = get_or<std::string>(e, "generator", "", "ensemble");
        cfg.ensemble.n = get_or(e, "n", 0, "ensemble");
        if (cfg.ensemble.n < 8) throw ConfigError("ensemble.n must be at least 8");
        if (cfg.ensemble.generator == "wavy") {
            json g = json::object();
            if (e.contains("omega")) g["omega"] = e.at("omega");
            if (e.contains("noise")) g["noise"] = e.at("noise");
            cfg.ensemble.wavy = parse_wavy_generator(g, "ensemble");
            if (e.contains("covariance")) throw ConfigError("ensemble.covariance only applies to the gaussian generator");
        } else if (cfg.ensemble.generator == "gaussian") {
            if (!e.contains("covariance")) throw ConfigError("ensemble.covariance is required for the gaussian generator");
            std::vector<std::vector<double>> rows;
            try {
                rows = e.at("covariance").get<std::vector<std::vector<double>>>();
            } catch (const json::exception&) {
                throw ConfigError("ensemble.covariance must be a square array of numbers");
            }
            const auto d = rows.size();
            Eigen::MatrixXd c(d, d);
            for (std::size_t i = 0; i < d; ++i) {
                if (rows[i].size() != d) throw ConfigError("ensemble.covariance must be square");
                for (std::size_t k = 0; k < d; ++k) c(i, k) = rows[i][k];
            }
            if (d == 0 || !c.isApprox(c.transpose()) || c.llt().info() != Eigen::Success)
                throw ConfigError("ensemble.covariance must be symmetric positive definite");
            cfg.ensemble.covariance = c;
            for (const char* k : {"omega", "noise"})
                if (e.contains(k)) throw ConfigError(std::string("ensemble.") + k + " only applies to the wavy generator");
        } else {
            throw ConfigError("ensemble.generator must be \"wavy\" or \"gaussian\"");
        }
        if (e.contains("delimiter")) throw ConfigError("ensemble.delimiter only applies to file input");
    }
    if (doc.contains("parent_sets")) {
        try {
            cfg.parent_sets = doc.at("parent_sets").get<std::vector<std::vector<int>>>();
        } catch (const json::exception&) {
            throw ConfigError("parent_sets must be an array of integer arrays");
        }
    }
    cfg.fit.adapt = parse_adaptation(doc);
    if (doc.contains("num_knots")) {
        cfg.fit.num_knots = get_or(doc, "num_knots", 0, "config");
        if (*cfg.fit.num_knots < 2) throw ConfigError("num_knots must be at least 2");
    }
    cfg.fit.degree = get_or(doc, "degree", 3, "config");
    if (cfg.fit.degree < 0) throw ConfigError("degree must be nonnegative");
    cfg.fit.block_split = get_or(doc, "block_split", 0, "config");
    cfg.fit.fit_block_a = get_or(doc, "fit_block_a", true, "config");
    cfg.seeds = parse_seeds(doc, cfg.seeds);
    if (cfg.fit.block_split < 0) throw ConfigError("block_split must be nonnegative");
    return finish(doc, std::move(cfg), "fit");
}

Loaded<WavyRunConfig> parse_wavy_config(const json& doc) {
    check_keys(doc,
               {"experiment", "n", "num_knots", "monotone_log_lambda", "grid", "generator", "cloud_size",
                "cloud_log_lambdas", "seeds", "optimizer_start", "output_dir"},
               "config");
    WavyRunConfig cfg;
    auto& s = cfg.study;
    s.n = get_or(doc, "n", s.n, "config");
    s.num_knots = get_or(doc, "num_knots", s.num_knots, "config");
    s.monotone_log_lambda = get_or(doc, "monotone_log_lambda", s.monotone_log_lambda, "config");
    s.cloud_size = get_or(doc, "cloud_size", s.cloud_size, "config");
    s.cloud_log_lambdas = get_or(doc, "cloud_log_lambdas", s.cloud_log_lambdas, "config");
    cfg.optimizer_start = get_or(doc, "optimizer_start", cfg.optimizer_start, "config");
    if (doc.contains("generator")) {
        check_keys(doc.at("generator"), {"name", "omega", "noise"}, "generator");
        s.generator = parse_wavy_generator(doc.at("generator"), "generator");
    }
    if (doc.contains("grid")) {
        const auto& g = doc.at("grid");
        if (g.is_array()) {
            s.grid = get_or<std::vector<double>>(doc, "grid", {}, "config");
        } else {
            check_keys(g, {"min", "max", "step"}, "grid");
            const double lo = get_or(g, "min", -10.0, "grid"), hi = get_or(g, "max", 10.0, "grid");
            const double step = get_or(g, "step", 0.5, "grid");
            if (!(step > 0) || !(hi >= lo)) throw ConfigError("grid needs min <= max and a positive step");
            s.grid.clear();
            const auto count = static_cast<int>(std::floor((hi - lo) / step + 1e-9));
            for (int k = 0; k <= count; ++k) s.grid.push_back(lo + step * k);
        }
    }
    cfg.seeds = parse_seeds(doc, cfg.seeds);
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return finish(doc, std::move(cfg), "wavy");
}

Loaded<LorenzRunConfig> parse_lorenz_config(const json& doc) {
    check_keys(doc,
               {"experiment", "model", "methods", "ensemble_sizes", "seeds", "filter", "adaptation", "output_dir"},
               "config");
    LorenzRunConfig cfg;
    if (doc.contains("model")) {
        const auto& m = doc.at("model");
        check_keys(m, {"sigma", "beta", "rho", "dt", "obs_interval", "obs_sigma", "steps", "spinup"}, "model");
        auto& p = cfg.model;
        p.sigma = get_or(m, "sigma", p.sigma, "model");
        p.beta = get_or(m, "beta", p.beta, "model");
        p.rho = get_or(m, "rho", p.rho, "model");
        p.dt = get_or(m, "dt", p.dt, "model");
        p.obs_interval = get_or(m, "obs_interval", p.obs_interval, "model");
        p.obs_sigma = get_or(m, "obs_sigma", p.obs_sigma, "model");
        p.steps = get_or(m, "steps", p.steps, "model");
        p.spinup = get_or(m, "spinup", p.spinup, "model");
    }
    try {
        cfg.model.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    if (doc.contains("methods")) {
        cfg.methods.clear();
        for (const auto& name : get_or<std::vector<std::string>>(doc, "methods", {}, "config")) {
            try {
                cfg.methods.push_back(filter_method_from_string(name));
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("methods: ") + e.what());
            }
        }
        if (cfg.methods.empty()) throw ConfigError("methods must not be empty");
    }
    cfg.ensemble_sizes = get_or(doc, "ensemble_sizes", cfg.ensemble_sizes, "config");
    if (cfg.ensemble_sizes.empty()) throw ConfigError("ensemble_sizes must not be empty");
    for (int n : cfg.ensemble_sizes)
        if (n < 16) throw ConfigError("ensemble sizes must be at least 16");
    cfg.seeds = parse_seeds(doc, cfg.seeds);
    if (doc.contains("filter")) {
        const auto& f = doc.at("filter");
        check_keys(f, {"warm_start", "order"}, "filter");
        cfg.filter.warm_start = get_or(f, "warm_start", cfg.filter.warm_start, "filter");
        if (f.contains("order")) {
            const auto order = get_or<std::vector<int>>(f, "order", {}, "filter");
            std::set<int> distinct(order.begin(), order.end());
            if (order.size() != 3 || distinct != std::set<int>{0, 1, 2})
                throw ConfigError("filter.order must be a permutation of [0, 1, 2]");
            std::copy(order.begin(), order.end(), cfg.filter.order.begin());
        }
    }
    cfg.filter.adapt = parse_adaptation(doc);
    return finish(doc, std::move(cfg), "lorenz63");
}

Ensemble read_ensemble(const std::filesystem::path& path, char delimiter) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read ensemble " + path.string());
    auto split = [delimiter](const std::string& line) {
        std::vector<std::string> out;
        std::string cell;
        std::istringstream ss(line);
        while (std::getline(ss, cell, delimiter)) {
            const auto a = cell.find_first_not_of(" \t\r");
            const auto b = cell.find_last_not_of(" \t\r");
            out.push_back(a == std::string::npos ? std::string() : cell.substr(a, b - a + 1));
        }
        if (!line.empty() && line.back() == delimiter) out.emplace_back();
        return out;
    };
    std::vector<std::string> names;
    std::vector<std::vector<double>> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
        auto cells = split(line);
        if (names.empty()) {
            names = std::move(cells);
            continue;
        }
        if (cells.size() != names.size())
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(names.size()) + " fields");
        std::vector<double> row;
        for (const auto& c : cells) {
            double v = 0.0;
            const auto res = std::from_chars(c.data(), c.data() + c.size(), v);
            if (res.ec != std::errc() || res.ptr != c.data() + c.size())
                throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": '" + c + "' is not a number");
            row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    if (names.empty()) throw ConfigError("ensemble " + path.string() + " has no header row");
    Eigen::MatrixXd data(rows.size(), names.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < names.size(); ++j) data(i, j) = rows[i][j];
    try {
        return Ensemble(std::move(data), std::move(names));
    } catch (const std::invalid_argument& e) {
        throw ConfigError("ensemble " + path.string() + ": " + e.what());
    }
}

}  // namespace ptmap::cli
