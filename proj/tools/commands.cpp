#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>

#include <fmt/format.h>

#include "cli.hpp"
#include "ptmap/log.hpp"
#include "ptmap/parallel.hpp"

namespace ptmap::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }

std::uint64_t offset_seed(std::uint64_t seed, std::int64_t offset) {
    return static_cast<std::uint64_t>(static_cast<std::int64_t>(seed) + offset);
}

fs::path output_dir(const RunOptions& opt, const std::optional<fs::path>& from_config) {
    fs::path dir = !opt.out.empty() ? opt.out : from_config.value_or(fs::path());
    if (dir.empty()) throw ConfigError("no output directory: pass --out or set output_dir");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

class Writer {
public:
    explicit Writer(const fs::path& path) : path_(path), out_(path) {
        if (!out_) throw ConfigError("cannot write " + path.string());
    }
    std::ofstream& stream() { return out_; }
    void close() {
        out_.close();
        if (!out_) throw ConfigError("error writing " + path_.string());
    }

private:
    fs::path path_;
    std::ofstream out_;
};

void write_header(std::ostream& os, const std::string& command, const std::string& hash, const std::string& seed) {
    os << "# ptmap " << command << " config_hash=" << hash << " seed=" << seed << '\n';
}

json provenance(const std::string& command, const std::string& hash, std::uint64_t seed) {
    return {{"command", command}, {"config_hash", hash}, {"seed", seed}};
}

void write_table(const fs::path& path, const std::string& command, const std::string& hash, const std::string& seed,
                 const std::vector<std::string>& names, const Eigen::MatrixXd& data) {
    Writer w(path);
    auto& os = w.stream();
    write_header(os, command, hash, seed);
    for (std::size_t j = 0; j < names.size(); ++j) os << (j ? "\t" : "") << names[j];
    os << '\n';
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        for (Eigen::Index j = 0; j < data.cols(); ++j) os << (j ? "\t" : "") << num(data(i, j));
        os << '\n';
    }
    w.close();
}

Ensemble generate(const EnsembleSource& src, std::uint64_t seed) {
    if (src.generator == "wavy") return sample_wavy(src.n, seed, src.wavy);
    const Eigen::MatrixXd L = src.covariance.llt().matrixL();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd x(src.n, L.rows());
    Eigen::VectorXd e(L.rows());
    for (int i = 0; i < src.n; ++i) {
        for (auto& v : e) v = normal(rng);
        x.row(i) = (L * e).transpose();
    }
    return Ensemble(std::move(x));
}

std::vector<std::vector<int>> dense_parents(int d) {
    std::vector<std::vector<int>> p(d);
    for (int j = 0; j < d; ++j)
        for (int k = 0; k < j; ++k) p[j].push_back(k);
    return p;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

int cmd_fit(const fs::path& config_path, const RunOptions& opt) {
    const auto loaded = parse_fit_config(read_config_document(config_path), config_path.parent_path());
    const FitRunConfig& cfg = loaded.config;
    const fs::path dir = output_dir(opt, loaded.output_dir);

    // Validate structure before any compute.
    std::vector<std::pair<std::uint64_t, Ensemble>> inputs;
    for (std::uint64_t s : cfg.seeds) {
        const std::uint64_t seed = offset_seed(s, opt.seed_offset);
        inputs.emplace_back(seed, cfg.ensemble.path ? read_ensemble(*cfg.ensemble.path, cfg.ensemble.delimiter)
                                                    : generate(cfg.ensemble, seed));
        if (cfg.ensemble.path) break;  // file input: one fit, seeds only label it
    }
    const int d = inputs.front().second.dim();
    const auto parents = cfg.parent_sets.value_or(dense_parents(d));
    try {
        validate_parent_sets(parents, d);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("parent_sets: ") + e.what());
    }
    if (cfg.fit.block_split > d) throw ConfigError("block_split exceeds the ensemble dimension");

    MapFitConfig fc = cfg.fit;
    fc.threads = opt.threads;
    for (const auto& [seed, ensemble] : inputs) {
        const std::string tag = "seed" + std::to_string(seed);
        if (!cfg.ensemble.path)
            write_table(dir / ("ensemble_" + tag + ".tsv"), "fit", loaded.hash, std::to_string(seed), ensemble.names,
                        ensemble.data);
        MapFitResult res = [&] {
            try {
                return ptmap::fit(ensemble, parents, fc);
            } catch (const ComponentFitError& e) {
                std::cerr << "ptmap fit: component " << e.component() << " failed: " << e.what() << '\n';
                throw;
            }
        }();
        json map = res.map;
        map["provenance"] = provenance("fit", loaded.hash, seed);
        json reports = json::array();
        for (std::size_t j = 0; j < res.reports.size(); ++j) {
            if (!res.reports[j]) continue;
            json r = *res.reports[j];
            r["component"] = j;
            r["name"] = ensemble.names[j];
            reports.push_back(std::move(r));
        }
        {
            Writer w(dir / ("map_" + tag + ".json"));
            w.stream() << map.dump(2) << '\n';
            w.close();
        }
        {
            Writer w(dir / ("fit_report_" + tag + ".json"));
            w.stream() << json{{"provenance", provenance("fit", loaded.hash, seed)}, {"components", reports}}.dump(2)
                       << '\n';
            w.close();
        }
        log().info("fit {}: wrote map and report", tag);
    }
    return kExitOk;
}

int cmd_wavy(const fs::path& config_path, const RunOptions& opt) {
    const auto loaded = parse_wavy_config(read_config_document(config_path));
    const fs::path dir = output_dir(opt, loaded.output_dir);

    Writer summary(dir / "wavy_summary.tsv");
    auto& sos = summary.stream();
    std::string seed_list;
    for (std::uint64_t s : loaded.config.seeds)
        seed_list += (seed_list.empty() ? "" : ",") + std::to_string(offset_seed(s, opt.seed_offset));
    write_header(sos, "wavy", loaded.hash, seed_list);
    sos << "seed\tgrid_argmin_log_lambda\tgrid_min_aicc\tinterior\toptimizer_log_lambda\toptimizer_aicc\t"
           "optimizer_converged\n";

    for (std::uint64_t s : loaded.config.seeds) {
        WavyConfig wc = loaded.config.study;
        wc.seed = offset_seed(s, opt.seed_offset);
        wc.threads = opt.threads;
        const std::string seed = std::to_string(wc.seed);
        const WavyProfile prof = profile_lambda(wc);

        {
            Writer w(dir / ("wavy_profile_seed" + seed + ".tsv"));
            auto& os = w.stream();
            write_header(os, "wavy", loaded.hash, seed);
            os << "log_lambda\tnll\tedf\taicc\tok\n";
            for (const auto& r : prof.rows)
                os << num(r.log_lambda) << '\t' << num(r.nll) << '\t' << num(r.edf) << '\t' << num(r.aicc) << '\t'
                   << (r.ok ? 1 : 0) << '\n';
            w.close();
        }
        write_table(dir / ("wavy_ensemble_seed" + seed + ".tsv"), "wavy", loaded.hash, seed, prof.ensemble.names,
                    prof.ensemble.data);
        {
            Writer w(dir / ("wavy_clouds_seed" + seed + ".tsv"));
            auto& os = w.stream();
            write_header(os, "wavy", loaded.hash, seed);
            os << "log_lambda\tkind\tmember\tv1\tv2\n";
            for (const auto& c : prof.clouds) {
                for (const auto* kind : {"pushforward", "pullback"}) {
                    const Eigen::MatrixXd& m = std::string(kind) == "pushforward" ? c.pushforward : c.pullback;
                    for (Eigen::Index i = 0; i < m.rows(); ++i)
                        os << num(c.log_lambda) << '\t' << kind << '\t' << i << '\t' << num(m(i, 0)) << '\t'
                           << num(m(i, 1)) << '\n';
                }
            }
            w.close();
        }

        const int g = static_cast<int>(prof.rows.size());
        FitReport opt_report;
        bool optimized = true;
        try {
            opt_report = optimize_wavy(wc, loaded.config.optimizer_start);
        } catch (const std::exception& e) {
            optimized = false;
            log().warn("wavy seed {}: optimizer failed: {}", seed, e.what());
        }
        const double nan = std::numeric_limits<double>::quiet_NaN();
        sos << seed << '\t' << (prof.argmin >= 0 ? num(prof.rows[prof.argmin].log_lambda) : "nan") << '\t'
            << (prof.argmin >= 0 ? num(prof.rows[prof.argmin].aicc) : "nan") << '\t'
            << (prof.argmin > 0 && prof.argmin < g - 1 ? 1 : 0) << '\t'
            << num(optimized ? opt_report.log_lambdas[0] : nan) << '\t' << num(optimized ? opt_report.aicc : nan)
            << '\t' << (optimized && opt_report.converged ? 1 : 0) << '\n';
        log().info("wavy seed {}: profile written", seed);
    }
    summary.close();
    return kExitOk;
}

int cmd_lorenz63(const fs::path& config_path, const RunOptions& opt) {
    const auto loaded = parse_lorenz_config(read_config_document(config_path));
    const LorenzRunConfig& cfg = loaded.config;
    const fs::path dir = output_dir(opt, loaded.output_dir);

    struct Task {
        FilterMethod method;
        int n;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (FilterMethod m : cfg.methods)
        for (int n : cfg.ensemble_sizes)
            for (std::uint64_t s : cfg.seeds) tasks.push_back({m, n, offset_seed(s, opt.seed_offset)});

    std::vector<FilterRunResult> results(tasks.size());
    std::mutex io;
    parallel_for(static_cast<int>(tasks.size()), opt.threads, [&](int k) {
        const Task& t = tasks[k];
        FilterOptions fo = cfg.filter;
        fo.threads = 1;
        results[k] = run_filter(cfg.model, t.n, t.seed, t.method, fo);
        const FilterRunResult& r = results[k];
        const std::string name =
            "lorenz63_" + to_string(t.method) + "_n" + std::to_string(t.n) + "_seed" + std::to_string(t.seed) + ".tsv";
        Writer w(dir / name);
        auto& os = w.stream();
        write_header(os, "lorenz63", loaded.hash, std::to_string(t.seed));
        os << "# method=" << to_string(t.method) << " n=" << t.n << " diverged=" << (r.diverged ? 1 : 0)
           << " time_avg_rmse=" << num(r.time_avg_rmse) << " time_avg_mean_rmse=" << num(r.time_avg_mean_rmse);
        if (!r.failure.empty()) os << " failure=\"" << r.failure << '"';
        os << '\n';
        os << "step\trmse\tmean_rmse\tedf_fraction_s2\tedf_fraction_s3\tedf_fraction_s4\tdiverged\n";
        for (std::size_t i = 0; i < r.steps.size(); ++i) {
            const auto& s = r.steps[i];
            const bool last = r.diverged && i + 1 == r.steps.size();
            os << s.step << '\t' << num(s.rmse) << '\t' << num(s.mean_rmse) << '\t' << num(s.edf_fraction[0]) << '\t'
               << num(s.edf_fraction[1]) << '\t' << num(s.edf_fraction[2]) << '\t' << (last ? 1 : 0) << '\n';
        }
        w.close();
        std::lock_guard lock(io);
        log().info("lorenz63 {} n={} seed={}: rmse {:.4f}{}", to_string(t.method), t.n, t.seed, r.time_avg_rmse,
                   r.diverged ? " (diverged)" : "");
    });

    Writer w(dir / "summary.tsv");
    auto& os = w.stream();
    std::string seed_list;
    for (std::uint64_t s : cfg.seeds) seed_list += (seed_list.empty() ? "" : ",") + std::to_string(offset_seed(s, opt.seed_offset));
    write_header(os, "lorenz63", loaded.hash, seed_list);
    os << "method\tn\tseed\ttime_avg_rmse\ttime_avg_mean_rmse\tdiverged\tsteps\n";
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        const auto& r = results[k];
        os << to_string(r.method) << '\t' << r.n << '\t' << r.seed << '\t' << num(r.time_avg_rmse) << '\t'
           << num(r.time_avg_mean_rmse) << '\t' << (r.diverged ? 1 : 0) << '\t' << r.steps.size() << '\n';
    }
    // Aggregates per (method, n): seed column names the statistic.
    for (FilterMethod m : cfg.methods) {
        for (int n : cfg.ensemble_sizes) {
            std::vector<double> rmse, mrmse;
            int diverged = 0;
            for (std::size_t k = 0; k < tasks.size(); ++k)
                if (tasks[k].method == m && tasks[k].n == n) {
                    rmse.push_back(results[k].time_avg_rmse);
                    mrmse.push_back(results[k].time_avg_mean_rmse);
                    diverged += results[k].diverged ? 1 : 0;
                }
            auto mean = [](const std::vector<double>& v) {
                double s = 0.0;
                for (double x : v) s += x;
                return s / static_cast<double>(v.size());
            };
            auto drop_worst = [&](std::vector<double> v) {
                if (v.size() > 1) v.erase(std::max_element(v.begin(), v.end()));
                return mean(v);
            };
            os << to_string(m) << '\t' << n << "\tmean\t" << num(mean(rmse)) << '\t' << num(mean(mrmse)) << '\t'
               << diverged << "\t-\n";
            os << to_string(m) << '\t' << n << "\tmedian\t" << num(median(rmse)) << '\t' << num(median(mrmse)) << '\t'
               << diverged << "\t-\n";
            os << to_string(m) << '\t' << n << "\tmean_without_worst\t" << num(drop_worst(rmse)) << '\t'
               << num(drop_worst(mrmse)) << '\t' << diverged << "\t-\n";
        }
    }
    w.close();
    return kExitOk;
}

}  // namespace ptmap::cli
