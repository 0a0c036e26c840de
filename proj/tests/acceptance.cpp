// Acceptance gate: one PASS/FAIL line per criterion. Exit status is 0 when the
// set of failing criteria equals the set passed with --expect-fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cli.hpp"
#include "oracles.hpp"
#include "ptmap/assimilation.hpp"
#include "ptmap/parallel.hpp"
#include "ptmap/wavy_study.hpp"

using namespace ptmap;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Accumulates sub-checks; the first failures are kept for the report line.
struct Checks {
    bool pass = true;
    std::vector<std::string> notes;
    void require(bool ok, const std::string& what) {
        if (!ok) pass = false;
        notes.push_back((ok ? "ok " : "FAILED ") + what);
    }
    Outcome outcome() const {
        std::string s;
        for (const auto& n : notes) s += (s.empty() ? "" : "; ") + n;
        return {pass, s};
    }
};

std::vector<double> column(const Eigen::MatrixXd& x, int j) {
    return {x.col(j).data(), x.col(j).data() + x.rows()};
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& ref) {
    return (a - ref).cwiseAbs().maxCoeff() / std::max(1.0, ref.cwiseAbs().maxCoeff());
}

// Bivariate component x2 | x1 on correlated Gaussian data.
DesignCache component_cache(int n, unsigned seed, std::optional<int> num_knots = {}) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd x(n, 2);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = nd(rng);
        x(i, 1) = 0.6 * x(i, 0) + 0.8 * nd(rng) + 0.3 * std::sin(2.0 * x(i, 0));
    }
    const SplineBasis pb(make_knots(column(x, 0), 3, num_knots));
    const SplineBasis mb(make_knots(column(x, 1), 3, num_knots));
    const MapComponent c(1, {0}, {pb}, mb);
    return make_design_cache(c, x);
}

Eigen::VectorXd perturbed_raw(const DesignCache& c, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.3, 1.5);
    Eigen::VectorXd r = c.identity_raw;
    for (Eigen::Index i = 1; i < r.size(); ++i) r[i] *= u(rng);
    r[0] += 0.3;
    return r;
}

Outcome spline_correctness() {
    Checks ck;
    const std::vector<double> samples = oracle::normal_samples(500, 11);
    const SplineBasis b(make_knots(samples, 3, 9));
    const double lo = b.knots().first(), hi = b.knots().last();
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> inside(lo, hi), wide(lo - 3.0, hi + 3.0);

    double pou = 0.0;
    for (int k = 0; k < 1000; ++k) pou = std::max(pou, std::abs(b.eval(inside(rng)).sum() - 1.0));
    ck.require(pou <= 1e-12, fmt::format("partition of unity {:.1e}", pou));

    double deriv = 0.0;
    for (int k = 0; k < 100; ++k) {
        const double x = wide(rng), h = 1e-6;
        const Eigen::VectorXd fd = (b.eval(x + h) - b.eval(x - h)) / (2 * h);
        deriv = std::max(deriv, rel_err(b.eval_deriv(x), fd));
    }
    ck.require(deriv <= 1e-6, fmt::format("derivative rel {:.1e}", deriv));

    Eigen::VectorXd beta(b.size());
    for (int i = 0; i < b.size(); ++i) beta[i] = std::cos(0.9 * i) + 0.05 * i * i;
    double tail = 0.0;
    for (int side : {-1, 1}) {
        const double start = side > 0 ? hi : lo, h = 0.41;
        for (int i = 0; i < 20; ++i) {
            const double x0 = start + side * i * h;
            const double second = b.value(x0, beta) - 2 * b.value(x0 + side * h, beta) + b.value(x0 + 2 * side * h, beta);
            tail = std::max(tail, std::abs(second));
        }
    }
    ck.require(tail <= 1e-10, fmt::format("tail second differences {:.1e}", tail));

    const PenaltyMatrix pen = make_penalty(b.size(), 2);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(b.size());
    const Eigen::VectorXd ramp = Eigen::VectorXd::LinSpaced(b.size(), -2.0, 3.0);
    const double null = std::max((pen.difference * ones).cwiseAbs().maxCoeff(),
                                 (pen.difference * ramp).cwiseAbs().maxCoeff() / ramp.cwiseAbs().maxCoeff());
    ck.require(null <= 1e-14, fmt::format("null space {:.1e}", null));
    return ck.outcome();
}

Outcome closed_form_equivalence() {
    Checks ck;
    const DesignCache c = component_cache(100, 21, 8);
    const Eigen::VectorXd ll = Eigen::Vector2d(0.5, 1.0);
    const Eigen::VectorXd raw = perturbed_raw(c, 22);
    const Eigen::VectorXd closed = solve_non_closed_form(c, ll, raw);
    auto f = [&](const Eigen::VectorXd& non) { return penalized_objective(c, ll, non, raw); };
    Eigen::VectorXd generic = oracle::bfgs_minimize(f, Eigen::VectorXd::Zero(c.m()), 4000, 1e-7);
    generic = oracle::newton_polish(f, generic, 3);
    const double diff = (closed - generic).cwiseAbs().maxCoeff();
    ck.require(diff <= 1e-6, fmt::format("closed form vs generic {:.1e}", diff));

    const PenalizedSystem sys(c, ll);
    const double reduced = reduced_penalized_objective(sys, raw, false).value;
    const double full = penalized_objective(c, ll, sys.solve_non(raw), raw);
    ck.require(std::abs(reduced - full) <= 1e-9, fmt::format("reduced vs full {:.1e}", std::abs(reduced - full)));
    return ck.outcome();
}

Outcome derivative_ladder() {
    Checks ck;
    {
        const DesignCache c = component_cache(150, 31);
        const Eigen::VectorXd ll = Eigen::Vector2d(-0.5, 1.5);
        const PenalizedSystem sys(c, ll);
        const Eigen::VectorXd raw = perturbed_raw(c, 32);
        const auto r = reduced_penalized_objective(sys, raw);
        auto f = [&](const Eigen::VectorXd& x) { return reduced_penalized_objective(sys, x, false).value; };
        auto g = [&](const Eigen::VectorXd& x) { return reduced_penalized_objective(sys, x, false).gradient; };
        const double eg = rel_err(r.gradient, oracle::central_gradient(f, raw, 1e-6));
        const double eh = rel_err(r.hessian, oracle::central_jacobian(g, raw, 1e-6));
        ck.require(eg <= 1e-6, fmt::format("gradient rel {:.1e}", eg));
        ck.require(eh <= 1e-5, fmt::format("Hessian rel {:.1e}", eh));
    }
    const DesignCache c = component_cache(400, 33);
    InnerOptions tight;
    tight.tolerance = 1e-12;
    tight.max_iterations = 2000;
    double worst = 0.0;
    for (const Eigen::Vector2d ll : {Eigen::Vector2d(1.0, 2.0), Eigen::Vector2d(-2.0, 4.0), Eigen::Vector2d(5.0, 0.5),
                                     Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(3.0, -1.0)}) {
        const auto base = outer_objective(c, ll, {}, true, tight);
        auto f = [&](const Eigen::VectorXd& x) { return outer_objective(c, x, base.solution.raw, false, tight).aicc; };
        worst = std::max(worst, rel_err(base.gradient, oracle::central_gradient(f, ll, 1e-4)));
    }
    ck.require(worst <= 1e-3, fmt::format("IFT outer gradient rel {:.1e} at 5 points", worst));
    return ck.outcome();
}

Outcome edf_limits() {
    Checks ck;
    WavyConfig cfg;
    cfg.num_knots = static_cast<int>(std::ceil(std::cbrt(cfg.n))) + 2;
    const int basis = cfg.num_knots + 3 - 1;
    const FitReport light = fit_wavy_at(cfg, -12.0, -12.0);
    const FitReport heavy = fit_wavy_at(cfg, 12.0, 12.0);
    for (int b = 0; b < 2; ++b) {
        ck.require(std::abs(light.block_edf[b] - basis) <= 0.1,
                   fmt::format("block {} at -12: {:.4f} (basis {})", b, light.block_edf[b], basis));
        ck.require(std::abs(heavy.block_edf[b] - 2.0) <= 0.1, fmt::format("block {} at +12: {:.4f}", b, heavy.block_edf[b]));
    }
    return ck.outcome();
}

Outcome wavy_study(int threads) {
    Checks ck;
    WavyConfig cfg;
    cfg.threads = threads;
    const WavyProfile p = profile_lambda(cfg);
    bool all_ok = true, nll_mono = true, edf_mono = true;
    for (std::size_t k = 0; k < p.rows.size(); ++k) {
        all_ok = all_ok && p.rows[k].ok;
        if (k == 0) continue;
        nll_mono = nll_mono && p.rows[k].nll >= p.rows[k - 1].nll - 1e-6;
        edf_mono = edf_mono && p.rows[k].edf <= p.rows[k - 1].edf + 1e-6;
    }
    ck.require(all_ok, "all grid fits");
    ck.require(nll_mono, "nll monotone");
    ck.require(edf_mono, "edf monotone");
    const bool interior = p.argmin > 0 && p.argmin < static_cast<int>(p.rows.size()) - 1;
    ck.require(interior, fmt::format("AICc argmin at log lambda {}", p.argmin >= 0 ? p.rows[p.argmin].log_lambda : NAN));
    if (interior) {
        const FitReport r = optimize_wavy(cfg, 2.0);
        const double gap = std::abs(r.log_lambdas[0] - p.rows[p.argmin].log_lambda);
        ck.require(gap <= 0.5, fmt::format("optimizer at {:.3f}, gap {:.3f}", r.log_lambdas[0], gap));
    }
    return ck.outcome();
}

Outcome gaussian_exactness(int threads) {
    Checks ck;
    std::mt19937_64 rng(61);
    std::normal_distribution<double> nd;
    const int n = 10000;
    Eigen::MatrixXd x(n, 2);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = nd(rng);
        x(i, 1) = 0.8 * x(i, 0) + 0.6 * nd(rng);
    }
    MapFitConfig cfg;
    cfg.block_split = 1;
    cfg.threads = threads;
    const auto res = fit(Ensemble(x), {{}, {0}}, cfg);
    const Eigen::MatrixXd z = res.map.pushforward_ensemble(x);
    const double corr = oracle::correlation(column(z, 0), column(z, 1));
    ck.require(std::abs(corr) <= 0.05, fmt::format("pushforward corr {:.4f}", corr));

    const std::vector<double> xa{1.0};
    const Eigen::MatrixXd up = res.map.conditional_update(x, xa, 2);
    const std::vector<double> ub = column(up, 0);
    const double m = oracle::mean(ub), v = oracle::variance(ub);
    ck.require(std::abs(m - 0.8) <= 0.05, fmt::format("conditional mean {:.4f} (0.8)", m));
    ck.require(std::abs(v - 0.36) <= 0.05, fmt::format("conditional variance {:.4f} (0.36)", v));
    return ck.outcome();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double mean_without_worst(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    v.pop_back();
    double s = 0.0;
    for (double e : v) s += e;
    return s / static_cast<double>(v.size());
}

Outcome lorenz63(int threads, bool full) {
    Checks ck;
    Lorenz63Params p;
    p.steps = full ? 1000 : 200;
    const std::vector<int> sizes = full ? std::vector<int>{50, 250, 1000} : std::vector<int>{50, 250};
    const int band_seeds = 10, other_seeds = full ? 10 : 3;

    struct Task {
        FilterMethod method;
        int n;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (int n : sizes)
        for (int s = 0; s < (n == 50 ? band_seeds : other_seeds); ++s) tasks.push_back({FilterMethod::transport, n, std::uint64_t(s)});
    for (int s = 0; s < other_seeds; ++s) tasks.push_back({FilterMethod::linear, sizes.back(), std::uint64_t(s)});
    std::vector<double> rmse(tasks.size());
    parallel_for(static_cast<int>(tasks.size()), threads, [&](int k) {
        rmse[k] = run_filter(p, tasks[k].n, tasks[k].seed, tasks[k].method).time_avg_rmse;
    });
    auto collect = [&](FilterMethod m, int n, int max_seed) {
        std::vector<double> v;
        for (std::size_t k = 0; k < tasks.size(); ++k)
            if (tasks[k].method == m && tasks[k].n == n && tasks[k].seed < std::uint64_t(max_seed)) v.push_back(rmse[k]);
        return v;
    };

    const double band = mean_without_worst(collect(FilterMethod::transport, 50, band_seeds));
    ck.require(band >= 0.39 && band <= 0.59,
               fmt::format("n=50 best-9-of-10 mean {:.4f} in [0.39, 0.59] (steps={})", band, p.steps));
    std::vector<double> med;
    std::string trend;
    for (int n : sizes) {
        med.push_back(median(collect(FilterMethod::transport, n, other_seeds)));
        trend += fmt::format("{}{}:{:.4f}", trend.empty() ? "" : " ", n, med.back());
    }
    bool mono = true;
    for (std::size_t k = 1; k < med.size(); ++k) mono = mono && med[k] <= med[k - 1];
    ck.require(mono, "median non-increasing " + trend);
    const double lin = median(collect(FilterMethod::linear, sizes.back(), other_seeds));
    ck.require(med.back() < lin, fmt::format("n={} transport {:.4f} < linear {:.4f}", sizes.back(), med.back(), lin));
    return ck.outcome();
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        out[e.path().filename().string()] = ss.str();
    }
    return out;
}

Outcome determinism() {
    Checks ck;
    const fs::path root = fs::temp_directory_path() / "ptmap_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);
    const std::map<std::string, nlohmann::json> experiments{
        {"fit", {{"ensemble", {{"generator", "wavy"}, {"n", 200}}}, {"seeds", {3, 4}}}},
        {"wavy", {{"grid", {{"min", -6.0}, {"max", 6.0}, {"step", 1.0}}}, {"cloud_size", 50}, {"seeds", {1}}}},
        {"lorenz63",
         {{"model", {{"steps", 20}}}, {"ensemble_sizes", {25}}, {"seeds", {0, 1}}, {"methods", {"transport", "linear"}}}},
    };
    for (const auto& [command, doc] : experiments) {
        const fs::path cfg = root / (command + ".json");
        std::ofstream(cfg) << doc.dump(2);
        std::map<std::string, std::string> runs[2];
        bool ok = true;
        for (int r = 0; r < 2; ++r) {
            const fs::path out = root / (command + std::to_string(r));
            std::vector<std::string> args{"ptmap", command, "--config", cfg.string(), "--out", out.string(), "--threads", "1"};
            std::vector<char*> argv;
            for (auto& a : args) argv.push_back(a.data());
            ok = ok && cli::run(static_cast<int>(argv.size()), argv.data()) == cli::kExitOk;
            if (ok) runs[r] = snapshot(out);
        }
        ck.require(ok && !runs[0].empty() && runs[0] == runs[1],
                   fmt::format("{}: {} files byte-identical", command, runs[0].size()));
    }
    fs::remove_all(root);
    return ck.outcome();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ptmap acceptance criteria"};
    int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    bool full = false;
    std::vector<int> expect_fail, only;
    app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--full", full, "criterion 7 on the full grid (1000 steps, 10 seeds, n up to 1000)");
    app.add_option("--expect-fail", expect_fail, "criteria known to fail; exit 0 if exactly these fail");
    app.add_option("--only", only, "run only these criteria");
    CLI11_PARSE(app, argc, argv);

    struct Criterion {
        int id;
        std::string name;
        double budget_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "spline correctness", 5, spline_correctness},
        {2, "closed-form equivalence", 30, closed_form_equivalence},
        {3, "derivative ladder", 120, derivative_ladder},
        {4, "edf limits", 60, edf_limits},
        {5, "wavy study", 300, [&] { return wavy_study(threads); }},
        {6, "Gaussian exactness", 120, [&] { return gaussian_exactness(threads); }},
        {7, "Lorenz-63", full ? 7200.0 : 900.0, [&] { return lorenz63(threads, full); }},
        {8, "determinism", 600, determinism},
    };

    std::set<int> failed;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_budget = secs <= c.budget_s;
        const bool pass = o.pass && in_budget;
        if (!pass) failed.insert(c.id);
        std::cout << fmt::format("criterion {} ({}): {} [{:.1f} s of {:.0f} s{}] {}", c.id, c.name,
                                 pass ? "PASS" : "FAIL", secs, c.budget_s, in_budget ? "" : ", over budget", o.detail)
                  << std::endl;
    }
    const std::set<int> expected(expect_fail.begin(), expect_fail.end());
    std::set<int> expected_run;
    for (int id : expected)
        if (only.empty() || std::find(only.begin(), only.end(), id) != only.end()) expected_run.insert(id);
    if (!expected_run.empty()) {
        std::string list;
        for (int id : expected_run) list += (list.empty() ? "" : ",") + std::to_string(id);
        std::cout << "expected failures: " << list << (failed == expected_run ? " (matched)" : " (mismatch)") << '\n';
    }
    return failed == expected_run ? 0 : 1;
}
