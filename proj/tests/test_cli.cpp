#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "cli.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ptmap;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "ptmap_test_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_json(const fs::path& dir, const std::string& file, const json& doc) {
    const fs::path p = dir / file;
    std::ofstream(p) << doc.dump(2);
    return p;
}

int invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "ptmap");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
    return out;
}

std::vector<std::vector<std::string>> rows(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, '\t')) fields.push_back(f);
        out.push_back(std::move(fields));
    }
    return out;
}

json gaussian_fit_config(int n) {
    return {{"ensemble",
             {{"generator", "gaussian"}, {"n", n}, {"covariance", {{1.0, 0.6, 0.3}, {0.6, 1.0, 0.5}, {0.3, 0.5, 1.0}}}}},
            {"seeds", {0}}};
}

json small_lorenz_config() {
    return {{"model", {{"steps", 12}, {"spinup", 20}}},
            {"ensemble_sizes", {20, 30}},
            {"seeds", {0, 1, 2}},
            {"methods", {"transport", "linear"}}};
}

}  // namespace

TEST_CASE("cli: configuration errors exit 2") {
    const fs::path dir = scratch("errors");
    const fs::path out = dir / "out";

    CHECK(invoke({"fit"}) == cli::kExitConfig);
    CHECK(invoke({"fit", "--config", (dir / "absent.json").string(), "--out", out.string()}) == cli::kExitConfig);
    CHECK(invoke({"frobnicate", "--config", "x"}) == cli::kExitConfig);

    const auto missing_input = write_json(dir, "missing.json", {{"ensemble", {{"path", "nowhere.csv"}}}});
    CHECK(invoke({"fit", "--config", missing_input.string(), "--out", out.string()}) == cli::kExitConfig);

    json unknown = gaussian_fit_config(100);
    unknown["smoothing"] = 3;
    CHECK(invoke({"fit", "--config", write_json(dir, "unknown.json", unknown).string(), "--out", out.string()}) ==
          cli::kExitConfig);

    json nested = small_lorenz_config();
    nested["model"]["gamma"] = 1.0;
    CHECK(invoke({"lorenz63", "--config", write_json(dir, "nested.json", nested).string(), "--out", out.string()}) ==
          cli::kExitConfig);

    // Component 1 may not depend on itself.
    json tri = gaussian_fit_config(100);
    tri["parent_sets"] = {json::array(), {1}, {0, 1}};
    CHECK(invoke({"fit", "--config", write_json(dir, "tri.json", tri).string(), "--out", out.string()}) ==
          cli::kExitConfig);
    // Rejected before compute: nothing was written.
    CHECK_FALSE(fs::exists(out / "ensemble_seed0.tsv"));

    {
        std::ofstream(dir / "bad.csv") << "a,b\n1,2\n3,x\n";
    }
    const auto bad_number = write_json(dir, "bad.json", {{"ensemble", {{"path", "bad.csv"}}}});
    CHECK(invoke({"fit", "--config", bad_number.string(), "--out", out.string()}) == cli::kExitConfig);

    const auto ok = write_json(dir, "ok.json", gaussian_fit_config(100));
    CHECK(invoke({"fit", "--config", ok.string(), "--out", out.string(), "--threads", "-1"}) == cli::kExitConfig);
}

TEST_CASE("cli: a failing component fit exits 3") {
    const fs::path dir = scratch("compute");
    {
        // The second column is constant, so its monotone term cannot be fitted.
        std::ofstream os(dir / "flat.csv");
        os << "a,b\n";
        for (int i = 0; i < 40; ++i) os << (i * 0.37 - 7.0) << ",1.5\n";
    }
    const auto cfg = write_json(dir, "flat.json", {{"ensemble", {{"path", "flat.csv"}}}});
    CHECK(invoke({"fit", "--config", cfg.string(), "--out", (dir / "out").string()}) == cli::kExitCompute);
}

TEST_CASE("cli: fit round trip through the saved map") {
    const fs::path dir = scratch("roundtrip");
    const auto cfg = write_json(dir, "fit.json", gaussian_fit_config(300));
    REQUIRE(invoke({"fit", "--config", cfg.string(), "--out", dir.string(), "--threads", "1"}) == cli::kExitOk);

    const Ensemble ens = cli::read_ensemble(dir / "ensemble_seed0.tsv", '\t');
    REQUIRE(ens.size() == 300);
    const TriangularMap loaded = load_map((dir / "map_seed0.json").string());
    MapFitConfig fc;
    fc.threads = 1;
    const MapFitResult direct = fit(ens, {{}, {0}, {0, 1}}, fc);

    for (int i = 0; i < 10; ++i) {
        const Eigen::VectorXd row = ens.data.row(i * 29).transpose() * 1.1;
        const std::span<const double> x(row.data(), static_cast<std::size_t>(row.size()));
        const Eigen::VectorXd a = loaded.pushforward(x), b = direct.map.pushforward(x);
        CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-15);
        CHECK(std::abs(loaded.log_pullback_density(x).value - direct.map.log_pullback_density(x).value) <= 1e-15);
    }

    const json report = json::parse(slurp(dir / "fit_report_seed0.json"));
    CHECK(report["components"].size() == 3);
    const json map = json::parse(slurp(dir / "map_seed0.json"));
    CHECK(map["format"] == "ptmap-triangular-map");
    CHECK(map["provenance"]["seed"] == 0);
    CHECK(map["provenance"]["config_hash"] == cli::config_hash(gaussian_fit_config(300)));
}

TEST_CASE("cli: Gaussian smoke fit at n = 1000, d = 3") {
    const fs::path dir = scratch("smoke");
    const auto cfg = write_json(dir, "fit.json", gaussian_fit_config(1000));
    const auto t0 = std::chrono::steady_clock::now();
    REQUIRE(invoke({"fit", "--config", cfg.string(), "--out", dir.string(), "--threads", "1"}) == cli::kExitOk);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(seconds < 10.0);
}

TEST_CASE("cli: config hash ignores key order and formatting") {
    const json a = json::parse(R"({"b": 1, "a": [1, 2]})");
    const json b = json::parse("{\"a\":[1,2],\n \"b\":1}");
    CHECK(cli::config_hash(a) == cli::config_hash(b));
    CHECK(cli::config_hash(a).size() == 16);
    CHECK(cli::config_hash(a) != cli::config_hash(json::parse(R"({"b": 2, "a": [1, 2]})")));
    // FNV-1a reference values.
    CHECK(cli::fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(cli::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("cli: lorenz63 file contract, aggregation and reruns") {
    const fs::path dir = scratch("lorenz");
    const json doc = small_lorenz_config();
    const auto cfg = write_json(dir, "l63.json", doc);
    const fs::path out1 = dir / "run1", out2 = dir / "run2";
    REQUIRE(invoke({"lorenz63", "--config", cfg.string(), "--out", out1.string(), "--threads", "1"}) ==
            cli::kExitOk);
    REQUIRE(invoke({"lorenz63", "--config", cfg.string(), "--out", out2.string(), "--threads", "1"}) ==
            cli::kExitOk);

    const auto files = snapshot(out1);
    CHECK(files.size() == 2 * 2 * 3 + 1);
    CHECK(files == snapshot(out2));

    const std::string hash = cli::config_hash(doc);
    for (const auto& [name, text] : files) CHECK(text.rfind("# ptmap lorenz63 config_hash=" + hash + " seed=", 0) == 0);

    // Re-aggregate the summary from the per-step files.
    const auto summary = rows(out1 / "summary.tsv");
    REQUIRE(summary.front().front() == "method");
    std::map<std::string, std::vector<double>> per_group;
    int per_seed_rows = 0;
    for (std::size_t r = 1; r < summary.size(); ++r) {
        const auto& f = summary[r];
        const std::string group = f[0] + "_n" + f[1];
        if (f[2] == "mean" || f[2] == "median" || f[2] == "mean_without_worst") continue;
        ++per_seed_rows;
        const auto steps = rows(out1 / ("lorenz63_" + group + "_seed" + f[2] + ".tsv"));
        double sum = 0.0, sum_mean = 0.0;
        for (std::size_t i = 1; i < steps.size(); ++i) {
            sum += std::stod(steps[i][1]);
            sum_mean += std::stod(steps[i][2]);
        }
        const double count = static_cast<double>(steps.size() - 1);
        REQUIRE(f[5] == "0");
        CHECK(std::stoi(f[6]) == doc["model"]["steps"].get<int>());
        CHECK(std::abs(std::stod(f[3]) - sum / count) <= 1e-12);
        CHECK(std::abs(std::stod(f[4]) - sum_mean / count) <= 1e-12);
        per_group[group].push_back(std::stod(f[3]));
    }
    CHECK(per_seed_rows == 12);
    for (std::size_t r = 1; r < summary.size(); ++r) {
        const auto& f = summary[r];
        auto v = per_group[f[0] + "_n" + f[1]];
        std::sort(v.begin(), v.end());
        if (f[2] == "median") CHECK(std::abs(std::stod(f[3]) - v[1]) <= 1e-12);
        if (f[2] == "mean") CHECK(std::abs(std::stod(f[3]) - (v[0] + v[1] + v[2]) / 3.0) <= 1e-12);
        if (f[2] == "mean_without_worst") CHECK(std::abs(std::stod(f[3]) - (v[0] + v[1]) / 2.0) <= 1e-12);
    }
}

TEST_CASE("cli: seed offset shifts every seed") {
    const fs::path dir = scratch("offset");
    json doc = small_lorenz_config();
    doc["ensemble_sizes"] = {20};
    doc["seeds"] = {0};
    doc["methods"] = {"linear"};
    const auto cfg = write_json(dir, "l63.json", doc);
    REQUIRE(invoke({"lorenz63", "--config", cfg.string(), "--out", dir.string(), "--seed-offset", "5"}) ==
            cli::kExitOk);
    CHECK(fs::exists(dir / "lorenz63_linear_n20_seed5.tsv"));
    CHECK_FALSE(fs::exists(dir / "lorenz63_linear_n20_seed0.tsv"));
}

TEST_CASE("cli: wavy outputs and reruns") {
    const fs::path dir = scratch("wavy");
    const json doc = {{"grid", {{"min", -4.0}, {"max", 4.0}, {"step", 2.0}}}, {"cloud_size", 20}, {"seeds", {1, 2}}};
    const auto cfg = write_json(dir, "wavy.json", doc);
    REQUIRE(invoke({"wavy", "--config", cfg.string(), "--out", (dir / "a").string(), "--threads", "1"}) ==
            cli::kExitOk);
    REQUIRE(invoke({"wavy", "--config", cfg.string(), "--out", (dir / "b").string(), "--threads", "1"}) ==
            cli::kExitOk);
    const auto files = snapshot(dir / "a");
    CHECK(files == snapshot(dir / "b"));
    CHECK(files.size() == 1 + 3 * 2);
    const auto profile = rows(dir / "a" / "wavy_profile_seed1.tsv");
    CHECK(profile.size() == 1 + 5);
    const auto clouds = rows(dir / "a" / "wavy_clouds_seed2.tsv");
    // Pushforward clouds hold the n = 30 members, pullback clouds cloud_size draws.
    CHECK(clouds.size() == 1 + 5 * (30 + 20));
    const auto summary = rows(dir / "a" / "wavy_summary.tsv");
    CHECK(summary.size() == 3);
}

#ifdef PTMAP_EXE_PATH
TEST_CASE("cli: executable exit codes") {
    const std::string exe = PTMAP_EXE_PATH;
    auto status = [](const std::string& cmd) {
        const int raw = std::system((cmd + " > /dev/null 2>&1").c_str());
        return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    CHECK(status(exe + " --help") == 0);
    CHECK(status(exe + " fit --config /nonexistent/ptmap.json --out /tmp") == 2);
    CHECK(status(exe) == 2);
}
#endif
