#include <iostream>

#include <CLI11.hpp>

#include "cli.hpp"
#include "ptmap/objective.hpp"

namespace ptmap::cli {

int run(int argc, char** argv) {
    CLI::App app{"Adaptive P-spline triangular transport maps"};
    app.require_subcommand(1);
    app.footer("Exit codes: 0 success, 2 configuration or input error, 3 compute error.\n"
               "Set PTMAP_LOG_LEVEL (trace, debug, info, warn, error, off) for diagnostics.");

    std::filesystem::path config;
    RunOptions opt;
    auto add = [&](const std::string& name, const std::string& help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config, "JSON run configuration")->required();
        sub->add_option("--out", opt.out, "output directory (overrides output_dir)");
        sub->add_option("--seed-offset", opt.seed_offset, "added to every configured seed");
        sub->add_option("--threads", opt.threads, "worker threads; 0 uses all cores, 1 is bit-reproducible")
            ->check(CLI::NonNegativeNumber);
        return sub;
    };
    auto* fit = add("fit", "fit a triangular map to an ensemble");
    auto* wavy = add("wavy", "smoothing-parameter profile on the bivariate wavy target");
    auto* l63 = add("lorenz63", "Lorenz-63 filtering experiment");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*fit) return cmd_fit(config, opt);
        if (*wavy) return cmd_wavy(config, opt);
        if (*l63) return cmd_lorenz63(config, opt);
    } catch (const ConfigError& e) {
        std::cerr << "ptmap: configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "ptmap: " << e.what() << '\n';
        return kExitCompute;
    }
    return kExitConfig;
}

}  // namespace ptmap::cli
