#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "weaktraj/scenario.hpp"
#include "weaktraj/validation.hpp"

namespace fs = std::filesystem;
using namespace weaktraj;

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumerical = 3, kAcceptance = 4 };

struct Globals {
    std::string config;
    std::string scenario;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    double omega_scale = 1.0;
};

ScenarioConfig load(const Globals& g) {
    if (!g.config.empty() && !g.scenario.empty()) throw ConfigError("--config and --scenario are mutually exclusive");
    if (!g.config.empty()) return load_config_file(g.config);
    if (!g.scenario.empty()) return parse_config(bundled_scenario(g.scenario));
    throw ConfigError("no input: pass --config PATH or --scenario NAME");
}

int run(const Globals& g, std::optional<std::vector<std::string>> products) {
    const ScenarioConfig c = load(g);
    RunOptions opt;
    opt.seed = g.seed;
    opt.products = std::move(products);
    opt.threads = g.threads;
    opt.omega_scale = g.omega_scale;
    const auto sum = run_scenario(c, g.out, opt);
    for (const auto& f : sum.files) std::cout << (fs::path(g.out) / f).string() << '\n';
    std::cout << (fs::path(g.out) / "manifest.json").string() << '\n';
    if (sum.weak)
        for (const auto& s : sum.weak->silent)
            std::cerr << "meter " << s.meter << " silent: " << to_string(s.reason) << '\n';
    return kOk;
}

int validate(const Globals& g) {
    AcceptanceOptions opt;
    opt.omega_scale = g.omega_scale;
    opt.threads = g.threads;
    opt.on_result = [](const CheckResult& r) { std::cout << format_result(r) << std::endl; };
    const auto results = run_acceptance(opt);
    fs::create_directories(g.out);
    const fs::path report = fs::path(g.out) / "validation_report.json";
    std::ofstream(report) << acceptance_report(results).dump(2) << '\n';
    std::size_t failed = 0;
    for (const auto& r : results) failed += !r.passed;
    std::cout << results.size() - failed << " of " << results.size() << " criteria passed; report " << report.string()
              << '\n';
    return failed ? kAcceptance : kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Weak trajectories and average trajectories in time-dependent harmonic potentials", "weaktraj"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    Globals g;
    app.add_option("--config", g.config, "Scenario config file (JSON)");
    app.add_option("--scenario", g.scenario, "Bundled scenario name (see `scenario list`)");
    app.add_option("--out", g.out, "Output directory")->capture_default_str();
    app.add_option("--seed", g.seed, "Seed override for shot sampling");
    app.add_option("--threads", g.threads, "Worker threads (0 = hardware)")->capture_default_str();
    app.add_option("--omega-scale", g.omega_scale, "Scale every omega (sensitivity probe)")->group("");
    app.fallthrough();

    int code = kOk;
    std::function<int()> action;
    for (const char* p : {"classical", "propagate", "weak-traj", "average-traj", "pointer"}) {
        const std::string name = p;
        app.add_subcommand(name, "Write the " + name + " product for a scenario")->callback([&, name] {
            action = [&, name] { return run(g, std::vector<std::string>{name}); };
        });
    }
    app.add_subcommand("run", "Write every product listed in the config's outputs")->callback([&] {
        action = [&] { return run(g, std::nullopt); };
    });
    app.add_subcommand("validate", "Run the acceptance suite and write validation_report.json")->callback([&] {
        action = [&] { return validate(g); };
    });

    auto* scen = app.add_subcommand("scenario", "Bundled scenarios");
    scen->require_subcommand(1);
    scen->add_subcommand("list", "List bundled scenarios")->callback([&] {
        action = [] {
            for (const auto& n : scenario_names()) std::cout << n << "  " << scenario_summary(n) << '\n';
            return kOk;
        };
    });
    std::string describe_name;
    auto* describe = scen->add_subcommand("describe", "Print a bundled scenario as JSON");
    describe->add_option("name", describe_name)->required();
    describe->callback([&] {
        action = [&] {
            std::cout << bundled_scenario(describe_name).dump(2) << '\n';
            return kOk;
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }
    if (g.threads == 0) g.threads = std::max(1u, std::thread::hardware_concurrency());

    try {
        code = action();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kNumerical;
    }
    return code;
}
