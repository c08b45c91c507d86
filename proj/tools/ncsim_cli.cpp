// Scenario runner: run, sweep, dry-run and check verbs over one config file.

#include "ncsim/errors.hpp"
#include "ncsim/scenario.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

ncsim::Scenario load(const std::string& path, const std::optional<std::uint64_t>& seed, const std::string& time_scale) {
    ncsim::Scenario s = ncsim::load_config(path);
    if (seed) {
        s = ncsim::with_override(s, "channel.seed", std::to_string(*seed));
        s = ncsim::with_override(s, "channel.drop_seed", std::to_string(*seed));
    }
    if (!time_scale.empty()) s = ncsim::with_override(s, "sim.time_scale", time_scale);
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Closed-loop simulator for quantized feedback over a delayed channel"};
    app.require_subcommand(1);

    std::string config, out, time_scale, axis, values, trace_path;
    std::optional<std::uint64_t> seed;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "scenario file")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "override schedule and drop seeds");
        sub->add_option("--time-scale", time_scale, "original or scaled")->check(CLI::IsMember({"original", "scaled"}));
    };
    auto* run = app.add_subcommand("run", "simulate and run the selected monitors");
    common(run);
    run->add_option("--out", out, "output directory (defaults to output.dir)");
    auto* sweep = app.add_subcommand("sweep", "run one scenario per value of a numeric key");
    common(sweep);
    sweep->add_option("--axis", axis, "section.key to vary")->required();
    sweep->add_option("--values", values, "comma-separated values");
    auto* dry = app.add_subcommand("dry-run", "print resolved parameters without simulating");
    common(dry);
    auto* check = app.add_subcommand("check", "run monitors on an existing trace.csv");
    common(check);
    check->add_option("--trace", trace_path, "trace.csv written by run")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        const ncsim::Scenario s = load(config, seed, time_scale);
        if (*dry) {
            std::cout << ncsim::describe(s, ncsim::resolve(s));
            return ncsim::kExitOk;
        }
        if (*run) {
            const auto res = ncsim::run_scenario(s, out.empty() ? s.output_dir : out);
            std::cout << res.report.render();
            if (!res.diagnostic.empty()) std::cerr << "error: " << res.diagnostic << '\n';
            return res.exit_code;
        }
        if (*sweep) {
            std::vector<std::string> vals;
            std::stringstream ss(values);
            for (std::string v; std::getline(ss, v, ',');)
                if (!v.empty()) vals.push_back(v);
            const auto rows = ncsim::sweep(s, axis, vals);
            std::cout << ncsim::sweep_table(axis, rows);
            for (const auto& r : rows)
                if (r.exit_code != ncsim::kExitOk) return ncsim::kExitMonitorFailed;
            return ncsim::kExitOk;
        }
        if (*check) {
            std::ifstream in(trace_path);
            std::stringstream text;
            text << in.rdbuf();
            const ncsim::Trace tr = ncsim::load_trace_csv(text.str(), s);
            ncsim::MonitorReport rep;
            if (s.monitors.synchrony) rep.append(ncsim::check_synchrony(tr));
            if (s.monitors.containment) rep.append(ncsim::check_containment(ncsim::to_scaled(tr)));
            std::cout << rep.render();
            return rep.passed() ? ncsim::kExitOk : ncsim::kExitMonitorFailed;
        }
    } catch (const ncsim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return ncsim::kExitConfigError;
    } catch (const ncsim::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return ncsim::kExitSimulationError;
    }
    return ncsim::kExitOk;
}
