#pragma once

#include "ncsim/analysis.hpp"
#include "ncsim/channel.hpp"
#include "ncsim/controller.hpp"
#include "ncsim/hybridsim.hpp"
#include "ncsim/plant.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ncsim {

enum class TimeScale { Original, Scaled };

struct ControllerSpec {
    ParamMode mode = ParamMode::Auto;
    double margin = 1.0;          ///< auto: fraction of the largest admissible L
    double kappa = 1.0;           ///< manual
    double L = 1.0;               ///< manual
    std::vector<double> eps;      ///< empty: standard levels
    std::vector<double> growth;   ///< empty: estimated on a grid
    int growth_grid = 5;

    bool operator==(const ControllerSpec&) const = default;
};

struct MonitorSpec {
    bool synchrony = true;
    bool containment = true;
    bool dissipation = false;
    bool convergence = false;
    double fit_from = -1.0;       ///< window start for the exponential fit; negative: linear-region entry
    double fit_max_residual = 0.1;
    double decay_factor = 1e-3;   ///< |x| must fall below decay_factor |x(t0)|

    bool operator==(const MonitorSpec&) const = default;
};

struct Scenario {
    FeedforwardPlant plant = FeedforwardPlant::integrator_chain(1, 1.0, StateVec::Ones(1));
    StateVec x0 = StateVec::Zero(1);
    ControllerSpec controller;
    ScheduleSpec schedule;
    double theta = 0.0;
    DropSpec drop;
    SimConfig sim;
    TimeScale time_scale = TimeScale::Original;
    MonitorSpec monitors;
    std::string output_dir = "out";

    bool operator==(const Scenario&) const = default;
};

/// INI-style text with [plant], [controller], [channel], [sim], [monitors] and [output].
/// Throws ConfigError naming the key path on schema or cross-field violations.
[[nodiscard]] Scenario parse_config(const std::string& text);
[[nodiscard]] Scenario load_config(const std::string& path);
/// Inverse of parse_config: parse_config(render_config(s)) == s.
[[nodiscard]] std::string render_config(const Scenario& s);

/// Replaces one `section.key` value and re-validates.
[[nodiscard]] Scenario with_override(const Scenario& s, const std::string& key_path, const std::string& value);

/// Controller gains, growth constants and Lambda resolved from the scenario.
[[nodiscard]] ClosedLoopSetup resolve(const Scenario& s);

/// Resolved parameters and every stability condition, as key = value lines.
[[nodiscard]] std::string describe(const Scenario& s, const ClosedLoopSetup& setup);

enum ExitCode : int { kExitOk = 0, kExitMonitorFailed = 1, kExitSimulationError = 2, kExitConfigError = 3 };

struct RunResult {
    int exit_code = kExitOk;
    std::string diagnostic;
    MonitorReport report;
    std::optional<RateAccount> rate;
    std::optional<ExpFit> fit;
};

/// Simulates, runs the selected monitors and, when out_dir is non-empty, writes
/// trace.csv, events.csv, packets.csv, monitors.txt and metadata.txt there.
[[nodiscard]] RunResult run_scenario(const Scenario& s, const std::string& out_dir);

struct SweepRow {
    std::string value;
    int exit_code = kExitOk;
    std::string error;
    double R_av = 0.0;
    std::optional<double> delta_fit;
    bool monitors_passed = false;
};

/// Runs one scenario per value of `key_path` concurrently; errors stay within their row.
[[nodiscard]] std::vector<SweepRow> sweep(const Scenario& base, const std::string& key_path,
                                          const std::vector<std::string>& values);
[[nodiscard]] std::string sweep_table(const std::string& key_path, const std::vector<SweepRow>& rows);

/// Rebuilds a trace from trace.csv for monitor checks; events are not restored.
[[nodiscard]] Trace load_trace_csv(const std::string& csv, const Scenario& s);

}  // namespace ncsim
