#include "doctest.h"

#include "ncsim/errors.hpp"
#include "ncsim/scenario.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ncsim;

namespace {

const char* kScalar = R"(
[plant]
n = 1
l_bar = 1e-3
x0 = 8e-4

[controller]
mode = manual
kappa = 1
L = 1

[channel]
T_m = 1
theta = 0.2

[sim]
h = 0.1
horizon = 20
)";

const char* kQuadratic = R"(
# comment lines and blank lines are ignored
[plant]
n = 2
M = 1
l_bar = 1e-9, 1e-10
h1 = 0.5:2
x0 = 6.1e-10, -3.7e-11

[controller]
mode = manual
kappa = 6
L = 2e-6

[channel]
schedule = jittered
T_m = 2e-6
T_M = 4e-6
seed = 5
theta = 6e-6
drop = pattern
drop_pattern = 0, 1, 0

[sim]
h = 1e-6
horizon = 1e-4
delay_read = hold

[monitors]
dissipation = true
fit_from = 2e-5

[output]
dir = out/q
)";

std::string error_of(const std::string& text) {
    try {
        (void)parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("parsing a full config") {
    const Scenario s = parse_config(kQuadratic);
    CHECK(s.plant.n() == 2);
    CHECK(s.x0(1) == -3.7e-11);
    CHECK(s.controller.mode == ParamMode::Manual);
    CHECK(s.controller.kappa == 6.0);
    CHECK(s.schedule.mode == ScheduleMode::Jittered);
    CHECK(s.schedule.seed == 5);
    CHECK(s.theta == 6e-6);
    CHECK(s.drop.kind == DropKind::Pattern);
    CHECK(s.drop.pattern == std::vector<bool>{false, true, false});
    CHECK(s.sim.delay_read == DelayRead::Hold);
    CHECK(s.monitors.dissipation);
    CHECK(s.monitors.fit_from == 2e-5);
    CHECK(s.output_dir == "out/q");
}

TEST_CASE("render and parse are inverse") {
    for (const char* text : {kScalar, kQuadratic}) {
        const Scenario s = parse_config(text);
        const std::string once = render_config(s);
        CHECK(parse_config(once) == s);
        CHECK(render_config(parse_config(once)) == once);
    }
    for (const char* file : {"a1_integrator.ini", "a2_quadratic.ini", "a3_dropouts.ini"}) {
        const Scenario s = load_config(std::string(NCSIM_SCENARIO_DIR) + "/" + file);
        CHECK(parse_config(render_config(s)) == s);
    }
}

TEST_CASE("off-grid delay is rejected with both keys named") {
    const std::string msg = error_of(R"(
[plant]
n = 1
l_bar = 1
[channel]
T_m = 1
theta = 0.35
[sim]
h = 0.1
horizon = 10
)");
    CHECK(msg.find("channel.theta") != std::string::npos);
    CHECK(msg.find("sim.h") != std::string::npos);
    CHECK_THROWS_AS((void)load_config(std::string(NCSIM_SCENARIO_DIR) + "/invalid_delay.ini"), ConfigError);
}

TEST_CASE("schema violations name the key") {
    std::string base = kScalar;
    CHECK(error_of(base + "bogus = 1\n").find("sim.bogus") != std::string::npos);
    CHECK(error_of(std::string(kScalar).replace(std::string(kScalar).find("x0 = 8e-4"), 9, "x0 = 2e-3"))
              .find("plant.x0") != std::string::npos);
    CHECK(error_of(std::string(kScalar).replace(std::string(kScalar).find("h = 0.1"), 7, "h = zero"))
              .find("sim.h") != std::string::npos);
    CHECK(error_of(base + "[extra]\n").find("[extra]") != std::string::npos);
    CHECK(error_of(base + "h = 0.2\n").find("duplicate key sim.h") != std::string::npos);
    CHECK(error_of("[plant]\nl_bar = 1\n").find("plant.n") != std::string::npos);
    CHECK(error_of(base + "record_stride = 3\n").find("sim.record_stride") != std::string::npos);
    CHECK_THROWS_AS((void)load_config("/nonexistent/file.ini"), ConfigError);
}

TEST_CASE("override replaces or inserts one key") {
    const Scenario s = parse_config(kScalar);
    CHECK(with_override(s, "sim.horizon", "5").sim.horizon == 5.0);
    CHECK(with_override(s, "monitors.convergence", "true").monitors.convergence);
    const Scenario t = with_override(s, "channel.theta", "0.3");
    CHECK(t.theta == 0.3);
    CHECK(t.sim == s.sim);
    CHECK_THROWS_AS((void)with_override(s, "channel.theta", "0.35"), ConfigError);
    CHECK_THROWS_AS((void)with_override(s, "nosection", "1"), ConfigError);
    CHECK_THROWS_AS((void)with_override(s, "bogus.key", "1"), ConfigError);
}

TEST_CASE("minimal scalar config runs and writes outputs") {
    Scenario s = parse_config(kScalar);
    s.monitors.convergence = true;
    // The stepwise cell halving puts a floor under the log-linear residual.
    s.monitors.fit_max_residual = 0.25;
    const auto dir = std::filesystem::temp_directory_path() / "ncsim_test_scenario";
    std::filesystem::remove_all(dir);
    const RunResult r = run_scenario(s, dir.string());
    INFO(r.report.render());
    CHECK(r.exit_code == kExitOk);
    REQUIRE(r.rate);
    CHECK(r.rate->R_av == doctest::Approx(2.0));
    REQUIRE(r.fit);
    CHECK(r.fit->decays());
    for (const char* f : {"trace.csv", "events.csv", "packets.csv", "monitors.txt", "metadata.txt", "scaled_trace.csv"})
        CHECK(std::filesystem::exists(dir / f));

    std::ifstream in(dir / "trace.csv");
    std::stringstream buf;
    buf << in.rdbuf();
    const Trace back = load_trace_csv(buf.str(), s);
    const Trace fresh = run(resolve(s), s.sim);
    CHECK(back.rows() == fresh.rows());
    CHECK(back.x == fresh.x);
    CHECK(back.psi == fresh.psi);
    CHECK(check_synchrony(back).passed());

    std::ifstream meta(dir / "metadata.txt");
    std::stringstream mb;
    mb << meta.rdbuf();
    CHECK(mb.str().find("kappa = 1") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("zero growth constant ends in a simulation error") {
    // Lambda built without the coupling term lets the error escape its cell.
    const Scenario s = parse_config(R"(
[plant]
n = 2
l_bar = 1e-3, 1e-4
h1 = 0.5:2
x0 = 6.1e-4, -3.7e-5
[controller]
mode = manual
kappa = 2
L = 2e-3
growth = 0
[channel]
T_m = 0.5
theta = 0.3
[sim]
h = 0.01
horizon = 20
)");
    const RunResult r = run_scenario(s, "");
    CHECK(r.exit_code == kExitSimulationError);
    CHECK(r.diagnostic.find("quantizer overflow") != std::string::npos);
}

TEST_CASE("resolution reports invalid manual gains as a config error") {
    Scenario s = parse_config(kScalar);
    s.controller.kappa = 0.5;
    CHECK(run_scenario(s, "").exit_code == kExitConfigError);
}

TEST_CASE("sweeps") {
    const Scenario s = parse_config(kScalar);
    CHECK(sweep(s, "channel.T_m", {}).empty());
    const auto rows = sweep(s, "channel.T_m", {"0.5", "1", "0.35"});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].exit_code == kExitOk);
    CHECK(rows[0].R_av == doctest::Approx(4.0));
    CHECK(rows[1].R_av == doctest::Approx(2.0));
    CHECK(rows[2].exit_code == kExitConfigError);
    CHECK_FALSE(rows[2].error.empty());
    const std::string table = sweep_table("channel.T_m", rows);
    CHECK(table.rfind("channel.T_m,exit,R_av,delta_fit,monitors,error\n", 0) == 0);
    CHECK(table.find("0.5,0,4,") != std::string::npos);
}
