#include "ncsim/scenario.hpp"

#include "ncsim/errors.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <set>
#include <sstream>

namespace ncsim {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(trim(cur));
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_list(const double* v, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += (i ? ", " : "") + fmt(v[i]);
    return s;
}

std::string fmt_list(const std::vector<double>& v) { return fmt_list(v.data(), v.size()); }
std::string fmt_list(const Eigen::VectorXd& v) { return fmt_list(v.data(), static_cast<std::size_t>(v.size())); }

/// Key/value store for one parse, tracking which keys were consumed.
class Entries {
public:
    void put(const std::string& path, const std::string& value) {
        if (!values_.emplace(path, value).second) throw ConfigError("duplicate key " + path);
    }

    [[nodiscard]] bool has(const std::string& path) const { return values_.count(path) != 0; }

    std::optional<std::string> take(const std::string& path) {
        auto it = values_.find(path);
        if (it == values_.end()) return std::nullopt;
        used_.insert(path);
        return it->second;
    }

    std::string require(const std::string& path) {
        auto v = take(path);
        if (!v) throw ConfigError("missing required key " + path);
        return *v;
    }

    void reject_unused() const {
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) throw ConfigError("unknown key " + k);
    }

private:
    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
};

double to_double(const std::string& path, const std::string& text) {
    const std::string t = trim(text);
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(t.c_str(), &end);
    if (t.empty() || end != t.c_str() + t.size() || errno == ERANGE || !std::isfinite(v))
        throw ConfigError(path + ": expected a finite number, got '" + t + "'");
    return v;
}

long to_long(const std::string& path, const std::string& text) {
    const std::string t = trim(text);
    char* end = nullptr;
    errno = 0;
    const long v = std::strtol(t.c_str(), &end, 10);
    if (t.empty() || end != t.c_str() + t.size() || errno == ERANGE)
        throw ConfigError(path + ": expected an integer, got '" + t + "'");
    return v;
}

std::uint64_t to_u64(const std::string& path, const std::string& text) {
    const std::string t = trim(text);
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(t.c_str(), &end, 10);
    if (t.empty() || t[0] == '-' || end != t.c_str() + t.size() || errno == ERANGE)
        throw ConfigError(path + ": expected a nonnegative integer, got '" + t + "'");
    return v;
}

bool to_bool(const std::string& path, const std::string& text) {
    const std::string t = trim(text);
    if (t == "true" || t == "yes" || t == "1") return true;
    if (t == "false" || t == "no" || t == "0") return false;
    throw ConfigError(path + ": expected true or false, got '" + t + "'");
}

std::vector<double> to_list(const std::string& path, const std::string& text) {
    std::vector<double> out;
    if (trim(text).empty()) return out;
    for (const auto& item : split(text, ',')) out.push_back(to_double(path, item));
    return out;
}

StateVec to_vec(const std::string& path, const std::string& text, int n) {
    const auto v = to_list(path, text);
    if (static_cast<int>(v.size()) != n)
        throw ConfigError(path + ": expected " + std::to_string(n) + " entries, got " + std::to_string(v.size()));
    return Eigen::Map<const StateVec>(v.data(), n);
}

/// "c:e1,e2; c:e1,e2" with one exponent per trailing variable.
Nonlinearity to_poly(const std::string& path, const std::string& text, int width) {
    Nonlinearity h;
    if (trim(text).empty() || trim(text) == "0") return h;
    for (const auto& term : split(text, ';')) {
        if (term.empty()) continue;
        const auto colon = term.find(':');
        if (colon == std::string::npos) throw ConfigError(path + ": term '" + term + "' lacks coeff:exponents");
        Monomial m;
        m.coeff = to_double(path, term.substr(0, colon));
        for (const auto& e : split(term.substr(colon + 1), ',')) {
            const long k = to_long(path, e);
            if (k < 0) throw ConfigError(path + ": exponents must be nonnegative");
            m.exponents.push_back(static_cast<int>(k));
        }
        if (static_cast<int>(m.exponents.size()) != width)
            throw ConfigError(path + ": each term needs " + std::to_string(width) + " exponents");
        h.terms.push_back(std::move(m));
    }
    return h;
}

std::string render_poly(const Nonlinearity& h) {
    if (h.terms.empty()) return "0";
    std::string s;
    for (std::size_t t = 0; t < h.terms.size(); ++t) {
        if (t) s += "; ";
        s += fmt(h.terms[t].coeff) + ":";
        for (std::size_t j = 0; j < h.terms[t].exponents.size(); ++j)
            s += (j ? "," : "") + std::to_string(h.terms[t].exponents[j]);
    }
    return s;
}

void cross_validate(const Scenario& s) {
    const double q = s.theta / s.sim.h;
    if (std::abs(q - std::round(q)) > 1e-9 * std::max(1.0, q))
        throw ConfigError("channel.theta and sim.h: theta / h = " + fmt(q) + " is not an integer");
    if (!check_initial_condition(s.plant, s.x0))
        throw ConfigError("plant.x0 and plant.l_bar: initial state lies outside the box |x0_i| <= l_bar_i");
    if (s.schedule.T_m > s.schedule.T_M) throw ConfigError("channel.T_m and channel.T_M: T_m exceeds T_M");
    // Throws when periodic gaps are off the grid or no grid gap fits [T_m, T_M].
    (void)generate_schedule(s.schedule, 0.0, s.sim.h, s.sim.t0);
    const long d = std::lround(q);
    if ((s.monitors.synchrony || s.monitors.containment || s.monitors.dissipation) && d % s.sim.record_stride != 0)
        throw ConfigError("sim.record_stride and channel.theta: the stride must divide theta / h");
    if (s.monitors.dissipation && s.sim.record_stride != 1)
        throw ConfigError("monitors.dissipation and sim.record_stride: dissipation needs record_stride = 1");
    if (s.controller.mode == ParamMode::Auto && !s.controller.eps.empty())
        throw ConfigError("controller.eps and controller.mode: custom levels need mode = manual");
    if (!s.controller.growth.empty() && static_cast<int>(s.controller.growth.size()) != s.plant.n() - 1)
        throw ConfigError("controller.growth and plant.n: expected n - 1 entries");
    if (s.drop.kind == DropKind::Pattern) (void)max_consecutive_drops(s.drop);
}

}  // namespace

Scenario parse_config(const std::string& text) {
    static const std::set<std::string> sections{"plant", "controller", "channel", "sim", "monitors", "output"};
    Entries e;
    std::string section;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!sections.count(section)) throw ConfigError("unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        e.put(section + "." + key, trim(line.substr(eq + 1)));
    }

    Scenario s;
    // [plant]
    const long n = to_long("plant.n", e.require("plant.n"));
    if (n < 1 || n > kMaxDim) throw ConfigError("plant.n must lie in 1.." + std::to_string(kMaxDim));
    const int ni = static_cast<int>(n);
    const double M = e.has("plant.M") ? to_double("plant.M", *e.take("plant.M")) : 1.0;
    const StateVec l_bar = to_vec("plant.l_bar", e.require("plant.l_bar"), ni);
    std::vector<Nonlinearity> h(ni - 1);
    for (int i = 1; i < ni; ++i) {
        const std::string key = "plant.h" + std::to_string(i);
        if (auto v = e.take(key)) h[i - 1] = to_poly(key, *v, ni - i);
    }
    for (int i = ni; i <= kMaxDim + 1; ++i)
        if (e.has("plant.h" + std::to_string(i))) throw ConfigError("plant.h" + std::to_string(i) + " exceeds n - 1");
    s.plant = FeedforwardPlant(ni, std::move(h), M, l_bar);
    s.x0 = e.has("plant.x0") ? to_vec("plant.x0", *e.take("plant.x0"), ni) : StateVec::Zero(ni);

    // [controller]
    auto& c = s.controller;
    if (auto v = e.take("controller.mode")) {
        if (*v == "auto") c.mode = ParamMode::Auto;
        else if (*v == "manual") c.mode = ParamMode::Manual;
        else throw ConfigError("controller.mode: expected auto or manual, got '" + *v + "'");
    }
    if (auto v = e.take("controller.margin")) c.margin = to_double("controller.margin", *v);
    if (c.mode == ParamMode::Manual) {
        c.kappa = to_double("controller.kappa", e.require("controller.kappa"));
        c.L = to_double("controller.L", e.require("controller.L"));
    } else {
        for (const char* k : {"controller.kappa", "controller.L"})
            if (e.has(k)) throw ConfigError(std::string(k) + " and controller.mode: gains are synthesized in auto mode");
    }
    if (auto v = e.take("controller.eps")) c.eps = to_list("controller.eps", *v);
    if (!c.eps.empty() && static_cast<int>(c.eps.size()) != ni)
        throw ConfigError("controller.eps: expected " + std::to_string(ni) + " entries");
    if (auto v = e.take("controller.growth")) c.growth = to_list("controller.growth", *v);
    if (auto v = e.take("controller.growth_grid")) c.growth_grid = static_cast<int>(to_long("controller.growth_grid", *v));

    // [channel]
    auto& sc = s.schedule;
    if (auto v = e.take("channel.schedule")) {
        if (*v == "periodic") sc.mode = ScheduleMode::Periodic;
        else if (*v == "jittered") sc.mode = ScheduleMode::Jittered;
        else throw ConfigError("channel.schedule: expected periodic or jittered, got '" + *v + "'");
    }
    sc.T_m = to_double("channel.T_m", e.require("channel.T_m"));
    sc.T_M = e.has("channel.T_M") ? to_double("channel.T_M", *e.take("channel.T_M")) : sc.T_m;
    if (auto v = e.take("channel.T")) sc.T = to_double("channel.T", *v);
    if (auto v = e.take("channel.seed")) sc.seed = to_u64("channel.seed", *v);
    if (auto v = e.take("channel.theta")) s.theta = to_double("channel.theta", *v);
    if (!(s.theta >= 0.0)) throw ConfigError("channel.theta must be nonnegative");
    if (auto v = e.take("channel.drop")) {
        if (*v == "none") s.drop.kind = DropKind::None;
        else if (*v == "pattern") s.drop.kind = DropKind::Pattern;
        else if (*v == "bernoulli") s.drop.kind = DropKind::Bernoulli;
        else throw ConfigError("channel.drop: expected none, pattern or bernoulli, got '" + *v + "'");
    }
    if (auto v = e.take("channel.drop_pattern")) {
        for (const auto& item : split(*v, ',')) {
            if (item == "1") s.drop.pattern.push_back(true);
            else if (item == "0") s.drop.pattern.push_back(false);
            else throw ConfigError("channel.drop_pattern: entries must be 0 or 1");
        }
    }
    if (auto v = e.take("channel.drop_p")) s.drop.p = to_double("channel.drop_p", *v);
    if (auto v = e.take("channel.drop_seed")) s.drop.seed = to_u64("channel.drop_seed", *v);
    if (auto v = e.take("channel.drop_max_consecutive"))
        s.drop.max_consecutive = static_cast<int>(to_long("channel.drop_max_consecutive", *v));
    if (s.drop.kind == DropKind::Pattern && s.drop.pattern.empty())
        throw ConfigError("channel.drop_pattern is required when channel.drop = pattern");

    // [sim]
    s.sim.h = to_double("sim.h", e.require("sim.h"));
    s.sim.horizon = to_double("sim.horizon", e.require("sim.horizon"));
    if (!(s.sim.h > 0.0)) throw ConfigError("sim.h must be positive");
    if (!(s.sim.horizon > 0.0)) throw ConfigError("sim.horizon must be positive");
    if (s.sim.horizon / s.sim.h > 1e11) throw ConfigError("sim.horizon / sim.h exceeds the step budget");
    if (auto v = e.take("sim.t0")) s.sim.t0 = to_double("sim.t0", *v);
    if (auto v = e.take("sim.delay_read")) {
        if (*v == "dense") s.sim.delay_read = DelayRead::Dense;
        else if (*v == "hold") s.sim.delay_read = DelayRead::Hold;
        else throw ConfigError("sim.delay_read: expected dense or hold, got '" + *v + "'");
    }
    if (auto v = e.take("sim.record_stride")) s.sim.record_stride = to_long("sim.record_stride", *v);
    if (s.sim.record_stride < 1) throw ConfigError("sim.record_stride must be >= 1");
    if (auto v = e.take("sim.time_scale")) {
        if (*v == "original") s.time_scale = TimeScale::Original;
        else if (*v == "scaled") s.time_scale = TimeScale::Scaled;
        else throw ConfigError("sim.time_scale: expected original or scaled, got '" + *v + "'");
    }

    // [monitors]
    auto& m = s.monitors;
    if (auto v = e.take("monitors.synchrony")) m.synchrony = to_bool("monitors.synchrony", *v);
    if (auto v = e.take("monitors.containment")) m.containment = to_bool("monitors.containment", *v);
    if (auto v = e.take("monitors.dissipation")) m.dissipation = to_bool("monitors.dissipation", *v);
    if (auto v = e.take("monitors.convergence")) m.convergence = to_bool("monitors.convergence", *v);
    if (auto v = e.take("monitors.fit_from")) m.fit_from = to_double("monitors.fit_from", *v);
    if (auto v = e.take("monitors.fit_max_residual")) m.fit_max_residual = to_double("monitors.fit_max_residual", *v);
    if (auto v = e.take("monitors.decay_factor")) m.decay_factor = to_double("monitors.decay_factor", *v);

    // [output]
    if (auto v = e.take("output.dir")) s.output_dir = *v;

    e.reject_unused();
    cross_validate(s);
    return s;
}

Scenario load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string render_config(const Scenario& s) {
    std::ostringstream os;
    const int n = s.plant.n();
    os << "[plant]\n";
    os << "n = " << n << '\n';
    os << "M = " << fmt(s.plant.M()) << '\n';
    os << "l_bar = " << fmt_list(s.plant.l_bar()) << '\n';
    for (int i = 1; i < n; ++i) os << 'h' << i << " = " << render_poly(s.plant.h()[i - 1]) << '\n';
    os << "x0 = " << fmt_list(s.x0) << '\n';

    const auto& c = s.controller;
    os << "\n[controller]\n";
    os << "mode = " << (c.mode == ParamMode::Auto ? "auto" : "manual") << '\n';
    os << "margin = " << fmt(c.margin) << '\n';
    if (c.mode == ParamMode::Manual) os << "kappa = " << fmt(c.kappa) << "\nL = " << fmt(c.L) << '\n';
    if (!c.eps.empty()) os << "eps = " << fmt_list(c.eps) << '\n';
    if (!c.growth.empty()) os << "growth = " << fmt_list(c.growth) << '\n';
    os << "growth_grid = " << c.growth_grid << '\n';

    os << "\n[channel]\n";
    os << "schedule = " << (s.schedule.mode == ScheduleMode::Periodic ? "periodic" : "jittered") << '\n';
    // Omitted keys take their defaults, so an override of T_m alone moves a periodic channel.
    os << "T_m = " << fmt(s.schedule.T_m) << '\n';
    if (s.schedule.T_M != s.schedule.T_m) os << "T_M = " << fmt(s.schedule.T_M) << '\n';
    if (s.schedule.T != 0.0) os << "T = " << fmt(s.schedule.T) << '\n';
    os << "seed = " << s.schedule.seed << '\n';
    os << "theta = " << fmt(s.theta) << '\n';
    const char* drop = s.drop.kind == DropKind::None ? "none" : s.drop.kind == DropKind::Pattern ? "pattern" : "bernoulli";
    os << "drop = " << drop << '\n';
    if (!s.drop.pattern.empty()) {
        os << "drop_pattern = ";
        for (std::size_t i = 0; i < s.drop.pattern.size(); ++i) os << (i ? ", " : "") << (s.drop.pattern[i] ? 1 : 0);
        os << '\n';
    }
    os << "drop_p = " << fmt(s.drop.p) << "\ndrop_seed = " << s.drop.seed << '\n';
    os << "drop_max_consecutive = " << s.drop.max_consecutive << '\n';

    os << "\n[sim]\n";
    os << "h = " << fmt(s.sim.h) << "\nhorizon = " << fmt(s.sim.horizon) << "\nt0 = " << fmt(s.sim.t0) << '\n';
    os << "delay_read = " << (s.sim.delay_read == DelayRead::Dense ? "dense" : "hold") << '\n';
    os << "record_stride = " << s.sim.record_stride << '\n';
    os << "time_scale = " << (s.time_scale == TimeScale::Original ? "original" : "scaled") << '\n';

    const auto& m = s.monitors;
    auto b = [](bool v) { return v ? "true" : "false"; };
    os << "\n[monitors]\n";
    os << "synchrony = " << b(m.synchrony) << "\ncontainment = " << b(m.containment) << '\n';
    os << "dissipation = " << b(m.dissipation) << "\nconvergence = " << b(m.convergence) << '\n';
    os << "fit_from = " << fmt(m.fit_from) << "\nfit_max_residual = " << fmt(m.fit_max_residual) << '\n';
    os << "decay_factor = " << fmt(m.decay_factor) << '\n';

    os << "\n[output]\ndir = " << s.output_dir << '\n';
    return os.str();
}

Scenario with_override(const Scenario& s, const std::string& key_path, const std::string& value) {
    const auto dot = key_path.find('.');
    if (dot == std::string::npos) throw ConfigError("override key must be section.key, got " + key_path);
    const std::string section = key_path.substr(0, dot), key = key_path.substr(dot + 1);
    std::istringstream is(render_config(s));
    std::ostringstream os;
    std::string line, current;
    bool replaced = false;
    auto flush_missing = [&] {
        if (current == section && !replaced) {
            os << key << " = " << value << '\n';
            replaced = true;
        }
    };
    while (std::getline(is, line)) {
        const std::string t = trim(line);
        if (!t.empty() && t.front() == '[') {
            flush_missing();
            current = t.substr(1, t.size() - 2);
        } else if (current == section) {
            const auto eq = t.find('=');
            if (eq != std::string::npos && trim(t.substr(0, eq)) == key) {
                os << key << " = " << value << '\n';
                replaced = true;
                continue;
            }
        }
        os << line << '\n';
    }
    flush_missing();
    if (!replaced) throw ConfigError("unknown section in override " + key_path);
    return parse_config(os.str());
}

ClosedLoopSetup resolve(const Scenario& s) {
    const int n = s.plant.n();
    const auto& c = s.controller;
    ControllerParams cp = c.mode == ParamMode::Auto ? synthesize(n, s.plant.M(), s.theta, c.margin)
                                                   : manual_params(n, s.plant.M(), s.theta, c.kappa, c.L, c.eps);
    ClosedLoopSetup setup{s.plant, cp, {}, {}, s.schedule, s.theta, s.drop, s.x0};
    setup.growth = c.growth.empty() ? default_growth_constants(s.plant, cp, c.growth_grid) : c.growth;
    setup.lambda = lambda_for(setup);
    return setup;
}

std::string describe(const Scenario& s, const ClosedLoopSetup& setup) {
    std::ostringstream os;
    const auto& cp = setup.cp;
    const int n = cp.n;
    os << "mode = " << (cp.mode == ParamMode::Auto ? "auto" : "manual") << '\n';
    os << "n = " << n << '\n';
    os << "kappa = " << fmt(cp.kappa) << '\n';
    os << "L = " << fmt(cp.L) << '\n';
    os << "M = " << fmt(cp.M) << '\n';
    os << "theta = " << fmt(cp.theta) << '\n';
    os << "tau = " << fmt(cp.tau()) << '\n';
    os << "P = " << fmt(scaled_bound_constant(n, cp.L, cp.kappa)) << '\n';
    os << "eps = " << fmt_list(cp.eps) << '\n';
    os << "growth = " << fmt_list(setup.growth) << '\n';
    os << "max_consecutive_drops = " << max_consecutive_drops(setup.drop) << '\n';
    const PhiMatrix phi = build_phi(cp.transform());
    for (int i = 0; i < n; ++i) os << "phi.row" << i + 1 << " = " << fmt_list(Eigen::VectorXd(phi.phi.row(i))) << '\n';
    for (int i = 0; i < n; ++i)
        os << "lambda.row" << i + 1 << " = " << fmt_list(Eigen::VectorXd(setup.lambda.lam.row(i))) << '\n';
    for (const auto& c : check_stability_conditions(cp).conditions)
        os << "condition[" << c.name << "] = " << fmt(c.lhs) << " <= " << fmt(c.rhs) << (c.holds ? " holds" : " violated")
           << '\n';
    const CascadeData cd = build_cascade_data(cp);
    os << "cascade.q = " << fmt(cd.q_bound) << "\ncascade.a = " << fmt(cd.a_bound) << '\n';
    os << "cascade.gamma = " << fmt(cd.gamma_bound) << " (limit " << fmt(1.0 / (8.0 * cd.q_bound)) << ")\n";
    os << "cascade.tau_limit = " << fmt(cd.tau_limit()) << '\n';
    os << "cascade.lyapunov_residual = " << fmt(cd.residual) << '\n';
    os << "delay_read = " << (s.sim.delay_read == DelayRead::Dense ? "dense" : "hold") << '\n';
    os << "drop_semantics = synchronized erasure (encoder skips its update for dropped packets)\n";
    os << "jump_order = deliveries then samples, all reading left limits\n";
    os << "seeds = schedule " << s.schedule.seed << ", drops " << s.drop.seed << '\n';
    return os.str();
}

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw ConfigError("cannot write " + p.string());
    out << text;
}

}  // namespace

RunResult run_scenario(const Scenario& s, const std::string& out_dir) {
    RunResult res;
    std::optional<ClosedLoopSetup> resolved;
    try {
        resolved = resolve(s);
    } catch (const Error& e) {
        res.exit_code = kExitConfigError;
        res.diagnostic = e.what();
        return res;
    }
    const ClosedLoopSetup& setup = *resolved;
    Trace tr;
    std::optional<ScaledTrace> direct;
    try {
        tr = run(setup, s.sim);
        if (s.time_scale == TimeScale::Scaled) direct = run_scaled(setup, s.sim);
    } catch (const QuantizerOverflowError& e) {
        res.exit_code = kExitSimulationError;
        res.diagnostic = std::string("quantizer overflow: ") + e.what();
        return res;
    } catch (const DivergenceError& e) {
        res.exit_code = kExitSimulationError;
        res.diagnostic = std::string("divergence: ") + e.what();
        return res;
    }

    MonitorReport& rep = res.report;
    std::optional<ScaledTrace> st;
    auto scaled = [&]() -> const ScaledTrace& {
        if (!st) st = direct ? *direct : to_scaled(tr);
        return *st;
    };
    if (s.monitors.synchrony) rep.append(check_synchrony(tr));
    if (s.monitors.containment) rep.append(check_containment(scaled()));
    std::optional<LinearRegion> region;
    if (s.monitors.dissipation || s.monitors.convergence) region = detect_linear_region(scaled(), setup.cp);
    if (s.monitors.dissipation) {
        if (!region->entry_row) {
            CheckResult c("dissipation_flow");
            c.outcome = Outcome::Fail;
            c.note = "linear region never entered";
            rep.checks.push_back(c);
        } else {
            rep.append(check_dissipation(build_cascade_data(setup.cp), scaled(), *region->entry_row));
        }
    }
    if (s.monitors.convergence) {
        CheckResult decay("decay");
        const double x0 = s.x0.norm();
        double last = x0;
        for (std::size_t r = 0; r < tr.rows(); ++r) {
            last = Eigen::Map<const Eigen::VectorXd>(tr.x.data() + r * tr.n, tr.n).norm();
            if (last <= s.monitors.decay_factor * x0) {
                decay.values["reached_t"] = tr.time_of_row(r);
                break;
            }
        }
        decay.worst = x0 > 0.0 ? last / x0 : 0.0;
        if (!decay.values.count("reached_t") && x0 > 0.0) {
            decay.outcome = Outcome::Fail;
            decay.note = "|x| stayed above the decay target";
        }
        rep.checks.push_back(decay);
        // A negative window start means the linear-region entry time.
        double T = s.monitors.fit_from;
        if (T < 0.0) T = region->entry_r ? *region->entry_r * setup.cp.kappa : tr.t0;
        try {
            res.fit = fit_exponential(tr, T, FitSignal::Hybrid);
            rep.checks.push_back(fit_check("exponential_fit", *res.fit, s.monitors.fit_max_residual));
        } catch (const InsufficientDataError& e) {
            CheckResult c("exponential_fit");
            c.outcome = Outcome::Fail;
            c.note = e.what();
            rep.checks.push_back(c);
        }
    }
    if (tr.packets.size() >= 2) {
        res.rate = measure_rate(tr.packets);
        CheckResult c("data_rate");
        c.values["R_av"] = res.rate->R_av;
        c.values["R_av_inclusive"] = res.rate->R_av_inclusive;
        c.values["bits_sent"] = static_cast<double>(res.rate->bits_sent);
        rep.checks.push_back(c);
    }
    res.exit_code = rep.passed() ? kExitOk : kExitMonitorFailed;

    if (!out_dir.empty()) {
        const std::filesystem::path dir(out_dir);
        std::filesystem::create_directories(dir);
        write_file(dir / "trace.csv", trace_csv(tr));
        write_file(dir / "events.csv", events_csv(tr));
        write_file(dir / "packets.csv", packet_log_csv(tr.packets));
        write_file(dir / "monitors.txt", rep.render());
        if (st || direct) write_file(dir / "scaled_trace.csv", scaled_trace_csv(direct ? *direct : *st));
        write_file(dir / "metadata.txt", describe(s, setup) + "\n[config]\n" + render_config(s));
    }
    return res;
}

std::vector<SweepRow> sweep(const Scenario& base, const std::string& key_path, const std::vector<std::string>& values) {
    std::vector<std::future<SweepRow>> jobs;
    jobs.reserve(values.size());
    for (const auto& v : values) {
        jobs.push_back(std::async(std::launch::async, [&base, &key_path, v] {
            SweepRow row;
            row.value = v;
            try {
                const Scenario s = with_override(base, key_path, v);
                const RunResult r = run_scenario(s, "");
                row.exit_code = r.exit_code;
                row.error = r.diagnostic;
                row.monitors_passed = r.exit_code == kExitOk;
                if (r.rate) row.R_av = r.rate->R_av;
                if (r.fit) row.delta_fit = r.fit->delta_fit;
            } catch (const std::exception& e) {
                row.exit_code = kExitConfigError;
                row.error = e.what();
            }
            return row;
        }));
    }
    std::vector<SweepRow> rows;
    for (auto& j : jobs) rows.push_back(j.get());
    return rows;
}

std::string sweep_table(const std::string& key_path, const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << key_path << ",exit,R_av,delta_fit,monitors,error\n";
    for (const auto& r : rows) {
        os << r.value << ',' << r.exit_code << ',' << fmt(r.R_av) << ',';
        if (r.delta_fit) os << fmt(*r.delta_fit);
        os << ',' << (r.monitors_passed ? "pass" : "fail") << ',' << r.error << '\n';
    }
    return os.str();
}

Trace load_trace_csv(const std::string& csv, const Scenario& s) {
    const ClosedLoopSetup setup = resolve(s);
    const int n = s.plant.n();
    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line)) throw DecodeError("empty trace file");
    const std::size_t cols = split(line, ',').size();
    if (cols != static_cast<std::size_t>(2 + 6 * n)) throw DecodeError("trace column count does not match plant.n");
    Trace tr;
    tr.n = n;
    tr.h = s.sim.h;
    tr.cp = setup.cp;
    tr.growth = setup.growth;
    tr.lambda = setup.lambda;
    tr.phi = build_phi(setup.cp.transform());
    tr.delay_read = s.sim.delay_read;
    std::vector<double> times;
    std::vector<std::vector<double>*> blocks{&tr.x, &tr.omega, &tr.xi, &tr.ell, &tr.psi, &tr.nu};
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != cols) throw DecodeError("ragged trace row");
        times.push_back(to_double("trace.t", f[0]));
        for (int b = 0; b < 6; ++b)
            for (int j = 0; j < n; ++j) blocks[b]->push_back(to_double("trace", f[1 + b * n + j]));
        tr.u.push_back(to_double("trace.u", f.back()));
    }
    if (times.empty()) throw DecodeError("trace has no rows");
    tr.t0 = times.front();
    tr.stride = times.size() > 1 ? std::max(1L, std::lround((times[1] - times[0]) / s.sim.h)) : 1;
    tr.delay_steps = std::lround(s.theta / s.sim.h);
    tr.total_steps = static_cast<long>(times.size() - 1) * tr.stride;
    return tr;
}

}  // namespace ncsim
