#include "ncsim/analysis.hpp"

#include "ncsim/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace ncsim {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void note_violation(CheckResult& c, double at) {
    ++c.violations;
    if (!c.first_violation) c.first_violation = at;
    c.outcome = Outcome::Fail;
}

double max_abs_diff(const double* a, const double* b, int n) {
    double m = 0.0;
    for (int j = 0; j < n; ++j) m = std::max(m, std::abs(a[j] - b[j]));
    return m;
}

}  // namespace

const char* to_string(Outcome o) noexcept {
    switch (o) {
        case Outcome::Pass: return "pass";
        case Outcome::Fail: return "fail";
        case Outcome::Skipped: return "skipped";
    }
    return "unknown";
}

bool MonitorReport::passed() const noexcept {
    return std::none_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.outcome == Outcome::Fail; });
}

const CheckResult& MonitorReport::at(const std::string& name) const {
    for (const auto& c : checks)
        if (c.name == name) return c;
    throw LookupError("no check named " + name);
}

void MonitorReport::append(const MonitorReport& other) {
    checks.insert(checks.end(), other.checks.begin(), other.checks.end());
}

std::string MonitorReport::render() const {
    std::ostringstream os;
    os.precision(17);
    for (const auto& c : checks) {
        os << c.name << ".outcome = " << to_string(c.outcome) << '\n';
        os << c.name << ".violations = " << c.violations << '\n';
        os << c.name << ".first_violation = ";
        if (c.first_violation) os << *c.first_violation;
        else os << "none";
        os << '\n' << c.name << ".worst = " << c.worst << '\n';
        for (const auto& [k, v] : c.values) os << c.name << '.' << k << " = " << v << '\n';
        if (!c.note.empty()) os << c.name << ".note = " << c.note << '\n';
    }
    return os.str();
}

MonitorReport check_containment(const ScaledTrace& st) {
    const int n = st.n;
    CheckResult grid{"containment"};
    for (std::size_t r = 0; r < st.rows(); ++r) {
        const double* e = st.E.data() + r * n;
        const double* p = st.P.data() + r * n;
        if (!std::isfinite(e[0])) continue;
        for (int j = 0; j < n; ++j) {
            const double ratio = std::abs(e[j]) / (0.5 * p[j]);
            grid.worst = std::max(grid.worst, ratio);
            if (!(std::abs(e[j]) <= 0.5 * p[j])) note_violation(grid, st.r_of_row(r));
        }
    }
    CheckResult pre{"containment_pre_jump"}, post{"containment_post_jump"};
    for (const auto& jump : st.jumps) {
        const double r = st.r0 + static_cast<double>(jump.step) * st.h;
        for (int j = 0; j < n; ++j) {
            const double half = 0.5 * jump.P_pre[j];
            pre.worst = std::max(pre.worst, std::abs(jump.E_pre[j]) / half);
            if (!(std::abs(jump.E_pre[j]) <= half)) note_violation(pre, r);
            post.worst = std::max(post.worst, std::abs(jump.E_post[j]) / half);
            if (!(std::abs(jump.E_post[j]) <= 0.5 * half)) note_violation(post, r);
        }
    }
    pre.values["jumps"] = static_cast<double>(st.jumps.size());
    return {{grid, pre, post}};
}

MonitorReport check_synchrony(const Trace& tr) {
    const int n = tr.n;
    CheckResult om{"sync_omega_psi"}, xi{"sync_xi_psi"}, nu{"sync_nu_ell"};
    for (std::size_t r = 0; r < tr.rows(); ++r) {
        const double dev = max_abs_diff(tr.omega.data() + r * n, tr.psi.data() + r * n, n);
        om.worst = std::max(om.worst, dev);
        if (dev != 0.0) note_violation(om, tr.time_of_row(r));
    }
    for (const Event& ev : tr.events) {
        const double dev = std::max(max_abs_diff(ev.pre.omega.data(), ev.pre.psi.data(), n),
                                    max_abs_diff(ev.post.omega.data(), ev.post.psi.data(), n));
        om.worst = std::max(om.worst, dev);
        if (dev != 0.0) note_violation(om, ev.t);
    }
    if (tr.delay_steps % tr.stride != 0) {
        for (auto* c : {&xi, &nu}) {
            c->outcome = Outcome::Skipped;
            c->note = "record stride does not divide the delay";
        }
        return {{om, xi, nu}};
    }
    const std::size_t dr = static_cast<std::size_t>(tr.delay_steps / tr.stride);
    for (std::size_t r = dr; r < tr.rows(); ++r) {
        const double dx = max_abs_diff(tr.xi.data() + (r - dr) * n, tr.psi.data() + r * n, n);
        const double dl = max_abs_diff(tr.ell.data() + (r - dr) * n, tr.nu.data() + r * n, n);
        xi.worst = std::max(xi.worst, dx);
        nu.worst = std::max(nu.worst, dl);
        if (dx != 0.0) note_violation(xi, tr.time_of_row(r));
        if (dl != 0.0) note_violation(nu, tr.time_of_row(r));
    }
    return {{om, xi, nu}};
}

double CascadeData::tau_limit() const noexcept {
    const double a = a_bound, q = q_bound;
    return 1.0 / (8.0 * a * a * (8.0 * a * q + 1.0) * (8.0 * a * q + 1.0));
}

Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& A) {
    const Eigen::Index n = A.rows();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd At = A.transpose();
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n * n, n * n);
    // Column-major vec: vec(A^T Q) = (I kron A^T) vec Q, vec(Q A) = (A^T kron I) vec Q.
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            K.block(i * n, j * n, n, n) += I(i, j) * At;
            K.block(i * n, j * n, n, n) += At(i, j) * I;
        }
    const Eigen::VectorXd rhs = -Eigen::Map<const Eigen::VectorXd>(I.data(), n * n);
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible()) throw NumericDomainError("Lyapunov operator is singular");
    const Eigen::VectorXd q = lu.solve(rhs);
    const Eigen::MatrixXd Q = Eigen::Map<const Eigen::MatrixXd>(q.data(), n, n);
    return 0.5 * (Q + Q.transpose());
}

CascadeData build_cascade_data(const ControllerParams& cp) {
    const int n = cp.n;
    CascadeData cd;
    cd.n = n;
    cd.Gamma = gamma_matrix(n);
    cd.Delta = Eigen::MatrixXd::Constant(n, n, -1.0);
    const Eigen::MatrixXd A = cd.Gamma + cd.Delta;
    cd.Q = solve_lyapunov(A);
    cd.residual = (A.transpose() * cd.Q + cd.Q * A + Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
    auto spectral = [](const Eigen::MatrixXd& m) { return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0); };
    cd.Q_norm = spectral(cd.Q);
    cd.Gamma_norm = n > 1 ? spectral(cd.Gamma) : 0.0;
    cd.Delta_norm = spectral(cd.Delta);
    cd.q_bound = std::pow(1.0 + n * n, n - 1);
    cd.a_bound = n;
    cd.gamma_bound = std::sqrt(static_cast<double>(n)) * scaled_bound_constant(n, cp.L, cp.kappa);
    cd.tau = cp.tau();
    return cd;
}

FunctionalInputs functional_inputs(const CascadeData& cd, const ScaledTrace& st) {
    if (st.delay_steps % st.stride != 0)
        throw HistoryUnderflowError("record stride must divide the delay for the functional window");
    FunctionalInputs in;
    const std::size_t rows = st.rows();
    in.h = st.h * static_cast<double>(st.stride);
    in.window_rows = 2 * st.delay_steps / st.stride;
    in.z2.resize(rows);
    in.eps2_post.resize(rows);
    in.V1.resize(rows);
    long first_finite = -1;
    for (std::size_t r = 0; r < rows; ++r) {
        const auto Z = st.vec(st.Z, r);
        in.z2[r] = Z.squaredNorm();
        in.V1[r] = Z.dot(cd.Q * Z);
        in.eps2_post[r] = st.vec(st.E, r).squaredNorm() + st.vec(st.P, r).squaredNorm();
        if (first_finite < 0 && std::isfinite(in.eps2_post[r])) first_finite = static_cast<long>(r);
    }
    in.eps2_pre = in.eps2_post;
    for (const auto& j : st.jumps) {
        if (j.step % st.stride != 0) continue;
        const auto r = static_cast<std::size_t>(j.step / st.stride);
        if (r < rows) in.eps2_pre[r] = j.E_pre.squaredNorm() + j.P_pre.squaredNorm();
    }
    // The first delivery row starts the eps history; its left limit is undefined.
    in.first_row = first_finite < 0 ? static_cast<long>(rows) : first_finite + in.window_rows;
    return in;
}

Functionals eval_functionals(const FunctionalInputs& in, std::size_t row) {
    const long r = static_cast<long>(row);
    if (r >= static_cast<long>(in.V1.size())) throw IndexError("row outside the trace");
    if (r < in.first_row) throw HistoryUnderflowError("functional window reaches before finite history");
    Functionals f;
    f.V1 = in.V1[row];
    double iz = 0.0, ie = 0.0;
    const double h = in.h;
    for (long j = r - in.window_rows; j < r; ++j) {
        // Weight l - (r - 2 tau) at both ends of [j, j + 1].
        const double wa = static_cast<double>(j - (r - in.window_rows)) * h;
        const double wb = wa + h;
        iz += 0.5 * h * (wa * in.z2[j] + wb * in.z2[j + 1]);
        ie += 0.5 * h * (wa * in.eps2_post[j] + wb * in.eps2_pre[j + 1]);
    }
    f.V2 = f.V1 + iz / 16.0 + 2.0 * ie;
    return f;
}

Functionals eval_functionals(const CascadeData& cd, const ScaledTrace& st, std::size_t row) {
    return eval_functionals(functional_inputs(cd, st), row);
}

MonitorReport check_dissipation(const CascadeData& cd, const ScaledTrace& st, std::size_t from_row) {
    CheckResult flow{"dissipation_flow"}, jump{"dissipation_jump"};
    if (st.stride != 1) {
        for (auto* c : {&flow, &jump}) {
            c->outcome = Outcome::Skipped;
            c->note = "needs every grid point recorded";
        }
        return {{flow, jump}};
    }
    const FunctionalInputs in = functional_inputs(cd, st);
    const double c_eps = 8.0 * (cd.q_bound * cd.q_bound * cd.a_bound * cd.a_bound + 1.0);
    const std::size_t start = std::max<std::size_t>(from_row, static_cast<std::size_t>(std::max(0L, in.first_row)));
    if (start + 1 >= st.rows()) {
        flow.outcome = jump.outcome = Outcome::Skipped;
        flow.note = jump.note = "no rows after the requested start";
        return {{flow, jump}};
    }
    const double h = in.h;
    flow.worst = -std::numeric_limits<double>::infinity();
    long intervals = 0;
    Functionals prev = eval_functionals(in, start);
    for (std::size_t r = start; r + 1 < st.rows(); ++r) {
        const Functionals next = eval_functionals(in, r + 1);
        const double lhs = (next.V2 - prev.V2) / h;
        const double rhs_a = -0.25 * in.z2[r] + c_eps * in.eps2_post[r];
        const double rhs_b = -0.25 * in.z2[r + 1] + c_eps * in.eps2_pre[r + 1];
        // Mean-value bound: the derivative sits between the endpoints up to the local slope.
        const double tol = 10.0 * std::abs(rhs_b - rhs_a) +
                           16.0 * kEps * (std::abs(prev.V2) + std::abs(next.V2)) / h;
        const double bound = std::max(rhs_a, rhs_b) + tol;
        const double scale = std::max({std::abs(bound), std::abs(lhs), 1e-300});
        flow.worst = std::max(flow.worst, (lhs - bound) / scale);
        if (!(lhs <= bound)) note_violation(flow, st.r_of_row(r));
        ++intervals;
        prev = next;
    }
    flow.values["intervals"] = static_cast<double>(intervals);
    flow.values["start_r"] = st.r_of_row(start);

    // Across a jump only eps changes, on a null set; the functional is the same on both sides.
    long jumps_checked = 0;
    for (const auto& j : st.jumps) {
        if (j.step < static_cast<long>(start) || j.step >= static_cast<long>(st.rows())) continue;
        const auto r = static_cast<std::size_t>(j.step);
        const Functionals at = eval_functionals(in, r);
        // A window ending at rho+ is the limit of windows ending just after rho; its last
        // trapezoid still closes on the left limit, so V2 is evaluated from the same nodes.
        FunctionalInputs right = in;
        right.V1[r] = (st.vec(st.Z, r)).dot(cd.Q * st.vec(st.Z, r));
        const Functionals after = eval_functionals(right, r);
        const double tol = 16.0 * kEps * std::abs(at.V2);
        const double excess = after.V2 - at.V2;
        jump.worst = std::max(jump.worst, excess);
        if (!(excess <= tol)) note_violation(jump, st.r_of_row(r));
        ++jumps_checked;
    }
    jump.values["jumps"] = static_cast<double>(jumps_checked);
    return {{flow, jump}};
}

LinearRegion detect_linear_region(const ScaledTrace& st, const ControllerParams& cp) {
    const int n = st.n;
    const NestedSaturation ctl(cp);
    LinearRegion out;
    out.z_quarter.assign(n, std::nullopt);
    out.e_small.assign(n, std::nullopt);
    std::array<double, kMaxDim> w{}, args{};
    std::optional<std::size_t> candidate;
    for (std::size_t r = 0; r < st.rows(); ++r) {
        const double* e = st.E.data() + r * n;
        const double* zd = st.Zd.data() + r * n;
        const double* z = st.Z.data() + r * n;
        const double rr = st.r_of_row(r);
        for (int j = 0; j < n; ++j) {
            if (!out.z_quarter[j] && std::abs(z[j]) <= 0.25 * cp.eps[j]) out.z_quarter[j] = rr;
            const double e_lim = cp.eps[j] / (2.0 * n * std::pow(80.0, j + 2));
            if (!out.e_small[j] && std::isfinite(e[j]) && std::abs(e[j]) <= e_lim) out.e_small[j] = rr;
        }
        bool linear = std::isfinite(e[0]) && std::isfinite(zd[0]);
        if (linear) {
            for (int j = 0; j < n; ++j) w[j] = e[j] + zd[j];
            ctl.layer_arguments(w.data(), args.data());
            for (int j = 0; j < n; ++j)
                if (!(std::abs(args[j]) <= 0.95 * cp.eps[j])) linear = false;
        }
        if (!linear) candidate.reset();
        else if (!candidate) candidate = r;
    }
    if (candidate) {
        out.entry_row = candidate;
        out.entry_r = st.r_of_row(*candidate);
    }
    return out;
}

MonitorReport check_boundedness_thresholds(const ScaledTrace& st, int level, double lambda_star,
                                           double mu_star, double e_star, double r_from) {
    if (level < 1 || level > st.n) throw IndexError("level outside 1..n");
    CheckResult c{"boundedness_level_" + std::to_string(level)};
    const double eps = st.cp.eps.at(static_cast<std::size_t>(level - 1));
    const double tau = st.cp.tau();
    c.values["tau"] = tau;
    c.values["eps"] = eps;
    std::string why;
    if (!(tau <= 1.0 / 12.0)) why += "tau > 1/12; ";
    if (!(lambda_star <= eps / 30.0)) why += "lambda* > eps/30; ";
    if (!(mu_star <= eps / 30.0)) why += "mu* > eps/30; ";
    if (!(e_star <= eps / 30.0)) why += "e* > eps/30; ";
    if (!why.empty()) {
        c.outcome = Outcome::Skipped;
        c.note = "hypothesis not satisfied: " + why.substr(0, why.size() - 2);
        return {{c}};
    }
    const double bound = 4.0 * (lambda_star + mu_star + e_star);
    c.values["bound"] = bound;
    double settled = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t r = 0; r < st.rows(); ++r) {
        const double z = std::abs(st.Z[r * st.n + (level - 1)]);
        const double rr = st.r_of_row(r);
        if (!(z <= bound)) settled = std::numeric_limits<double>::quiet_NaN();
        else if (std::isnan(settled)) settled = rr;
        if (rr < r_from) continue;
        c.worst = std::max(c.worst, bound > 0.0 ? z / bound : (z > 0.0 ? std::numeric_limits<double>::infinity() : 0.0));
        if (!(z <= bound)) note_violation(c, rr);
    }
    if (!std::isnan(settled)) c.values["settled_r"] = settled;
    return {{c}};
}

ExpFit fit_exponential(const std::vector<double>& t, const std::vector<double>& value, double T) {
    if (t.size() != value.size()) throw InsufficientDataError("time and value lengths differ");
    std::vector<double> xs, ys;
    // Logs are taken relative to the first point so a constant signal gives an exactly flat line.
    double y0 = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] < T || !std::isfinite(value[i])) continue;
        if (value[i] == 0.0) break;
        const double y = std::log(std::abs(value[i]));
        if (std::isnan(y0)) y0 = y;
        xs.push_back(t[i] - T);
        ys.push_back(y - y0);
    }
    if (xs.size() < 2) throw InsufficientDataError("exponential fit needs at least two nonzero points");
    const double m = static_cast<double>(xs.size());
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
    }
    const double mx = sx / m, my = sy / m;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (!(sxx > 0.0)) throw InsufficientDataError("exponential fit needs distinct times");
    const double slope = sxy / sxx;
    const double icpt = my - slope * mx;
    double ss = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double d = ys[i] - (icpt + slope * xs[i]);
        ss += d * d;
    }
    return {std::exp(icpt + y0), -slope, std::sqrt(ss / m), xs.size()};
}

ExpFit fit_exponential(const Trace& tr, double T, FitSignal signal) {
    const int n = tr.n;
    std::vector<double> t(tr.rows()), v(tr.rows());
    for (std::size_t r = 0; r < tr.rows(); ++r) {
        t[r] = tr.time_of_row(r);
        double s = 0.0;
        const std::size_t o = r * n;
        for (int j = 0; j < n; ++j) {
            s += tr.x[o + j] * tr.x[o + j];
            if (signal == FitSignal::Hybrid)
                s += tr.omega[o + j] * tr.omega[o + j] + tr.xi[o + j] * tr.xi[o + j] + tr.ell[o + j] * tr.ell[o + j] +
                     tr.psi[o + j] * tr.psi[o + j] + tr.nu[o + j] * tr.nu[o + j];
        }
        v[r] = std::sqrt(s);
    }
    return fit_exponential(t, v, T);
}

ExpFit fit_exponential(const ScaledTrace& st, double r_from) {
    std::vector<double> t, v;
    for (std::size_t r = 0; r < st.rows(); ++r) {
        const double e2 = st.vec(st.E, r).squaredNorm();
        if (!std::isfinite(e2)) continue;
        t.push_back(st.r_of_row(r));
        v.push_back(std::sqrt(st.vec(st.Z, r).squaredNorm() + e2 + st.vec(st.P, r).squaredNorm()));
    }
    return fit_exponential(t, v, r_from);
}

CheckResult fit_check(const std::string& name, const ExpFit& fit, double max_residual) {
    CheckResult c{name};
    c.values["k_fit"] = fit.k_fit;
    c.values["delta_fit"] = fit.delta_fit;
    c.values["residual"] = fit.residual;
    c.values["points"] = static_cast<double>(fit.points);
    c.worst = fit.residual;
    if (!fit.decays()) {
        c.outcome = Outcome::Fail;
        c.note = "no decay";
    } else if (!(fit.residual <= max_residual)) {
        c.outcome = Outcome::Fail;
        c.note = "residual above limit";
    }
    return c;
}

}  // namespace ncsim
