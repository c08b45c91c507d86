#include "ncsim/hybridsim.hpp"

#include "ncsim/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

namespace ncsim {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
using Buf = std::array<double, kMaxDim>;

/// Grid bookkeeping shared by both integrators.
struct Grid {
    long steps = 0;
    long delay = 0;
};

Grid make_grid(const SimConfig& cfg, double theta) {
    if (!(cfg.h > 0.0) || !std::isfinite(cfg.h)) throw ConfigError("sim.h must be positive");
    if (!(cfg.horizon >= 0.0)) throw ConfigError("sim.horizon must be nonnegative");
    if (cfg.record_stride < 1) throw ConfigError("sim.record_stride must be >= 1");
    const double steps = cfg.horizon / cfg.h;
    if (steps > 1e12) throw ConfigError("sim.horizon / sim.h is too large");
    Grid g;
    g.steps = static_cast<long>(std::floor(steps + 1e-9));
    const double q = theta / cfg.h;
    g.delay = std::lround(q);
    if (std::abs(q - static_cast<double>(g.delay)) > 1e-9 * std::max(1.0, q))
        throw ConfigError("channel.theta / sim.h must be an integer");
    return g;
}

/// Classic RK4 for f(y, u) with the input taken from u3[0] (left), u3[1] (midpoint, two
/// stages) and u3[2] (right). Also returns the third-order dense-output midpoint.
void rk4_driven(const FeedforwardPlant& plant, const double* y, const double* u3, double h,
                double* y_out, double* y_mid) noexcept {
    const int n = plant.n();
    Buf k1, k2, k3, k4, tmp;
    plant.eval(y, u3[0], k1.data());
    for (int j = 0; j < n; ++j) tmp[j] = y[j] + 0.5 * h * k1[j];
    plant.eval(tmp.data(), u3[1], k2.data());
    for (int j = 0; j < n; ++j) tmp[j] = y[j] + 0.5 * h * k2[j];
    plant.eval(tmp.data(), u3[1], k3.data());
    for (int j = 0; j < n; ++j) tmp[j] = y[j] + h * k3[j];
    plant.eval(tmp.data(), u3[2], k4.data());
    for (int j = 0; j < n; ++j) {
        y_out[j] = y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        y_mid[j] = y[j] + h * (5.0 / 24.0 * k1[j] + 1.0 / 6.0 * k2[j] + 1.0 / 6.0 * k3[j] -
                               1.0 / 24.0 * k4[j]);
    }
}

/// RK4 for the self-fed replica y' = f(y, a(y)) used without delay.
void rk4_feedback(const FeedforwardPlant& plant, const NestedSaturation& ctl, const double* y,
                  double h, double* y_out, double* y_mid) noexcept {
    const int n = plant.n();
    Buf k1, k2, k3, k4, tmp;
    plant.eval(y, ctl.original(y), k1.data());
    for (int j = 0; j < n; ++j) tmp[j] = y[j] + 0.5 * h * k1[j];
    plant.eval(tmp.data(), ctl.original(tmp.data()), k2.data());
    for (int j = 0; j < n; ++j) tmp[j] = y[j] + 0.5 * h * k2[j];
    plant.eval(tmp.data(), ctl.original(tmp.data()), k3.data());
    for (int j = 0; j < n; ++j) tmp[j] = y[j] + h * k3[j];
    plant.eval(tmp.data(), ctl.original(tmp.data()), k4.data());
    for (int j = 0; j < n; ++j) {
        y_out[j] = y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        y_mid[j] = y[j] + h * (5.0 / 24.0 * k1[j] + 1.0 / 6.0 * k2[j] + 1.0 / 6.0 * k3[j] -
                               1.0 / 24.0 * k4[j]);
    }
}

/// Ring of the last few grid points: left limits, right limits and step midpoints.
class History {
public:
    enum Field { OmegaPost, OmegaPre, OmegaMid, PsiPost, PsiPre, PsiMid, XPre, XiPre, EllPre, kFields };

    History(int n, long delay) : n_(n), cap_(delay + 3), data_(static_cast<std::size_t>(cap_ * kFields * n), 0.0) {}

    double* at(long step, Field f) noexcept {
        const long slot = step % cap_;
        return data_.data() + (slot * kFields + f) * n_;
    }
    /// Zero before the first grid point: the replicas start from rest.
    const double* read(long step, Field f) noexcept { return step < 0 ? zeros_.data() : at(step, f); }
    void put(long step, Field f, const double* v) noexcept { std::copy(v, v + n_, at(step, f)); }

private:
    int n_;
    long cap_;
    std::vector<double> data_;
    Buf zeros_{};
};

Snapshot snapshot(int n, const double* x, const double* om, const double* xi, const double* ell,
                  const double* psi, const double* nu, double u) {
    auto v = [n](const double* p) { return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(p, n)); };
    return {v(x), v(om), v(xi), v(ell), v(psi), v(nu), u};
}

bool all_finite(int n, const double* v) noexcept {
    for (int j = 0; j < n; ++j)
        if (!std::isfinite(v[j])) return false;
    return true;
}

}  // namespace

const char* to_string(EventKind kind) noexcept {
    switch (kind) {
        case EventKind::Sample: return "sample";
        case EventKind::Delivery: return "delivery";
        case EventKind::DroppedSample: return "dropped_sample";
        case EventKind::DroppedDelivery: return "dropped_delivery";
    }
    return "unknown";
}

LambdaMatrix lambda_for(const ClosedLoopSetup& setup) {
    const int D = max_consecutive_drops(setup.drop);
    return design_lambda(setup.plant.n(), setup.growth, (D + 1) * setup.schedule.T_M);
}

Snapshot Trace::row(std::size_t r) const {
    const std::size_t o = r * static_cast<std::size_t>(n);
    return snapshot(n, &x[o], &omega[o], &xi[o], &ell[o], &psi[o], &nu[o], u[r]);
}

Trace run(const ClosedLoopSetup& setup, const SimConfig& cfg) {
    const FeedforwardPlant& plant = setup.plant;
    const int n = plant.n();
    if (setup.cp.n != n) throw ConfigError("controller dimension differs from plant dimension");
    if (setup.x0.size() != n) throw ConfigError("plant.x0 must have n entries");
    if (!check_initial_condition(plant, setup.x0))
        throw ConfigError("plant.x0 lies outside the initial box |x0_i| <= l_bar_i");
    const Grid grid = make_grid(cfg, setup.theta);
    const long d = grid.delay;
    const double h = cfg.h;

    const NestedSaturation ctl(setup.cp);
    const PhiMatrix& phi = ctl.phi();
    const LambdaMatrix& lam = setup.lambda;
    ChannelModel channel(generate_schedule(setup.schedule, cfg.horizon, h, cfg.t0), setup.theta, setup.drop);
    const auto& sched = channel.schedule().steps;

    Trace tr;
    tr.n = n;
    tr.t0 = cfg.t0;
    tr.h = h;
    tr.stride = cfg.record_stride;
    tr.delay_steps = d;
    tr.total_steps = grid.steps;
    tr.cp = setup.cp;
    tr.growth = setup.growth;
    tr.lambda = lam;
    tr.phi = phi;
    tr.delay_read = cfg.delay_read;
    const std::size_t rows = static_cast<std::size_t>(grid.steps / cfg.record_stride + 1);
    for (auto* a : {&tr.x, &tr.omega, &tr.xi, &tr.ell, &tr.psi, &tr.nu}) a->reserve(rows * n);
    tr.u.reserve(rows);

    auto [enc, dec] = initialize(plant, phi);
    StateVec x = setup.x0;
    History hist(n, d);
    std::deque<std::pair<std::uint32_t, long>> erased;  // dropped packets and their delivery step
    std::size_t next_sample = 0;

    auto time_of = [&](long step) { return cfg.t0 + static_cast<double>(step) * h; };
    auto snap = [&]() {
        return snapshot(n, x.data(), enc.omega.data(), enc.xi.data(), enc.ell.data(), dec.psi.data(),
                        dec.nu.data(), ctl.original(dec.psi.data()));
    };

    auto deliveries = [&](long step) {
        for (Packet& pkt : channel.deliver(step)) {
            while (!erased.empty() && erased.front().first < pkt.k) {
                Event ev{EventKind::DroppedDelivery, erased.front().first, step, time_of(step), snap(), {}};
                ev.post = ev.pre;
                tr.events.push_back(std::move(ev));
                ++dec.next_k;
                erased.pop_front();
            }
            Event ev{EventKind::Delivery, pkt.k, step, time_of(step), snap(), {}};
            dec = decoder_delivery_jump(dec, pkt, phi, lam);
            const long src = step - d;
            const Eigen::Map<const Eigen::VectorXd> xd(hist.read(src, History::XPre), n);
            const Eigen::Map<const Eigen::VectorXd> xid(hist.read(src, History::XiPre), n);
            const Eigen::Map<const Eigen::VectorXd> elld(hist.read(src, History::EllPre), n);
            enc = omega_delivery_jump(enc, xd, xid, elld, phi);
            ev.post = snap();
            tr.events.push_back(std::move(ev));
        }
        while (!erased.empty() && erased.front().second == step) {
            Event ev{EventKind::DroppedDelivery, erased.front().first, step, time_of(step), snap(), {}};
            ev.post = ev.pre;
            tr.events.push_back(std::move(ev));
            ++dec.next_k;
            erased.pop_front();
        }
    };

    auto jumps = [&](long step) {
        deliveries(step);
        if (next_sample < sched.size() && sched[next_sample] == step) {
            const auto k = static_cast<std::uint32_t>(next_sample);
            Event ev{EventKind::Sample, k, step, time_of(step), snap(), {}};
            auto [enc_next, pkt] = encoder_sample_jump(enc, x, phi, lam, k, time_of(step));
            if (channel.send(pkt, step) == Delivery::Delivered) {
                enc = std::move(enc_next);
            } else {
                ev.kind = EventKind::DroppedSample;
                erased.emplace_back(k, step + d);
            }
            ev.post = snap();
            tr.events.push_back(std::move(ev));
            ++next_sample;
            if (d == 0) deliveries(step);
        }
    };

    auto record = [&](long step) {
        if (step % cfg.record_stride != 0) return;
        auto push = [&](std::vector<double>& a, const Eigen::VectorXd& v) { a.insert(a.end(), v.data(), v.data() + n); };
        push(tr.x, x);
        push(tr.omega, enc.omega);
        push(tr.xi, enc.xi);
        push(tr.ell, enc.ell);
        push(tr.psi, dec.psi);
        push(tr.nu, dec.nu);
        tr.u.push_back(ctl.original(dec.psi.data()));
    };

    auto store_pre = [&](long step) {
        hist.put(step, History::OmegaPre, enc.omega.data());
        hist.put(step, History::PsiPre, dec.psi.data());
        hist.put(step, History::XPre, x.data());
        hist.put(step, History::XiPre, enc.xi.data());
        hist.put(step, History::EllPre, enc.ell.data());
    };

    store_pre(0);
    jumps(0);

    Buf psi_next, psi_mid, om_next, om_mid, x_next, x_mid, xi_next, xi_mid;
    const bool dense = cfg.delay_read == DelayRead::Dense;
    for (long i = 0; i < grid.steps; ++i) {
        hist.put(i, History::OmegaPost, enc.omega.data());
        hist.put(i, History::PsiPost, dec.psi.data());
        record(i);

        if (d == 0) {
            // Without delay the decoder and the encoder estimate feed themselves back.
            if (dense) {
                rk4_feedback(plant, ctl, dec.psi.data(), h, psi_next.data(), psi_mid.data());
                rk4_feedback(plant, ctl, enc.xi.data(), h, xi_next.data(), xi_mid.data());
            } else {
                const double up = ctl.original(dec.psi.data());
                const double ux = ctl.original(enc.xi.data());
                const double u3p[3] = {up, up, up}, u3x[3] = {ux, ux, ux};
                rk4_driven(plant, dec.psi.data(), u3p, h, psi_next.data(), psi_mid.data());
                rk4_driven(plant, enc.xi.data(), u3x, h, xi_next.data(), xi_mid.data());
            }
            om_next = psi_next;
            om_mid = psi_mid;
        } else {
            const long s = i - d;
            double u3p[3], u3o[3];
            u3p[0] = ctl.original(hist.read(s, History::PsiPost));
            u3o[0] = ctl.original(hist.read(s, History::OmegaPost));
            if (dense) {
                u3p[1] = ctl.original(hist.read(s, History::PsiMid));
                u3p[2] = ctl.original(hist.read(s + 1, History::PsiPre));
                u3o[1] = ctl.original(hist.read(s, History::OmegaMid));
                u3o[2] = ctl.original(hist.read(s + 1, History::OmegaPre));
            } else {
                u3p[1] = u3p[2] = u3p[0];
                u3o[1] = u3o[2] = u3o[0];
            }
            rk4_driven(plant, dec.psi.data(), u3p, h, psi_next.data(), psi_mid.data());
            rk4_driven(plant, enc.omega.data(), u3o, h, om_next.data(), om_mid.data());
        }

        // Plant and encoder estimate see the current replicas as inputs.
        double u3x[3], u3xi[3];
        u3x[0] = ctl.original(dec.psi.data());
        u3xi[0] = ctl.original(enc.omega.data());
        if (dense) {
            u3x[1] = ctl.original(psi_mid.data());
            u3x[2] = ctl.original(psi_next.data());
            u3xi[1] = ctl.original(om_mid.data());
            u3xi[2] = ctl.original(om_next.data());
        } else {
            u3x[1] = u3x[2] = u3x[0];
            u3xi[1] = u3xi[2] = u3xi[0];
        }
        rk4_driven(plant, x.data(), u3x, h, x_next.data(), x_mid.data());
        if (d != 0) rk4_driven(plant, enc.xi.data(), u3xi, h, xi_next.data(), xi_mid.data());

        hist.put(i, History::OmegaMid, om_mid.data());
        hist.put(i, History::PsiMid, psi_mid.data());
        std::copy_n(x_next.data(), n, x.data());
        std::copy_n(om_next.data(), n, enc.omega.data());
        std::copy_n(xi_next.data(), n, enc.xi.data());
        std::copy_n(psi_next.data(), n, dec.psi.data());

        const long step = i + 1;
        if (!all_finite(n, x.data()) || !all_finite(n, dec.psi.data()) || !all_finite(n, enc.xi.data()) ||
            !all_finite(n, enc.omega.data()))
            throw DivergenceError("non-finite state at t = " + std::to_string(time_of(step)), time_of(step));
        store_pre(step);
        jumps(step);
    }
    hist.put(grid.steps, History::OmegaPost, enc.omega.data());
    hist.put(grid.steps, History::PsiPost, dec.psi.data());
    record(grid.steps);
    tr.packets = channel.log();
    return tr;
}

ScaledTrace run_scaled(const ClosedLoopSetup& setup, const SimConfig& cfg) {
    const FeedforwardPlant& plant = setup.plant;
    const int n = plant.n();
    if (!check_initial_condition(plant, setup.x0))
        throw ConfigError("plant.x0 lies outside the initial box |x0_i| <= l_bar_i");
    const Grid grid = make_grid(cfg, setup.theta);
    const long d = grid.delay;
    const ControllerParams& cp = setup.cp;
    const double hr = cfg.h / cp.kappa;

    const ScaledModel model(plant, cp.transform());
    const NestedSaturation ctl(cp);
    const LambdaMatrix& lam = setup.lambda;
    const Schedule sched = generate_schedule(setup.schedule, cfg.horizon, cfg.h, cfg.t0);
    DropProcess drops(setup.drop);
    std::vector<long> delivery_steps;
    std::vector<std::uint32_t> delivery_k;
    for (std::size_t k = 0; k < sched.size(); ++k) {
        Packet probe;
        probe.k = static_cast<std::uint32_t>(k);
        if (apply_drop(drops, probe) == Delivery::Delivered) {
            delivery_steps.push_back(sched.steps[k] + d);
            delivery_k.push_back(static_cast<std::uint32_t>(k));
        }
    }

    ScaledTrace st;
    st.n = n;
    st.r0 = cfg.t0 / cp.kappa;
    st.h = hr;
    st.stride = cfg.record_stride;
    st.delay_steps = d;
    st.first_step = d;
    st.cp = cp;
    st.lambda = lam;

    // Z history: value and step midpoint. Z is continuous, so one value per grid point.
    const long cap = d + 3;
    std::vector<double> zval(static_cast<std::size_t>(cap * n)), zmid(static_cast<std::size_t>(cap * n));
    auto zslot = [&](std::vector<double>& a, long step) { return a.data() + (step % cap) * n; };

    Eigen::VectorXd Z = model.phi().phi * setup.x0;
    const Eigen::VectorXd Z0 = Z;
    Eigen::VectorXd E = Eigen::VectorXd::Constant(n, kNaN);
    Eigen::VectorXd P = Eigen::VectorXd::Constant(n, kNaN);
    std::size_t next_delivery = 0;
    bool active = false;
    const bool dense = cfg.delay_read == DelayRead::Dense;

    auto v_of = [&](const double* e, const double* zd) {
        Buf w;
        for (int j = 0; j < n; ++j) w[j] = e[j] + zd[j];
        return ctl.scaled(w.data());
    };
    auto v_now = [&](long step) {
        if (!active) return 0.0;
        return v_of(E.data(), step - d >= 0 ? zslot(zval, step - d) : Z0.data());
    };

    auto jumps = [&](long step) {
        if (step == d && !active) {
            // First delivery instant: psi = 0 and x(t - theta) = x0.
            E = -Z0;
            P = 2.0 * (model.phi().phi * plant.l_bar());
            active = true;
        }
        while (next_delivery < delivery_steps.size() && delivery_steps[next_delivery] == step) {
            ScaledTrace::Jump j;
            j.k = delivery_k[next_delivery];
            j.step = step;
            j.E_pre = E;
            j.P_pre = P;
            j.v_pre = v_now(step);
            for (int c = 0; c < n; ++c) E[c] += 0.25 * sgn(-E[c]) * P[c];
            P = lam.lam * P;
            j.E_post = E;
            j.P_post = P;
            j.v_post = v_now(step);
            st.jumps.push_back(std::move(j));
            ++next_delivery;
        }
    };

    auto record = [&](long step) {
        if (step % cfg.record_stride != 0) return;
        st.Z.insert(st.Z.end(), Z.data(), Z.data() + n);
        st.E.insert(st.E.end(), E.data(), E.data() + n);
        st.P.insert(st.P.end(), P.data(), P.data() + n);
        if (step - d >= 0) st.Zd.insert(st.Zd.end(), zslot(zval, step - d), zslot(zval, step - d) + n);
        else st.Zd.insert(st.Zd.end(), static_cast<std::size_t>(n), kNaN);
        st.v.push_back(v_now(step));
    };

    std::copy_n(Z.data(), n, zslot(zval, 0));
    jumps(0);
    Buf k1, k2, k3, k4, tmp, e1, e2, e3, e4, etmp, Ez, Em, Zn, Zm;
    for (long i = 0; i < grid.steps; ++i) {
        std::copy_n(Z.data(), n, zslot(zval, i));
        record(i);
        const double* zl = Z.data();
        if (!active) {
            // Before the first delivery the control is zero.
            auto rate = [&](const double* z, double* out) { model.z_rate(z, 0.0, out); };
            rate(zl, k1.data());
            for (int j = 0; j < n; ++j) tmp[j] = zl[j] + 0.5 * hr * k1[j];
            rate(tmp.data(), k2.data());
            for (int j = 0; j < n; ++j) tmp[j] = zl[j] + 0.5 * hr * k2[j];
            rate(tmp.data(), k3.data());
            for (int j = 0; j < n; ++j) tmp[j] = zl[j] + hr * k3[j];
            rate(tmp.data(), k4.data());
        } else if (d == 0) {
            // Without delay Z and E are coupled through the current Z.
            auto zrate = [&](const double* z, const double* e, double* dz, double* de) {
                model.z_rate(z, v_of(e, z), dz);
                model.e_rate(e, z, de);
            };
            const double* el = E.data();
            zrate(zl, el, k1.data(), e1.data());
            for (int j = 0; j < n; ++j) { tmp[j] = zl[j] + 0.5 * hr * k1[j]; etmp[j] = el[j] + 0.5 * hr * e1[j]; }
            zrate(tmp.data(), etmp.data(), k2.data(), e2.data());
            for (int j = 0; j < n; ++j) { tmp[j] = zl[j] + 0.5 * hr * k2[j]; etmp[j] = el[j] + 0.5 * hr * e2[j]; }
            zrate(tmp.data(), etmp.data(), k3.data(), e3.data());
            for (int j = 0; j < n; ++j) { tmp[j] = zl[j] + hr * k3[j]; etmp[j] = el[j] + hr * e3[j]; }
            zrate(tmp.data(), etmp.data(), k4.data(), e4.data());
            for (int j = 0; j < n; ++j) E[j] = el[j] + hr / 6.0 * (e1[j] + 2.0 * e2[j] + 2.0 * e3[j] + e4[j]);
        } else {
            const long s = i - d;
            const double* zd0 = s >= 0 ? zslot(zval, s) : Z0.data();
            const double* zd1 = s >= 0 ? zslot(zmid, s) : Z0.data();
            const double* zd2 = s + 1 >= 0 ? zslot(zval, s + 1) : Z0.data();
            if (!dense) zd1 = zd2 = zd0;
            const double* el = E.data();
            model.e_rate(el, zd0, e1.data());
            for (int j = 0; j < n; ++j) etmp[j] = el[j] + 0.5 * hr * e1[j];
            model.e_rate(etmp.data(), zd1, e2.data());
            for (int j = 0; j < n; ++j) etmp[j] = el[j] + 0.5 * hr * e2[j];
            model.e_rate(etmp.data(), zd1, e3.data());
            for (int j = 0; j < n; ++j) etmp[j] = el[j] + hr * e3[j];
            model.e_rate(etmp.data(), zd2, e4.data());
            for (int j = 0; j < n; ++j) {
                Ez[j] = el[j] + hr / 6.0 * (e1[j] + 2.0 * e2[j] + 2.0 * e3[j] + e4[j]);
                Em[j] = el[j] + hr * (5.0 / 24.0 * e1[j] + 1.0 / 6.0 * e2[j] + 1.0 / 6.0 * e3[j] -
                                      1.0 / 24.0 * e4[j]);
            }
            double v3[3];
            v3[0] = v_of(el, zd0);
            v3[1] = dense ? v_of(Em.data(), zd1) : v3[0];
            v3[2] = dense ? v_of(Ez.data(), zd2) : v3[0];
            model.z_rate(zl, v3[0], k1.data());
            for (int j = 0; j < n; ++j) tmp[j] = zl[j] + 0.5 * hr * k1[j];
            model.z_rate(tmp.data(), v3[1], k2.data());
            for (int j = 0; j < n; ++j) tmp[j] = zl[j] + 0.5 * hr * k2[j];
            model.z_rate(tmp.data(), v3[1], k3.data());
            for (int j = 0; j < n; ++j) tmp[j] = zl[j] + hr * k3[j];
            model.z_rate(tmp.data(), v3[2], k4.data());
            std::copy_n(Ez.data(), n, E.data());
        }
        for (int j = 0; j < n; ++j) {
            Zn[j] = zl[j] + hr / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            Zm[j] = zl[j] + hr * (5.0 / 24.0 * k1[j] + 1.0 / 6.0 * k2[j] + 1.0 / 6.0 * k3[j] -
                                  1.0 / 24.0 * k4[j]);
        }
        std::copy_n(Zm.data(), n, zslot(zmid, i));
        std::copy_n(Zn.data(), n, Z.data());
        const long step = i + 1;
        if (!all_finite(n, Z.data()) || (active && !all_finite(n, E.data())))
            throw DivergenceError("non-finite scaled state at r = " + std::to_string(st.r0 + step * hr),
                                  st.r0 + step * hr);
        std::copy_n(Z.data(), n, zslot(zval, step));
        jumps(step);
    }
    record(grid.steps);
    return st;
}

ScaledTrace to_scaled(const Trace& trace) {
    const int n = trace.n;
    const long d = trace.delay_steps;
    if (d % trace.stride != 0)
        throw HistoryUnderflowError("recorded grid does not contain x(t - theta); stride must divide the delay");
    const ControllerParams& cp = trace.cp;
    const TransformParams tp = cp.transform();
    const PhiMatrix& phi = trace.phi;
    const long dr = d / trace.stride;

    ScaledTrace st;
    st.n = n;
    st.r0 = trace.t0 / cp.kappa;
    st.h = trace.h / cp.kappa;
    st.stride = trace.stride;
    st.delay_steps = d;
    st.first_step = d;
    st.cp = cp;
    st.lambda = trace.lambda;
    auto map = [n](const std::vector<double>& a, std::size_t row) {
        return Eigen::Map<const Eigen::VectorXd>(a.data() + row * n, n);
    };
    const double gain = tp.kappa * (tp.M / tp.L) * std::pow(tp.kappa, tp.n - 1);
    const Eigen::VectorXd nan = Eigen::VectorXd::Constant(n, kNaN);
    for (std::size_t r = 0; r < trace.rows(); ++r) {
        const Eigen::VectorXd Z = phi.phi * map(trace.x, r);
        st.Z.insert(st.Z.end(), Z.data(), Z.data() + n);
        st.v.push_back(gain * trace.u[r]);
        if (static_cast<long>(r) >= dr) {
            const Eigen::VectorXd Zd = phi.phi * map(trace.x, r - dr);
            const Eigen::VectorXd E = phi.phi * (map(trace.psi, r) - map(trace.x, r - dr));
            st.E.insert(st.E.end(), E.data(), E.data() + n);
            st.P.insert(st.P.end(), map(trace.nu, r).data(), map(trace.nu, r).data() + n);
            st.Zd.insert(st.Zd.end(), Zd.data(), Zd.data() + n);
        } else {
            for (auto* a : {&st.E, &st.P, &st.Zd}) a->insert(a->end(), nan.data(), nan.data() + n);
        }
    }
    for (const Event& ev : trace.events) {
        if (ev.kind != EventKind::Delivery) continue;
        ScaledTrace::Jump j;
        j.k = ev.k;
        j.step = ev.step;
        // x is continuous, so x(t - theta) is the same for both limits.
        const Eigen::VectorXd xd = [&] {
            for (const Event& s : trace.events)
                if (s.kind == EventKind::Sample && s.k == ev.k) return s.pre.x;
            throw HistoryUnderflowError("sample for delivered packet not recorded");
        }();
        j.E_pre = phi.phi * (ev.pre.psi - xd);
        j.E_post = phi.phi * (ev.post.psi - xd);
        j.P_pre = ev.pre.nu;
        j.P_post = ev.post.nu;
        j.v_pre = gain * ev.pre.u;
        j.v_post = gain * ev.post.u;
        st.jumps.push_back(std::move(j));
    }
    return st;
}

Snapshot dense_lookup(const Trace& trace, double t) {
    const double q = (t - trace.t0) / (trace.h * static_cast<double>(trace.stride));
    const double r = std::round(q);
    if (std::abs(q - r) > 1e-9 * std::max(1.0, std::abs(q)))
        throw LookupError("time " + std::to_string(t) + " is not on the recorded grid");
    if (r < 0 || r >= static_cast<double>(trace.rows()))
        throw LookupError("time " + std::to_string(t) + " lies outside the recorded span");
    return trace.row(static_cast<std::size_t>(r));
}

double window_sup(const Trace& trace, double t, double window) {
    (void)dense_lookup(trace, t);
    const double dt = trace.h * static_cast<double>(trace.stride);
    const long hi = std::lround((t - trace.t0) / dt);
    const long lo = std::max(0L, static_cast<long>(std::ceil((t - window - trace.t0) / dt - 1e-9)));
    double sup = 0.0;
    for (long r = lo; r <= hi; ++r) {
        const auto x = Eigen::Map<const Eigen::VectorXd>(trace.x.data() + r * trace.n, trace.n);
        sup = std::max(sup, x.norm());
    }
    return sup;
}

namespace {

void put_vec(std::ostream& os, const double* v, int n) {
    for (int j = 0; j < n; ++j) os << ',' << v[j];
}

void put_header(std::ostream& os, const char* name, int n) {
    for (int j = 1; j <= n; ++j) os << ',' << name << j;
}

}  // namespace

std::string trace_csv(const Trace& trace) {
    std::ostringstream os;
    os.precision(17);
    const int n = trace.n;
    os << "t";
    for (const char* name : {"x", "omega", "xi", "ell", "psi", "nu"}) put_header(os, name, n);
    os << ",u\n";
    for (std::size_t r = 0; r < trace.rows(); ++r) {
        os << trace.time_of_row(r);
        for (const auto* a : {&trace.x, &trace.omega, &trace.xi, &trace.ell, &trace.psi, &trace.nu})
            put_vec(os, a->data() + r * n, n);
        os << ',' << trace.u[r] << '\n';
    }
    return os.str();
}

std::string events_csv(const Trace& trace) {
    std::ostringstream os;
    os.precision(17);
    const int n = trace.n;
    os << "kind,k,t";
    for (const char* side : {"pre", "post"})
        for (const char* name : {"x", "omega", "xi", "ell", "psi", "nu"}) {
            const std::string col = std::string(side) + "_" + name;
            put_header(os, col.c_str(), n);
        }
    os << ",pre_u,post_u\n";
    for (const Event& ev : trace.events) {
        os << to_string(ev.kind) << ',' << ev.k << ',' << ev.t;
        for (const Snapshot* s : {&ev.pre, &ev.post})
            for (const Eigen::VectorXd* v : {&s->x, &s->omega, &s->xi, &s->ell, &s->psi, &s->nu})
                put_vec(os, v->data(), n);
        os << ',' << ev.pre.u << ',' << ev.post.u << '\n';
    }
    return os.str();
}

std::string scaled_trace_csv(const ScaledTrace& st) {
    std::ostringstream os;
    os.precision(17);
    const int n = st.n;
    os << "r";
    for (const char* name : {"Z", "E", "P"}) put_header(os, name, n);
    os << ",v\n";
    for (std::size_t r = 0; r < st.rows(); ++r) {
        os << st.r_of_row(r);
        for (const auto* a : {&st.Z, &st.E, &st.P}) put_vec(os, a->data() + r * n, n);
        os << ',' << st.v[r] << '\n';
    }
    return os.str();
}

}  // namespace ncsim
