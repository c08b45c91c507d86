#pragma once

#include "ncsim/channel.hpp"
#include "ncsim/codec.hpp"
#include "ncsim/controller.hpp"
#include "ncsim/plant.hpp"
#include "ncsim/transforms.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace ncsim {

/// How RK4 stages read arguments delayed by a whole number of steps.
///  Dense: left grid value, third-order dense-output midpoint, right left-limit.
///  Hold:  the left grid value for every stage.
enum class DelayRead { Dense, Hold };

struct SimConfig {
    double h = 0.01;
    double horizon = 1.0;
    double t0 = 0.0;
    DelayRead delay_read = DelayRead::Dense;
    long record_stride = 1;  ///< keep every record_stride-th grid point in the trace

    bool operator==(const SimConfig&) const = default;
};

/// Everything needed to run one closed loop.
struct ClosedLoopSetup {
    FeedforwardPlant plant;
    ControllerParams cp;
    std::vector<double> growth;  ///< F_i used to build lambda
    LambdaMatrix lambda;
    ScheduleSpec schedule;
    double theta = 0.0;
    DropSpec drop;
    StateVec x0;
};

/// Resolves lambda from growth constants and the effective gap (D+1) T_M.
[[nodiscard]] LambdaMatrix lambda_for(const ClosedLoopSetup& setup);

struct Snapshot {
    StateVec x, omega, xi;
    Eigen::VectorXd ell;
    StateVec psi;
    Eigen::VectorXd nu;
    double u = 0.0;
};

enum class EventKind { Sample, Delivery, DroppedSample, DroppedDelivery };

[[nodiscard]] const char* to_string(EventKind kind) noexcept;

struct Event {
    EventKind kind = EventKind::Sample;
    std::uint32_t k = 0;
    long step = 0;
    double t = 0.0;
    Snapshot pre;   ///< left limit
    Snapshot post;  ///< right limit
};

/// Closed-loop record on the integration grid (every record_stride-th point).
struct Trace {
    int n = 1;
    double t0 = 0.0;
    double h = 0.0;
    long stride = 1;
    long delay_steps = 0;
    long total_steps = 0;  ///< grid points are 0..total_steps
    std::vector<double> x, omega, xi, ell, psi, nu, u;  ///< row-major, n values per row (u: one)
    std::vector<Event> events;
    std::vector<PacketLogEntry> packets;

    ControllerParams cp;
    std::vector<double> growth;
    LambdaMatrix lambda;
    PhiMatrix phi;
    DelayRead delay_read = DelayRead::Dense;

    [[nodiscard]] std::size_t rows() const noexcept { return u.size(); }
    [[nodiscard]] long step_of_row(std::size_t row) const noexcept { return static_cast<long>(row) * stride; }
    [[nodiscard]] double time_of_row(std::size_t row) const noexcept {
        return t0 + static_cast<double>(step_of_row(row)) * h;
    }
    [[nodiscard]] Snapshot row(std::size_t r) const;
};

/// Integrates plant, encoder and decoder on a shared grid. At each grid time the due
/// deliveries are applied first, then the due sample; jumps read left limits.
/// Throws QuantizerOverflowError or DivergenceError.
[[nodiscard]] Trace run(const ClosedLoopSetup& setup, const SimConfig& cfg);

/// Closed-loop record in scaled time r = t / kappa.
struct ScaledTrace {
    int n = 1;
    double r0 = 0.0;
    double h = 0.0;  ///< scaled step
    long stride = 1;
    long delay_steps = 0;
    long first_step = 0;  ///< grid step of the first delivery; E and P are NaN before it
    std::vector<double> Z, E, P, v, Zd;  ///< Zd = Z(r - tau), NaN before the delay window

    struct Jump {
        std::uint32_t k = 0;
        long step = 0;
        Eigen::VectorXd E_pre, P_pre, E_post, P_post;
        double v_pre = 0.0, v_post = 0.0;
    };
    std::vector<Jump> jumps;
    ControllerParams cp;
    LambdaMatrix lambda;

    [[nodiscard]] std::size_t rows() const noexcept { return v.size(); }
    [[nodiscard]] long step_of_row(std::size_t row) const noexcept { return static_cast<long>(row) * stride; }
    [[nodiscard]] double r_of_row(std::size_t row) const noexcept {
        return r0 + static_cast<double>(step_of_row(row)) * h;
    }
    [[nodiscard]] Eigen::Map<const Eigen::VectorXd> vec(const std::vector<double>& a, std::size_t row) const {
        return {a.data() + row * static_cast<std::size_t>(n), n};
    }
};

/// Integrates the scaled system directly: Z and E flows, P constant between deliveries, and
/// E += diag(sgn(-E)) P / 4, P = Lambda P at each delivery.
[[nodiscard]] ScaledTrace run_scaled(const ClosedLoopSetup& setup, const SimConfig& cfg);

/// Maps an original-time trace to scaled coordinates. Needs x(t - theta) on the recorded grid;
/// throws HistoryUnderflowError if the stride does not divide the delay.
[[nodiscard]] ScaledTrace to_scaled(const Trace& trace);

/// Stored sample at grid time t. Throws LookupError off the recorded grid.
[[nodiscard]] Snapshot dense_lookup(const Trace& trace, double t);

/// max |x| over recorded points in [t - window, t].
[[nodiscard]] double window_sup(const Trace& trace, double t, double window);

/// CSV writers with stable column orders.
[[nodiscard]] std::string trace_csv(const Trace& trace);
[[nodiscard]] std::string events_csv(const Trace& trace);
[[nodiscard]] std::string scaled_trace_csv(const ScaledTrace& trace);

}  // namespace ncsim
