#pragma once

#include "ncsim/controller.hpp"
#include "ncsim/hybridsim.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ncsim {

enum class Outcome { Pass, Fail, Skipped };

[[nodiscard]] const char* to_string(Outcome o) noexcept;

/// Result of one monitor. `worst` is the largest observed value of the checked ratio or
/// deviation; `values` carries any fitted or measured constants.
struct CheckResult {
    std::string name;
    Outcome outcome = Outcome::Pass;
    long violations = 0;
    std::optional<double> first_violation;
    double worst = 0.0;
    std::string note;
    std::map<std::string, double> values;

    CheckResult() = default;
    explicit CheckResult(std::string check_name) : name(std::move(check_name)) {}
    [[nodiscard]] bool passed() const noexcept { return outcome == Outcome::Pass; }
};

struct MonitorReport {
    std::vector<CheckResult> checks;

    /// True when no check failed. Skipped checks do not count as failures.
    [[nodiscard]] bool passed() const noexcept;
    /// Throws LookupError when no check has that name.
    [[nodiscard]] const CheckResult& at(const std::string& name) const;
    void append(const MonitorReport& other);
    /// One `check.key = value` line per field.
    [[nodiscard]] std::string render() const;
};

/// |e_j| <= p_j / 2 at every recorded point after the first delivery, at every jump's left
/// limit, and |e_j(rho+)| <= p_j(rho) / 4 right after each jump.
[[nodiscard]] MonitorReport check_containment(const ScaledTrace& st);

/// Exact agreement of omega with psi, of xi(t - theta) with psi(t) and of nu(t) with
/// ell(t - theta) for t >= theta_0. Deviations are measured with the max norm.
[[nodiscard]] MonitorReport check_synchrony(const Trace& trace);

/// Linear cascade data for the z-subsystem in the linear region.
struct CascadeData {
    int n = 1;
    Eigen::MatrixXd Gamma, Delta, Q;
    double q_bound = 1.0;       ///< (1 + n^2)^{n-1}
    double a_bound = 1.0;       ///< n
    double gamma_bound = 0.0;   ///< sqrt(n) n^3 (n!)^3 L / kappa
    double tau = 0.0;
    double residual = 0.0;      ///< max |(G + D)^T Q + Q (G + D) + I|
    double Q_norm = 0.0, Gamma_norm = 0.0, Delta_norm = 0.0;

    /// gamma <= 1 / (8 q)
    [[nodiscard]] bool gamma_ok() const noexcept { return gamma_bound <= 1.0 / (8.0 * q_bound); }
    /// tau <= 1 / (8 a^2 (8 a q + 1)^2)
    [[nodiscard]] double tau_limit() const noexcept;
    [[nodiscard]] bool tau_ok() const noexcept { return tau <= tau_limit(); }
};

/// Solves A^T Q + Q A = -I by vectorization. Throws NumericDomainError if A is singular
/// in the Kronecker sense.
[[nodiscard]] Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& A);

[[nodiscard]] CascadeData build_cascade_data(const ControllerParams& cp);

/// Cheap per-row integrands for the functionals, with left limits at jump rows.
struct FunctionalInputs {
    std::vector<double> z2;         ///< |Z|^2
    std::vector<double> eps2_post;  ///< |E|^2 + |P|^2, right limit
    std::vector<double> eps2_pre;   ///< same, left limit
    std::vector<double> V1;
    long window_rows = 0;           ///< 2 tau in rows
    long first_row = 0;             ///< first row whose window holds finite data
    double h = 0.0;                 ///< row spacing in r
};

/// Requires the stride to divide the delay.
[[nodiscard]] FunctionalInputs functional_inputs(const CascadeData& cd, const ScaledTrace& st);

struct Functionals {
    double V1 = 0.0;
    double V2 = 0.0;
};

/// V1 = z^T Q z and V2 = V1 + (1/16) double-integral |z|^2 + 2 double-integral |eps|^2 over
/// [r - 2 tau, r]. Each double integral is the weighted single integral of (l - r + 2 tau) g(l),
/// by trapezoids with right limits at interval starts and left limits at interval ends.
/// Throws HistoryUnderflowError when the window reaches before finite data.
[[nodiscard]] Functionals eval_functionals(const CascadeData& cd, const ScaledTrace& st, std::size_t row);
[[nodiscard]] Functionals eval_functionals(const FunctionalInputs& in, std::size_t row);

/// Forward-difference check of dV2/dr <= -|z|^2 / 4 + 8 (q^2 a^2 + 1) |eps|^2 between
/// consecutive rows from `from_row`, and of V2 continuity at jumps. Needs every grid point.
[[nodiscard]] MonitorReport check_dissipation(const CascadeData& cd, const ScaledTrace& st,
                                              std::size_t from_row);

struct LinearRegion {
    std::optional<std::size_t> entry_row;  ///< first row after which every layer stays linear
    std::optional<double> entry_r;
    std::vector<std::optional<double>> z_quarter;  ///< first r with |z_j| <= eps_j / 4
    std::vector<std::optional<double>> e_small;    ///< first r with |e_j| <= eps_j / (2 n 80^{j+1})
};

/// Layer arguments of the nested saturation, evaluated on E + Z(r - tau), against 19/20 of
/// their levels.
[[nodiscard]] LinearRegion detect_linear_region(const ScaledTrace& st, const ControllerParams& cp);

/// Checks |Z_i(r)| <= 4 (lambda* + mu* + e*) for every recorded r >= r_from, once the
/// hypotheses tau <= 1/12 and each bound <= eps_i / 30 hold; otherwise the check is skipped.
/// `level` is 1-based.
[[nodiscard]] MonitorReport check_boundedness_thresholds(const ScaledTrace& st, int level, double lambda_star,
                                                         double mu_star, double e_star, double r_from);

struct ExpFit {
    double k_fit = 0.0;      ///< exp(intercept) at the window start
    double delta_fit = 0.0;  ///< minus the slope of log|state|
    double residual = 0.0;   ///< RMS residual in log space
    std::size_t points = 0;
    [[nodiscard]] bool decays() const noexcept { return delta_fit > 0.0; }
};

/// Least-squares line through (t, log value) for t >= T. Stops at the first exact zero.
/// Throws InsufficientDataError with fewer than two usable points.
[[nodiscard]] ExpFit fit_exponential(const std::vector<double>& t, const std::vector<double>& value, double T);

enum class FitSignal { Plant, Hybrid };

/// Plant: |x|. Hybrid: |(x, omega, xi, ell, psi, nu)|.
[[nodiscard]] ExpFit fit_exponential(const Trace& trace, double T, FitSignal signal = FitSignal::Hybrid);
/// |(Z, E, P)| on rows with finite E.
[[nodiscard]] ExpFit fit_exponential(const ScaledTrace& st, double r_from);

/// Wraps a fit as a monitor: pass iff delta_fit > 0 and the residual is within max_residual.
[[nodiscard]] CheckResult fit_check(const std::string& name, const ExpFit& fit, double max_residual);

}  // namespace ncsim
