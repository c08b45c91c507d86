#pragma once

#include "ncsim/plant.hpp"
#include "ncsim/transforms.hpp"

#include <string>
#include <vector>

namespace ncsim {

enum class ParamMode { Auto, Manual };

struct ControllerParams {
    int n = 1;
    std::vector<double> eps;  ///< saturation levels, innermost first
    double kappa = 1.0;
    double L = 1.0;
    double M = 1.0;
    double theta = 0.0;
    ParamMode mode = ParamMode::Auto;

    [[nodiscard]] TransformParams transform() const { return {n, kappa, L, M, theta}; }
    [[nodiscard]] double tau() const noexcept { return theta / kappa; }
    bool operator==(const ControllerParams&) const = default;
};

/// One inequality with both sides evaluated.
struct Condition {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    bool holds = false;
};

struct ConditionReport {
    std::vector<Condition> conditions;
    [[nodiscard]] bool all_hold() const;
};

/// 30^{-(n-i+1)} for i = 1..n.
[[nodiscard]] std::vector<double> default_saturation_levels(int n);

/// max{6 30^{n+1} n (n+1), 8 n^2 (8 n (1+n^2)^{n-1} + 1)^2}; its inverse bounds tau.
[[nodiscard]] double delay_gain_factor(int n);
/// Largest admissible tau = theta / kappa.
[[nodiscard]] double tau_max(int n);
/// Largest admissible n^3 (n!)^3 L / kappa.
[[nodiscard]] double coupling_bound_max(int n);
/// Smallest kappa admitted for delay theta (never below 1).
[[nodiscard]] double kappa_lower_bound(int n, double theta);
/// min{kappa/(20 30^n n^4 (n!)^3), kappa/(8 (1+n^2)^{n-1} sqrt(n) n^3 (n!)^3), M kappa/(n+1)!, M}.
[[nodiscard]] double gain_upper_bound(int n, double M, double kappa);

/// Pins kappa to its lower bound and L to safety_margin times its upper bound.
[[nodiscard]] ControllerParams synthesize(int n, double M, double theta, double safety_margin = 1.0);

/// User-supplied gains; eps defaults to the standard levels when empty.
[[nodiscard]] ControllerParams manual_params(int n, double M, double theta, double kappa, double L,
                                             std::vector<double> eps = {});

/// Evaluates the sufficient stability conditions in scaled time for the given gains.
[[nodiscard]] ConditionReport check_stability_conditions(const ControllerParams& cp);

/// Nested saturated feedback with cached coordinate change.
class NestedSaturation {
public:
    explicit NestedSaturation(const ControllerParams& cp);

    [[nodiscard]] const ControllerParams& params() const noexcept { return cp_; }
    [[nodiscard]] const PhiMatrix& phi() const noexcept { return phi_; }

    /// -sigma_n(w_n + sigma_{n-1}(... + sigma_1(w_1))) for w in scaled coordinates.
    [[nodiscard]] double scaled(const double* w) const noexcept;
    /// Control in original coordinates from the decoder state psi.
    [[nodiscard]] double original(const double* psi) const noexcept;
    /// Arguments w_i + sigma_{i-1}(...) of every saturation layer.
    void layer_arguments(const double* w, double* args) const noexcept;
    /// v = output_gain() * u.
    [[nodiscard]] double output_gain() const noexcept { return gain_; }

private:
    ControllerParams cp_;
    PhiMatrix phi_;
    double gain_;
};

[[nodiscard]] double control_original(const ControllerParams& cp, const StateVec& psi);
[[nodiscard]] double control_scaled(const ControllerParams& cp, const Eigen::VectorXd& E,
                                    const Eigen::VectorXd& Z_delayed);

}  // namespace ncsim
