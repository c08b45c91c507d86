#include "ncsim/controller.hpp"

#include "ncsim/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace ncsim {

namespace {

double factorial(int k) {
    double r = 1.0;
    for (int j = 2; j <= k; ++j) r *= j;
    return r;
}

void check_dim(int n) {
    if (n < 1 || n > kMaxDim) throw ConfigError("controller dimension out of range");
}

Condition make_le(std::string name, double lhs, double rhs) {
    return {std::move(name), lhs, rhs, lhs <= rhs};
}

}  // namespace

bool ConditionReport::all_hold() const {
    return std::all_of(conditions.begin(), conditions.end(), [](const Condition& c) { return c.holds; });
}

std::vector<double> default_saturation_levels(int n) {
    check_dim(n);
    std::vector<double> eps(n);
    for (int i = 1; i <= n; ++i) eps[i - 1] = std::pow(30.0, -(n - i + 1));
    return eps;
}

double delay_gain_factor(int n) {
    check_dim(n);
    const double a = 6.0 * std::pow(30.0, n + 1) * n * (n + 1);
    const double inner = 8.0 * n * std::pow(1.0 + n * n, n - 1) + 1.0;
    const double b = 8.0 * n * n * inner * inner;
    return std::max(a, b);
}

double tau_max(int n) { return 1.0 / delay_gain_factor(n); }

double coupling_bound_max(int n) {
    check_dim(n);
    return 1.0 / std::max(20.0 * std::pow(30.0, n) * n,
                          8.0 * std::pow(1.0 + n * n, n - 1) * std::sqrt(static_cast<double>(n)));
}

double kappa_lower_bound(int n, double theta) {
    if (!(theta >= 0.0)) throw ConfigError("theta must be nonnegative");
    return std::max(1.0, theta * delay_gain_factor(n));
}

double gain_upper_bound(int n, double M, double kappa) {
    check_dim(n);
    const double nf3 = std::pow(factorial(n), 3);
    const double n3 = std::pow(n, 3);
    return std::min({kappa / (20.0 * std::pow(30.0, n) * n * n3 * nf3),
                     kappa / (8.0 * std::pow(1.0 + n * n, n - 1) * std::sqrt(double(n)) * n3 * nf3),
                     M * kappa / factorial(n + 1), M});
}

ControllerParams synthesize(int n, double M, double theta, double safety_margin) {
    check_dim(n);
    if (!(M > 0.0)) throw ConfigError("M must be positive");
    if (!(safety_margin > 0.0 && safety_margin <= 1.0))
        throw ConfigError("safety_margin must lie in (0, 1]");
    ControllerParams cp;
    cp.n = n;
    cp.M = M;
    cp.theta = theta;
    cp.kappa = kappa_lower_bound(n, theta);
    cp.L = safety_margin * gain_upper_bound(n, M, cp.kappa);
    cp.eps = default_saturation_levels(n);
    cp.mode = ParamMode::Auto;
    return cp;
}

ControllerParams manual_params(int n, double M, double theta, double kappa, double L,
                               std::vector<double> eps) {
    check_dim(n);
    ControllerParams cp;
    cp.n = n;
    cp.M = M;
    cp.theta = theta;
    cp.kappa = kappa;
    cp.L = L;
    cp.eps = eps.empty() ? default_saturation_levels(n) : std::move(eps);
    cp.mode = ParamMode::Manual;
    if (static_cast<int>(cp.eps.size()) != n) throw ConfigError("controller.eps must have n entries");
    for (double e : cp.eps)
        if (!(e > 0.0)) throw ConfigError("controller.eps entries must be positive");
    cp.transform().validate();
    return cp;
}

ConditionReport check_stability_conditions(const ControllerParams& cp) {
    const int n = cp.n;
    ConditionReport rep;
    rep.conditions.push_back(make_le("L <= M", cp.L, cp.M));
    rep.conditions.push_back(make_le("L <= M kappa/(n+1)!", cp.L, cp.M * cp.kappa / factorial(n + 1)));
    rep.conditions.push_back(make_le("tau <= tau_m", cp.tau(), tau_max(n)));
    rep.conditions.push_back(
        make_le("P <= P_m", scaled_bound_constant(n, cp.L, cp.kappa), coupling_bound_max(n)));
    rep.conditions.push_back(make_le("1 <= kappa", 1.0, cp.kappa));
    const auto ref = default_saturation_levels(n);
    double dev = 0.0;
    for (int i = 0; i < n; ++i) dev = std::max(dev, std::abs(cp.eps[i] - ref[i]) / ref[i]);
    rep.conditions.push_back(make_le("eps_i = 30^-(n-i+1) (relative deviation)", dev, 0.0));
    return rep;
}

NestedSaturation::NestedSaturation(const ControllerParams& cp)
    : cp_(cp), phi_(build_phi(cp.transform())),
      gain_(cp.kappa * (cp.M / cp.L) * std::pow(cp.kappa, cp.n - 1)) {
    if (static_cast<int>(cp_.eps.size()) != cp_.n) throw ConfigError("eps must have n entries");
}

void NestedSaturation::layer_arguments(const double* w, double* args) const noexcept {
    double inner = 0.0;
    for (int i = 0; i < cp_.n; ++i) {
        args[i] = w[i] + inner;
        inner = saturation(args[i], cp_.eps[i]);
    }
}

double NestedSaturation::scaled(const double* w) const noexcept {
    double inner = 0.0;
    for (int i = 0; i < cp_.n; ++i) inner = saturation(w[i] + inner, cp_.eps[i]);
    return -inner;
}

double NestedSaturation::original(const double* psi) const noexcept {
    std::array<double, kMaxDim> w{};
    const int n = cp_.n;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = i; j < n; ++j) s += phi_.phi(i, j) * psi[j];
        w[i] = s;
    }
    return scaled(w.data()) / gain_;
}

double control_original(const ControllerParams& cp, const StateVec& psi) {
    if (psi.size() != cp.n) throw NumericDomainError("state dimension mismatch");
    return NestedSaturation(cp).original(psi.data());
}

double control_scaled(const ControllerParams& cp, const Eigen::VectorXd& E,
                      const Eigen::VectorXd& Z_delayed) {
    if (E.size() != cp.n || Z_delayed.size() != cp.n)
        throw NumericDomainError("state dimension mismatch");
    const Eigen::VectorXd w = E + Z_delayed;
    return NestedSaturation(cp).scaled(w.data());
}

}  // namespace ncsim
