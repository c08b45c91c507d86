#include "doctest.h"

#include "ncsim/controller.hpp"
#include "ncsim/errors.hpp"

#include <cmath>
#include <random>

using namespace ncsim;

namespace {

double fact(int n) { return n <= 1 ? 1.0 : n * fact(n - 1); }

// Hand-written bounds, kept separate from the library formulas.
double kappa_oracle(int n, double theta) {
    const double a = 6.0 * std::pow(30.0, n + 1) * n * (n + 1);
    const double b = 8.0 * n * n * std::pow(8.0 * n * std::pow(1.0 + n * n, n - 1) + 1.0, 2);
    return std::max(1.0, theta * std::max(a, b));
}

double L_oracle(int n, double M, double kappa) {
    const double f3 = std::pow(fact(n), 3);
    double L = kappa / (20.0 * std::pow(30.0, n) * std::pow(n, 4) * f3);
    L = std::min(L, kappa / (8.0 * std::pow(1.0 + n * n, n - 1) * std::sqrt(n) * std::pow(n, 3) * f3));
    L = std::min(L, M * kappa / fact(n + 1));
    return std::min(L, M);
}

}  // namespace

TEST_CASE("synthesis for a scalar integrator with a small delay") {
    const ControllerParams cp = synthesize(1, 1.0, 1e-4);
    REQUIRE(cp.eps.size() == 1);
    CHECK(cp.eps[0] == doctest::Approx(1.0 / 30.0).epsilon(1e-15));
    CHECK(cp.kappa == doctest::Approx(1.08).epsilon(1e-12));
    CHECK(cp.L == doctest::Approx(1.08 / 600.0).epsilon(1e-12));
    CHECK(cp.mode == ParamMode::Auto);
}

TEST_CASE("saturation levels grow by 30 towards the outer layer") {
    const auto e2 = default_saturation_levels(2);
    CHECK(e2[0] == doctest::Approx(1.0 / 900.0).epsilon(1e-15));
    CHECK(e2[1] == doctest::Approx(1.0 / 30.0).epsilon(1e-15));
    for (int n = 1; n <= 6; ++n) {
        const auto e = default_saturation_levels(n);
        CHECK(e.back() * 30.0 == doctest::Approx(1.0));
        for (int i = 1; i < n; ++i) CHECK(e[i] == doctest::Approx(30.0 * e[i - 1]));
    }
}

TEST_CASE("synthesized gains match the bounds and satisfy every condition") {
    for (int n = 1; n <= 4; ++n)
        for (double theta : {0.0, 1e-6, 1e-3, 0.5, 3.0})
            for (double M : {0.1, 1.0, 5.0}) {
                const ControllerParams cp = synthesize(n, M, theta);
                CHECK(cp.kappa == doctest::Approx(kappa_oracle(n, theta)).epsilon(1e-13));
                CHECK(cp.L == doctest::Approx(L_oracle(n, M, cp.kappa)).epsilon(1e-13));
                CHECK(cp.tau() <= tau_max(n) * (1 + 1e-12));
                const ConditionReport rep = check_stability_conditions(cp);
                for (const auto& c : rep.conditions) {
                    INFO(c.name << ": " << c.lhs << " vs " << c.rhs);
                    CHECK(c.holds);
                }
                const ControllerParams half = synthesize(n, M, theta, 0.5);
                CHECK(half.L == doctest::Approx(0.5 * cp.L));
            }
    CHECK_THROWS_AS((void)synthesize(1, 1.0, 0.0, 0.0), ConfigError);
    CHECK_THROWS_AS((void)synthesize(1, 1.0, 0.0, 1.5), ConfigError);
    CHECK_THROWS_AS((void)synthesize(1, 0.0, 0.0), ConfigError);
}

TEST_CASE("manual gains are checked but not refused") {
    const ControllerParams cp = manual_params(2, 1.0, 0.5, 2.0, 0.1);
    CHECK(cp.mode == ParamMode::Manual);
    const ConditionReport rep = check_stability_conditions(cp);
    CHECK_FALSE(rep.all_hold());
    bool saw_tau = false;
    for (const auto& c : rep.conditions)
        if (c.name.find("tau") != std::string::npos) {
            saw_tau = true;
            CHECK(c.lhs == doctest::Approx(0.25));
            CHECK_FALSE(c.holds);
        }
    CHECK(saw_tau);
    CHECK_THROWS_AS((void)manual_params(2, 1.0, 0.0, 2.0, 0.1, {0.1}), ConfigError);
    CHECK_THROWS_AS((void)manual_params(2, 1.0, 0.0, 0.5, 0.1), ConfigError);
}

TEST_CASE("original-coordinate control") {
    const ControllerParams cp = manual_params(1, 1.0, 0.0, 2.0, 0.5);
    CHECK(control_original(cp, StateVec::Zero(1)) == 0.0);
    for (double psi : {-0.3, -0.01, 0.004, 0.009, 0.2}) {
        const double expect = -(cp.L / (cp.M * cp.kappa)) * saturation((cp.M / cp.L) * psi, cp.eps[0]);
        CHECK(control_original(cp, StateVec::Constant(1, psi)) == doctest::Approx(expect).epsilon(1e-14));
    }

    const ControllerParams c2 = manual_params(2, 1.0, 0.0, 3.0, 0.2);
    const double cap = c2.L / (c2.M * c2.kappa * c2.kappa) * c2.eps[1];
    StateVec deep(2);
    deep << 10.0, 10.0;
    CHECK(std::abs(control_original(c2, deep)) == doctest::Approx(cap).epsilon(1e-14));
    CHECK(control_original(c2, -deep) == doctest::Approx(cap).epsilon(1e-14));
}

TEST_CASE("control bounds, oddness and scaled consistency") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int n = 1; n <= 4; ++n) {
        const ControllerParams cp = manual_params(n, 1.0, 0.0, 1.5, 0.05);
        const NestedSaturation law(cp);
        const double cap = cp.L / (cp.M * std::pow(cp.kappa, n)) * cp.eps.back();
        for (int trial = 0; trial < 1000; ++trial) {
            StateVec psi(n);
            const double scale = std::pow(10.0, -4.0 * std::abs(U(rng)));
            for (int i = 0; i < n; ++i) psi(i) = scale * U(rng);
            const double u = control_original(cp, psi);
            CHECK(std::abs(u) <= cap * (1 + 1e-14));
            CHECK(control_original(cp, -psi) == -u);
            const Eigen::VectorXd w = law.phi().phi * psi;
            const double v = control_scaled(cp, w, Eigen::VectorXd::Zero(n));
            CHECK(std::abs(v - law.output_gain() * u) <= 1e-10 * std::max(1.0, std::abs(v)));
        }
    }
}

TEST_CASE("scaled control is linear inside every layer and Lipschitz with constant n") {
    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int n = 1; n <= 4; ++n) {
        const ControllerParams cp = manual_params(n, 1.0, 0.0, 1.0, 1.0);
        CHECK(control_scaled(cp, Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)) == 0.0);
        // Inside the linear region each layer argument stays below 19/20 of its level.
        for (int trial = 0; trial < 200; ++trial) {
            Eigen::VectorXd E(n), Zd(n);
            for (int i = 0; i < n; ++i) {
                E(i) = 0.2 * cp.eps[0] * U(rng) / n;
                Zd(i) = 0.2 * cp.eps[0] * U(rng) / n;
            }
            CHECK(control_scaled(cp, E, Zd) == doctest::Approx(-(E + Zd).sum()).epsilon(1e-12));
        }
        for (int trial = 0; trial < 500; ++trial) {
            Eigen::VectorXd a(n), b(n);
            for (int i = 0; i < n; ++i) {
                a(i) = cp.eps[i] * 2 * U(rng);
                b(i) = cp.eps[i] * 2 * U(rng);
            }
            const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
            const double dv = std::abs(control_scaled(cp, a, zero) - control_scaled(cp, b, zero));
            CHECK(dv <= n * (a - b).cwiseAbs().maxCoeff() * (1 + 1e-12));
        }
    }
}

TEST_CASE("layer arguments unfold the nested saturation") {
    const ControllerParams cp = manual_params(3, 1.0, 0.0, 1.0, 1.0);
    const NestedSaturation law(cp);
    const double w[3] = {0.0005, 0.02, -0.3};
    double args[3];
    law.layer_arguments(w, args);
    CHECK(args[0] == w[0]);
    CHECK(args[1] == doctest::Approx(w[1] + saturation(w[0], cp.eps[0])));
    CHECK(args[2] == doctest::Approx(w[2] + saturation(args[1], cp.eps[1])));
    CHECK(law.scaled(w) == doctest::Approx(-saturation(args[2], cp.eps[2])));
}
