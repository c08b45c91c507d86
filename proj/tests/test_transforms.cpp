#include "doctest.h"

#include "ncsim/errors.hpp"
#include "ncsim/transforms.hpp"

#include <cmath>
#include <random>

using namespace ncsim;

namespace {

// Pascal's triangle, built without factorials.
double binom(int a, int b) {
    if (b < 0 || b > a) return 0.0;
    std::vector<double> row{1.0};
    for (int r = 1; r <= a; ++r) {
        std::vector<double> next(static_cast<std::size_t>(r + 1), 1.0);
        for (int c = 1; c < r; ++c) next[c] = row[c - 1] + row[c];
        row = next;
    }
    return row[static_cast<std::size_t>(b)];
}

Eigen::VectorXd random_vec(std::mt19937_64& rng, int n, double scale = 1.0) {
    std::uniform_real_distribution<double> U(-scale, scale);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = U(rng);
    return v;
}

}  // namespace

TEST_CASE("p and q coefficients") {
    CHECK(p_coeffs(1, 2) == std::vector<double>{1, 1});
    CHECK(p_coeffs(1, 3) == std::vector<double>{1, 2, 1});
    CHECK(p_coeffs(3, 3) == std::vector<double>{1});
    CHECK(q_coeffs(1, 2) == std::vector<double>{1, -1});
    CHECK(q_coeffs(1, 3) == std::vector<double>{1, -2, 1});
    CHECK(q_coeffs(3, 3) == std::vector<double>{1});
    for (int n = 1; n <= 8; ++n)
        for (int i = 1; i <= n; ++i) {
            const auto p = p_coeffs(i, n);
            const auto q = q_coeffs(i, n);
            REQUIRE(p.size() == static_cast<std::size_t>(n - i + 1));
            for (int j = i; j <= n; ++j) {
                CHECK(p[j - i] == binom(n - i, j - i));
                CHECK(q[j - i] == (((i + j) % 2 == 0) ? 1.0 : -1.0) * binom(n - i, j - i));
            }
        }
    CHECK_THROWS_AS((void)p_coeffs(0, 3), IndexError);
    CHECK_THROWS_AS((void)q_coeffs(4, 3), IndexError);
}

TEST_CASE("p and q invert each other") {
    std::mt19937_64 rng(2024);
    for (int n = 1; n <= 6; ++n) {
        CHECK((p_matrix(n) * q_matrix(n) - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() == 0.0);
        for (int trial = 0; trial < 1000; ++trial) {
            const Eigen::VectorXd a = random_vec(rng, n, 10.0);
            Eigen::VectorXd qa(n), pa(n);
            for (int i = 1; i <= n; ++i) {
                qa(i - 1) = q_eval(i, n, a.tail(n - i + 1));
                pa(i - 1) = p_eval(i, n, a.tail(n - i + 1));
            }
            for (int i = 1; i <= n; ++i) {
                CHECK(std::abs(p_eval(i, n, qa.tail(n - i + 1)) - a(i - 1)) <= 1e-10);
                CHECK(std::abs(q_eval(i, n, pa.tail(n - i + 1)) - a(i - 1)) <= 1e-10);
            }
        }
    }
}

TEST_CASE("phi matrix entries and inverse") {
    const TransformParams tp{2, 3.0, 0.5, 2.0, 0.0};
    const PhiMatrix phi = build_phi(tp);
    const double g = tp.M / tp.L;
    CHECK(phi.phi(0, 0) == doctest::Approx(g));
    CHECK(phi.phi(0, 1) == doctest::Approx(g * 3.0));
    CHECK(phi.phi(1, 0) == 0.0);
    CHECK(phi.phi(1, 1) == doctest::Approx(g * 3.0));

    CHECK(build_phi({1, 7.0, 0.25, 1.0, 0.0}).phi(0, 0) == doctest::Approx(4.0));

    for (int n = 1; n <= 6; ++n) {
        const TransformParams t{n, 1.7, 0.3, 1.1, 0.0};
        const PhiMatrix full = build_phi(t);
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) {
                const double expect = k < j ? 0.0 : binom(n - 1 - j, k - j) * (t.M / t.L) * std::pow(t.kappa, k);
                CHECK(full.phi(j, k) == doctest::Approx(expect).epsilon(1e-14));
            }
        CHECK((full.phi * full.inverse - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-12);
        for (int i = 1; i <= n; ++i) {
            const PhiMatrix blk = build_phi(t, i);
            CHECK(blk.size() == n - i + 1);
            CHECK((blk.phi * blk.inverse - Eigen::MatrixXd::Identity(n - i + 1, n - i + 1)).cwiseAbs().maxCoeff() <=
                  1e-12);
        }
    }
}

TEST_CASE("transform parameters are validated") {
    CHECK_THROWS_AS(TransformParams({2, 0.5, 1.0, 1.0, 0.0}).validate(), ConfigError);
    CHECK_THROWS_AS(TransformParams({2, 1.0, 0.0, 1.0, 0.0}).validate(), ConfigError);
    CHECK_THROWS_AS(TransformParams({2, 1.0, 1.0, 1.0, -1.0}).validate(), ConfigError);
    CHECK_NOTHROW(TransformParams({2, 1.0, 1.0, 1.0, 0.1}).validate());
    const TransformParams tp{2, 4.0, 1.0, 1.0, 0.2};
    CHECK(tp.tau() * tp.kappa == doctest::Approx(tp.theta).epsilon(1e-15));
}

TEST_CASE("saturation values") {
    CHECK(saturation(0.5) == 0.5);
    CHECK(saturation(2.0) == 1.0);
    CHECK(saturation(-2.0) == -1.0);
    CHECK(saturation(1.0, 1.0 / 30.0) == doctest::Approx(1.0 / 30.0).epsilon(1e-15));
    CHECK(saturation(0.95) == 0.95);
    CHECK(saturation(1.05) == 1.0);
    CHECK(saturation(0.0) == 0.0);
}

TEST_CASE("saturation is odd, monotone, C1 with slope in [0, 1]") {
    const double d = 1e-7;
    for (double s = -1.2; s <= 1.2; s += 1e-3) {
        CHECK(saturation(-s) == -saturation(s));
        const double slope = saturation_slope(s);
        CHECK(slope >= 0.0);
        CHECK(slope <= 1.0);
        const double fd = (saturation(s + d) - saturation(s - d)) / (2 * d);
        CHECK(std::abs(fd - slope) <= 1e-6);
        CHECK(std::abs(saturation(s)) <= 1.0);
    }
    // Continuity of value and slope at the blend edges.
    for (double edge : {0.95, 1.05}) {
        CHECK(std::abs(saturation(edge + 1e-12) - saturation(edge - 1e-12)) <= 1e-11);
        CHECK(std::abs(saturation_slope(edge + 1e-12) - saturation_slope(edge - 1e-12)) <= 1e-9);
    }
    CHECK(saturation(3.0, 0.2) == doctest::Approx(0.2 * saturation(15.0)));
}

TEST_CASE("gamma matrix is strictly upper ones") {
    const Eigen::MatrixXd G = gamma_matrix(4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(G(i, j) == (j > i ? 1.0 : 0.0));
}

TEST_CASE("scaled samples") {
    const TransformParams tp{2, 3.0, 0.5, 1.0, 0.6};
    const PhiMatrix phi = build_phi(tp);

    OriginalSample zero{1.2, StateVec::Zero(2), StateVec::Zero(2), StateVec::Zero(2), Eigen::VectorXd::Ones(2), 0.0};
    const ScaledSample sz = to_scaled(tp, phi, zero);
    CHECK(sz.r == doctest::Approx(0.4));
    CHECK(sz.Z.isZero(0.0));
    CHECK(sz.E.isZero(0.0));
    CHECK(sz.v == 0.0);

    const TransformParams t1{1, 2.5, 0.2, 1.0, 0.0};
    OriginalSample s1{0.0, StateVec::Constant(1, 0.3), StateVec::Constant(1, 0.1), StateVec::Constant(1, 0.2),
                      Eigen::VectorXd::Constant(1, 0.7), -0.04};
    const ScaledSample ss1 = to_scaled(t1, build_phi(t1), s1);
    CHECK(ss1.v == doctest::Approx(2.5 * (1.0 / 0.2) * -0.04).epsilon(1e-14));
    CHECK(ss1.E(0) == doctest::Approx(5.0 * (0.2 - 0.1)).epsilon(1e-14));

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        OriginalSample s{0.1 * trial, random_vec(rng, 2), random_vec(rng, 2), random_vec(rng, 2),
                         random_vec(rng, 2).cwiseAbs(), random_vec(rng, 1)(0)};
        const OriginalSample back = from_scaled(tp, phi, to_scaled(tp, phi, s));
        CHECK(std::abs(back.t - s.t) <= 1e-12);
        CHECK((back.x - s.x).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((back.x_delayed - s.x_delayed).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((back.psi - s.psi).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((back.nu - s.nu).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK(std::abs(back.u - s.u) <= 1e-12);
    }
}

TEST_CASE("scaled dynamics of an integrator chain are linear") {
    std::mt19937_64 rng(9);
    for (int n = 1; n <= 5; ++n) {
        const TransformParams tp{n, 2.0, 0.4, 1.0, 0.0};
        const auto plant = FeedforwardPlant::integrator_chain(n, 1.0, StateVec::Ones(n));
        const Eigen::MatrixXd G = gamma_matrix(n);
        for (int trial = 0; trial < 20; ++trial) {
            const Eigen::VectorXd Z = random_vec(rng, n), Zd = random_vec(rng, n), E = random_vec(rng, n);
            const double v = random_vec(rng, 1)(0);
            const ScaledRates rates = scaled_rhs(tp, plant, Z, Zd, E, v);
            const Eigen::VectorXd dz_expect = G * Z + Eigen::VectorXd::Constant(n, v);
            CHECK((rates.dZ - dz_expect).cwiseAbs().maxCoeff() <= 1e-12 * (1 + dz_expect.cwiseAbs().maxCoeff()));
            CHECK((rates.dE - G * E).cwiseAbs().maxCoeff() <= 1e-12);
            CHECK(scaled_nonlinearity(tp, plant, Z).cwiseAbs().maxCoeff() <= 1e-12);
        }
        const ScaledRates zero = scaled_rhs(tp, plant, Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n),
                                            Eigen::VectorXd::Zero(n), 0.0);
        CHECK(zero.dZ.isZero(0.0));
        CHECK(zero.dE.isZero(0.0));
    }
}

TEST_CASE("quadratic coupling obeys the scaled bound on its domain") {
    const int n = 2;
    const double M = 1.0, kappa = 1.5, L = 0.01;
    const TransformParams tp{n, kappa, L, M, 0.0};
    const FeedforwardPlant plant(2, {Nonlinearity{{Monomial{1.0, {2}}}}}, M, StateVec::Ones(2));
    const double Pc = scaled_bound_constant(n, L, kappa);
    CHECK(Pc == doctest::Approx(8.0 * 8.0 * L / kappa));
    const double dom = scaled_bound_domain(n, M, L, kappa);
    CHECK(dom == doctest::Approx(M * kappa / (L * 6.0)));
    for (int a = -50; a <= 50; ++a)
        for (int b = -50; b <= 50; ++b) {
            Eigen::VectorXd Z(2);
            Z << dom * a / 50.0, dom * b / 50.0;
            const Eigen::VectorXd ph = scaled_nonlinearity(tp, plant, Z);
            CHECK(ph(1) == 0.0);
            const double z2 = Z(1) * Z(1);
            CHECK(std::abs(ph(0)) <= Pc * z2 * (1 + 1e-12) + 1e-300);
        }
}

TEST_CASE("scaled rates match the derivative of transformed plant trajectories") {
    // Integrate the plant under constant u with a fine RK4, map to Z, and difference in r.
    const double kappa = 2.0, L = 0.3, M = 1.0;
    const TransformParams tp{2, kappa, L, M, 0.0};
    const FeedforwardPlant plant(2, {Nonlinearity{{Monomial{0.5, {2}}}}}, M, StateVec::Ones(2));
    const PhiMatrix phi = build_phi(tp);
    const double u = 0.07, dt = 1e-3;
    StateVec x(2);
    x << 0.2, -0.3;
    std::vector<StateVec> xs{x};
    for (int k = 0; k < 200; ++k) {
        const StateVec k1 = vector_field(plant, x, u);
        const StateVec k2 = vector_field(plant, x + 0.5 * dt * k1, u);
        const StateVec k3 = vector_field(plant, x + 0.5 * dt * k2, u);
        const StateVec k4 = vector_field(plant, x + dt * k3, u);
        x += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        xs.push_back(x);
    }
    const double v = kappa * kappa * (M / L) * u;
    const double dr = dt / kappa;
    for (std::size_t k = 2; k + 2 < xs.size(); k += 17) {
        // Fourth-order central difference of Z = Phi x in r.
        const Eigen::VectorXd dZ_fd =
            phi.phi * (-xs[k + 2] + 8 * xs[k + 1] - 8 * xs[k - 1] + xs[k - 2]) / (12 * dr);
        const Eigen::VectorXd Z = phi.phi * xs[k];
        const ScaledRates rates = scaled_rhs(tp, plant, Z, Z, Eigen::VectorXd::Zero(2), v);
        CHECK((rates.dZ - dZ_fd).cwiseAbs().maxCoeff() <= 1e-7 * rates.dZ.cwiseAbs().maxCoeff());
    }
}
