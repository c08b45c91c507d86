#include "doctest.h"

#include "ncsim/codec.hpp"
#include "ncsim/errors.hpp"

#include <cmath>
#include <random>

using namespace ncsim;

namespace {

// Block recursion written out with explicit sub-blocks.
Eigen::MatrixXd lambda_oracle(int n, const std::vector<double>& F, double T_M) {
    Eigen::MatrixXd below = Eigen::MatrixXd::Constant(1, 1, 0.5);
    for (int i = n - 2; i >= 0; --i) {
        const int m = static_cast<int>(below.rows());
        Eigen::MatrixXd next = Eigen::MatrixXd::Zero(m + 1, m + 1);
        next(0, 0) = 0.5;
        next.block(0, 1, 1, m) = (F[i] * T_M) * below.colwise().sum();
        next.block(1, 1, m, m) = below;
        below = next;
    }
    return below;
}

PhiMatrix unit_phi() { return build_phi({1, 1.0, 1.0, 1.0, 0.0}); }

StateVec scalar(double v) { return StateVec::Constant(1, v); }

}  // namespace

TEST_CASE("lambda design") {
    CHECK(design_lambda(1, {}, 3.0).lam(0, 0) == 0.5);
    const Eigen::MatrixXd l2 = design_lambda(2, {1.0}, 1.0).lam;
    CHECK(l2(0, 0) == 0.5);
    CHECK(l2(0, 1) == 0.5);
    CHECK(l2(1, 0) == 0.0);
    CHECK(l2(1, 1) == 0.5);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(0.1, 4.0);
    for (int n = 1; n <= 6; ++n)
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> F(static_cast<std::size_t>(n - 1));
            for (double& f : F) f = U(rng);
            const double T_M = U(rng);
            const Eigen::MatrixXd lam = design_lambda(n, F, T_M).lam;
            const Eigen::MatrixXd ref = lambda_oracle(n, F, T_M);
            CHECK((lam - ref).cwiseAbs().maxCoeff() <= 1e-12 * (1 + ref.cwiseAbs().maxCoeff()));
            CHECK(lam.diagonal().isConstant(0.5));
            CHECK((lam.array() >= 0.0).all());
            CHECK(lam.triangularView<Eigen::StrictlyLower>().toDenseMatrix().isZero(0.0));
            const auto ev = lam.eigenvalues();
            for (int i = 0; i < n; ++i) CHECK(std::abs(ev(i) - 0.5) <= 1e-12);
        }
    CHECK_THROWS_AS((void)design_lambda(2, {}, 1.0), ConfigError);
    CHECK_THROWS_AS((void)design_lambda(2, {1.0}, 0.0), ConfigError);
}

TEST_CASE("powers of lambda contract geometrically") {
    const Eigen::MatrixXd lam = design_lambda(3, {2.0, 3.0}, 1.5).lam;
    Eigen::MatrixXd pw = Eigen::MatrixXd::Identity(3, 3);
    double prev = pw.norm();
    for (int k = 1; k <= 200; ++k) {
        pw = lam * pw;
        if (k > 40) {
            CHECK(pw.norm() < prev);
            CHECK(pw.norm() / prev <= 0.6);
        }
        prev = pw.norm();
    }
    CHECK(prev < 1e-50);
}

TEST_CASE("growth constants") {
    const auto chain = FeedforwardPlant::integrator_chain(3, 1.0, StateVec::Ones(3));
    const auto F0 = default_growth_constants(chain, manual_params(3, 1.0, 0.0, 2.0, 0.5));
    REQUIRE(F0.size() == 2);
    CHECK(F0[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(F0[1] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(default_growth_constants(FeedforwardPlant::integrator_chain(1, 1.0, StateVec::Ones(1)),
                                   manual_params(1, 1.0, 0.0, 1.0, 1.0))
              .empty());

    const FeedforwardPlant quad(2, {Nonlinearity{{Monomial{0.5, {2}}}}}, 1.0, StateVec::Ones(2));
    const auto F = default_growth_constants(quad, manual_params(2, 1.0, 0.0, 2.0, 0.5));
    CHECK(F[0] > 1.0);
}

TEST_CASE("encoder sample jump on a unit cell") {
    const PhiMatrix phi = unit_phi();
    const LambdaMatrix lam = design_lambda(1, {}, 1.0);
    const EncoderState enc{scalar(0.0), scalar(0.1), Eigen::VectorXd::Constant(1, 1.0)};
    const auto [next, pkt] = encoder_sample_jump(enc, scalar(0.5), phi, lam, 7, 2.5);
    CHECK(pkt.k == 7);
    CHECK(pkt.t_sent == 2.5);
    CHECK(pkt.symbols == std::vector<std::int8_t>{1});
    CHECK(next.xi(0) == doctest::Approx(0.35));
    CHECK(next.ell(0) == 0.5);
    CHECK(std::abs(0.5 - next.xi(0)) == doctest::Approx(0.15));
    CHECK(next.omega(0) == 0.0);

    const auto [same, zero] = encoder_sample_jump(enc, scalar(0.1), phi, lam);
    CHECK(zero.symbols == std::vector<std::int8_t>{0});
    CHECK(same.xi(0) == 0.1);

    CHECK_THROWS_AS((void)encoder_sample_jump(enc, scalar(0.61), phi, lam), QuantizerOverflowError);
    CHECK_NOTHROW((void)encoder_sample_jump(enc, scalar(0.6), phi, lam));
}

TEST_CASE("each sample halves the error inside its cell") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int n = 1; n <= 4; ++n) {
        const PhiMatrix phi = build_phi({n, 1.3, 0.2, 1.0, 0.0});
        std::vector<double> F(static_cast<std::size_t>(n - 1), 1.0);
        const LambdaMatrix lam = design_lambda(n, F, 1.0);
        for (int trial = 0; trial < 300; ++trial) {
            Eigen::VectorXd ell(n), d(n);
            for (int j = 0; j < n; ++j) {
                ell(j) = 0.1 + std::abs(U(rng));
                d(j) = 0.5 * ell(j) * U(rng);
            }
            const StateVec xi = StateVec::Random(n);
            const StateVec x = xi + phi.inverse * d;
            const EncoderState enc{StateVec::Zero(n), xi, ell};
            const auto [next, pkt] = encoder_sample_jump(enc, x, phi, lam);
            const Eigen::VectorXd after = phi.phi * (x - next.xi);
            for (int j = 0; j < n; ++j) {
                CHECK(std::abs(after(j)) <= 0.25 * ell(j) * (1 + 1e-9));
                CHECK(pkt.symbols[j] == sgn(d(j)));
            }
            CHECK((next.ell - lam.lam * ell).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("decoder delivery mirrors the encoder") {
    const PhiMatrix phi = unit_phi();
    const LambdaMatrix lam = design_lambda(1, {}, 1.0);
    const EncoderState enc{scalar(0.0), scalar(0.1), Eigen::VectorXd::Constant(1, 1.0)};
    const auto [next, pkt] = encoder_sample_jump(enc, scalar(0.5), phi, lam);
    const DecoderState dec{scalar(0.1), Eigen::VectorXd::Constant(1, 1.0), 0};
    const DecoderState d1 = decoder_delivery_jump(dec, pkt, phi, lam);
    CHECK(d1.psi(0) - dec.psi(0) == next.xi(0) - enc.xi(0));
    CHECK(d1.nu(0) == 0.5);
    CHECK(d1.next_k == 1);

    Packet blank{1, 0.0, {0}};
    const DecoderState d2 = decoder_delivery_jump(d1, blank, phi, lam);
    CHECK(d2.psi(0) == d1.psi(0));
    CHECK(d2.nu(0) == 0.25);

    CHECK_THROWS_AS((void)decoder_delivery_jump(d1, pkt, phi, lam), ProtocolError);
    Packet wide{1, 0.0, {0, 1}};
    CHECK_THROWS_AS((void)decoder_delivery_jump(d1, wide, phi, lam), ProtocolError);
}

TEST_CASE("cell update ignores the symbols") {
    const PhiMatrix phi = build_phi({2, 2.0, 0.5, 1.0, 0.0});
    const LambdaMatrix lam = design_lambda(2, {1.5}, 2.0);
    const DecoderState dec{StateVec::Zero(2), Eigen::Vector2d(3.0, 1.0), 0};
    for (std::int8_t a : {-1, 0, 1})
        for (std::int8_t b : {-1, 0, 1}) {
            const DecoderState d = decoder_delivery_jump(dec, Packet{0, 0.0, {a, b}}, phi, lam);
            CHECK((d.nu - lam.lam * dec.nu).cwiseAbs().maxCoeff() == 0.0);
        }
}

TEST_CASE("scaled decoder jump moves E against its sign by a quarter cell") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int n = 1; n <= 4; ++n) {
        const PhiMatrix phi = build_phi({n, 1.7, 0.3, 1.0, 0.0});
        const LambdaMatrix lam = design_lambda(n, std::vector<double>(static_cast<std::size_t>(n - 1), 2.0), 1.0);
        for (int trial = 0; trial < 200; ++trial) {
            const StateVec xd = StateVec::Random(n), psi = StateVec::Random(n);
            Eigen::VectorXd P(n);
            for (int j = 0; j < n; ++j) P(j) = 0.5 + std::abs(U(rng));
            const Eigen::VectorXd E = phi.phi * (psi - xd);
            Packet pkt{0, 0.0, std::vector<std::int8_t>(static_cast<std::size_t>(n))};
            const Eigen::VectorXd d = phi.phi * (xd - psi);
            for (int j = 0; j < n; ++j) pkt.symbols[j] = sgn(d(j));
            const DecoderState next = decoder_delivery_jump(DecoderState{psi, P, 0}, pkt, phi, lam);
            const Eigen::VectorXd E_post = phi.phi * (next.psi - xd);
            for (int j = 0; j < n; ++j) {
                const double expect = E(j) + 0.25 * sgn(-E(j)) * P(j);
                CHECK(std::abs(E_post(j) - expect) <= 1e-12 * (phi.phi.cwiseAbs().maxCoeff() + 1.0));
            }
        }
    }
}

TEST_CASE("omega delivery replays the delayed encoder increment") {
    const PhiMatrix phi = build_phi({2, 1.2, 0.4, 1.0, 0.0});
    const LambdaMatrix lam = design_lambda(2, {1.0}, 1.0);
    StateVec x(2), xi(2);
    x << 0.02, -0.01;
    xi << 0.015, 0.0;
    const Eigen::VectorXd ell = 2.0 * (phi.phi * StateVec::Constant(2, 0.03));
    const EncoderState enc{StateVec::Zero(2), xi, ell};
    const auto [after, pkt] = encoder_sample_jump(enc, x, phi, lam);

    // Same left limits delivered on both sides keep omega equal to psi.
    const EncoderState w = omega_delivery_jump(enc, x, xi, ell, phi);
    const DecoderState d = decoder_delivery_jump(DecoderState{StateVec::Zero(2), ell, 0}, pkt, phi, lam);
    CHECK((w.omega - d.psi).cwiseAbs().maxCoeff() == 0.0);
    CHECK((w.omega - (after.xi - xi)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(w.xi == enc.xi);
    CHECK(w.ell == enc.ell);
}

TEST_CASE("codec flow") {
    const auto plant = FeedforwardPlant::integrator_chain(1, 1.0, StateVec::Ones(1));
    const ControllerParams cp = manual_params(1, 1.0, 0.0, 1.0, 0.5);
    const EncoderState enc0{scalar(0.0), scalar(0.0), Eigen::VectorXd::Ones(1)};
    const DecoderState dec0{scalar(0.0), Eigen::VectorXd::Ones(1), 0};
    const CodecRates zero = codec_flow(enc0, dec0, scalar(0.0), scalar(0.0), plant, cp);
    CHECK(zero.d_omega(0) == 0.0);
    CHECK(zero.d_xi(0) == 0.0);
    CHECK(zero.d_psi(0) == 0.0);

    const EncoderState enc{scalar(0.004), scalar(0.7), Eigen::VectorXd::Ones(1)};
    const DecoderState dec{scalar(-0.002), Eigen::VectorXd::Ones(1), 0};
    const CodecRates r = codec_flow(enc, dec, scalar(0.001), scalar(0.003), plant, cp);
    CHECK(r.d_xi(0) == control_original(cp, scalar(0.004)));
    CHECK(r.d_omega(0) == control_original(cp, scalar(0.001)));
    CHECK(r.d_psi(0) == control_original(cp, scalar(0.003)));
}

TEST_CASE("initial cells cover the box") {
    const double M = 1.0, L = 0.25, kappa = 3.0;
    const PhiMatrix phi = build_phi({2, kappa, L, M, 0.0});
    const auto plant = FeedforwardPlant::integrator_chain(2, M, StateVec::Ones(2));
    const auto [enc, dec] = initialize(plant, phi);
    CHECK(enc.ell(0) == doctest::Approx(2 * (M / L) * (1 + kappa)));
    CHECK(enc.ell(1) == doctest::Approx(2 * (M / L) * kappa));
    CHECK(dec.nu == enc.ell);
    CHECK(enc.omega.isZero(0.0));
    CHECK(enc.xi.isZero(0.0));
    CHECK(dec.psi.isZero(0.0));
    CHECK(dec.next_k == 0);

    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const LambdaMatrix lam = design_lambda(2, {1.0}, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        StateVec x0(2);
        x0 << U(rng), U(rng);
        const Eigen::VectorXd d = phi.phi * x0;
        for (int j = 0; j < 2; ++j) CHECK(std::abs(d(j)) <= 0.5 * enc.ell(j) * (1 + 1e-15));
        CHECK_NOTHROW((void)encoder_sample_jump(enc, x0, phi, lam));
    }
}

TEST_CASE("packet wire format") {
    const Packet p{0, 0.0, {1, -1}};
    const auto bytes = serialize_packet(p);
    REQUIRE(bytes.size() == 5);
    CHECK(bytes[0] == 0);
    CHECK(bytes[3] == 0);
    CHECK(bytes[4] == 0b0110'0000);

    const Packet q{0x01020304u, 0.0, {0, 1, -1, 1, 0}};
    const auto qb = serialize_packet(q);
    REQUIRE(qb.size() == 6);
    CHECK(qb[0] == 0x04);
    CHECK(qb[1] == 0x03);
    CHECK(qb[2] == 0x02);
    CHECK(qb[3] == 0x01);
    CHECK(qb[4] == 0b0001'1001);
    CHECK(qb[5] == 0b0000'0000);

    CHECK(packet_bits(3) == 6);
    CHECK(packet_bits(1) == 2);
}

TEST_CASE("packet round trip and malformed input") {
    std::mt19937_64 rng(43);
    std::uniform_int_distribution<int> trit(-1, 1);
    std::uniform_int_distribution<std::uint32_t> idx;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + trial % 16;
        Packet p{idx(rng), 0.0, std::vector<std::int8_t>(static_cast<std::size_t>(n))};
        for (auto& s : p.symbols) s = static_cast<std::int8_t>(trit(rng));
        CHECK(deserialize_packet(serialize_packet(p), n) == p);
    }
    CHECK_THROWS_AS((void)deserialize_packet({0, 0, 0, 0}, 1), DecodeError);
    CHECK_THROWS_AS((void)deserialize_packet({0, 0, 0, 0, 0b1100'0000}, 1), DecodeError);
    CHECK_THROWS_AS((void)deserialize_packet({0, 0, 0, 0, 0b0000'0001}, 1), DecodeError);
    CHECK_THROWS_AS((void)serialize_packet(Packet{0, 0.0, {2}}), DecodeError);
}
