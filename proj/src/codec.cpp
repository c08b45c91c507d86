#include "ncsim/codec.hpp"

#include "ncsim/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace ncsim {

LambdaMatrix design_lambda(int n, const std::vector<double>& F, double T_M) {
    if (n < 1 || n > kMaxDim) throw ConfigError("lambda dimension out of range");
    if (static_cast<int>(F.size()) != n - 1)
        throw ConfigError("growth constants: expected " + std::to_string(n - 1) + " entries");
    if (!(T_M > 0.0)) throw ConfigError("T_M must be positive");
    Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(n, n);
    lam(n - 1, n - 1) = 0.5;
    for (int i = n - 2; i >= 0; --i) {
        lam(i, i) = 0.5;
        // Row i continues with F_i T_M times the column sums of the block below.
        for (int j = i + 1; j < n; ++j) lam(i, j) = F[i] * T_M * lam.block(i + 1, j, n - i - 1, 1).sum();
    }
    return {lam};
}

std::vector<double> default_growth_constants(const FeedforwardPlant& plant, const ControllerParams& cp,
                                             int grid_density) {
    const int n = plant.n();
    if (n == 1) return {};
    if (grid_density < 2) throw ConfigError("grid_density must be at least 2");
    const ScaledModel model(plant, cp.transform());
    const Eigen::VectorXd cell = 2.0 * model.phi().phi * plant.l_bar();
    const double B = std::max(cell.cwiseAbs().maxCoeff(), 1.0);

    std::vector<double> sup(n - 1, 0.0);
    std::array<double, kMaxDim> z{}, zp{}, fp{}, fm{};
    std::vector<int> idx(n, 0);
    Eigen::MatrixXd J(n, n);
    while (true) {
        for (int j = 0; j < n; ++j) z[j] = -B + 2.0 * B * idx[j] / (grid_density - 1);
        for (int c = 0; c < n; ++c) {
            const double d = 1e-6 * std::max(1.0, std::abs(z[c]));
            zp = z;
            zp[c] = z[c] + d;
            model.nonlinearity(zp.data(), fp.data());
            zp[c] = z[c] - d;
            model.nonlinearity(zp.data(), fm.data());
            for (int r = 0; r < n; ++r) J(r, c) = (fp[r] - fm[r]) / (2.0 * d);
        }
        for (int i = 0; i < n - 1; ++i)
            for (int r = i; r < n; ++r) sup[i] = std::max(sup[i], J.row(r).tail(n - i).cwiseAbs().sum());
        int j = 0;
        while (j < n && ++idx[j] == grid_density) idx[j++] = 0;
        if (j == n) break;
    }
    for (double& s : sup) s += 1.0;
    return sup;
}

std::int8_t sgn(double v) noexcept { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

void quantizer_increment(const PhiMatrix& phi, const std::int8_t* y, const double* cell,
                         double* out) noexcept {
    const int n = phi.size();
    std::array<double, kMaxDim> w{};
    for (int j = 0; j < n; ++j) w[j] = y[j] * cell[j] * 0.25;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = i; j < n; ++j) s += phi.inverse(i, j) * w[j];
        out[i] = s;
    }
}

StateVec encoder_increment(const PhiMatrix& phi, const StateVec& x, const StateVec& xi,
                           const Eigen::VectorXd& ell) {
    const int n = phi.size();
    const Eigen::VectorXd d = phi.phi * (x - xi);
    std::array<std::int8_t, kMaxDim> y{};
    for (int j = 0; j < n; ++j) y[j] = sgn(d[j]);
    StateVec out(n);
    quantizer_increment(phi, y.data(), ell.data(), out.data());
    return out;
}

std::pair<EncoderState, Packet> encoder_sample_jump(const EncoderState& enc, const StateVec& x,
                                                    const PhiMatrix& phi, const LambdaMatrix& lam,
                                                    std::uint32_t k, double t) {
    const int n = phi.size();
    const Eigen::VectorXd d = phi.phi * (x - enc.xi);
    Packet pkt;
    pkt.k = k;
    pkt.t_sent = t;
    pkt.symbols.resize(n);
    for (int j = 0; j < n; ++j) {
        if (!(std::abs(d[j]) <= 0.5 * enc.ell[j]))
            throw QuantizerOverflowError("quantizer overflow in component " + std::to_string(j + 1) +
                                             " at sample " + std::to_string(k),
                                         t);
        pkt.symbols[j] = sgn(d[j]);
    }
    EncoderState out = enc;
    StateVec inc(n);
    quantizer_increment(phi, pkt.symbols.data(), enc.ell.data(), inc.data());
    out.xi = enc.xi + inc;
    out.ell = lam.lam * enc.ell;
    return {out, pkt};
}

DecoderState decoder_delivery_jump(const DecoderState& dec, const Packet& pkt, const PhiMatrix& phi,
                                   const LambdaMatrix& lam) {
    if (pkt.k != dec.next_k)
        throw ProtocolError("expected packet " + std::to_string(dec.next_k) + ", received " +
                            std::to_string(pkt.k));
    const int n = phi.size();
    if (static_cast<int>(pkt.symbols.size()) != n) throw ProtocolError("packet dimension mismatch");
    DecoderState out = dec;
    StateVec inc(n);
    quantizer_increment(phi, pkt.symbols.data(), dec.nu.data(), inc.data());
    out.psi = dec.psi + inc;
    out.nu = lam.lam * dec.nu;
    out.next_k = dec.next_k + 1;
    return out;
}

EncoderState omega_delivery_jump(const EncoderState& enc, const StateVec& x_delayed,
                                 const StateVec& xi_delayed, const Eigen::VectorXd& ell_delayed,
                                 const PhiMatrix& phi) {
    EncoderState out = enc;
    out.omega = enc.omega + encoder_increment(phi, x_delayed, xi_delayed, ell_delayed);
    return out;
}

CodecRates codec_flow(const EncoderState& enc, const DecoderState& dec, const StateVec& omega_delayed,
                      const StateVec& psi_delayed, const FeedforwardPlant& plant,
                      const ControllerParams& cp) {
    const NestedSaturation ctl(cp);
    return {vector_field(plant, enc.omega, ctl.original(omega_delayed.data())),
            vector_field(plant, enc.xi, ctl.original(enc.omega.data())),
            vector_field(plant, dec.psi, ctl.original(psi_delayed.data()))};
}

std::pair<EncoderState, DecoderState> initialize(const FeedforwardPlant& plant, const PhiMatrix& phi) {
    const int n = plant.n();
    const Eigen::VectorXd cell = 2.0 * (phi.phi * plant.l_bar());
    EncoderState enc{StateVec::Zero(n), StateVec::Zero(n), cell};
    DecoderState dec{StateVec::Zero(n), cell, 0};
    return {enc, dec};
}

std::vector<std::uint8_t> serialize_packet(const Packet& pkt) {
    const int n = static_cast<int>(pkt.symbols.size());
    std::vector<std::uint8_t> out(4 + (packet_bits(n) + 7) / 8, 0);
    for (int b = 0; b < 4; ++b) out[b] = static_cast<std::uint8_t>((pkt.k >> (8 * b)) & 0xFFu);
    for (int j = 0; j < n; ++j) {
        std::uint8_t code = 0;
        switch (pkt.symbols[j]) {
            case 0: code = 0b00; break;
            case 1: code = 0b01; break;
            case -1: code = 0b10; break;
            default: throw DecodeError("symbol outside {-1, 0, +1}");
        }
        const int bit = 2 * j;
        out[4 + bit / 8] |= static_cast<std::uint8_t>(code << (6 - bit % 8));
    }
    return out;
}

Packet deserialize_packet(const std::vector<std::uint8_t>& bytes, int n) {
    if (n < 1) throw DecodeError("dimension must be positive");
    const std::size_t expected = 4 + static_cast<std::size_t>((packet_bits(n) + 7) / 8);
    if (bytes.size() != expected)
        throw DecodeError("expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()));
    Packet pkt;
    for (int b = 0; b < 4; ++b) pkt.k |= static_cast<std::uint32_t>(bytes[b]) << (8 * b);
    pkt.symbols.resize(n);
    for (int j = 0; j < n; ++j) {
        const int bit = 2 * j;
        const int code = (bytes[4 + bit / 8] >> (6 - bit % 8)) & 0b11;
        if (code == 0b11) throw DecodeError("invalid trit code 11 at position " + std::to_string(j));
        pkt.symbols[j] = code == 0b01 ? 1 : (code == 0b10 ? -1 : 0);
    }
    const int used = packet_bits(n) % 8;
    if (used != 0 && (bytes.back() & ((1u << (8 - used)) - 1u)) != 0)
        throw DecodeError("nonzero padding bits");
    return pkt;
}

}  // namespace ncsim
