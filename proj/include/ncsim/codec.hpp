#pragma once

#include "ncsim/controller.hpp"
#include "ncsim/plant.hpp"
#include "ncsim/transforms.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <utility>
#include <vector>

namespace ncsim {

/// Encoder side: replica omega of the decoder, state estimate xi, cell edge lengths ell.
struct EncoderState {
    StateVec omega;
    StateVec xi;
    Eigen::VectorXd ell;
};

/// Decoder side: estimate psi, cell edge lengths nu, index of the next expected packet.
struct DecoderState {
    StateVec psi;
    Eigen::VectorXd nu;
    std::uint32_t next_k = 0;
};

struct Packet {
    std::uint32_t k = 0;
    double t_sent = 0.0;
    std::vector<std::int8_t> symbols;  ///< each in {-1, 0, +1}

    bool operator==(const Packet&) const = default;
};

struct LambdaMatrix {
    Eigen::MatrixXd lam;
};

/// Upper-triangular cell-contraction matrix: 1/2 on the diagonal and rows
/// [1/2, F_i T_M 1^T Lambda_{i+1}] built from the bottom up.
[[nodiscard]] LambdaMatrix design_lambda(int n, const std::vector<double>& F, double T_M);

/// 1 + sup over |Z|_inf <= B of the largest absolute row sum of the Jacobian of the
/// scaled coupling restricted to rows and columns i..n, for i = 1..n-1.
/// B = max(|2 Phi l_bar|_inf, 1); grid_density points per axis.
[[nodiscard]] std::vector<double> default_growth_constants(const FeedforwardPlant& plant,
                                                           const ControllerParams& cp,
                                                           int grid_density = 5);

/// Sign with sgn(0) = 0.
[[nodiscard]] std::int8_t sgn(double v) noexcept;

/// (4 Phi)^{-1} diag(y) cell, written into out (length n).
void quantizer_increment(const PhiMatrix& phi, const std::int8_t* y, const double* cell,
                         double* out) noexcept;

/// g_E(x, xi, ell) = (4 Phi)^{-1} diag(sgn(Phi (x - xi))) ell.
[[nodiscard]] StateVec encoder_increment(const PhiMatrix& phi, const StateVec& x, const StateVec& xi,
                                         const Eigen::VectorXd& ell);

/// Sample at t: emits y = sgn(Phi (x - xi)), moves xi by g_E and contracts ell by Lambda.
/// Throws QuantizerOverflowError when |Phi (x - xi)|_j > ell_j / 2 for some j.
[[nodiscard]] std::pair<EncoderState, Packet> encoder_sample_jump(const EncoderState& enc,
                                                                  const StateVec& x,
                                                                  const PhiMatrix& phi,
                                                                  const LambdaMatrix& lam,
                                                                  std::uint32_t k = 0,
                                                                  double t = 0.0);

/// Delivery of pkt: psi += (4 Phi)^{-1} diag(y) nu, nu = Lambda nu.
/// Throws ProtocolError unless pkt.k is the expected index.
[[nodiscard]] DecoderState decoder_delivery_jump(const DecoderState& dec, const Packet& pkt,
                                                 const PhiMatrix& phi, const LambdaMatrix& lam);

/// omega += g_E(x, xi, ell) evaluated on the left limits at t - theta.
[[nodiscard]] EncoderState omega_delivery_jump(const EncoderState& enc, const StateVec& x_delayed,
                                               const StateVec& xi_delayed,
                                               const Eigen::VectorXd& ell_delayed,
                                               const PhiMatrix& phi);

struct CodecRates {
    StateVec d_omega;
    StateVec d_xi;
    StateVec d_psi;
};

/// Flow of the replicas: omega' = f(omega, a(omega(t-theta))), xi' = f(xi, a(omega)),
/// psi' = f(psi, a(psi(t-theta))). Cell lengths do not flow.
[[nodiscard]] CodecRates codec_flow(const EncoderState& enc, const DecoderState& dec,
                                    const StateVec& omega_delayed, const StateVec& psi_delayed,
                                    const FeedforwardPlant& plant, const ControllerParams& cp);

/// Zero replicas and cells ell = nu = 2 Phi l_bar.
[[nodiscard]] std::pair<EncoderState, DecoderState> initialize(const FeedforwardPlant& plant,
                                                               const PhiMatrix& phi);

/// 2n bits per packet body.
[[nodiscard]] constexpr int packet_bits(int n) noexcept { return 2 * n; }

/// 4-byte little-endian k, then 2-bit trits MSB first (00 = 0, 01 = +1, 10 = -1), zero-padded.
[[nodiscard]] std::vector<std::uint8_t> serialize_packet(const Packet& pkt);
/// Inverse of serialize_packet for an n-dimensional plant; t_sent is not on the wire.
[[nodiscard]] Packet deserialize_packet(const std::vector<std::uint8_t>& bytes, int n);

}  // namespace ncsim
