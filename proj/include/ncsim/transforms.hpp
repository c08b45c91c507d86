#pragma once

#include "ncsim/plant.hpp"

#include <Eigen/Dense>

#include <vector>

namespace ncsim {

/// Binomial-type coefficients (n-i)! / ((n-j)! (j-i)!) for j = i..n, with 1 <= i <= n.
[[nodiscard]] std::vector<double> p_coeffs(int i, int n);
/// Same magnitudes as p_coeffs with signs (-1)^(i+j).
[[nodiscard]] std::vector<double> q_coeffs(int i, int n);

/// p_i(a_i, ..., a_n); `tail` holds a_i..a_n (length n-i+1).
[[nodiscard]] double p_eval(int i, int n, const Eigen::VectorXd& tail);
[[nodiscard]] double q_eval(int i, int n, const Eigen::VectorXd& tail);

/// Upper-triangular matrices stacking p_1..p_n (resp. q_1..q_n) as rows.
[[nodiscard]] Eigen::MatrixXd p_matrix(int n);
[[nodiscard]] Eigen::MatrixXd q_matrix(int n);

/// Gains of the time, input and state coordinate changes.
struct TransformParams {
    int n = 1;
    double kappa = 1.0;  ///< time-scale gain, t = kappa * r
    double L = 1.0;
    double M = 1.0;
    double theta = 0.0;  ///< delay in original time

    [[nodiscard]] double tau() const noexcept { return theta / kappa; }
    void validate() const;
    bool operator==(const TransformParams&) const = default;
};

struct PhiMatrix {
    Eigen::MatrixXd phi;
    Eigen::MatrixXd inverse;

    [[nodiscard]] int size() const noexcept { return static_cast<int>(phi.rows()); }
};

/// Trailing block Phi_i of dimension n-i+1 (1 <= i <= n); row j applies p_j to
/// ((M/L) kappa^{j-1} x_j, ..., (M/L) kappa^{n-1} x_n).
[[nodiscard]] PhiMatrix build_phi(const TransformParams& tp, int i = 1);

/// eps * sigma(s / eps): identity on [0, 19/20], one beyond 21/20, odd and C^1.
[[nodiscard]] double saturation(double s, double eps = 1.0) noexcept;
/// Derivative of saturation with respect to s.
[[nodiscard]] double saturation_slope(double s, double eps = 1.0) noexcept;

/// Strictly upper-triangular matrix of ones.
[[nodiscard]] Eigen::MatrixXd gamma_matrix(int size);

/// The plant written in scaled coordinates Z = Phi x, r = t / kappa.
class ScaledModel {
public:
    ScaledModel(const FeedforwardPlant& plant, const TransformParams& tp);

    [[nodiscard]] int n() const noexcept { return n_; }
    [[nodiscard]] const PhiMatrix& phi() const noexcept { return phi_; }
    [[nodiscard]] const TransformParams& params() const noexcept { return tp_; }

    /// Input gain: v = input_gain() * u.
    [[nodiscard]] double input_gain() const noexcept { return input_gain_; }

    /// phi(Z) = kappa Phi f(Phi^{-1} Z, 0) - Gamma Z, written into out.
    void nonlinearity(const double* Z, double* out) const noexcept;
    /// dZ/dr = kappa Phi f(Phi^{-1} Z, u) with u = v / input_gain().
    void z_rate(const double* Z, double v, double* out) const noexcept;
    /// dE/dr = Gamma E + phi(E + Zd) - phi(Zd).
    void e_rate(const double* E, const double* Zd, double* out) const noexcept;

private:
    int n_;
    FeedforwardPlant plant_;
    TransformParams tp_;
    PhiMatrix phi_;
    double input_gain_;
};

struct ScaledRates {
    Eigen::VectorXd dZ;
    Eigen::VectorXd dE;
};

[[nodiscard]] ScaledRates scaled_rhs(const TransformParams& tp, const FeedforwardPlant& plant,
                                     const Eigen::VectorXd& Z, const Eigen::VectorXd& Z_delayed,
                                     const Eigen::VectorXd& E, double v);

/// phi(Z) as a vector.
[[nodiscard]] Eigen::VectorXd scaled_nonlinearity(const TransformParams& tp,
                                                  const FeedforwardPlant& plant,
                                                  const Eigen::VectorXd& Z);

/// Quadratic-bound constant n^3 (n!)^3 L / kappa of the scaled couplings.
[[nodiscard]] double scaled_bound_constant(int n, double L, double kappa);
/// Half-width M kappa / (L (n+1)!) of the box on which that bound holds.
[[nodiscard]] double scaled_bound_domain(int n, double M, double L, double kappa);

/// One closed-loop sample in original time.
struct OriginalSample {
    double t = 0.0;
    StateVec x;          ///< x(t)
    StateVec x_delayed;  ///< x(t - theta)
    StateVec psi;        ///< decoder state psi(t)
    Eigen::VectorXd nu;  ///< decoder cell nu(t)
    double u = 0.0;
};

/// The same sample in scaled time r = t / kappa.
struct ScaledSample {
    double r = 0.0;
    Eigen::VectorXd Z;
    Eigen::VectorXd Z_delayed;  ///< Z(r - tau)
    Eigen::VectorXd E;
    Eigen::VectorXd P;
    double v = 0.0;
};

[[nodiscard]] ScaledSample to_scaled(const TransformParams& tp, const PhiMatrix& phi,
                                     const OriginalSample& s);
[[nodiscard]] OriginalSample from_scaled(const TransformParams& tp, const PhiMatrix& phi,
                                         const ScaledSample& s);

}  // namespace ncsim
