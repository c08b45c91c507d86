#include "ncsim/transforms.hpp"

#include "ncsim/errors.hpp"

#include <array>
#include <cmath>
#include <string>

namespace ncsim {

namespace {

double factorial(int k) {
    double r = 1.0;
    for (int j = 2; j <= k; ++j) r *= j;
    return r;
}

void check_index(int i, int n) {
    if (n < 1 || i < 1 || i > n)
        throw IndexError("index " + std::to_string(i) + " outside [1, " + std::to_string(n) + "]");
}

}  // namespace

std::vector<double> p_coeffs(int i, int n) {
    check_index(i, n);
    std::vector<double> c;
    c.reserve(n - i + 1);
    for (int j = i; j <= n; ++j) c.push_back(factorial(n - i) / (factorial(n - j) * factorial(j - i)));
    return c;
}

std::vector<double> q_coeffs(int i, int n) {
    auto c = p_coeffs(i, n);
    for (std::size_t k = 1; k < c.size(); k += 2) c[k] = -c[k];
    return c;
}

namespace {

double dot_tail(const std::vector<double>& c, const Eigen::VectorXd& tail) {
    if (tail.size() != static_cast<Eigen::Index>(c.size()))
        throw IndexError("argument length does not match polynomial arity");
    double s = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) s += c[k] * tail[static_cast<Eigen::Index>(k)];
    return s;
}

Eigen::MatrixXd stack_rows(int n, std::vector<double> (*coeffs)(int, int)) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i <= n; ++i) {
        const auto c = coeffs(i, n);
        for (int j = i; j <= n; ++j) m(i - 1, j - 1) = c[j - i];
    }
    return m;
}

}  // namespace

double p_eval(int i, int n, const Eigen::VectorXd& tail) { return dot_tail(p_coeffs(i, n), tail); }
double q_eval(int i, int n, const Eigen::VectorXd& tail) { return dot_tail(q_coeffs(i, n), tail); }

Eigen::MatrixXd p_matrix(int n) { return stack_rows(n, &p_coeffs); }
Eigen::MatrixXd q_matrix(int n) { return stack_rows(n, &q_coeffs); }

void TransformParams::validate() const {
    if (n < 1 || n > kMaxDim) throw ConfigError("transform dimension out of range");
    if (!(kappa >= 1.0) || !std::isfinite(kappa)) throw ConfigError("kappa must be finite and >= 1");
    if (!(L > 0.0) || !std::isfinite(L)) throw ConfigError("L must be positive");
    if (!(M > 0.0) || !std::isfinite(M)) throw ConfigError("M must be positive");
    if (!(theta >= 0.0) || !std::isfinite(theta)) throw ConfigError("theta must be nonnegative");
}

PhiMatrix build_phi(const TransformParams& tp, int i) {
    tp.validate();
    check_index(i, tp.n);
    const int n = tp.n;
    const int m = n - i + 1;
    PhiMatrix out;
    out.phi = Eigen::MatrixXd::Zero(m, m);
    for (int j = i; j <= n; ++j) {
        const auto c = p_coeffs(j, n);
        for (int k = j; k <= n; ++k)
            out.phi(j - i, k - i) = c[k - j] * (tp.M / tp.L) * std::pow(tp.kappa, k - 1);
    }
    out.inverse = out.phi.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(m, m));
    return out;
}

double saturation(double s, double eps) noexcept {
    const double a = std::abs(s) / eps;
    double sat;
    if (a <= 0.95)
        sat = a;
    else if (a >= 1.05)
        sat = 1.0;
    else {
        // Hermite blend from (19/20, slope 1) to (21/20, slope 0); slope falls linearly.
        const double d = a - 0.95;
        sat = a - 5.0 * d * d;
    }
    return std::copysign(eps * sat, s);
}

double saturation_slope(double s, double eps) noexcept {
    const double a = std::abs(s) / eps;
    if (a <= 0.95) return 1.0;
    if (a >= 1.05) return 0.0;
    return 1.0 - 10.0 * (a - 0.95);
}

Eigen::MatrixXd gamma_matrix(int size) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(size, size);
    for (int i = 0; i < size; ++i)
        for (int j = i + 1; j < size; ++j) g(i, j) = 1.0;
    return g;
}

ScaledModel::ScaledModel(const FeedforwardPlant& plant, const TransformParams& tp)
    : n_(plant.n()), plant_(plant), tp_(tp), phi_(build_phi(tp)),
      input_gain_(tp.kappa * (tp.M / tp.L) * std::pow(tp.kappa, tp.n - 1)) {
    if (tp.n != plant.n()) throw ConfigError("transform dimension differs from plant dimension");
}

void ScaledModel::z_rate(const double* Z, double v, double* out) const noexcept {
    std::array<double, kMaxDim> x{}, f{};
    const auto& inv = phi_.inverse;
    const auto& ph = phi_.phi;
    for (int i = 0; i < n_; ++i) {
        double s = 0.0;
        for (int j = i; j < n_; ++j) s += inv(i, j) * Z[j];
        x[i] = s;
    }
    plant_.eval(x.data(), v / input_gain_, f.data());
    for (int i = 0; i < n_; ++i) {
        double s = 0.0;
        for (int j = i; j < n_; ++j) s += ph(i, j) * f[j];
        out[i] = tp_.kappa * s;
    }
}

void ScaledModel::nonlinearity(const double* Z, double* out) const noexcept {
    z_rate(Z, 0.0, out);
    // Subtract Gamma Z: row i holds the sum of Z_{i+1..n}.
    double tail = 0.0;
    for (int i = n_ - 1; i >= 0; --i) {
        out[i] -= tail;
        tail += Z[i];
    }
}

void ScaledModel::e_rate(const double* E, const double* Zd, double* out) const noexcept {
    std::array<double, kMaxDim> sum{}, a{}, b{};
    for (int i = 0; i < n_; ++i) sum[i] = E[i] + Zd[i];
    nonlinearity(sum.data(), a.data());
    nonlinearity(Zd, b.data());
    double tail = 0.0;
    for (int i = n_ - 1; i >= 0; --i) {
        out[i] = tail + a[i] - b[i];
        tail += E[i];
    }
}

ScaledRates scaled_rhs(const TransformParams& tp, const FeedforwardPlant& plant,
                       const Eigen::VectorXd& Z, const Eigen::VectorXd& Z_delayed,
                       const Eigen::VectorXd& E, double v) {
    const ScaledModel model(plant, tp);
    const int n = plant.n();
    if (Z.size() != n || Z_delayed.size() != n || E.size() != n)
        throw NumericDomainError("scaled state dimension mismatch");
    ScaledRates r{Eigen::VectorXd(n), Eigen::VectorXd(n)};
    model.z_rate(Z.data(), v, r.dZ.data());
    model.e_rate(E.data(), Z_delayed.data(), r.dE.data());
    return r;
}

Eigen::VectorXd scaled_nonlinearity(const TransformParams& tp, const FeedforwardPlant& plant,
                                    const Eigen::VectorXd& Z) {
    const ScaledModel model(plant, tp);
    Eigen::VectorXd out(plant.n());
    model.nonlinearity(Z.data(), out.data());
    return out;
}

double scaled_bound_constant(int n, double L, double kappa) {
    const double nf = factorial(n);
    return std::pow(n, 3) * nf * nf * nf * L / kappa;
}

double scaled_bound_domain(int n, double M, double L, double kappa) {
    return M * kappa / (L * factorial(n + 1));
}

ScaledSample to_scaled(const TransformParams& tp, const PhiMatrix& phi, const OriginalSample& s) {
    ScaledSample out;
    out.r = s.t / tp.kappa;
    out.Z = phi.phi * s.x;
    out.Z_delayed = phi.phi * s.x_delayed;
    out.E = phi.phi * (s.psi - s.x_delayed);
    out.P = s.nu;
    out.v = tp.kappa * (tp.M / tp.L) * std::pow(tp.kappa, tp.n - 1) * s.u;
    return out;
}

OriginalSample from_scaled(const TransformParams& tp, const PhiMatrix& phi, const ScaledSample& s) {
    OriginalSample out;
    out.t = s.r * tp.kappa;
    out.x = phi.inverse * s.Z;
    out.x_delayed = phi.inverse * s.Z_delayed;
    out.psi = phi.inverse * (s.E + s.Z_delayed);
    out.nu = s.P;
    out.u = s.v / (tp.kappa * (tp.M / tp.L) * std::pow(tp.kappa, tp.n - 1));
    return out;
}

}  // namespace ncsim
