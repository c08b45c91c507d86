#pragma once

#include <Eigen/Dense>

#include <vector>

namespace ncsim {

using StateVec = Eigen::VectorXd;

/// Largest supported state dimension; hot loops use fixed stack buffers of this size.
inline constexpr int kMaxDim = 16;

/// coeff * prod_j x_{offset+j}^{exponents[j]} over a trailing block of the state.
struct Monomial {
    double coeff = 0.0;
    std::vector<int> exponents;

    [[nodiscard]] int degree() const;
    bool operator==(const Monomial&) const = default;
};

/// Polynomial in the trailing variables (x_{i+1}, ..., x_n) of the state.
struct Nonlinearity {
    std::vector<Monomial> terms;

    bool operator==(const Nonlinearity&) const = default;
};

struct QuadraticBoundReport {
    bool ok = true;
    double worst_ratio = 0.0;
    int worst_index = -1;  ///< zero-based row of the worst nonlinearity, -1 if none
};

/// Chain of integrators with polynomial couplings that only depend on downstream states:
///   dx_i/dt = x_{i+1} + h_i(x_{i+1}, ..., x_n),   dx_n/dt = u.
class FeedforwardPlant {
public:
    FeedforwardPlant(int n, std::vector<Nonlinearity> h, double M, StateVec l_bar);

    /// Integrator chain of length n with h identically zero.
    static FeedforwardPlant integrator_chain(int n, double M, StateVec l_bar);

    [[nodiscard]] int n() const noexcept { return n_; }
    [[nodiscard]] double M() const noexcept { return M_; }
    [[nodiscard]] const StateVec& l_bar() const noexcept { return l_bar_; }
    [[nodiscard]] const std::vector<Nonlinearity>& h() const noexcept { return h_; }
    [[nodiscard]] bool is_integrator_chain() const noexcept;

    /// Value of h_i (zero-based row i in [0, n-2]) at the full state x.
    [[nodiscard]] double coupling(int i, const double* x) const noexcept;

    /// Unchecked evaluation into caller-provided storage.
    void eval(const double* x, double u, double* dx) const noexcept;

    bool operator==(const FeedforwardPlant&) const = default;

private:
    int n_;
    std::vector<Nonlinearity> h_;
    double M_;
    StateVec l_bar_;
};

/// f(x, u). Throws NumericDomainError on non-finite input.
[[nodiscard]] StateVec vector_field(const FeedforwardPlant& plant, const StateVec& x, double u);

/// Samples |X_{i+1}|_inf <= 1 on a uniform grid with grid_density points per axis
/// and checks |h_i| <= M |X_{i+1}|^2 in the Euclidean norm.
[[nodiscard]] QuadraticBoundReport validate_quadratic_bound(const FeedforwardPlant& plant,
                                                            int grid_density = 21);

/// True iff |x0_i| <= l_bar_i for every i.
[[nodiscard]] bool check_initial_condition(const FeedforwardPlant& plant, const StateVec& x0);

}  // namespace ncsim
