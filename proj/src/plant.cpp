#include "ncsim/plant.hpp"

#include "ncsim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace ncsim {

namespace {

double ipow(double x, int e) noexcept {
    double r = 1.0;
    while (e > 0) {
        if (e & 1) r *= x;
        x *= x;
        e >>= 1;
    }
    return r;
}

void require_finite(const StateVec& v, const char* name) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (!std::isfinite(v[i]))
            throw NumericDomainError(std::string("non-finite entry in ") + name);
}

}  // namespace

int Monomial::degree() const {
    return std::accumulate(exponents.begin(), exponents.end(), 0);
}

FeedforwardPlant::FeedforwardPlant(int n, std::vector<Nonlinearity> h, double M, StateVec l_bar)
    : n_(n), h_(std::move(h)), M_(M), l_bar_(std::move(l_bar)) {
    if (n_ < 1 || n_ > kMaxDim)
        throw ConfigError("plant.n must lie in [1, " + std::to_string(kMaxDim) + "]");
    if (static_cast<int>(h_.size()) != n_ - 1)
        throw ConfigError("plant: expected " + std::to_string(n_ - 1) + " nonlinearities, got " +
                          std::to_string(h_.size()));
    if (!(M_ > 0.0) || !std::isfinite(M_)) throw ConfigError("plant.M must be positive");
    if (l_bar_.size() != n_) throw ConfigError("plant.l_bar must have n entries");
    for (Eigen::Index i = 0; i < l_bar_.size(); ++i)
        if (!(l_bar_[i] > 0.0) || !std::isfinite(l_bar_[i]))
            throw ConfigError("plant.l_bar entries must be positive");
    for (int i = 0; i < n_ - 1; ++i) {
        const int width = n_ - 1 - i;
        for (const auto& m : h_[i].terms) {
            const std::string key = "plant.h" + std::to_string(i + 1);
            if (static_cast<int>(m.exponents.size()) != width)
                throw ConfigError(key + ": monomial needs " + std::to_string(width) + " exponents");
            if (std::any_of(m.exponents.begin(), m.exponents.end(), [](int e) { return e < 0; }))
                throw ConfigError(key + ": negative exponent");
            if (m.degree() < 2)
                throw ConfigError(key + ": monomials must have degree >= 2");
            if (!std::isfinite(m.coeff)) throw ConfigError(key + ": non-finite coefficient");
        }
    }
}

FeedforwardPlant FeedforwardPlant::integrator_chain(int n, double M, StateVec l_bar) {
    return FeedforwardPlant(n, std::vector<Nonlinearity>(n > 0 ? n - 1 : 0), M, std::move(l_bar));
}

bool FeedforwardPlant::is_integrator_chain() const noexcept {
    return std::all_of(h_.begin(), h_.end(), [](const Nonlinearity& nl) {
        return std::all_of(nl.terms.begin(), nl.terms.end(),
                           [](const Monomial& m) { return m.coeff == 0.0; });
    });
}

double FeedforwardPlant::coupling(int i, const double* x) const noexcept {
    double s = 0.0;
    const double* tail = x + i + 1;
    for (const auto& m : h_[i].terms) {
        double term = m.coeff;
        for (std::size_t j = 0; j < m.exponents.size(); ++j)
            if (m.exponents[j] != 0) term *= ipow(tail[j], m.exponents[j]);
        s += term;
    }
    return s;
}

void FeedforwardPlant::eval(const double* x, double u, double* dx) const noexcept {
    for (int i = 0; i + 1 < n_; ++i) dx[i] = x[i + 1] + coupling(i, x);
    dx[n_ - 1] = u;
}

StateVec vector_field(const FeedforwardPlant& plant, const StateVec& x, double u) {
    if (x.size() != plant.n()) throw NumericDomainError("state dimension mismatch");
    require_finite(x, "state");
    if (!std::isfinite(u)) throw NumericDomainError("non-finite input");
    StateVec dx(plant.n());
    plant.eval(x.data(), u, dx.data());
    return dx;
}

QuadraticBoundReport validate_quadratic_bound(const FeedforwardPlant& plant, int grid_density) {
    if (grid_density < 3) throw ConfigError("grid_density must be at least 3");
    QuadraticBoundReport rep;
    const int n = plant.n();
    std::vector<double> x(n, 0.0);
    for (int i = 0; i + 1 < n; ++i) {
        const int width = n - 1 - i;
        std::vector<int> idx(width, 0);
        // Odometer over grid_density^width points of [-1, 1]^width.
        while (true) {
            double norm2 = 0.0;
            for (int j = 0; j < width; ++j) {
                const double v = -1.0 + 2.0 * idx[j] / (grid_density - 1);
                x[i + 1 + j] = v;
                norm2 += v * v;
            }
            if (norm2 > 0.0) {
                const double ratio = std::abs(plant.coupling(i, x.data())) / norm2;
                if (ratio > rep.worst_ratio) {
                    rep.worst_ratio = ratio;
                    rep.worst_index = i;
                }
                if (ratio > plant.M()) rep.ok = false;
            }
            int j = 0;
            while (j < width && ++idx[j] == grid_density) idx[j++] = 0;
            if (j == width) break;
        }
    }
    return rep;
}

bool check_initial_condition(const FeedforwardPlant& plant, const StateVec& x0) {
    if (x0.size() != plant.n()) return false;
    for (int i = 0; i < plant.n(); ++i)
        if (!(std::abs(x0[i]) <= plant.l_bar()[i])) return false;
    return true;
}

}  // namespace ncsim
