#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rmtlab/error.hpp"
#include "rmtlab/matrix_spaces.hpp"

namespace rmtlab {

/// W_p = tr(X^p) for p = 1..m, plus ||X||^2 of the same sample.
struct TraceVector {
    std::vector<Complex> entries; // entries[p - 1] = W_p
    double norm_squared = 0.0;

    [[nodiscard]] int m() const { return static_cast<int>(entries.size()); }
    /// W_p with W_0 = n supplied by the caller when needed.
    [[nodiscard]] Complex operator()(int p) const { return entries.at(static_cast<std::size_t>(p - 1)); }
};

/// Traces of X, X^2, ..., X^m.
///
/// Powers are formed by repeated multiplication up to ceil(m/2); higher traces
/// use tr(X^a X^b) = sum_ij (X^a)_ij (X^b)_ji, so the cost is about (m/2) n^3.
inline TraceVector trace_powers(const Matrix& x, int m) {
    if (m < 1) throw ValidationError("trace_powers needs m >= 1");
    if (x.rows() != x.cols()) throw ShapeMismatchError("trace_powers needs a square matrix");
    TraceVector w;
    w.entries.resize(static_cast<std::size_t>(m));
    w.norm_squared = x.squaredNorm();

    const int half = (m + 1) / 2;
    std::vector<Matrix> powers;
    powers.reserve(static_cast<std::size_t>(half));
    powers.push_back(x);
    for (int p = 2; p <= half; ++p) {
        Matrix next(x.rows(), x.cols());
        next.noalias() = powers.back() * x;
        powers.push_back(std::move(next));
    }
    for (int p = 1; p <= half; ++p) w.entries[static_cast<std::size_t>(p - 1)] = powers[static_cast<std::size_t>(p - 1)].trace();
    const Matrix& top = powers.back();
    for (int p = half + 1; p <= m; ++p) {
        const Matrix& lower = powers[static_cast<std::size_t>(p - half - 1)];
        w.entries[static_cast<std::size_t>(p - 1)] = (top.array() * lower.transpose().array()).sum();
    }
    for (int p = 1; p <= m; ++p) {
        const Complex v = w.entries[static_cast<std::size_t>(p - 1)];
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
            throw NumericOverflowError("tr(X^" + std::to_string(p) + ") is not finite");
        }
    }
    return w;
}

/// Coefficients a_0..a_k of g(z) = sum_j a_j z^j.
struct PolynomialTestFunction {
    std::vector<Complex> coefficients;

    [[nodiscard]] int degree() const {
        for (int j = static_cast<int>(coefficients.size()) - 1; j >= 0; --j) {
            if (coefficients[static_cast<std::size_t>(j)] != Complex{}) return j;
        }
        return 0;
    }

    static PolynomialTestFunction monomial(int p, Complex c = {1.0, 0.0}) {
        PolynomialTestFunction g;
        g.coefficients.assign(static_cast<std::size_t>(p) + 1, Complex{});
        g.coefficients.back() = c;
        return g;
    }
};

/// tr g(X) - n g(0) = sum_{j >= 1} a_j W_j.
inline Complex linear_statistic(const TraceVector& w, const PolynomialTestFunction& g, int /*n*/) {
    if (g.degree() > w.m()) {
        throw DegreeOverflowError("test function of degree " + std::to_string(g.degree()) +
                                  " exceeds trace vector length " + std::to_string(w.m()));
    }
    Complex s{0.0, 0.0};
    for (int j = 1; j <= g.degree(); ++j) s += g.coefficients[static_cast<std::size_t>(j)] * w(j);
    return s;
}

} // namespace rmtlab
