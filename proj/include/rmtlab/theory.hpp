#pragma once

#include <algorithm>
#include <complex>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "rmtlab/error.hpp"
#include "rmtlab/matrix_spaces.hpp"
#include "rmtlab/trace_stats.hpp"

namespace rmtlab {

using Integer = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

inline std::string to_string(const Rational& r) {
    std::string s = boost::multiprecision::numerator(r).str();
    const Integer den = boost::multiprecision::denominator(r);
    if (den != 1) s += "/" + den.str();
    return s;
}

/// Parses "a", "-a" or "a/b".
inline Rational parse_rational(std::string_view text) {
    const auto slash = text.find('/');
    try {
        if (slash == std::string_view::npos) return Rational(Integer(std::string(text)));
        const Integer num(std::string(text.substr(0, slash)));
        const Integer den(std::string(text.substr(slash + 1)));
        if (den == 0) throw ValidationError("zero denominator in '" + std::string(text) + "'");
        return Rational(num, den);
    } catch (const std::runtime_error&) {
        throw ValidationError("not a rational number: '" + std::string(text) + "'");
    }
}

inline double to_double(const Rational& r) { return r.convert_to<double>(); }

/// Dense matrix of exact rationals.
class RationalMatrix {
public:
    RationalMatrix() = default;
    RationalMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

    [[nodiscard]] std::size_t rows() const { return rows_; }
    [[nodiscard]] std::size_t cols() const { return cols_; }
    Rational& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    [[nodiscard]] const Rational& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    [[nodiscard]] bool is_symmetric() const {
        if (rows_ != cols_) return false;
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = i + 1; j < cols_; ++j)
                if ((*this)(i, j) != (*this)(j, i)) return false;
        return true;
    }

    [[nodiscard]] Eigen::MatrixXd to_double() const {
        Eigen::MatrixXd m(rows_, cols_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rmtlab::to_double((*this)(i, j));
        return m;
    }

    friend RationalMatrix operator*(const RationalMatrix& a, const RationalMatrix& b) {
        RationalMatrix c(a.rows_, b.cols_);
        for (std::size_t i = 0; i < a.rows_; ++i)
            for (std::size_t k = 0; k < a.cols_; ++k) {
                if (a(i, k) == 0) continue;
                for (std::size_t j = 0; j < b.cols_; ++j) c(i, j) += a(i, k) * b(k, j);
            }
        return c;
    }

    friend bool operator==(const RationalMatrix&, const RationalMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<Rational> data_;
};

inline constexpr int kMaxCatalanIndex = 30;

/// C_r = binom(2r, r) / (r + 1), exact for r <= 30.
inline std::uint64_t catalan(int r) {
    if (r < 0) throw ValidationError("Catalan index must be nonnegative");
    if (r > kMaxCatalanIndex) throw SizeLimitError("Catalan index " + std::to_string(r) + " exceeds 30");
    Integer binom = 1;
    for (int i = 1; i <= r; ++i) binom = binom * (r + i) / i;
    return static_cast<std::uint64_t>(binom / (r + 1));
}

struct CatalanTable {
    std::vector<std::uint64_t> values; // C_0..C_max

    static CatalanTable build(int max_r) {
        CatalanTable t;
        for (int r = 0; r <= max_r; ++r) t.values.push_back(catalan(r));
        return t;
    }

    /// C_r = sum_{k<r} C_k C_{r-1-k}, checked in exact arithmetic.
    [[nodiscard]] bool recurrence_holds() const {
        if (values.empty() || values[0] != 1) return false;
        for (std::size_t r = 1; r < values.size(); ++r) {
            Integer s = 0;
            for (std::size_t k = 0; k < r; ++k) s += Integer(values[k]) * values[r - 1 - k];
            if (s != values[r]) return false;
        }
        return true;
    }
};

/// Leading-order E W_p for p = 1..m.
struct MeanPrediction {
    SpaceKind kind = SpaceKind::HermitianComplex;
    int n = 0;
    std::vector<double> mu; // mu[p - 1]

    [[nodiscard]] double operator()(int p) const {
        if (p == 0) return n;
        return mu.at(static_cast<std::size_t>(p - 1));
    }
};

inline MeanPrediction predicted_means(SpaceKind kind, int n, int m) {
    if (n < 2) throw InvalidDimensionError("predicted_means needs n >= 2");
    if (m < 1) throw ValidationError("predicted_means needs m >= 1");
    MeanPrediction pred{kind, n, std::vector<double>(static_cast<std::size_t>(m), 0.0)};
    for (int p = 2; p <= m; p += 2) {
        const int r = p / 2;
        const double c = static_cast<double>(catalan(r));
        const double sign = (r % 2 == 0) ? 1.0 : -1.0;
        double mu = 0.0;
        switch (kind) {
        case SpaceKind::GeneralComplex: mu = 0.0; break;
        case SpaceKind::GeneralReal: mu = 1.0; break;
        case SpaceKind::SymmetricReal:
        case SpaceKind::HermitianComplex: mu = n * c; break;
        case SpaceKind::AntisymmetricReal:
        case SpaceKind::AntihermitianComplex: mu = sign * n * c; break;
        }
        pred.mu[static_cast<std::size_t>(p - 1)] = mu;
    }
    return pred;
}

/// Index set of the limiting covariance for the kind.
inline std::vector<int> covariance_indices(SpaceKind kind, int m) {
    std::vector<int> idx;
    switch (kind) {
    case SpaceKind::GeneralComplex:
    case SpaceKind::GeneralReal:
        for (int p = 1; p <= m; ++p) idx.push_back(p);
        break;
    case SpaceKind::SymmetricReal:
    case SpaceKind::HermitianComplex:
    case SpaceKind::AntihermitianComplex:
        for (int p = 1; p <= m; ++p)
            if (p != 2) idx.push_back(p);
        break;
    case SpaceKind::AntisymmetricReal:
        for (int p = 4; p <= m; p += 2) idx.push_back(p);
        break;
    }
    return idx;
}

inline void validate_trace_count(SpaceKind kind, int m) {
    if (m < 3) throw ValidationError("m must be at least 3, got " + std::to_string(m));
    if (kind == SpaceKind::AntisymmetricReal && (m < 4 || m % 2 != 0)) {
        throw ValidationError("real antisymmetric matrices need an even m >= 4, got " + std::to_string(m));
    }
    if (m > 2 * kMaxCatalanIndex) throw SizeLimitError("m too large for exact Catalan arithmetic");
}

/// Scale applied to B: 1/2 for the Hermitian kinds, 1 otherwise.
inline Rational default_beta_factor(SpaceKind kind) {
    if (kind == SpaceKind::HermitianComplex || kind == SpaceKind::AntihermitianComplex) return Rational(1, 2);
    return Rational(1);
}

/// A, B and Sigma = A^{-1} (beta B) over the kind's index set, exact.
struct CovarianceModel {
    SpaceKind kind = SpaceKind::HermitianComplex;
    int m = 0;
    std::vector<int> indices;
    RationalMatrix a;
    RationalMatrix b; // before beta scaling
    Rational beta_factor{1};
    RationalMatrix sigma;

    [[nodiscard]] std::size_t position(int p) const {
        const auto it = std::find(indices.begin(), indices.end(), p);
        if (it == indices.end()) throw ValidationError("index " + std::to_string(p) + " not in covariance model");
        return static_cast<std::size_t>(it - indices.begin());
    }

    [[nodiscard]] const Rational& sigma_at(int p, int q) const { return sigma(position(p), position(q)); }
};

namespace detail {

inline Rational catalan_q(int r) { return Rational(Integer(catalan(r))); }

/// Solves A X = R for lower-triangular A by forward substitution.
inline RationalMatrix forward_substitute(const RationalMatrix& a, const RationalMatrix& rhs) {
    const std::size_t k = a.rows();
    RationalMatrix x(k, rhs.cols());
    for (std::size_t i = 0; i < k; ++i) {
        if (a(i, i) == 0) throw Error("singular triangular system in covariance model");
        for (std::size_t j = 0; j < rhs.cols(); ++j) {
            Rational acc = rhs(i, j);
            for (std::size_t l = 0; l < i; ++l) acc -= a(i, l) * x(l, j);
            x(i, j) = acc / a(i, i);
        }
    }
    return x;
}

} // namespace detail

inline CovarianceModel covariance_model(SpaceKind kind, int m, std::optional<Rational> beta_factor = std::nullopt) {
    if (kind == SpaceKind::AntihermitianComplex) {
        throw UnsupportedError("anti-Hermitian covariance is transported from the Hermitian model");
    }
    validate_trace_count(kind, m);
    CovarianceModel model;
    model.kind = kind;
    model.m = m;
    model.indices = covariance_indices(kind, m);
    model.beta_factor = beta_factor.value_or(default_beta_factor(kind));
    const std::size_t k = model.indices.size();
    model.a = RationalMatrix(k, k);
    model.b = RationalMatrix(k, k);

    using detail::catalan_q;
    for (std::size_t i = 0; i < k; ++i) {
        const int p = model.indices[i];
        for (std::size_t j = 0; j < k; ++j) {
            const int q = model.indices[j];
            switch (kind) {
            case SpaceKind::GeneralComplex:
            case SpaceKind::GeneralReal:
                model.a(i, j) = (p == q) ? 1 : 0;
                model.b(i, j) = (p == q) ? p : 0;
                break;
            case SpaceKind::SymmetricReal:
            case SpaceKind::HermitianComplex: {
                if (q == p) {
                    model.a(i, j) = p;
                } else if (q <= p - 2 && (p - q) % 2 == 0) {
                    model.a(i, j) = Rational(-2 * p) * catalan_q((p - 2 - q) / 2);
                }
                const bool p_even = p % 2 == 0;
                const bool q_even = q % 2 == 0;
                if (p_even && q_even) {
                    model.b(i, j) = Rational(2 * p * q) * (catalan_q((p + q - 2) / 2) - catalan_q(p / 2) * catalan_q(q / 2));
                } else if (!p_even && !q_even) {
                    model.b(i, j) = Rational(2 * p * q) * catalan_q((p + q - 2) / 2);
                }
                break;
            }
            case SpaceKind::AntisymmetricReal: {
                if (q == p) {
                    model.a(i, j) = 1;
                } else if (q >= 4 && q <= p - 2) {
                    const int sign = ((p - q) / 2) % 2 == 0 ? 1 : -1;
                    model.a(i, j) = Rational(2 * sign) * catalan_q((p - 2 - q) / 2);
                }
                const int sign = ((p + q) / 2) % 2 == 0 ? 1 : -1;
                model.b(i, j) = Rational(sign * q) * (catalan_q((p + q - 2) / 2) - catalan_q(p / 2) * catalan_q(q / 2));
                break;
            }
            case SpaceKind::AntihermitianComplex:
                break;
            }
        }
    }
    RationalMatrix scaled = model.b;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) scaled(i, j) *= model.beta_factor;
    model.sigma = detail::forward_substitute(model.a, scaled);
    return model;
}

struct SigmaCheck {
    bool symmetric = false;
    double min_eigenvalue = 0.0; // smallest real part for a nonsymmetric Sigma
};

inline SigmaCheck check_sigma(const CovarianceModel& model) {
    SigmaCheck check;
    check.symmetric = model.sigma.is_symmetric();
    const Eigen::MatrixXd s = model.sigma.to_double();
    if (check.symmetric) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s, Eigen::EigenvaluesOnly);
        check.min_eigenvalue = solver.eigenvalues().minCoeff();
    } else {
        Eigen::EigenSolver<Eigen::MatrixXd> solver(s, false);
        check.min_eigenvalue = solver.eigenvalues().real().minCoeff();
    }
    return check;
}

/// Limiting covariance E Z_g conj(Z_h) = (1/pi) int_D g' conj(h') d^2z
/// in closed form: sum_p p a_p conj(b_p).
inline Complex corollary_covariance(const PolynomialTestFunction& g, const PolynomialTestFunction& h) {
    Complex s{0.0, 0.0};
    const std::size_t k = std::min(g.coefficients.size(), h.coefficients.size());
    for (std::size_t p = 1; p < k; ++p) s += static_cast<double>(p) * g.coefficients[p] * std::conj(h.coefficients[p]);
    return s;
}

namespace detail {

inline void dump_matrix(std::ostream& os, std::string_view name, const RationalMatrix& m,
                        const std::vector<int>& indices) {
    std::vector<std::string> cells;
    std::size_t width = 1;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) {
            cells.push_back(to_string(m(i, j)));
            width = std::max(width, cells.back().size());
        }
    os << name << ":\n";
    os << std::string(4, ' ');
    for (int q : indices) {
        const std::string h = std::to_string(q);
        os << ' ' << std::string(width - std::min(width, h.size()), ' ') << h;
    }
    os << '\n';
    std::size_t c = 0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const std::string h = std::to_string(indices[i]);
        os << std::string(4 - std::min<std::size_t>(4, h.size()), ' ') << h;
        for (std::size_t j = 0; j < m.cols(); ++j, ++c) {
            os << ' ' << std::string(width - cells[c].size(), ' ') << cells[c];
        }
        os << '\n';
    }
}

} // namespace detail

/// Exact text tables for A, B, beta * B and Sigma.
inline std::string dump_model(const CovarianceModel& model) {
    std::ostringstream os;
    os << "space: " << to_tag(model.kind) << "\n";
    os << "m: " << model.m << "\n";
    os << "beta_factor: " << to_string(model.beta_factor) << "\n";
    os << "indices:";
    for (int p : model.indices) os << ' ' << p;
    os << "\n";
    detail::dump_matrix(os, "A", model.a, model.indices);
    detail::dump_matrix(os, "B", model.b, model.indices);
    detail::dump_matrix(os, "Sigma", model.sigma, model.indices);
    const SigmaCheck check = check_sigma(model);
    os << "sigma_symmetric: " << (check.symmetric ? "true" : "false") << "\n";
    os << "sigma_min_eigenvalue: " << check.min_eigenvalue << "\n";
    return os.str();
}

/// Z_p for p in the kind's covariance index set, plus Y_2 = ||X||^2 - n.
struct CenteredVector {
    std::vector<int> indices;
    std::vector<Complex> z; // z[i] = Z_{indices[i]}
    double y2 = 0.0;
};

/// Removes the predicted mean and the norm-fluctuation direction from W.
/// For the anti-Hermitian kind the Hermitian form is transported by i^p,
/// which is the same expression in the anti-Hermitian means.
inline CenteredVector center_z(const TraceVector& w, const MeanPrediction& means, int n, SpaceKind kind) {
    if (kind == SpaceKind::GeneralComplex || kind == SpaceKind::GeneralReal) {
        throw UnsupportedError("centering with Y_2 applies to the structured kinds only");
    }
    if (means.kind != kind || means.n != n) throw ValidationError("mean prediction built for another (kind, n)");
    if (static_cast<int>(means.mu.size()) < w.m()) throw ValidationError("mean prediction shorter than trace vector");
    CenteredVector c;
    c.indices = covariance_indices(kind, w.m());
    c.y2 = w.norm_squared - n;
    c.z.reserve(c.indices.size());
    for (int p : c.indices) {
        const double mu = means(p);
        double shift = p * mu / (2.0 * n);
        if (kind == SpaceKind::AntisymmetricReal && (p / 2) % 2 == 1) shift = -shift;
        c.z.push_back(w(p) - mu - shift * c.y2);
    }
    return c;
}

} // namespace rmtlab
