#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "rmtlab/error.hpp"

namespace rmtlab {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
/// Real coordinates X_alpha of a matrix in the orthonormal basis of its space.
using CoordinateVector = Eigen::VectorXd;

enum class SpaceKind {
    GeneralComplex,
    GeneralReal,
    SymmetricReal,
    HermitianComplex,
    AntisymmetricReal,
    AntihermitianComplex,
};

inline constexpr std::array<SpaceKind, 6> kAllSpaceKinds{
    SpaceKind::GeneralComplex,    SpaceKind::GeneralReal,       SpaceKind::SymmetricReal,
    SpaceKind::HermitianComplex,  SpaceKind::AntisymmetricReal, SpaceKind::AntihermitianComplex,
};

inline std::string_view to_tag(SpaceKind kind) {
    switch (kind) {
    case SpaceKind::GeneralComplex: return "gl_c";
    case SpaceKind::GeneralReal: return "gl_r";
    case SpaceKind::SymmetricReal: return "sym_r";
    case SpaceKind::HermitianComplex: return "herm_c";
    case SpaceKind::AntisymmetricReal: return "asym_r";
    case SpaceKind::AntihermitianComplex: return "antiherm_c";
    }
    return "?";
}

inline SpaceKind space_kind_from_tag(std::string_view tag) {
    for (SpaceKind kind : kAllSpaceKinds) {
        if (to_tag(kind) == tag) return kind;
    }
    throw SchemaError("unknown space tag '" + std::string(tag) + "'");
}

inline bool is_real_kind(SpaceKind kind) {
    return kind == SpaceKind::GeneralReal || kind == SpaceKind::SymmetricReal ||
           kind == SpaceKind::AntisymmetricReal;
}

/// Real dimension of the subspace of n x n matrices.
inline std::size_t space_dimension(SpaceKind kind, int n) {
    const auto nn = static_cast<std::size_t>(n);
    switch (kind) {
    case SpaceKind::GeneralComplex: return 2 * nn * nn;
    case SpaceKind::GeneralReal: return nn * nn;
    case SpaceKind::SymmetricReal: return nn * (nn + 1) / 2;
    case SpaceKind::HermitianComplex: return nn * nn;
    case SpaceKind::AntisymmetricReal: return nn * (nn - 1) / 2;
    case SpaceKind::AntihermitianComplex: return nn * nn;
    }
    return 0;
}

/// Which of the table's matrix families a basis element belongs to.
enum class BasisForm { E, iE, F, G, iF, iG };

inline std::string_view to_string(BasisForm form) {
    switch (form) {
    case BasisForm::E: return "E";
    case BasisForm::iE: return "iE";
    case BasisForm::F: return "F";
    case BasisForm::G: return "G";
    case BasisForm::iF: return "iF";
    case BasisForm::iG: return "iG";
    }
    return "?";
}

struct BasisEntry {
    int row = 0;
    int col = 0;
    Complex value;
};

/// Sparse basis matrix with one or two nonzero entries.
struct BasisElement {
    BasisForm form = BasisForm::E;
    int j = 0; // zero-based indices of the generating pair
    int k = 0;
    std::array<BasisEntry, 2> entries{};
    int size = 0;

    [[nodiscard]] Matrix dense(int n) const {
        Matrix m = Matrix::Zero(n, n);
        for (int e = 0; e < size; ++e) m(entries[e].row, entries[e].col) += entries[e].value;
        return m;
    }

    /// tr(M B) for a dense M.
    [[nodiscard]] Complex trace_product(const Matrix& m) const {
        Complex t{0.0, 0.0};
        for (int e = 0; e < size; ++e) t += m(entries[e].col, entries[e].row) * entries[e].value;
        return t;
    }

    /// Re tr(M B*), the coordinate of M along this element.
    [[nodiscard]] double coordinate_of(const Matrix& m) const {
        double c = 0.0;
        for (int e = 0; e < size; ++e) c += (m(entries[e].row, entries[e].col) * std::conj(entries[e].value)).real();
        return c;
    }

    [[nodiscard]] std::string label() const {
        std::string s(to_string(form));
        s += '_';
        s += std::to_string(j + 1);
        s += std::to_string(k + 1);
        return s;
    }
};

namespace detail {

inline BasisElement make_single(BasisForm form, int j, int k, Complex v) {
    BasisElement b;
    b.form = form;
    b.j = j;
    b.k = k;
    b.entries[0] = {j, k, v};
    b.size = 1;
    return b;
}

inline BasisElement make_pair(BasisForm form, int j, int k, Complex v_jk, Complex v_kj) {
    BasisElement b;
    b.form = form;
    b.j = j;
    b.k = k;
    b.entries[0] = {j, k, v_jk};
    b.entries[1] = {k, j, v_kj};
    b.size = 2;
    return b;
}

} // namespace detail

/// One of the six matrix subspaces with its canonical orthonormal basis.
///
/// Basis order: diagonal elements first (real copies, then imaginary), then the
/// off-diagonal families in table order, each enumerated lexicographically in (j, k).
class MatrixSpace {
public:
    MatrixSpace(SpaceKind kind, int n) : kind_(kind), n_(n) {
        if (n < 2) throw InvalidDimensionError("matrix side must be at least 2, got " + std::to_string(n));
        build_basis();
    }

    [[nodiscard]] SpaceKind kind() const { return kind_; }
    [[nodiscard]] int n() const { return n_; }
    [[nodiscard]] std::size_t dimension() const { return basis_.size(); }
    [[nodiscard]] const std::vector<BasisElement>& basis() const { return basis_; }
    [[nodiscard]] const BasisElement& basis_element(std::size_t alpha) const { return basis_.at(alpha); }

    [[nodiscard]] Matrix embed(const CoordinateVector& coords) const {
        if (static_cast<std::size_t>(coords.size()) != basis_.size()) {
            throw ShapeMismatchError("coordinate vector has length " + std::to_string(coords.size()) +
                                     ", space dimension is " + std::to_string(basis_.size()));
        }
        Matrix m = Matrix::Zero(n_, n_);
        for (std::size_t a = 0; a < basis_.size(); ++a) {
            const BasisElement& b = basis_[a];
            const double x = coords[static_cast<Eigen::Index>(a)];
            for (int e = 0; e < b.size; ++e) m(b.entries[e].row, b.entries[e].col) += x * b.entries[e].value;
        }
        return m;
    }

    /// Coordinates of M; throws NotInSubspaceError when the component of M
    /// orthogonal to the space exceeds tolerance * ||M||.
    [[nodiscard]] CoordinateVector extract(const Matrix& m, double tolerance = 1e-9) const {
        check_square(m);
        CoordinateVector c(static_cast<Eigen::Index>(basis_.size()));
        for (std::size_t a = 0; a < basis_.size(); ++a) c[static_cast<Eigen::Index>(a)] = basis_[a].coordinate_of(m);
        const double residual = (m - embed(c)).norm();
        if (residual > tolerance * m.norm()) {
            throw NotInSubspaceError("matrix has a component of norm " + std::to_string(residual) +
                                     " outside " + std::string(to_tag(kind_)));
        }
        return c;
    }

    /// Norm of the component of M orthogonal to the space.
    [[nodiscard]] double distance_to_space(const Matrix& m) const {
        check_square(m);
        CoordinateVector c(static_cast<Eigen::Index>(basis_.size()));
        for (std::size_t a = 0; a < basis_.size(); ++a) c[static_cast<Eigen::Index>(a)] = basis_[a].coordinate_of(m);
        return (m - embed(c)).norm();
    }

    /// Sum over the basis of B_alpha A B_alpha, by direct summation.
    [[nodiscard]] Matrix channel_sum(const Matrix& a) const {
        check_square(a);
        Matrix out = Matrix::Zero(n_, n_);
        // B A B = sum_{e,f} v_e v_f A(c_e, r_f) E_{r_e c_f}
        for (const BasisElement& b : basis_) {
            for (int e = 0; e < b.size; ++e) {
                for (int f = 0; f < b.size; ++f) {
                    const BasisEntry& x = b.entries[e];
                    const BasisEntry& y = b.entries[f];
                    out(x.row, y.col) += x.value * y.value * a(x.col, y.row);
                }
            }
        }
        return out;
    }

private:
    void check_square(const Matrix& m) const {
        if (m.rows() != n_ || m.cols() != n_) {
            throw ShapeMismatchError("expected a " + std::to_string(n_) + "x" + std::to_string(n_) + " matrix");
        }
    }

    void build_basis() {
        using detail::make_pair;
        using detail::make_single;
        const Complex one{1.0, 0.0};
        const Complex im{0.0, 1.0};
        const double h = 1.0 / std::sqrt(2.0);

        auto add_diagonal = [&](BasisForm form, Complex v) {
            for (int j = 0; j < n_; ++j) basis_.push_back(make_single(form, j, j, v));
        };
        auto add_offdiagonal_general = [&](BasisForm form, Complex v) {
            for (int j = 0; j < n_; ++j)
                for (int k = 0; k < n_; ++k)
                    if (j != k) basis_.push_back(make_single(form, j, k, v));
        };
        auto add_pairs = [&](BasisForm form, Complex v_jk, Complex v_kj) {
            for (int j = 0; j < n_; ++j)
                for (int k = j + 1; k < n_; ++k) basis_.push_back(make_pair(form, j, k, v_jk, v_kj));
        };

        switch (kind_) {
        case SpaceKind::GeneralComplex:
            add_diagonal(BasisForm::E, one);
            add_diagonal(BasisForm::iE, im);
            add_offdiagonal_general(BasisForm::E, one);
            add_offdiagonal_general(BasisForm::iE, im);
            break;
        case SpaceKind::GeneralReal:
            add_diagonal(BasisForm::E, one);
            add_offdiagonal_general(BasisForm::E, one);
            break;
        case SpaceKind::SymmetricReal:
            add_diagonal(BasisForm::E, one);
            add_pairs(BasisForm::F, h * one, h * one);
            break;
        case SpaceKind::HermitianComplex:
            add_diagonal(BasisForm::E, one);
            add_pairs(BasisForm::F, h * one, h * one);
            add_pairs(BasisForm::iG, h * im, -h * im);
            break;
        case SpaceKind::AntisymmetricReal:
            add_pairs(BasisForm::G, h * one, -h * one);
            break;
        case SpaceKind::AntihermitianComplex:
            add_diagonal(BasisForm::iE, im);
            add_pairs(BasisForm::G, h * one, -h * one);
            add_pairs(BasisForm::iF, h * im, h * im);
            break;
        }
    }

    SpaceKind kind_;
    int n_;
    std::vector<BasisElement> basis_;
};

inline MatrixSpace build_space(SpaceKind kind, int n) { return MatrixSpace(kind, n); }

/// Real Hilbert-Schmidt inner product Re tr(A B*).
inline double inner_product(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeMismatchError("inner_product: shape mismatch");
    return (a.array() * b.array().conjugate()).sum().real();
}

inline double hs_norm(const Matrix& a) { return a.norm(); }

inline double hs_norm_squared(const Matrix& a) { return a.squaredNorm(); }

} // namespace rmtlab
