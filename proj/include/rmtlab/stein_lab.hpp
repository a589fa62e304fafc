#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rmtlab/ensembles.hpp"
#include "rmtlab/error.hpp"
#include "rmtlab/matrix_spaces.hpp"
#include "rmtlab/stats.hpp"
#include "rmtlab/trace_stats.hpp"

namespace rmtlab {

/// One exchangeable-pair draw: X, the frame K, epsilon and the rotated X_eps.
struct PairSample {
    Matrix x;
    TwoFrame frame;
    double epsilon = 0.0;
    Matrix x_eps;
    CoordinateVector coords;
    CoordinateVector coords_eps;
};

/// c + eps Q c + (sqrt(1 - eps^2) - 1) K K^T c with Q = K C K^T, C = [[0, 1], [-1, 0]].
inline CoordinateVector rotate_coordinates(const CoordinateVector& c, const TwoFrame& frame, double epsilon) {
    if (frame.K.rows() != c.size()) {
        throw ShapeMismatchError("frame dimension " + std::to_string(frame.K.rows()) +
                                 " does not match coordinate dimension " + std::to_string(c.size()));
    }
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ValidationError("epsilon must lie in [0, 1)");
    const double a = frame.K.col(0).dot(c);
    const double b = frame.K.col(1).dot(c);
    const double shrink = -epsilon * epsilon / (1.0 + std::sqrt(1.0 - epsilon * epsilon));
    return c + (epsilon * b + shrink * a) * frame.K.col(0) + (shrink * b - epsilon * a) * frame.K.col(1);
}

inline PairSample rotate_pair(const MatrixSpace& space, const Matrix& x, const TwoFrame& frame, double epsilon) {
    if (frame.K.rows() != static_cast<Eigen::Index>(space.dimension())) {
        throw ShapeMismatchError("frame dimension does not match the space dimension");
    }
    PairSample s;
    s.x = x;
    s.frame = frame;
    s.epsilon = epsilon;
    s.coords = space.extract(x);
    s.coords_eps = rotate_coordinates(s.coords, frame, epsilon);
    s.x_eps = space.embed(s.coords_eps);
    return s;
}

namespace detail {

/// X^0 .. X^m.
inline std::vector<Matrix> matrix_powers(const Matrix& x, int m) {
    std::vector<Matrix> pw;
    pw.reserve(static_cast<std::size_t>(m) + 1);
    pw.push_back(Matrix::Identity(x.rows(), x.cols()));
    for (int p = 1; p <= m; ++p) pw.push_back(pw.back() * x);
    return pw;
}

/// tr(A B) without forming the product.
inline Complex trace_of_product(const Matrix& a, const Matrix& b) { return (a.array() * b.transpose().array()).sum(); }

inline double pair_scale(std::size_t d) {
    const double dd = static_cast<double>(d);
    return 1.0 / (dd * (dd - 1.0));
}

inline bool has_specialized_form(SpaceKind kind) {
    return kind == SpaceKind::GeneralComplex || kind == SpaceKind::GeneralReal ||
           kind == SpaceKind::HermitianComplex || kind == SpaceKind::SymmetricReal;
}

} // namespace detail

/// lim eps^{-2} E[W_{eps,p} - W_p | X], summed over the basis channel.
inline Complex drift_generic(const MatrixSpace& space, const Matrix& x, int p) {
    if (p < 1) throw ValidationError("drift needs p >= 1");
    const auto pw = detail::matrix_powers(x, p);
    const double s = detail::pair_scale(space.dimension());
    const double d = static_cast<double>(space.dimension());
    const double norm2 = x.squaredNorm();
    Complex acc{0.0, 0.0};
    for (int l = 0; l <= p - 2; ++l) {
        const Matrix ch = space.channel_sum(pw[static_cast<std::size_t>(p - 2 - l)]);
        acc += 2.0 * (l + 1) * norm2 * s * detail::trace_of_product(pw[static_cast<std::size_t>(l)], ch);
    }
    return acc - p * (p + d - 2.0) * s * pw[static_cast<std::size_t>(p)].trace();
}

/// Space-specific drift identity; empty for kinds without one.
inline std::optional<Complex> drift_specialized(const MatrixSpace& space, const Matrix& x, int p) {
    if (p < 1) throw ValidationError("drift needs p >= 1");
    if (!detail::has_specialized_form(space.kind())) return std::nullopt;
    const auto pw = detail::matrix_powers(x, p);
    const double s = detail::pair_scale(space.dimension());
    const double d = static_cast<double>(space.dimension());
    auto w = [&](int k) -> Complex { return pw[static_cast<std::size_t>(k)].trace(); };
    const Complex wp = w(p);
    const Complex decay = p * (p + d - 2.0) * s * wp;
    switch (space.kind()) {
    case SpaceKind::GeneralComplex:
        return -decay;
    case SpaceKind::GeneralReal: {
        Complex sum{0.0, 0.0};
        for (int l = 0; l <= p - 2; ++l) {
            sum += detail::trace_of_product(pw[static_cast<std::size_t>(l)],
                                            pw[static_cast<std::size_t>(p - 2 - l)].transpose());
        }
        return x.squaredNorm() * p * s * sum - decay;
    }
    case SpaceKind::HermitianComplex: {
        Complex sum{0.0, 0.0};
        for (int l = 0; l <= p - 2; ++l) sum += w(l) * w(p - 2 - l);
        // W_2 = ||X||^2 for Hermitian X
        return static_cast<double>(p) * s * x.squaredNorm() * sum - decay;
    }
    case SpaceKind::SymmetricReal: {
        Complex sum{0.0, 0.0};
        for (int l = 0; l <= p - 2; ++l) sum += w(l) * w(p - 2 - l);
        const Complex w2 = x.squaredNorm();
        const Complex lead = p >= 2 ? (p - 1.0) * w2 * w(p - 2) : Complex{};
        return 0.5 * p * s * (lead + w2 * sum - 2.0 * (p + d - 2.0) * wp);
    }
    default:
        return std::nullopt;
    }
}

/// lim eps^{-2} E[(W_eps - W)_p (W_eps - W)_q^(*) | X] via basis sums;
/// the second factor is conjugated when `conjugated` is set.
inline Complex quadratic_generic(const MatrixSpace& space, const Matrix& x, int p, int q, bool conjugated) {
    if (p < 1 || q < 1) throw ValidationError("quadratic form needs p, q >= 1");
    const auto pw = detail::matrix_powers(x, std::max(p, q));
    const Matrix& ap = pw[static_cast<std::size_t>(p - 1)];
    const Matrix& aq = pw[static_cast<std::size_t>(q - 1)];
    const CoordinateVector c = space.extract(x);
    Complex diag{0.0, 0.0};
    Complex lin_p{0.0, 0.0};
    Complex lin_q{0.0, 0.0};
    for (std::size_t a = 0; a < space.dimension(); ++a) {
        const BasisElement& b = space.basis_element(a);
        const Complex tp = b.trace_product(ap);
        Complex tq = b.trace_product(aq);
        if (conjugated) tq = std::conj(tq);
        diag += tp * tq;
        lin_p += c[static_cast<Eigen::Index>(a)] * tp;
        lin_q += c[static_cast<Eigen::Index>(a)] * tq;
    }
    const double s = detail::pair_scale(space.dimension());
    return 2.0 * p * q * s * (x.squaredNorm() * diag - lin_p * lin_q);
}

/// Space-specific quadratic identity; empty for kinds without one.
inline std::optional<Complex> quadratic_specialized(const MatrixSpace& space, const Matrix& x, int p, int q,
                                                    bool conjugated) {
    if (p < 1 || q < 1) throw ValidationError("quadratic form needs p, q >= 1");
    if (!detail::has_specialized_form(space.kind())) return std::nullopt;
    const auto pw = detail::matrix_powers(x, std::max(p, q));
    const double s = 2.0 * p * q * detail::pair_scale(space.dimension());
    const Complex wp = pw[static_cast<std::size_t>(p)].trace();
    Complex wq = pw[static_cast<std::size_t>(q)].trace();
    if (conjugated) wq = std::conj(wq);
    const double norm2 = x.squaredNorm();
    const Matrix& ap = pw[static_cast<std::size_t>(p - 1)];
    const Matrix& aq = pw[static_cast<std::size_t>(q - 1)];
    switch (space.kind()) {
    case SpaceKind::GeneralComplex:
        if (!conjugated) return -s * wp * wq;
        return s * (2.0 * norm2 * detail::trace_of_product(ap, aq.adjoint()) - wp * wq);
    case SpaceKind::GeneralReal:
        return s * (norm2 * detail::trace_of_product(ap.transpose(), aq) - wp * wq);
    case SpaceKind::HermitianComplex:
    case SpaceKind::SymmetricReal:
        return s * (norm2 * detail::trace_of_product(ap, aq) - wp * wq);
    default:
        return std::nullopt;
    }
}

/// Preferred closed form: the specialized identity where one exists.
inline Complex drift_closed_form(const MatrixSpace& space, const Matrix& x, int p) {
    if (auto v = drift_specialized(space, x, p)) return *v;
    return drift_generic(space, x, p);
}

inline Complex quadratic_closed_form(const MatrixSpace& space, const Matrix& x, int p, int q, bool conjugated) {
    if (auto v = quadratic_specialized(space, x, p, q, conjugated)) return *v;
    return quadratic_generic(space, x, p, q, conjugated);
}

struct LimitRow {
    std::string name;
    Complex estimate;
    double se_real = 0.0;
    double se_imag = 0.0;
    Complex theory;
    Complex residual; // difference of the two first-stage extrapolants
    bool pass = false;
};

struct LimitReport {
    SpaceKind kind = SpaceKind::HermitianComplex;
    int n = 0;
    int m = 0;
    std::size_t trials = 0;
    std::vector<double> epsilons;
    std::vector<LimitRow> rows;
    std::vector<double> cube_mean; // E |W_eps - W|^3 / eps^2 per epsilon
    std::vector<double> cube_se;
    std::vector<double> cube_slopes; // log-log slopes between consecutive epsilons
    bool cube_linear = false;

    [[nodiscard]] bool all_rows_pass() const {
        for (const auto& r : rows)
            if (!r.pass) return false;
        return true;
    }
    [[nodiscard]] std::size_t failures() const {
        std::size_t f = 0;
        for (const auto& r : rows) f += r.pass ? 0 : 1;
        return f;
    }
};

inline const std::vector<double> kDefaultEpsilonSchedule{1e-2, 5e-3, 2.5e-3};

/// Tolerance on the cube-term log-log slope around 1.
inline constexpr double kCubeSlopeTolerance = 0.1;

/// E|W_eps - W|^3 / eps^2 = O(eps): every step decreases at least linearly,
/// and the finest step, where the eps^2 correction is smallest, is linear.
inline bool cube_slope_ok(double slope, bool finest) {
    if (finest) return std::abs(slope - 1.0) <= kCubeSlopeTolerance;
    return slope >= 1.0 - kCubeSlopeTolerance;
}

/// |estimate - theory| <= 3 SE + floor per real component; the floor absorbs roundoff.
inline bool within_three_se(Complex estimate, double se_real, double se_imag, Complex theory, double floor) {
    return std::abs(estimate.real() - theory.real()) <= 3.0 * se_real + floor &&
           std::abs(estimate.imag() - theory.imag()) <= 3.0 * se_imag + floor;
}

/// Monte Carlo over K of the conditional epsilon^2 coefficients at a fixed X.
///
/// Each draw uses the antithetic pair (K, eps) and (K, -eps); the second is a
/// column swap of K and so has the same law. Per-draw values at the three
/// epsilons are combined by two-stage Richardson extrapolation in eps, so the
/// standard error already includes the extrapolation weights.
inline LimitReport empirical_limits(const MatrixSpace& space, const Matrix& x, int m,
                                    const std::vector<double>& epsilons, std::size_t trials,
                                    std::uint64_t master_seed, unsigned workers = 1) {
    if (m < 1) throw ValidationError("empirical_limits needs m >= 1");
    if (epsilons.size() != 3) throw ValidationError("epsilon schedule must have three geometric steps");
    for (std::size_t e = 0; e < epsilons.size(); ++e) {
        if (!(epsilons[e] > 0.0 && epsilons[e] < 1.0)) throw ValidationError("epsilon must lie in (0, 1)");
        if (e > 0 && std::abs(epsilons[e - 1] / epsilons[e] - 2.0) > 1e-12) {
            throw ValidationError("epsilon schedule must halve at every step");
        }
    }
    if (trials < 2) throw ValidationError("empirical_limits needs at least 2 trials for a standard error");

    const CoordinateVector c = space.extract(x);
    const TraceVector w0 = trace_powers(x, m);
    const int d = static_cast<int>(space.dimension());

    struct Quantity {
        int kind; // 0 drift, 1 conjugated, 2 unconjugated
        int p;
        int q;
    };
    std::vector<Quantity> quantities;
    for (int p = 1; p <= m; ++p) quantities.push_back({0, p, 0});
    for (int k = 1; k <= 2; ++k)
        for (int p = 1; p <= m; ++p)
            for (int q = p; q <= m; ++q) quantities.push_back({k, p, q});
    const std::size_t nq = quantities.size();
    const std::size_t ne = epsilons.size();
    // Layout: [R2 re, R2 im, residual re, residual im] per quantity, then cube per epsilon.
    const std::size_t components = 4 * nq + ne;

    const auto acc = accumulate_trials(trials, workers, components, [&](std::size_t t, std::vector<double>& out) {
        const TwoFrame frame = haar_two_frame(d, master_seed, t);
        std::vector<std::vector<Complex>> f(ne, std::vector<Complex>(nq));
        for (std::size_t e = 0; e < ne; ++e) {
            const double eps = epsilons[e];
            std::array<std::vector<Complex>, 2> delta;
            double cube = 0.0;
            for (int side = 0; side < 2; ++side) {
                TwoFrame k = frame;
                if (side == 1) k.K.col(0).swap(k.K.col(1));
                const TraceVector we = trace_powers(space.embed(rotate_coordinates(c, k, eps)), m);
                delta[side].resize(static_cast<std::size_t>(m));
                double sq = 0.0;
                for (int p = 1; p <= m; ++p) {
                    const Complex dp = we(p) - w0(p);
                    delta[side][static_cast<std::size_t>(p - 1)] = dp;
                    sq += std::norm(dp);
                }
                cube += std::pow(sq, 1.5);
            }
            const double inv = 1.0 / (2.0 * eps * eps);
            for (std::size_t i = 0; i < nq; ++i) {
                const Quantity& qd = quantities[i];
                const auto ip = static_cast<std::size_t>(qd.p - 1);
                Complex v{0.0, 0.0};
                if (qd.kind == 0) {
                    v = delta[0][ip] + delta[1][ip];
                } else {
                    const auto iq = static_cast<std::size_t>(qd.q - 1);
                    for (int side = 0; side < 2; ++side) {
                        const Complex b = qd.kind == 1 ? std::conj(delta[side][iq]) : delta[side][iq];
                        v += delta[side][ip] * b;
                    }
                }
                f[e][i] = v * inv;
            }
            out[4 * nq + e] = cube * inv;
        }
        for (std::size_t i = 0; i < nq; ++i) {
            const Complex r1a = 2.0 * f[1][i] - f[0][i];
            const Complex r1b = 2.0 * f[2][i] - f[1][i];
            const Complex r2 = (4.0 * r1b - r1a) / 3.0;
            const Complex res = r1b - r1a;
            out[4 * i] = r2.real();
            out[4 * i + 1] = r2.imag();
            out[4 * i + 2] = res.real();
            out[4 * i + 3] = res.imag();
        }
    });

    // Cancellation in W_eps - W leaves an absolute error of order u |W| / eps^2,
    // amplified by the Richardson weights.
    double trace_scale = 1.0;
    for (int p = 1; p <= m; ++p) trace_scale += std::abs(w0(p));
    const double roundoff_floor = 1e-13 * trace_scale / (epsilons.back() * epsilons.back());

    LimitReport report;
    report.kind = space.kind();
    report.n = space.n();
    report.m = m;
    report.trials = trials;
    report.epsilons = epsilons;
    for (std::size_t i = 0; i < nq; ++i) {
        const Quantity& qd = quantities[i];
        LimitRow row;
        if (qd.kind == 0) {
            row.name = "drift[" + std::to_string(qd.p) + "]";
            row.theory = drift_closed_form(space, x, qd.p);
        } else {
            const bool conj = qd.kind == 1;
            row.name = std::string(conj ? "quad_conj[" : "quad_unconj[") + std::to_string(qd.p) + "," +
                       std::to_string(qd.q) + "]";
            row.theory = quadratic_closed_form(space, x, qd.p, qd.q, conj);
        }
        row.estimate = {acc.mean(4 * i), acc.mean(4 * i + 1)};
        row.se_real = acc.standard_error(4 * i);
        row.se_imag = acc.standard_error(4 * i + 1);
        row.residual = {acc.mean(4 * i + 2), acc.mean(4 * i + 3)};
        row.pass = within_three_se(row.estimate, row.se_real, row.se_imag, row.theory, roundoff_floor);
        report.rows.push_back(std::move(row));
    }
    for (std::size_t e = 0; e < ne; ++e) {
        report.cube_mean.push_back(acc.mean(4 * nq + e));
        report.cube_se.push_back(acc.standard_error(4 * nq + e));
    }
    report.cube_linear = true;
    for (std::size_t e = 1; e < ne; ++e) {
        const double slope = std::log(report.cube_mean[e - 1] / report.cube_mean[e]) /
                             std::log(epsilons[e - 1] / epsilons[e]);
        report.cube_slopes.push_back(slope);
        if (!cube_slope_ok(slope, e + 1 == ne)) report.cube_linear = false;
    }
    return report;
}

struct MomentCheckRow {
    std::string name;
    double estimate = 0.0;
    double standard_error = 0.0;
    double theory = 0.0;
    bool pass = false;
};

struct QCovarianceReport {
    int d = 0;
    std::size_t trials = 0;
    std::vector<MomentCheckRow> rows;
    double max_abs_deviation = 0.0;
    double max_z = 0.0;

    [[nodiscard]] bool all_pass() const {
        for (const auto& r : rows)
            if (!r.pass) return false;
        return true;
    }
};

/// The 15 set partitions of four index slots, as restricted growth strings.
inline std::vector<std::array<int, 4>> index_patterns() {
    std::vector<std::array<int, 4>> out;
    for (int b = 0; b <= 1; ++b)
        for (int c = 0; c <= std::max(b, 0) + 1; ++c)
            for (int e = 0; e <= std::max(b, c) + 1; ++e) out.push_back({0, b, c, e});
    return out;
}

/// Empirical E[q_ab q_cd] over Haar two-frames for every index pattern, plus
/// the diagonal and off-diagonal entries of E[K K^T].
inline QCovarianceReport q_covariance_check(int d, std::size_t trials, std::uint64_t master_seed,
                                            unsigned workers = 1) {
    if (d < 4) throw InvalidDimensionError("q_covariance_check needs d >= 4 to realise every pattern");
    if (trials < 2) throw ValidationError("q_covariance_check needs at least 2 trials");
    const auto patterns = index_patterns();
    const std::size_t np = patterns.size();
    const auto acc = accumulate_trials(trials, workers, np + 2, [&](std::size_t t, std::vector<double>& out) {
        const TwoFrame f = haar_two_frame(d, master_seed, t);
        auto q = [&](int a, int b) { return f.K(a, 0) * f.K(b, 1) - f.K(a, 1) * f.K(b, 0); };
        for (std::size_t i = 0; i < np; ++i) {
            const auto& pt = patterns[i];
            out[i] = q(pt[0], pt[1]) * q(pt[2], pt[3]);
        }
        out[np] = f.K(0, 0) * f.K(0, 0) + f.K(0, 1) * f.K(0, 1);
        out[np + 1] = f.K(0, 0) * f.K(1, 0) + f.K(0, 1) * f.K(1, 1);
    });
    QCovarianceReport rep;
    rep.d = d;
    rep.trials = trials;
    const double scale = 2.0 / (static_cast<double>(d) * (d - 1.0));
    auto add_row = [&](std::string name, std::size_t comp, double theory) {
        MomentCheckRow row{std::move(name), acc.mean(comp), acc.standard_error(comp), theory, false};
        const double dev = std::abs(row.estimate - row.theory);
        row.pass = dev <= 3.0 * row.standard_error + 1e-12;
        rep.max_abs_deviation = std::max(rep.max_abs_deviation, dev);
        // rows that vanish identically only carry roundoff; leave them out of max_z
        if (row.standard_error > 0.0 && dev > 1e-12) rep.max_z = std::max(rep.max_z, dev / row.standard_error);
        rep.rows.push_back(std::move(row));
    };
    for (std::size_t i = 0; i < np; ++i) {
        const auto& pt = patterns[i];
        const double theory = scale * ((pt[0] == pt[2] && pt[1] == pt[3] ? 1.0 : 0.0) -
                                       (pt[0] == pt[3] && pt[1] == pt[2] ? 1.0 : 0.0));
        std::string name = "E[q";
        for (int j = 0; j < 4; ++j) {
            name += std::to_string(pt[static_cast<std::size_t>(j)] + 1);
            if (j == 1) name += " q";
        }
        add_row(name + "]", i, theory);
    }
    add_row("E[KK^T]11", np, 2.0 / d);
    add_row("E[KK^T]12", np + 1, 0.0);
    return rep;
}

} // namespace rmtlab
