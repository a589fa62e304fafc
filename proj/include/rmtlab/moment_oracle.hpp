#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rmtlab/ensembles.hpp"
#include "rmtlab/error.hpp"
#include "rmtlab/matrix_spaces.hpp"
#include "rmtlab/rng.hpp"
#include "rmtlab/stats.hpp"
#include "rmtlab/theory.hpp"

namespace rmtlab {

/// Default bound on half the total degree of a sphere monomial.
inline constexpr int kMaxMonomialHalfDegree = 12;
inline constexpr int kOracleMaxN = 4;
inline constexpr int kOracleMaxLetters = 6;
inline constexpr std::size_t kOracleMaxCoordinates = 2 * kOracleMaxN * kOracleMaxN;

/// Exponents e_1..e_d of the coordinates u_1..u_d.
using MonomialExponents = std::vector<int>;

/// E prod u_i^{e_i} for u uniform on the unit sphere of R^d:
/// prod (e_i - 1)!! / prod_{j < K} (d + 2j), K = sum e_i / 2; zero if any e_i is odd.
inline Rational sphere_monomial_moment(int d, const MonomialExponents& exps,
                                       int max_half_degree = kMaxMonomialHalfDegree) {
    if (d < 2) throw InvalidDimensionError("sphere moment needs d >= 2");
    if (static_cast<int>(exps.size()) > d) throw ShapeMismatchError("more exponents than coordinates");
    int total = 0;
    for (int e : exps) {
        if (e < 0) throw ValidationError("negative exponent");
        total += e;
    }
    for (int e : exps)
        if (e % 2 != 0) return Rational(0);
    const int k = total / 2;
    if (k > max_half_degree) {
        throw SizeLimitError("monomial half-degree " + std::to_string(k) + " exceeds " + std::to_string(max_half_degree));
    }
    Integer num = 1;
    for (int e : exps)
        for (int j = e - 1; j > 1; j -= 2) num *= j;
    Integer den = 1;
    for (int j = 0; j < k; ++j) den *= d + 2 * j;
    return Rational(num, den);
}

enum class Letter { X, XStar };

/// A word in X and X*, read left to right inside a trace.
struct TraceWord {
    std::vector<Letter> letters;

    [[nodiscard]] std::string text() const {
        std::string s;
        for (Letter l : letters) s += l == Letter::X ? "X" : "X*";
        return s;
    }

    static TraceWord power(int p, Letter l = Letter::X) {
        TraceWord w;
        w.letters.assign(static_cast<std::size_t>(p), l);
        return w;
    }
};

namespace detail {

class WordParser {
public:
    explicit WordParser(std::string_view text) : text_(text) {}

    std::vector<Letter> parse() {
        auto seq = sequence();
        skip_space();
        if (pos_ != text_.size()) fail("unexpected character");
        return seq;
    }

private:
    std::vector<Letter> sequence() {
        std::vector<Letter> out;
        for (;;) {
            skip_space();
            if (pos_ >= text_.size() || text_[pos_] == ')') return out;
            auto f = factor();
            int reps = 1;
            skip_space();
            if (pos_ < text_.size() && text_[pos_] == '^') {
                ++pos_;
                reps = integer();
            }
            for (int r = 0; r < reps; ++r) out.insert(out.end(), f.begin(), f.end());
        }
    }

    std::vector<Letter> factor() {
        const char c = text_[pos_];
        if (c == 'X') {
            ++pos_;
            if (pos_ < text_.size() && text_[pos_] == '*') {
                ++pos_;
                return {Letter::XStar};
            }
            return {Letter::X};
        }
        if (c == '(') {
            ++pos_;
            auto inner = sequence();
            if (pos_ >= text_.size() || text_[pos_] != ')') fail("missing ')'");
            ++pos_;
            if (inner.empty()) fail("empty group");
            return inner;
        }
        fail("expected 'X' or '('");
        return {};
    }

    int integer() {
        skip_space();
        const std::size_t start = pos_;
        while (pos_ < text_.size() && text_[pos_] >= '0' && text_[pos_] <= '9') ++pos_;
        if (start == pos_ || pos_ - start > 3) fail("bad exponent");
        return std::stoi(std::string(text_.substr(start, pos_ - start)));
    }

    void skip_space() {
        while (pos_ < text_.size() && text_[pos_] == ' ') ++pos_;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw ValidationError("trace word '" + std::string(text_) + "': " + what + " at position " +
                              std::to_string(pos_));
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

} // namespace detail

/// Parses words such as "X^2(X*)^2", "XX*X" or "(XX*)^2".
inline TraceWord parse_trace_word(std::string_view text) {
    TraceWord w{detail::WordParser(text).parse()};
    if (w.letters.empty()) throw ValidationError("trace word is empty");
    return w;
}

/// Parses a product of traces separated by ';', e.g. "X^2;X^2".
inline std::vector<TraceWord> parse_trace_product(std::string_view text) {
    std::vector<TraceWord> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t end = text.find(';', start);
        out.push_back(parse_trace_word(text.substr(start, end == std::string_view::npos ? end : end - start)));
        if (end == std::string_view::npos) break;
        start = end + 1;
    }
    return out;
}

/// Exact complex rational.
struct ExactComplex {
    Rational real{0};
    Rational imag{0};

    [[nodiscard]] std::string text() const {
        if (imag == 0) return to_string(real);
        return to_string(real) + (imag < 0 ? " - " : " + ") + to_string(imag < 0 ? Rational(-imag) : imag) + " i";
    }
    [[nodiscard]] Complex to_complex() const { return {to_double(real), to_double(imag)}; }
    friend bool operator==(const ExactComplex&, const ExactComplex&) = default;
};

namespace detail {

using Monomial = std::array<std::uint8_t, kOracleMaxCoordinates>;

struct GaussianCount {
    std::int64_t re = 0;
    std::int64_t im = 0;
};

/// Polynomial in the sphere coordinates whose coefficients are Gaussian
/// integers; the 2^{-1/2} factors of off-diagonal basis elements are implied
/// by the monomial and applied at integration time.
using CoordinatePolynomial = std::map<Monomial, GaussianCount>;

struct LinearTerm {
    int coord;
    GaussianCount unit; // one of 1, i, -1, -i
};

/// entries[letter][i * n + j] lists the coordinate terms of that matrix entry.
struct EntryForms {
    int n = 0;
    std::array<std::vector<std::vector<LinearTerm>>, 2> entries;
    std::vector<bool> half; // coordinate carries a 1/sqrt(2) factor
};

inline GaussianCount unit_of(Complex v) {
    const double mag = std::abs(v);
    return {static_cast<std::int64_t>(std::lround(v.real() / mag)), static_cast<std::int64_t>(std::lround(v.imag() / mag))};
}

inline EntryForms entry_forms(const MatrixSpace& space) {
    EntryForms f;
    const int n = space.n();
    f.n = n;
    for (auto& e : f.entries) e.assign(static_cast<std::size_t>(n * n), {});
    f.half.assign(space.dimension(), false);
    for (std::size_t a = 0; a < space.dimension(); ++a) {
        const BasisElement& b = space.basis_element(a);
        for (int e = 0; e < b.size; ++e) {
            const BasisEntry& x = b.entries[static_cast<std::size_t>(e)];
            f.half[a] = std::abs(x.value) < 0.9;
            const GaussianCount u = unit_of(x.value);
            f.entries[0][static_cast<std::size_t>(x.row * n + x.col)].push_back({static_cast<int>(a), u});
            // (X*)_{col,row} = conj(X_{row,col})
            f.entries[1][static_cast<std::size_t>(x.col * n + x.row)].push_back({static_cast<int>(a), {u.re, -u.im}});
        }
    }
    return f;
}

inline GaussianCount mul(GaussianCount a, GaussianCount b) {
    return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
}

inline void add_to(CoordinatePolynomial& poly, const Monomial& m, GaussianCount c) {
    auto& slot = poly[m];
    slot.re += c.re;
    slot.im += c.im;
}

inline void expand_trace(const EntryForms& f, const TraceWord& word, std::size_t pos, int first, int current,
                         Monomial& mono, GaussianCount coef, CoordinatePolynomial& out) {
    const int n = f.n;
    const std::size_t len = word.letters.size();
    const int letter = word.letters[pos] == Letter::X ? 0 : 1;
    const int lo = pos + 1 == len ? first : 0;
    const int hi = pos + 1 == len ? first + 1 : n;
    for (int next = lo; next < hi; ++next) {
        for (const LinearTerm& t : f.entries[static_cast<std::size_t>(letter)][static_cast<std::size_t>(current * n + next)]) {
            ++mono[static_cast<std::size_t>(t.coord)];
            const GaussianCount c = mul(coef, t.unit);
            if (pos + 1 == len) {
                add_to(out, mono, c);
            } else {
                expand_trace(f, word, pos + 1, first, next, mono, c, out);
            }
            --mono[static_cast<std::size_t>(t.coord)];
        }
    }
}

inline CoordinatePolynomial trace_polynomial(const EntryForms& f, const TraceWord& word) {
    CoordinatePolynomial out;
    Monomial mono{};
    for (int i = 0; i < f.n; ++i) expand_trace(f, word, 0, i, i, mono, {1, 0}, out);
    return out;
}

inline CoordinatePolynomial multiply(const CoordinatePolynomial& a, const CoordinatePolynomial& b) {
    CoordinatePolynomial out;
    for (const auto& [ma, ca] : a) {
        if (ca.re == 0 && ca.im == 0) continue;
        for (const auto& [mb, cb] : b) {
            if (cb.re == 0 && cb.im == 0) continue;
            Monomial m{};
            for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<std::uint8_t>(ma[i] + mb[i]);
            add_to(out, m, mul(ca, cb));
        }
    }
    return out;
}

} // namespace detail

/// Exact E[prod_k tr(word_k(X))] (times ||X||^2 = n when `weight_norm_sq`) for X
/// uniform on the radius-sqrt(n) sphere of the space, by full coordinate expansion.
inline ExactComplex exact_trace_product_moment(SpaceKind kind, int n, const std::vector<TraceWord>& words,
                                               bool weight_norm_sq = false) {
    if (n < 2) throw InvalidDimensionError("oracle needs n >= 2");
    if (n > kOracleMaxN) throw SizeLimitError("oracle supports n <= " + std::to_string(kOracleMaxN));
    if (words.empty()) throw ValidationError("no trace words given");
    std::size_t letters = 0;
    for (const auto& w : words) {
        if (w.letters.empty()) throw ValidationError("trace word is empty");
        letters += w.letters.size();
    }
    if (letters > static_cast<std::size_t>(kOracleMaxLetters)) {
        throw SizeLimitError("oracle supports at most " + std::to_string(kOracleMaxLetters) + " letters in total");
    }
    const MatrixSpace space(kind, n);
    const int d = static_cast<int>(space.dimension());
    const auto forms = detail::entry_forms(space);

    detail::CoordinatePolynomial poly = detail::trace_polynomial(forms, words.front());
    for (std::size_t k = 1; k < words.size(); ++k) poly = detail::multiply(poly, detail::trace_polynomial(forms, words[k]));

    ExactComplex total;
    const Rational nq(n);
    for (const auto& [mono, count] : poly) {
        if (count.re == 0 && count.im == 0) continue;
        MonomialExponents exps(static_cast<std::size_t>(d));
        int degree = 0;
        int halves = 0;
        bool odd = false;
        for (int a = 0; a < d; ++a) {
            const int e = mono[static_cast<std::size_t>(a)];
            exps[static_cast<std::size_t>(a)] = e;
            degree += e;
            if (forms.half[static_cast<std::size_t>(a)]) halves += e;
            odd = odd || e % 2 != 0;
        }
        if (odd) continue;
        // d = 1 (asym_r, n = 2): u = +-1, so every even moment is 1
        Rational weight = d == 1 ? Rational(1) : sphere_monomial_moment(d, exps);
        // X_alpha = sqrt(n) u_alpha; the 1/sqrt(2) factors pair up since every exponent is even
        for (int j = 0; j < degree / 2; ++j) weight *= nq;
        weight /= Rational(Integer(1) << (halves / 2));
        total.real += weight * count.re;
        total.imag += weight * count.im;
    }
    if (weight_norm_sq) {
        total.real *= nq;
        total.imag *= nq;
    }
    return total;
}

inline ExactComplex exact_trace_moment(SpaceKind kind, int n, const TraceWord& word, bool weight_norm_sq = false) {
    return exact_trace_product_moment(kind, n, {word}, weight_norm_sq);
}

struct RecursionCheck {
    int n = 0;
    int p = 0;
    ExactComplex lhs; // E W_p
    ExactComplex rhs; // n / (p + d - 2) sum_l E[W_l W_{p-2-l}]
    bool holds = false;
};

/// Exact E W_p on the Hermitian sphere and the exchangeable-pair recursion for it.
inline RecursionCheck mean_recursion_check(SpaceKind kind, int n, int p) {
    if (kind != SpaceKind::HermitianComplex) throw UnsupportedError("the mean recursion is checked for Hermitian matrices only");
    if (p < 1 || p > kOracleMaxLetters) throw SizeLimitError("mean recursion supports 1 <= p <= 6");
    RecursionCheck r;
    r.n = n;
    r.p = p;
    r.lhs = exact_trace_moment(kind, n, TraceWord::power(p));
    const Rational nq(n);
    ExactComplex sum;
    for (int l = 0; l <= p - 2; ++l) {
        const int k = p - 2 - l;
        ExactComplex term;
        if (l == 0 && k == 0) {
            term.real = nq * nq;
        } else if (l == 0 || k == 0) {
            term = exact_trace_moment(kind, n, TraceWord::power(std::max(l, k)));
            term.real *= nq;
            term.imag *= nq;
        } else {
            term = exact_trace_product_moment(kind, n, {TraceWord::power(l), TraceWord::power(k)});
        }
        sum.real += term.real;
        sum.imag += term.imag;
    }
    const int d = static_cast<int>(space_dimension(kind, n));
    const Rational factor = nq / Rational(p + d - 2);
    r.rhs = {sum.real * factor, sum.imag * factor};
    r.holds = r.lhs == r.rhs;
    return r;
}

struct MonteCarloMoment {
    Complex estimate;
    double se_real = 0.0;
    double se_imag = 0.0;
    std::size_t samples = 0;
};

/// Sphere Monte Carlo estimate of the same quantity as exact_trace_product_moment.
inline MonteCarloMoment monte_carlo_trace_moment(SpaceKind kind, int n, const std::vector<TraceWord>& words,
                                                 bool weight_norm_sq, std::size_t samples,
                                                 std::uint64_t master_seed, unsigned workers = 1) {
    if (samples < 2) throw ValidationError("Monte Carlo needs at least 2 samples");
    const MatrixSpace space(kind, n);
    const auto d = static_cast<Eigen::Index>(space.dimension());
    const auto acc = accumulate_trials(samples, workers, 2, [&](std::size_t t, std::vector<double>& out) {
        CounterRng rng(master_seed, Stream::Oracle, t);
        CoordinateVector g(d);
        for (Eigen::Index i = 0; i < d; ++i) g[i] = rng.normal();
        g *= std::sqrt(static_cast<double>(n)) / g.norm();
        const Matrix x = space.embed(g);
        const Matrix xs = x.adjoint();
        Complex v{1.0, 0.0};
        for (const TraceWord& w : words) {
            Matrix prod = Matrix::Identity(n, n);
            for (Letter l : w.letters) prod = prod * (l == Letter::X ? x : xs);
            v *= prod.trace();
        }
        if (weight_norm_sq) v *= x.squaredNorm();
        out[0] = v.real();
        out[1] = v.imag();
    });
    return {{acc.mean(0), acc.mean(1)}, acc.standard_error(0), acc.standard_error(1), samples};
}

} // namespace rmtlab
