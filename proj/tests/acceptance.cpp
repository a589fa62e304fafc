// Acceptance suite: one pass/fail line per criterion, nonzero exit on failure.
// --known-failure ID keeps ID's [FAIL] line but leaves it out of the exit status.

#include <boost/math/quadrature/gauss.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rmtlab/rmtlab.hpp"

namespace {

using namespace rmtlab;

struct Outcome {
    bool pass = true;
    std::string detail;
};

class Log {
public:
    void fail(const std::string& what) {
        out_.pass = false;
        if (failures_++ < 8) out_.detail += (out_.detail.empty() ? "" : "; ") + what;
    }
    void note(const std::string& what) { out_.detail += (out_.detail.empty() ? "" : "; ") + what; }
    void check(bool ok, const std::string& what) {
        if (!ok) fail(what);
    }
    Outcome done() {
        if (failures_ > 8) note(std::to_string(failures_ - 8) + " more failures");
        return out_;
    }

private:
    Outcome out_;
    int failures_ = 0;
};

std::string num(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

void report_failures(Log& log, const ExperimentReport& r, const std::string& tag,
                     const std::function<bool(const ReportRow&)>& judged = {}) {
    for (const auto& row : r.rows) {
        if (judged && !judged(row)) continue;
        if (row.status == RowStatus::Fail) {
            log.fail(tag + " " + row.name + " est " + num(row.estimate) + " theory " + num(row.theory) + " band " +
                     num(row.band));
        }
    }
}

ExperimentConfig config(ExperimentKind e, SpaceKind k, std::string radial, int n, int m, std::size_t trials,
                        std::uint64_t seed) {
    ExperimentConfig c;
    c.experiment = e;
    c.space = k;
    c.radial = std::move(radial);
    c.n = n;
    c.m = m;
    c.trials = trials;
    c.seed = seed;
    c.slack = 10.0;
    c.slack_scales_with_p = false;
    return c;
}

// ---------------------------------------------------------------------------

Matrix random_complex(int n, std::mt19937_64& gen) {
    std::normal_distribution<double> g;
    Matrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = {g(gen), g(gen)};
    return a;
}

Outcome ac1_algebra() {
    Log log;
    for (SpaceKind k : kAllSpaceKinds) {
        for (int n = 2; n <= 16; ++n) {
            const MatrixSpace s(k, n);
            std::vector<Matrix> dense;
            for (const auto& b : s.basis()) dense.push_back(b.dense(n));
            double worst = 0.0;
            for (std::size_t a = 0; a < dense.size(); ++a)
                for (std::size_t b = a; b < dense.size(); ++b)
                    worst = std::max(worst, std::abs(inner_product(dense[a], dense[b]) - (a == b ? 1.0 : 0.0)));
            log.check(worst <= 1e-12, std::string(to_tag(k)) + " n=" + std::to_string(n) + " gram " + num(worst));
        }
    }
    std::mt19937_64 gen(2024);
    for (int n : {3, 8, 16}) {
        for (int t = 0; t < 100; ++t) {
            const Matrix z = random_complex(n, gen);
            const Matrix real = z.real().cast<Complex>();
            const Matrix herm = 0.5 * (z + z.adjoint());
            const Matrix sym = 0.5 * (real + real.transpose());
            const Matrix id = Matrix::Identity(n, n);
            auto err = [](const Matrix& a, const Matrix& b) { return (a - b).norm() / (1.0 + b.norm()); };
            log.check(MatrixSpace(SpaceKind::GeneralComplex, n).channel_sum(z).norm() <= 1e-10, "gl_c channel");
            log.check(err(MatrixSpace(SpaceKind::GeneralReal, n).channel_sum(real), real.transpose()) <= 1e-10, "gl_r channel");
            log.check(err(MatrixSpace(SpaceKind::HermitianComplex, n).channel_sum(herm), herm.trace() * id) <= 1e-10,
                      "herm_c channel");
            log.check(err(MatrixSpace(SpaceKind::SymmetricReal, n).channel_sum(sym), 0.5 * sym + 0.5 * sym.trace() * id) <= 1e-10,
                      "sym_r channel");
        }
    }
    return log.done();
}

Outcome ac2_q_moments() {
    Log log;
    const QCovarianceReport r = q_covariance_check(16, 1000000, 2);
    for (const auto& row : r.rows) {
        log.check(row.pass, row.name + " est " + num(row.estimate) + " theory " + num(row.theory) + " se " +
                                num(row.standard_error));
    }
    log.note("max z " + num(r.max_z) + " over " + std::to_string(r.rows.size()) + " rows");
    return log.done();
}

Outcome ac3_stein() {
    Log log;
    std::size_t rows = 0;
    for (SpaceKind k : kAllSpaceKinds) {
        const EnsembleSpec spec = make_ensemble(MatrixSpace(k, 4), RadialLaw::fixed_norm(), 3);
        const LimitReport r = empirical_limits(spec.space, sample(spec, 0), 6, kDefaultEpsilonSchedule, 100000, 3);
        rows += r.rows.size();
        for (const auto& row : r.rows) {
            log.check(row.pass, std::string(to_tag(k)) + " " + row.name + " est " + num(row.estimate.real()) + "," +
                                    num(row.estimate.imag()) + " theory " + num(row.theory.real()) + "," +
                                    num(row.theory.imag()));
        }
        std::string slopes;
        for (double s : r.cube_slopes) slopes += " " + num(s);
        log.check(r.cube_linear, std::string(to_tag(k)) + " cube slopes" + slopes);
    }
    log.note(std::to_string(rows) + " limits checked");
    return log.done();
}

Outcome ac4_oracle() {
    Log log;
    int checked = 0;
    for (int n : {2, 3}) {
        for (const auto& text : {std::string("XX*"), std::string("X^2(X*)^2"), std::string("(XX*)^2"),
                                 std::string("X^2;(X*)^2"), std::string("XX*;XX*")}) {
            const auto w = parse_trace_product(text);
            const Complex exact = exact_trace_product_moment(SpaceKind::GeneralComplex, n, w).to_complex();
            const MonteCarloMoment mc =
                monte_carlo_trace_moment(SpaceKind::GeneralComplex, n, w, false, 10000000, 40 + static_cast<unsigned>(n));
            const bool ok = std::abs(mc.estimate.real() - exact.real()) <= 3.0 * mc.se_real + 1e-12 &&
                            std::abs(mc.estimate.imag() - exact.imag()) <= 3.0 * mc.se_imag + 1e-12;
            log.check(ok, "n=" + std::to_string(n) + " " + text + " exact " + num(exact.real()) + " mc " +
                              num(mc.estimate.real()) + " se " + num(mc.se_real));
            ++checked;
        }
    }
    const RecursionCheck rc = mean_recursion_check(SpaceKind::HermitianComplex, 3, 4);
    log.check(rc.holds, "recursion " + rc.lhs.text() + " vs " + rc.rhs.text());
    log.note(std::to_string(checked) + " words; E W4 = " + rc.lhs.text());
    return log.done();
}

Outcome ac5_means() {
    Log log;
    const std::size_t trials = 100000;
    auto even = [](const ReportRow& r) {
        const auto pos = r.name.find("mean_W");
        return pos != std::string::npos && (r.name[pos + 6] - '0') % 2 == 0;
    };
    const ExperimentReport gue = run_experiment(config(ExperimentKind::Means, SpaceKind::HermitianComplex, "gauss", 64, 6, trials, 51));
    report_failures(log, gue, "herm_c gauss", even);
    const ExperimentReport gin = run_experiment(config(ExperimentKind::Means, SpaceKind::GeneralComplex, "gauss", 64, 6, trials, 52));
    report_failures(log, gin, "gl_c gauss");
    const ExperimentReport real = run_experiment(config(ExperimentKind::Means, SpaceKind::GeneralReal, "gauss", 64, 6, trials, 53));
    report_failures(log, real, "gl_r gauss", even);
    const ExperimentReport asym = run_experiment(config(ExperimentKind::Means, SpaceKind::AntisymmetricReal, "sphere", 64, 6, trials, 54));
    report_failures(log, asym, "asym_r sphere", even);
    log.note("W6/n herm " + num(gue.find("mean_W6")->estimate) + ", asym " + num(asym.find("mean_W6")->estimate));
    return log.done();
}

Outcome ac6_ginibre_covariance() {
    Log log;
    const ExperimentReport r =
        run_experiment(config(ExperimentKind::Covariance, SpaceKind::GeneralComplex, "gauss", 64, 5, 100000, 61));
    report_failures(log, r, "gl_c");
    std::string diag;
    for (int p = 1; p <= 5; ++p) {
        const std::string name = "cov(W" + std::to_string(p) + ",W" + std::to_string(p) + ").re";
        diag += " " + num(r.find(name)->estimate);
    }
    log.note("E|W_p|^2:" + diag + "; " + std::to_string(r.rows.size()) + " rows");
    return log.done();
}

Outcome ac7_adjudication() {
    Log log;
    struct Case {
        SpaceKind kind;
        std::string supported;
        std::string rejected;
    };
    for (const Case& cs : {Case{SpaceKind::HermitianComplex, "1/2", "1"}, Case{SpaceKind::SymmetricReal, "1", "1/2"}}) {
        const ExperimentReport r = run_experiment(config(ExperimentKind::Covariance, cs.kind, "gauss", 128, 3, 100000, 71));
        const std::string tag(to_tag(cs.kind));
        const Json& verdict = r.notes["adjudication"];
        log.check(verdict[cs.supported] == "consistent", tag + " beta=" + cs.supported + " " + verdict[cs.supported].dump());
        log.check(verdict[cs.rejected] == "inconsistent", tag + " beta=" + cs.rejected + " " + verdict[cs.rejected].dump());
        log.check(r.notes["supported_beta"] == cs.supported, tag + " supported " + r.notes["supported_beta"].dump());
        report_failures(log, r, tag);
        log.note(tag + " supports [[1,3],[3,12]] x " + std::string(cs.supported == "1/2" ? "1" : "2") + " (beta " +
                 r.notes["supported_beta"].get<std::string>() + "), var Z3 " + num(r.find("cov(Z3,Z3)")->estimate));
    }
    return log.done();
}

Outcome ac8_sigma() {
    Log log;
    for (SpaceKind k : {SpaceKind::HermitianComplex, SpaceKind::SymmetricReal}) {
        for (int m = 3; m <= 8; ++m) {
            const SigmaCheck s = check_sigma(covariance_model(k, m));
            const std::string tag = std::string(to_tag(k)) + " m=" + std::to_string(m);
            log.check(s.symmetric, tag + " not symmetric");
            log.check(s.min_eigenvalue >= -1e-10, tag + " min eigenvalue " + num(s.min_eigenvalue));
        }
    }
    std::string asym;
    for (int m = 4; m <= 8; m += 2) {
        const SigmaCheck s = check_sigma(covariance_model(SpaceKind::AntisymmetricReal, m));
        asym += " m=" + std::to_string(m) + (s.symmetric ? " symmetric" : " asymmetric");
    }
    log.note("asym_r:" + asym);
    return log.done();
}

Complex disk_quadrature(const PolynomialTestFunction& g, const PolynomialTestFunction& h) {
    auto deriv = [](const PolynomialTestFunction& f, Complex z) {
        Complex s{};
        for (std::size_t p = 1; p < f.coefficients.size(); ++p)
            s += static_cast<double>(p) * f.coefficients[p] * std::pow(z, static_cast<int>(p) - 1);
        return s;
    };
    const int angles = 64;
    Complex total{};
    for (int a = 0; a < angles; ++a) {
        const double th = 2.0 * std::numbers::pi * a / angles;
        auto part = [&](bool imag) {
            return boost::math::quadrature::gauss<double, 20>::integrate(
                [&](double r) {
                    const Complex v = deriv(g, std::polar(r, th)) * std::conj(deriv(h, std::polar(r, th))) * r;
                    return imag ? v.imag() : v.real();
                },
                0.0, 1.0);
        };
        total += Complex{part(false), part(true)} * (2.0 * std::numbers::pi / angles);
    }
    return total / std::numbers::pi;
}

Outcome ac9_polynomial() {
    Log log;
    for (int p = 0; p <= 6; ++p)
        for (int q = 0; q <= 6; ++q) {
            const auto g = PolynomialTestFunction::monomial(p);
            const auto h = PolynomialTestFunction::monomial(q);
            const Complex exact = corollary_covariance(g, h);
            const Complex want{p == q ? static_cast<double>(p) : 0.0, 0.0};
            log.check(exact == want, "closed form p=" + std::to_string(p) + " q=" + std::to_string(q));
            const double err = std::abs(disk_quadrature(g, h) - exact);
            log.check(err <= 1e-6, "quadrature p=" + std::to_string(p) + " q=" + std::to_string(q) + " err " + num(err));
        }
    return log.done();
}

Outcome ac10_rate() {
    Log log;
    for (SpaceKind k : {SpaceKind::GeneralComplex, SpaceKind::HermitianComplex}) {
        ExperimentConfig c = config(ExperimentKind::Sweep, k, "sphere", 16, 4, 100000, 101);
        c.sweep_sizes = {16, 32, 64, 128};
        const ExperimentReport r = run_experiment(c);
        const std::string tag(to_tag(k));
        const std::string verdict = r.notes["verdict"];
        std::string deltas;
        for (int n : c.sweep_sizes) deltas += " " + num(r.find("delta[n=" + std::to_string(n) + "]")->estimate);
        if (verdict == "slope") {
            const ReportRow* s = r.find("slope");
            log.check(s->status == RowStatus::Pass, tag + " slope " + num(s->estimate) + " outside [-1.5,-0.5]");
            log.note(tag + " slope " + num(s->estimate) + " +- " + num(s->se));
        } else {
            log.check(verdict == "noise-dominated", tag + " verdict " + verdict);
            log.note(tag + " noise-dominated, floor " + num(r.notes["noise_floor"].get<double>()) + ", significant sizes " +
                     r.notes["significant_sizes"].dump());
        }
        log.note(tag + " delta" + deltas);
    }
    return log.done();
}

Outcome ac11_workers() {
    Log log;
    std::vector<ExperimentConfig> configs{
        config(ExperimentKind::Means, SpaceKind::GeneralComplex, "sphere", 16, 6, 20000, 111),
        config(ExperimentKind::Covariance, SpaceKind::HermitianComplex, "gauss", 16, 5, 20000, 112),
        config(ExperimentKind::Tails, SpaceKind::SymmetricReal, "sphere", 16, 4, 20000, 113),
    };
    ExperimentConfig sweep = config(ExperimentKind::Sweep, SpaceKind::GeneralReal, "sphere", 8, 3, 5000, 114);
    sweep.sweep_sizes = {8, 12, 16};
    configs.push_back(sweep);
    for (ExperimentConfig c : configs) {
        c.workers = 1;
        const std::string one = statistics_csv(run_experiment(c));
        for (unsigned w : {2u, 4u}) {
            c.workers = w;
            log.check(statistics_csv(run_experiment(c)) == one,
                      std::string(to_tag(c.experiment)) + " differs at workers=" + std::to_string(w));
        }
    }
    return log.done();
}

} // namespace

int main(int argc, char** argv) {
    std::set<std::string> known;
    for (int i = 1; i + 1 < argc; i += 2)
        if (std::string(argv[i]) == "--known-failure") known.insert(argv[i + 1]);
    struct Criterion {
        const char* id;
        const char* title;
        double limit_s;
        Outcome (*run)();
    };
    const Criterion criteria[] = {
        {"AC1", "algebraic identities", 60, ac1_algebra},
        {"AC2", "Q moments of Haar 2-frames", 120, ac2_q_moments},
        {"AC3", "exchangeable-pair limits", 600, ac3_stein},
        {"AC4", "exact oracle vs Monte Carlo", 600, ac4_oracle},
        {"AC5", "means at n=64", 900, ac5_means},
        {"AC6", "complex Ginibre covariances", 900, ac6_ginibre_covariance},
        {"AC7", "beta adjudication", 1800, ac7_adjudication},
        {"AC8", "Sigma structure", 60, ac8_sigma},
        {"AC9", "polynomial covariance", 60, ac9_polynomial},
        {"AC10", "rate sweep", 3600, ac10_rate},
        {"AC11", "worker-count reproducibility", 300, ac11_workers},
    };
    int failed = 0;
    int unwaived = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (secs > c.limit_s) {
            o.pass = false;
            o.detail += "; runtime " + num(secs) + " s over limit";
        }
        const bool waived = known.count(c.id) > 0;
        if (!o.pass) ++failed;
        if (!o.pass && !waived) ++unwaived;
        if (waived) o.detail += o.pass ? "; listed as known failure but passed" : "; known failure";
        std::printf("[%s] %-4s %-30s %7.1fs  %s\n", o.pass ? "PASS" : "FAIL", c.id, c.title, secs, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
    return unwaived == 0 ? 0 : 1;
}
