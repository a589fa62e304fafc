#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "rmtlab/harness.hpp"

namespace {

using namespace rmtlab;

ExperimentConfig base(ExperimentKind e, SpaceKind k, int n, int m, std::size_t trials) {
    ExperimentConfig c;
    c.experiment = e;
    c.space = k;
    c.n = n;
    c.m = m;
    c.trials = trials;
    c.seed = 11;
    return c;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("rmtlab_" + name)).string();
}

TEST(Config, JsonRoundTrip) {
    ExperimentConfig c = base(ExperimentKind::Sweep, SpaceKind::SymmetricReal, 16, 5, 2000);
    c.sweep_sizes = {8, 16, 32};
    c.beta_factor = Rational(1, 2);
    c.radial = "custom";
    c.custom = CustomRadialSpec{"shell", 0.25};
    c.test_function.family = "quadratic_clipped";
    c.test_function.radius = 2.0;
    c.deficit_k = {3, 4};
    const Json j = to_json(c);
    const ExperimentConfig back = parse_config(j.dump());
    EXPECT_EQ(to_json(back).dump(), j.dump());
    EXPECT_EQ(*back.beta_factor, Rational(1, 2));
}

TEST(Config, ParsesMinimalDocument) {
    const ExperimentConfig c = parse_config(R"({"experiment":"covariance","ensemble":{"space":"gl_r","n":8},"m":4,"trials":500})");
    EXPECT_EQ(c.experiment, ExperimentKind::Covariance);
    EXPECT_EQ(c.space, SpaceKind::GeneralReal);
    EXPECT_EQ(c.n, 8);
    EXPECT_EQ(c.radial, "sphere");
}

TEST(Config, ValidationAndSchemaErrors) {
    auto with = [](const std::string& body) { return parse_config(body); };
    EXPECT_THROW(with(R"({"ensemble":{"space":"herm_c","n":8},"m":2})"), ValidationError);
    EXPECT_THROW(with(R"({"ensemble":{"space":"hermitian","n":8}})"), SchemaError);
    EXPECT_THROW(with(R"({"ensemble":{"space":"herm_c"},"colour":1})"), SchemaError);
    EXPECT_THROW(with(R"({"ensemble":{"space":"herm_c","n":"eight"}})"), SchemaError);
    EXPECT_THROW(with(R"({"ensemble":{"space":"herm_c"},"trials":99})"), ValidationError);
    EXPECT_THROW(with(R"({"experiment":"sweep","ensemble":{"space":"herm_c"},"sweep_sizes":[16,8,32]})"), ValidationError);
    EXPECT_THROW(with(R"({"experiment":"sweep","ensemble":{"space":"herm_c"},"sweep_sizes":[8,16]})"), ValidationError);
    EXPECT_THROW(with(R"({"experiment":"sweep","ensemble":{"space":"asym_r"},"m":4,"sweep_sizes":[8,16,32]})"),
                 UnsupportedError);
    EXPECT_THROW(with(R"({"experiment":"tails","ensemble":{"space":"herm_c","radial":"gauss"}})"), ValidationError);
    EXPECT_THROW(with(R"({"ensemble":{"space":"herm_c","radial":"custom"}})"), SchemaError);
    EXPECT_THROW(with(R"({"experiment":"stein","ensemble":{"space":"herm_c"},"epsilons":[0.01,0.004,0.002]})"),
                 ValidationError);
    EXPECT_THROW(with(R"({"ensemble":{"space":"herm_c"},"beta_factor":"-1"})"), ValidationError);
    EXPECT_THROW(with(R"({"experiment":"spectra","ensemble":{"space":"herm_c"}})"), SchemaError);
    EXPECT_THROW(with(R"({"schema":"rmtlab-config/2","ensemble":{"space":"herm_c"}})"), SchemaError);
    EXPECT_THROW(with("{not json"), SchemaError);
    EXPECT_THROW(with(R"({"ensemble":{"space":"asym_r"},"m":5})"), ValidationError);
}

TEST(Report, SerializationIsByteIdentical) {
    ExperimentReport r = run_experiment(base(ExperimentKind::Means, SpaceKind::GeneralComplex, 6, 4, 300));
    r.rows.push_back(info_row("name, with \"quotes\"", 1.0 / 3.0, 1e-300, -0.0));
    r.rows.push_back(info_row("inf", std::numeric_limits<double>::infinity(), 0.0, 0.0));
    const std::string text = serialize(r);
    const ExperimentReport back = parse_report(text);
    EXPECT_EQ(back.rows, r.rows);
    EXPECT_EQ(serialize(back), text);

    const std::string path = temp_path("report.csv");
    persist(r, path);
    EXPECT_EQ(serialize(load_report(path)), text);
    std::remove(path.c_str());
    EXPECT_THROW((void)load_report(temp_path("missing/none.csv")), IoError);
    EXPECT_THROW((void)parse_report("name,estimate\n"), SchemaError);
    EXPECT_THROW((void)parse_report(R"(# {"schema":"other"})" "\n"), SchemaError);
}

TEST(Report, CsvHasOneLinePerRowAndStatusTags) {
    const ExperimentReport r = run_experiment(base(ExperimentKind::Means, SpaceKind::SymmetricReal, 8, 4, 300));
    const std::string csv = statistics_csv(r);
    EXPECT_EQ(csv.substr(0, kCsvHeader.size()), kCsvHeader);
    EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), r.rows.size() + 1);
    ASSERT_NE(r.find("mean_W2"), nullptr);
    EXPECT_EQ(r.find("mean_W9"), nullptr);
}

TEST(Reproducibility, WorkerCountDoesNotChangeStatistics) {
    for (ExperimentKind e : {ExperimentKind::Means, ExperimentKind::Covariance, ExperimentKind::Tails}) {
        ExperimentConfig c = base(e, SpaceKind::HermitianComplex, 8, 5, 1500);
        const std::string one = statistics_csv(run_experiment(c));
        c.workers = 3;
        EXPECT_EQ(statistics_csv(run_experiment(c)), one) << to_tag(e);
    }
}

TEST(Means, AntihermitianTransportsHermitianEstimates) {
    const int m = 6;
    const ExperimentReport h = run_experiment(base(ExperimentKind::Means, SpaceKind::HermitianComplex, 12, m, 20000));
    ExperimentConfig ac = base(ExperimentKind::Means, SpaceKind::AntihermitianComplex, 12, m, 20000);
    ac.seed = 12;
    const ExperimentReport a = run_experiment(ac);
    for (int p = 1; p <= m; ++p) {
        const ReportRow* hr = h.find("mean_W" + std::to_string(p));
        const ReportRow* re = a.find("mean_W" + std::to_string(p) + ".re");
        const ReportRow* im = a.find("mean_W" + std::to_string(p) + ".im");
        ASSERT_TRUE(hr && re && im);
        const Complex want = detail::i_power(p) * hr->estimate;
        EXPECT_NEAR(re->estimate, want.real(), 3.0 * std::hypot(re->se, hr->se) + 1e-12) << p;
        EXPECT_NEAR(im->estimate, want.imag(), 3.0 * std::hypot(im->se, hr->se) + 1e-12) << p;
    }
}

TEST(Means, SlackModes) {
    ExperimentConfig c = base(ExperimentKind::Means, SpaceKind::HermitianComplex, 10, 4, 200);
    EXPECT_DOUBLE_EQ(detail::slack_for(c, 4, 10), 4.0);
    c.slack_scales_with_p = false;
    EXPECT_DOUBLE_EQ(detail::slack_for(c, 4, 10), 1.0);
}

TEST(Covariance, HermitianSphereZIsCenteredWWithoutW2) {
    const ExperimentConfig c = base(ExperimentKind::Covariance, SpaceKind::HermitianComplex, 8, 6, 200);
    const auto s = detail::covariance_samples(c, c.n, c.trials);
    EXPECT_EQ(s.indices, (std::vector<int>{1, 3, 4, 5, 6}));
    const EnsembleSpec spec = ensemble_of(c, c.n);
    const MeanPrediction mu = predicted_means(c.space, c.n, c.m);
    for (std::size_t t = 0; t < 20; ++t) {
        const TraceVector w = trace_powers(sample(spec, t), c.m);
        for (std::size_t i = 0; i < s.indices.size(); ++i) {
            const int p = s.indices[i];
            EXPECT_LE(std::abs(s.values[t][i] - (w(p) - mu(p))), 1e-10 * (1.0 + std::abs(w(p))));
        }
    }
    const ExperimentReport r = run_experiment(c);
    for (const auto& row : r.rows) EXPECT_EQ(row.name.find("Z2"), std::string::npos) << row.name;
    EXPECT_EQ(r.notes["sigma_symmetric"], true);
    EXPECT_TRUE(r.notes.contains("supported_beta"));
}

TEST(Covariance, GinibreRowsAndExactZeros) {
    const ExperimentReport r = run_experiment(base(ExperimentKind::Covariance, SpaceKind::GeneralComplex, 12, 3, 4000));
    ASSERT_NE(r.find("cov(W2,W2).re"), nullptr);
    ASSERT_NE(r.find("pcov(W1,W3).im"), nullptr);
    EXPECT_DOUBLE_EQ(r.find("cov(W1,W3).re")->theory, 0.0);
    EXPECT_DOUBLE_EQ(r.find("cov(W3,W3).re")->theory, 3.0);
    EXPECT_FALSE(r.notes.contains("supported_beta"));
}

TEST(Tails, SurvivalAtZeroIsOneAndTailsAreLight) {
    std::vector<double> ratios;
    for (int n : {16, 64}) {
        ExperimentConfig c = base(ExperimentKind::Tails, SpaceKind::HermitianComplex, n, 4, n == 64 ? 20000 : 40000);
        const ExperimentReport r = run_experiment(c);
        for (int p : {1, 3, 4}) {
            const ReportRow* zero = r.find("survival[W" + std::to_string(p) + ",k=0]");
            ASSERT_NE(zero, nullptr);
            EXPECT_EQ(zero->estimate, 1.0);
        }
        EXPECT_EQ(r.find("survival[W2,k=0]"), nullptr); // W2 = n on the sphere
        if (n == 64) {
            const ReportRow* five = r.find("survival[W1,k=5]");
            ASSERT_NE(five, nullptr);
            EXPECT_LE(five->estimate, 1e-2);
        }
        ratios.push_back(r.find("L4/L2[W1]")->estimate);
    }
    for (double ratio : ratios) {
        EXPECT_GE(ratio, 1.0);
        EXPECT_LE(ratio, 1.6);
    }
}

TEST(TestFunctions, SeminormsBoundDerivatives) {
    std::mt19937_64 gen(5);
    std::normal_distribution<double> g;
    Eigen::VectorXd theta(3);
    theta << 0.3, -0.7, 0.2;
    const auto cosf = SmoothTestFunction::cos_linear(theta);
    const auto clip = SmoothTestFunction::quadratic_clipped(1.5);
    EXPECT_DOUBLE_EQ(cosf.m1(), theta.norm());
    EXPECT_DOUBLE_EQ(cosf.m2(), theta.squaredNorm());
    const double h = 1e-5;
    double worst_grad = 0.0;
    for (int t = 0; t < 2000; ++t) {
        Eigen::VectorXd x(3);
        for (int i = 0; i < 3; ++i) x[i] = 2.0 * g(gen);
        for (const auto* f : {&cosf, &clip}) {
            Eigen::VectorXd grad(3);
            for (int i = 0; i < 3; ++i) {
                Eigen::VectorXd a = x;
                Eigen::VectorXd b = x;
                a[i] += h;
                b[i] -= h;
                grad[i] = ((*f)(a) - (*f)(b)) / (2 * h);
            }
            EXPECT_LE(grad.norm(), f->m1() * (1.0 + 1e-6));
            if (f == &clip) worst_grad = std::max(worst_grad, grad.norm());
        }
    }
    EXPECT_GE(worst_grad, 0.95 * clip.m1());
    EXPECT_THROW(SmoothTestFunction::quadratic_clipped(0.0), ValidationError);
}

TEST(TestFunctions, GaussianExpectations) {
    Eigen::MatrixXd s(2, 2);
    s << 1.0, 0.3, 0.3, 2.0;
    const Eigen::VectorXd theta = default_theta(s);
    EXPECT_NEAR(theta[0], 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(theta[1], 0.5, 1e-15);
    const auto cosf = SmoothTestFunction::cos_linear(theta);
    const Eigen::MatrixXd nodes = halton_normal_nodes(2, 200000);
    EXPECT_NEAR(gaussian_expectation_quadrature(cosf, s, nodes), gaussian_expectation(cosf, s), 1e-3);
    // E r^2 (1 - exp(-|X|^2 / r^2)) = r^2 (1 - det(I + 2 S / r^2)^{-1/2})
    const double r = 1.3;
    const auto clip = SmoothTestFunction::quadratic_clipped(r);
    const double want = r * r * (1.0 - 1.0 / std::sqrt((Eigen::MatrixXd::Identity(2, 2) + 2.0 * s / (r * r)).determinant()));
    EXPECT_NEAR(gaussian_expectation(clip, s, &nodes), want, 1e-3);
    EXPECT_NEAR(nodes.row(0).mean(), 0.0, 1e-3);
    EXPECT_NEAR(nodes.row(1).squaredNorm() / 200000.0, 1.0, 1e-2);
    EXPECT_THROW((void)default_theta(Eigen::MatrixXd::Zero(2, 2)), ValidationError);
}

TEST(Sweep, LogLogFitRecoversSlope) {
    const std::vector<double> n{16, 32, 64, 128};
    std::vector<double> d;
    for (double x : n) d.push_back(3.0 / x);
    const SlopeFit fit = fit_log_log(n, d, {1e-3, 1e-3, 1e-3, 1e-3});
    EXPECT_NEAR(fit.slope, -1.0, 1e-12);
    EXPECT_NEAR(fit.intercept, std::log(3.0), 1e-12);
    EXPECT_THROW((void)fit_log_log({16}, {1.0}, {1.0}), ValidationError);
}

TEST(Sweep, ReportsVerdictAndNoiseFloor) {
    ExperimentConfig c = base(ExperimentKind::Sweep, SpaceKind::GeneralReal, 4, 3, 2000);
    c.sweep_sizes = {4, 8, 16};
    const ExperimentReport r = run_experiment(c);
    ASSERT_TRUE(r.notes.contains("verdict"));
    const std::string verdict = r.notes["verdict"];
    EXPECT_TRUE(verdict == "slope" || verdict == "noise-dominated");
    EXPECT_GT(r.notes["noise_floor"].get<double>(), 0.0);
    EXPECT_NE(r.find("delta[n=8]"), nullptr);
}

TEST(Distance, SingleSize) {
    ExperimentConfig c = base(ExperimentKind::Distance, SpaceKind::SymmetricReal, 16, 4, 3000);
    c.test_function.family = "quadratic_clipped";
    c.quadrature_nodes = 20000;
    const ExperimentReport r = run_experiment(c);
    ASSERT_NE(r.find("Ef"), nullptr);
    EXPECT_EQ(r.notes["test_function"], "quadratic_clipped");
    EXPECT_DOUBLE_EQ(r.notes["M2"].get<double>(), 2.0);
}

TEST(Stein, ReportHasLimitAndCubeRows) {
    ExperimentConfig c = base(ExperimentKind::Stein, SpaceKind::SymmetricReal, 4, 4, 5000);
    const ExperimentReport r = run_experiment(c);
    ASSERT_NE(r.find("cube_slope[1]"), nullptr);
    ASSERT_NE(r.find("cube_slope[2]"), nullptr);
    EXPECT_GT(r.rows.size(), 10u);
}

} // namespace
