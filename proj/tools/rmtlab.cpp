#include <CLI11.hpp>

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rmtlab/rmtlab.hpp"

namespace {

using namespace rmtlab;

/// Flags shared by the experiment subcommands; applied over --config.
struct ExperimentFlags {
    std::string config_path;
    std::string space;
    std::string radial;
    std::string beta_factor;
    std::string out;
    std::string family;
    int n = 0;
    int m = 0;
    std::size_t trials = 0;
    std::uint64_t seed = 0;
    unsigned workers = 0;
    double slack = -1.0;
    double radius = 0.0;
    std::vector<int> sizes;
    std::vector<double> eps;
    std::vector<int> deficit_k;
    bool slack_flat = false;
    bool strict = false;
};

void add_experiment_flags(CLI::App* cmd, ExperimentFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON experiment config (flags override its fields)");
    cmd->add_option("--space", f.space, "gl_c | gl_r | sym_r | herm_c | asym_r | antiherm_c");
    cmd->add_option("--n", f.n, "matrix size");
    cmd->add_option("--m", f.m, "highest trace power");
    cmd->add_option("--trials", f.trials, "Monte Carlo trials");
    cmd->add_option("--radial", f.radial, "sphere | gauss | custom");
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--beta-factor", f.beta_factor, "rational scale on B, e.g. 1/2");
    cmd->add_option("--workers", f.workers, "worker threads");
    cmd->add_option("--slack", f.slack, "model-error slack C in C/n");
    cmd->add_flag("--slack-flat", f.slack_flat, "use C/n instead of C*p/n");
    cmd->add_option("--out", f.out, "report path (default: stdout)");
    cmd->add_flag("--strict", f.strict, "exit with status 3 when any comparison fails");
}

ExperimentConfig build_config(ExperimentKind kind, const ExperimentFlags& f) {
    ExperimentConfig c;
    if (!f.config_path.empty()) c = config_from_json(Json::parse(read_file(f.config_path)));
    c.experiment = kind;
    if (!f.space.empty()) c.space = space_kind_from_tag(f.space);
    if (f.n > 0) c.n = f.n;
    if (f.m > 0) c.m = f.m;
    if (f.trials > 0) c.trials = f.trials;
    if (!f.radial.empty()) c.radial = f.radial;
    if (f.seed > 0) c.seed = f.seed;
    if (!f.beta_factor.empty()) c.beta_factor = parse_rational(f.beta_factor);
    if (f.workers > 0) c.workers = f.workers;
    if (f.slack >= 0.0) c.slack = f.slack;
    if (f.slack_flat) c.slack_scales_with_p = false;
    if (!f.sizes.empty()) c.sweep_sizes = f.sizes;
    if (!f.eps.empty()) c.epsilons = f.eps;
    if (!f.deficit_k.empty()) c.deficit_k = f.deficit_k;
    if (!f.family.empty()) c.test_function.family = f.family;
    if (f.radius > 0.0) c.test_function.radius = f.radius;
    if (!f.out.empty()) c.output = f.out;
    if (c.experiment == ExperimentKind::Sweep && c.sweep_sizes.empty()) c.sweep_sizes = {16, 32, 64, 128};
    if (c.experiment == ExperimentKind::Stein && f.n == 0 && f.config_path.empty()) c.n = 4;
    return c;
}

int emit(const ExperimentReport& r, const ExperimentConfig& c, bool strict) {
    if (c.output.empty()) {
        std::cout << serialize(r);
    } else {
        persist(r, c.output);
    }
    std::cerr << to_tag(c.experiment) << " " << to_tag(c.space) << " n=" << c.n << ": " << r.count(RowStatus::Pass)
              << " pass, " << r.count(RowStatus::Fail) << " fail, " << r.count(RowStatus::Info) << " info ("
              << std::setprecision(3) << r.wall_clock << " s)\n";
    if (r.notes.contains("supported_beta")) std::cerr << "supported beta_factor: " << r.notes["supported_beta"].get<std::string>() << "\n";
    if (r.notes.contains("verdict")) std::cerr << "sweep verdict: " << r.notes["verdict"].get<std::string>() << "\n";
    return strict && !r.all_pass() ? 3 : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monte Carlo and exact checks for trace statistics of rotationally invariant matrix ensembles"};
    app.require_subcommand(1);
    int status = 0;

    struct ExperimentCommand {
        const char* name;
        ExperimentKind kind;
        const char* help;
    };
    const std::vector<ExperimentCommand> commands{
        {"means", ExperimentKind::Means, "E W_p against the leading-order means"},
        {"cov", ExperimentKind::Covariance, "covariance of Z against Sigma, with beta_factor adjudication"},
        {"sweep", ExperimentKind::Sweep, "distance to the Gaussian limit across n and its log-log slope"},
        {"distance", ExperimentKind::Distance, "distance to the Gaussian limit at one n"},
        {"tails", ExperimentKind::Tails, "tail survival of centered traces on the sphere"},
    };
    std::vector<ExperimentFlags> flags(commands.size());
    for (std::size_t i = 0; i < commands.size(); ++i) {
        CLI::App* cmd = app.add_subcommand(commands[i].name, commands[i].help);
        add_experiment_flags(cmd, flags[i]);
        if (commands[i].kind == ExperimentKind::Sweep) cmd->add_option("--sizes", flags[i].sizes, "sweep sizes")->delimiter(',');
        if (commands[i].kind == ExperimentKind::Means) {
            cmd->add_option("--deficit-k", flags[i].deficit_k, "radial deficit orders to report")->delimiter(',');
        }
        if (commands[i].kind == ExperimentKind::Sweep || commands[i].kind == ExperimentKind::Distance) {
            cmd->add_option("--family", flags[i].family, "cos_linear | quadratic_clipped");
            cmd->add_option("--radius", flags[i].radius, "clipping radius for quadratic_clipped");
        }
        cmd->callback([&, i] {
            const ExperimentConfig c = build_config(commands[i].kind, flags[i]);
            status = emit(run_experiment(c), c, flags[i].strict);
        });
    }

    // run: experiment named by the config file
    std::string r_config;
    std::string r_out;
    unsigned r_workers = 0;
    bool r_strict = false;
    CLI::App* run = app.add_subcommand("run", "run the experiment described by a JSON config");
    run->add_option("--config", r_config, "JSON experiment config")->required();
    run->add_option("--out", r_out, "report path (default: the config's output field, else stdout)");
    run->add_option("--workers", r_workers, "worker threads");
    run->add_flag("--strict", r_strict, "exit with status 3 when any comparison fails");
    run->callback([&] {
        ExperimentConfig c = load_config(r_config);
        if (!r_out.empty()) c.output = r_out;
        if (r_workers > 0) c.workers = r_workers;
        status = emit(run_experiment(c), c, r_strict);
    });

    // stein verify | qmoments
    CLI::App* stein = app.add_subcommand("stein", "exchangeable-pair checks");
    stein->require_subcommand(1);
    ExperimentFlags stein_flags;
    CLI::App* verify = stein->add_subcommand("verify", "conditional eps^2 limits at one draw against the closed forms");
    add_experiment_flags(verify, stein_flags);
    verify->add_option("--eps", stein_flags.eps, "three halving epsilons")->delimiter(',');
    verify->callback([&] {
        const ExperimentConfig c = build_config(ExperimentKind::Stein, stein_flags);
        status = emit(run_experiment(c), c, stein_flags.strict);
    });
    int q_d = 16;
    std::size_t q_trials = 100000;
    std::uint64_t q_seed = 1;
    unsigned q_workers = 1;
    CLI::App* qm = stein->add_subcommand("qmoments", "second moments of Q = K C K^T over Haar two-frames");
    qm->add_option("--d", q_d, "ambient dimension");
    qm->add_option("--trials", q_trials, "Haar draws");
    qm->add_option("--seed", q_seed, "master seed");
    qm->add_option("--workers", q_workers, "worker threads");
    qm->callback([&] {
        const QCovarianceReport r = q_covariance_check(q_d, q_trials, q_seed, q_workers);
        std::cout << "name,estimate,se,theory,pass\n" << std::setprecision(17);
        for (const auto& row : r.rows) {
            std::cout << row.name << "," << row.estimate << "," << row.standard_error << "," << row.theory << ","
                      << (row.pass ? "pass" : "fail") << "\n";
        }
        std::cerr << "max |deviation| " << r.max_abs_deviation << ", max |z| " << r.max_z << "\n";
        status = r.all_pass() ? 0 : 3;
    });

    // oracle eval | recursion | mc
    CLI::App* oracle = app.add_subcommand("oracle", "exact sphere moments of trace words");
    oracle->require_subcommand(1);
    std::string o_space = "gl_c";
    int o_n = 2;
    std::string o_words = "XX*";
    bool o_weight = false;
    std::size_t o_samples = 1000000;
    std::uint64_t o_seed = 1;
    unsigned o_workers = 1;
    int o_p = 4;
    auto add_word_flags = [&](CLI::App* cmd) {
        cmd->add_option("--space", o_space, "space tag");
        cmd->add_option("--n", o_n, "matrix size");
        cmd->add_option("--word", o_words, "trace words separated by ';', e.g. \"X^2(X*)^2\" or \"X;X*\"");
        cmd->add_flag("--weight", o_weight, "multiply by ||X||^2");
    };
    CLI::App* eval = oracle->add_subcommand("eval", "exact rational E prod tr(word) on the sphere");
    add_word_flags(eval);
    eval->callback([&] {
        const auto words = parse_trace_product(o_words);
        const ExactComplex v = exact_trace_product_moment(space_kind_from_tag(o_space), o_n, words, o_weight);
        std::cout << v.text() << "\n";
    });
    CLI::App* mc = oracle->add_subcommand("mc", "sphere Monte Carlo of the same moment");
    add_word_flags(mc);
    mc->add_option("--samples", o_samples, "Monte Carlo samples");
    mc->add_option("--seed", o_seed, "master seed");
    mc->add_option("--workers", o_workers, "worker threads");
    mc->callback([&] {
        const auto words = parse_trace_product(o_words);
        const MonteCarloMoment r =
            monte_carlo_trace_moment(space_kind_from_tag(o_space), o_n, words, o_weight, o_samples, o_seed, o_workers);
        std::cout << std::setprecision(10) << r.estimate.real() << " +- " << r.se_real << " (re), " << r.estimate.imag()
                  << " +- " << r.se_imag << " (im)\n";
    });
    CLI::App* rec = oracle->add_subcommand("recursion", "exact check of the mean recursion on the Hermitian sphere");
    rec->add_option("--n", o_n, "matrix size");
    rec->add_option("--p", o_p, "trace power");
    rec->callback([&] {
        const RecursionCheck r = mean_recursion_check(SpaceKind::HermitianComplex, o_n, o_p);
        std::cout << "E W_" << r.p << " = " << r.lhs.text() << "\nrecursion = " << r.rhs.text() << "\n"
                  << (r.holds ? "holds" : "FAILS") << "\n";
        status = r.holds ? 0 : 3;
    });

    // theory-dump, also reachable as "theory dump"
    std::string t_space = "herm_c";
    int t_m = 8;
    int t_n = 64;
    std::string t_beta;
    auto add_theory_flags = [&](CLI::App* cmd) {
        cmd->add_option("--space", t_space, "space tag");
        cmd->add_option("--m", t_m, "highest trace power");
        cmd->add_option("--n", t_n, "matrix size for the means");
        cmd->add_option("--beta-factor", t_beta, "rational scale on B");
        cmd->callback([&] {
            const SpaceKind kind = space_kind_from_tag(t_space);
            validate_trace_count(kind, t_m);
            const MeanPrediction mean = predicted_means(kind, t_n, t_m);
            std::cout << "means (n=" << t_n << "):";
            for (int p = 1; p <= t_m; ++p) std::cout << " " << mean(p);
            std::cout << "\n";
            if (kind == SpaceKind::GeneralComplex || kind == SpaceKind::GeneralReal) {
                std::cout << "Sigma = diag(1..m) on W_1..W_m\n";
                return;
            }
            const std::optional<Rational> beta =
                t_beta.empty() ? std::nullopt : std::optional<Rational>(parse_rational(t_beta));
            std::cout << dump_model(covariance_model(kind, t_m, beta));
        });
    };
    add_theory_flags(app.add_subcommand("theory-dump", "print A, B, Sigma and the predicted means"));
    CLI::App* theory = app.add_subcommand("theory", "closed-form predictions");
    theory->require_subcommand(1);
    add_theory_flags(theory->add_subcommand("dump", "print A, B, Sigma and the predicted means"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const rmtlab::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return status;
}
