#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <boost/math/special_functions/erf.hpp>
#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "rmtlab/ensembles.hpp"
#include "rmtlab/error.hpp"
#include "rmtlab/matrix_spaces.hpp"
#include "rmtlab/stats.hpp"
#include "rmtlab/stein_lab.hpp"
#include "rmtlab/test_functions.hpp"
#include "rmtlab/theory.hpp"
#include "rmtlab/trace_stats.hpp"

namespace rmtlab {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kConfigSchema = "rmtlab-config/1";
inline constexpr std::string_view kReportSchema = "rmtlab-report/1";
inline constexpr std::size_t kMinTrials = 100;

enum class ExperimentKind { Means, Covariance, Stein, Sweep, Distance, Tails };

inline std::string_view to_tag(ExperimentKind e) {
    switch (e) {
    case ExperimentKind::Means: return "means";
    case ExperimentKind::Covariance: return "covariance";
    case ExperimentKind::Stein: return "stein";
    case ExperimentKind::Sweep: return "sweep";
    case ExperimentKind::Distance: return "distance";
    case ExperimentKind::Tails: return "tails";
    }
    return "?";
}

inline ExperimentKind experiment_from_tag(std::string_view tag) {
    for (auto e : {ExperimentKind::Means, ExperimentKind::Covariance, ExperimentKind::Stein, ExperimentKind::Sweep,
                   ExperimentKind::Distance, ExperimentKind::Tails}) {
        if (to_tag(e) == tag) return e;
    }
    throw SchemaError("unknown experiment '" + std::string(tag) + "'");
}

struct TestFunctionConfig {
    std::string family = "cos_linear";
    std::vector<double> theta; // empty: default direction from the covariance
    double radius = 1.0;
};

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::Means;
    SpaceKind space = SpaceKind::HermitianComplex;
    int n = 16;
    std::string radial = "sphere";
    std::optional<CustomRadialSpec> custom;
    std::uint64_t seed = 1;
    int m = 8;
    std::size_t trials = 10000;
    unsigned workers = 1;
    std::vector<int> sweep_sizes;
    std::optional<Rational> beta_factor;
    double slack = 10.0;
    bool slack_scales_with_p = true;
    TestFunctionConfig test_function;
    std::vector<double> epsilons = kDefaultEpsilonSchedule;
    std::size_t quadrature_nodes = kDefaultQuadratureNodes;
    std::vector<int> deficit_k;
    std::string output;
};

// ---------------------------------------------------------------------------
// Config (de)serialization and validation

inline Json to_json(const ExperimentConfig& c) {
    Json ens = Json::object();
    ens["space"] = std::string(to_tag(c.space));
    ens["n"] = c.n;
    ens["radial"] = c.radial;
    if (c.custom) ens["custom"] = Json{{"family", c.custom->family}, {"parameter", c.custom->parameter}};
    ens["seed"] = c.seed;

    Json j = Json::object();
    j["schema"] = std::string(kConfigSchema);
    j["experiment"] = std::string(to_tag(c.experiment));
    j["ensemble"] = ens;
    j["m"] = c.m;
    j["trials"] = c.trials;
    j["workers"] = c.workers;
    j["sweep_sizes"] = c.sweep_sizes;
    if (c.beta_factor) j["beta_factor"] = to_string(*c.beta_factor);
    j["slack"] = c.slack;
    j["slack_scales_with_p"] = c.slack_scales_with_p;
    Json tf = Json::object();
    tf["family"] = c.test_function.family;
    if (!c.test_function.theta.empty()) tf["theta"] = c.test_function.theta;
    tf["radius"] = c.test_function.radius;
    j["test_function"] = tf;
    j["epsilons"] = c.epsilons;
    j["quadrature_nodes"] = c.quadrature_nodes;
    j["deficit_k"] = c.deficit_k;
    j["output"] = c.output;
    return j;
}

namespace detail {

template <typename T>
T json_get(const Json& obj, std::string_view key, const T& fallback) {
    const auto it = obj.find(std::string(key));
    if (it == obj.end()) return fallback;
    try {
        return it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("field '" + std::string(key) + "' has the wrong type: " + e.what());
    }
}

inline void reject_unknown(const Json& obj, std::initializer_list<std::string_view> known, std::string_view where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw SchemaError("unknown field '" + it.key() + "' in " + std::string(where));
        }
    }
}

} // namespace detail

inline ExperimentConfig config_from_json(const Json& j) {
    if (!j.is_object()) throw SchemaError("config must be a JSON object");
    detail::reject_unknown(j,
                           {"schema", "experiment", "ensemble", "m", "trials", "workers", "sweep_sizes", "beta_factor",
                            "slack", "slack_scales_with_p", "test_function", "epsilons", "quadrature_nodes",
                            "deficit_k", "output"},
                           "config");
    const auto schema = detail::json_get<std::string>(j, "schema", std::string(kConfigSchema));
    if (schema != kConfigSchema) throw SchemaError("unsupported config schema '" + schema + "'");
    ExperimentConfig c;
    c.experiment = experiment_from_tag(detail::json_get<std::string>(j, "experiment", "means"));
    if (!j.contains("ensemble") || !j["ensemble"].is_object()) throw SchemaError("config needs an 'ensemble' object");
    const Json& ens = j["ensemble"];
    detail::reject_unknown(ens, {"space", "n", "radial", "custom", "seed"}, "ensemble");
    if (!ens.contains("space")) throw SchemaError("ensemble needs a 'space' tag");
    c.space = space_kind_from_tag(detail::json_get<std::string>(ens, "space", ""));
    c.n = detail::json_get<int>(ens, "n", c.n);
    c.radial = detail::json_get<std::string>(ens, "radial", c.radial);
    if (c.radial != "sphere" && c.radial != "gauss" && c.radial != "custom") {
        throw SchemaError("unknown radial tag '" + c.radial + "'");
    }
    if (ens.contains("custom")) {
        const Json& cu = ens["custom"];
        if (!cu.is_object()) throw SchemaError("'custom' must be an object");
        detail::reject_unknown(cu, {"family", "parameter"}, "custom");
        c.custom = CustomRadialSpec{detail::json_get<std::string>(cu, "family", ""),
                                    detail::json_get<double>(cu, "parameter", 0.0)};
    }
    c.seed = detail::json_get<std::uint64_t>(ens, "seed", c.seed);
    c.m = detail::json_get<int>(j, "m", c.m);
    c.trials = detail::json_get<std::size_t>(j, "trials", c.trials);
    c.workers = detail::json_get<unsigned>(j, "workers", c.workers);
    c.sweep_sizes = detail::json_get<std::vector<int>>(j, "sweep_sizes", {});
    if (j.contains("beta_factor") && !j["beta_factor"].is_null()) {
        const Json& b = j["beta_factor"];
        if (b.is_string()) {
            c.beta_factor = parse_rational(b.get<std::string>());
        } else if (b.is_number_integer()) {
            c.beta_factor = Rational(b.get<long long>());
        } else {
            throw SchemaError("beta_factor must be a rational string such as \"1/2\"");
        }
    }
    c.slack = detail::json_get<double>(j, "slack", c.slack);
    c.slack_scales_with_p = detail::json_get<bool>(j, "slack_scales_with_p", c.slack_scales_with_p);
    if (j.contains("test_function")) {
        const Json& tf = j["test_function"];
        if (!tf.is_object()) throw SchemaError("'test_function' must be an object");
        detail::reject_unknown(tf, {"family", "theta", "radius"}, "test_function");
        c.test_function.family = detail::json_get<std::string>(tf, "family", c.test_function.family);
        c.test_function.theta = detail::json_get<std::vector<double>>(tf, "theta", {});
        c.test_function.radius = detail::json_get<double>(tf, "radius", c.test_function.radius);
        if (c.test_function.family != "cos_linear" && c.test_function.family != "quadratic_clipped") {
            throw SchemaError("unknown test function family '" + c.test_function.family + "'");
        }
    }
    c.epsilons = detail::json_get<std::vector<double>>(j, "epsilons", c.epsilons);
    c.quadrature_nodes = detail::json_get<std::size_t>(j, "quadrature_nodes", c.quadrature_nodes);
    c.deficit_k = detail::json_get<std::vector<int>>(j, "deficit_k", {});
    c.output = detail::json_get<std::string>(j, "output", "");
    return c;
}

/// Kinds for which the sweep and distance experiments have a Gaussian reference.
inline bool has_gaussian_reference(SpaceKind kind) {
    return kind == SpaceKind::GeneralComplex || kind == SpaceKind::GeneralReal ||
           kind == SpaceKind::HermitianComplex || kind == SpaceKind::SymmetricReal;
}

inline void validate(const ExperimentConfig& c) {
    if (c.n < 2) throw ValidationError("n must be at least 2");
    validate_trace_count(c.space, c.m);
    if (c.trials < kMinTrials) throw ValidationError("trials must be at least " + std::to_string(kMinTrials));
    if (c.workers < 1) throw ValidationError("workers must be at least 1");
    for (std::size_t i = 0; i < c.sweep_sizes.size(); ++i) {
        if (c.sweep_sizes[i] < 2) throw ValidationError("sweep sizes must be at least 2");
        if (i > 0 && c.sweep_sizes[i] <= c.sweep_sizes[i - 1]) {
            throw ValidationError("sweep sizes must be strictly increasing");
        }
    }
    if (c.experiment == ExperimentKind::Sweep && c.sweep_sizes.size() < 3) {
        throw ValidationError("a sweep needs at least three sizes");
    }
    if (c.radial == "custom" && !c.custom) throw SchemaError("radial 'custom' requires an ensemble.custom object");
    if (c.beta_factor && *c.beta_factor <= 0) throw ValidationError("beta_factor must be positive");
    if (!(c.slack >= 0.0) || !std::isfinite(c.slack)) throw ValidationError("slack must be finite and nonnegative");
    if (c.experiment == ExperimentKind::Tails && c.radial != "sphere") {
        throw ValidationError("the tail experiment is defined for sphere ensembles only");
    }
    if ((c.experiment == ExperimentKind::Sweep || c.experiment == ExperimentKind::Distance) &&
        !has_gaussian_reference(c.space)) {
        throw UnsupportedError("no symmetric Gaussian reference for " + std::string(to_tag(c.space)));
    }
    if (c.experiment == ExperimentKind::Stein) {
        if (c.epsilons.size() != 3) throw ValidationError("epsilon schedule must have three entries");
        for (std::size_t i = 0; i < c.epsilons.size(); ++i) {
            if (!(c.epsilons[i] > 0.0 && c.epsilons[i] < 1.0)) throw ValidationError("epsilon must lie in (0, 1)");
            if (i > 0 && std::abs(c.epsilons[i - 1] / c.epsilons[i] - 2.0) > 1e-12) {
                throw ValidationError("epsilon schedule must halve at every step");
            }
        }
    }
    if (c.test_function.family == "quadratic_clipped" && !(c.test_function.radius > 0.0)) {
        throw ValidationError("clipping radius must be positive");
    }
    if (c.quadrature_nodes < 1000) throw ValidationError("quadrature needs at least 1000 nodes");
    for (int k : c.deficit_k)
        if (k < 1) throw ValidationError("deficit orders must be positive");
}

inline ExperimentConfig parse_config(std::string_view text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c = config_from_json(j);
    validate(c);
    return c;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw IoError("write to '" + path + "' failed");
}

inline ExperimentConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

inline EnsembleSpec ensemble_of(const ExperimentConfig& c, int n) {
    return make_ensemble(MatrixSpace(c.space, n), radial_law_from_tag(c.radial, c.custom), c.seed);
}

// ---------------------------------------------------------------------------
// Reports

enum class RowStatus { Pass, Fail, Info };

inline std::string_view to_tag(RowStatus s) {
    switch (s) {
    case RowStatus::Pass: return "pass";
    case RowStatus::Fail: return "fail";
    case RowStatus::Info: return "info";
    }
    return "?";
}

struct ReportRow {
    std::string name;
    double estimate = 0.0;
    double se = 0.0;
    double theory = 0.0;
    double zscore = 0.0;
    double band = 0.0;
    RowStatus status = RowStatus::Info;

    friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct ExperimentReport {
    Json config = Json::object();
    std::uint64_t seed = 0;
    double wall_clock = 0.0;
    Json notes = Json::object();
    std::vector<ReportRow> rows;

    [[nodiscard]] bool all_pass() const {
        return std::none_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.status == RowStatus::Fail; });
    }
    [[nodiscard]] std::size_t count(RowStatus s) const {
        return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [s](const ReportRow& r) { return r.status == s; }));
    }
    [[nodiscard]] const ReportRow* find(std::string_view name) const {
        for (const auto& r : rows)
            if (r.name == name) return &r;
        return nullptr;
    }
};

inline double zscore_of(double estimate, double se, double theory) {
    const double diff = estimate - theory;
    if (se > 0.0) return diff / se;
    if (diff == 0.0) return 0.0;
    return diff > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
}

/// Row whose status is pass/fail by |estimate - theory| <= band.
inline ReportRow compare_row(std::string name, double estimate, double se, double theory, double band) {
    ReportRow r{std::move(name), estimate, se, theory, zscore_of(estimate, se, theory), band, RowStatus::Info};
    r.status = std::abs(estimate - theory) <= band ? RowStatus::Pass : RowStatus::Fail;
    return r;
}

inline ReportRow info_row(std::string name, double estimate, double se, double theory, double band = 0.0) {
    return {std::move(name), estimate, se, theory, zscore_of(estimate, se, theory), band, RowStatus::Info};
}

namespace detail {

inline std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw SchemaError("bad number '" + std::string(s) + "' in report");
    }
    return v;
}

inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

inline std::vector<std::string> split_csv(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (quoted) throw SchemaError("unterminated quote in report row");
    out.push_back(std::move(cur));
    return out;
}

inline RowStatus status_from_tag(std::string_view s) {
    if (s == "pass") return RowStatus::Pass;
    if (s == "fail") return RowStatus::Fail;
    if (s == "info") return RowStatus::Info;
    throw SchemaError("unknown row status '" + std::string(s) + "'");
}

} // namespace detail

inline constexpr std::string_view kCsvHeader = "name,estimate,se,theory,zscore,band,pass";

/// The CSV block alone: header line plus one line per row.
inline std::string statistics_csv(const ExperimentReport& r) {
    std::string out(kCsvHeader);
    out += '\n';
    for (const auto& row : r.rows) {
        out += detail::csv_field(row.name);
        for (double v : {row.estimate, row.se, row.theory, row.zscore, row.band}) {
            out += ',';
            out += detail::format_number(v);
        }
        out += ',';
        out += to_tag(row.status);
        out += '\n';
    }
    return out;
}

/// "# {json header}" line followed by the CSV block.
inline std::string serialize(const ExperimentReport& r) {
    Json header = Json::object();
    header["schema"] = std::string(kReportSchema);
    header["seed"] = r.seed;
    header["wall_clock"] = r.wall_clock;
    header["config"] = r.config;
    header["notes"] = r.notes;
    return "# " + header.dump() + "\n" + statistics_csv(r);
}

inline ExperimentReport parse_report(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        const std::size_t end = text.find('\n', start);
        lines.push_back(text.substr(start, (end == std::string_view::npos ? text.size() : end) - start));
        if (end == std::string_view::npos) break;
        start = end + 1;
    }
    if (lines.size() < 2 || lines[0].substr(0, 2) != "# ") throw SchemaError("report lacks a JSON header line");
    Json header;
    try {
        header = Json::parse(lines[0].substr(2));
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(std::string("report header is not valid JSON: ") + e.what());
    }
    if (!header.is_object() || header.value("schema", "") != kReportSchema) {
        throw SchemaError("unsupported report schema");
    }
    ExperimentReport r;
    try {
        r.seed = header.at("seed").get<std::uint64_t>();
        r.wall_clock = header.at("wall_clock").get<double>();
        r.config = header.at("config");
        r.notes = header.at("notes");
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("report header is incomplete: ") + e.what());
    }
    if (lines[1] != kCsvHeader) throw SchemaError("report CSV header mismatch");
    for (std::size_t i = 2; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = detail::split_csv(lines[i]);
        if (f.size() != 7) throw SchemaError("report row " + std::to_string(i) + " has " + std::to_string(f.size()) + " fields");
        r.rows.push_back({f[0], detail::parse_number(f[1]), detail::parse_number(f[2]), detail::parse_number(f[3]),
                          detail::parse_number(f[4]), detail::parse_number(f[5]), detail::status_from_tag(f[6])});
    }
    return r;
}

inline void persist(const ExperimentReport& r, const std::string& path) { write_file(path, serialize(r)); }

inline ExperimentReport load_report(const std::string& path) { return parse_report(read_file(path)); }

// ---------------------------------------------------------------------------
// Experiments

namespace detail {

inline bool order_n_means(SpaceKind kind) {
    return kind != SpaceKind::GeneralComplex && kind != SpaceKind::GeneralReal;
}

inline bool complex_traces(SpaceKind kind) {
    return kind == SpaceKind::GeneralComplex || kind == SpaceKind::AntihermitianComplex;
}

inline double slack_for(const ExperimentConfig& c, int p, int n) {
    return (c.slack_scales_with_p ? c.slack * p : c.slack) / n;
}

inline TraceVector traces_for_trial(const EnsembleSpec& spec, std::size_t t, int m) {
    try {
        return trace_powers(sample(spec, t), m);
    } catch (const NumericOverflowError& e) {
        throw NumericOverflowError(std::string(e.what()) + " (trial " + std::to_string(t) + ")");
    }
}

inline std::string pname(std::string_view stem, int p) { return std::string(stem) + std::to_string(p); }

/// 1e-9 (1 + |theory|): absorbs roundoff in quantities that vanish identically.
inline double roundoff(double theory) { return 1e-9 * (1.0 + std::abs(theory)); }

} // namespace detail

/// E W_p against the leading-order means; W_p / n is compared for the kinds
/// whose means grow like n. Odd p and complex Ginibre means vanish exactly
/// by symmetry and get no model slack.
inline ExperimentReport run_means(const ExperimentConfig& c) {
    const EnsembleSpec spec = ensemble_of(c, c.n);
    const int m = c.m;
    const auto acc = accumulate_trials(c.trials, c.workers, 2 * static_cast<std::size_t>(m),
                                       [&](std::size_t t, std::vector<double>& out) {
                                           const TraceVector w = detail::traces_for_trial(spec, t, m);
                                           for (int p = 1; p <= m; ++p) {
                                               out[static_cast<std::size_t>(2 * (p - 1))] = w(p).real();
                                               out[static_cast<std::size_t>(2 * p - 1)] = w(p).imag();
                                           }
                                       });
    const MeanPrediction pred = predicted_means(c.space, c.n, m);
    const double scale = detail::order_n_means(c.space) ? c.n : 1.0;
    ExperimentReport rep;
    for (int p = 1; p <= m; ++p) {
        const auto i = static_cast<std::size_t>(2 * (p - 1));
        const bool exact_zero = c.space == SpaceKind::GeneralComplex || p % 2 == 1;
        const std::string stem = detail::pname("mean_W", p);
        const double th = pred(p) / scale;
        const double est = acc.mean(i) / scale;
        const double se = acc.standard_error(i) / scale;
        double band = 3.0 * se + detail::roundoff(th);
        if (!exact_zero) band += detail::slack_for(c, p, c.n);
        if (detail::complex_traces(c.space)) {
            rep.rows.push_back(compare_row(stem + ".re", est, se, th, band));
            const double est_im = acc.mean(i + 1) / scale;
            const double se_im = acc.standard_error(i + 1) / scale;
            rep.rows.push_back(compare_row(stem + ".im", est_im, se_im, 0.0, 3.0 * se_im + detail::roundoff(0.0)));
        } else {
            rep.rows.push_back(compare_row(stem, est, se, th, band));
        }
    }
    for (int k : c.deficit_k) {
        const DeficitEstimate t = radial_deficit_t(spec, k, c.trials, c.workers);
        rep.rows.push_back(info_row(detail::pname("radial_t", k), t.value, t.standard_error, 0.0));
    }
    rep.notes["scale"] = detail::order_n_means(c.space) ? "W_p/n" : "W_p";
    rep.notes["model_slack"] = c.slack_scales_with_p ? "slack*p/n" : "slack/n";
    return rep;
}

namespace detail {

/// Per-trial vectors for the covariance comparison: Z for the structured
/// kinds, W for the Ginibre kinds (centered empirically afterwards).
struct CovarianceSamples {
    std::vector<int> indices;
    std::vector<std::vector<Complex>> values; // per trial
};

inline CovarianceSamples covariance_samples(const ExperimentConfig& c, int n, std::size_t trials) {
    const EnsembleSpec spec = ensemble_of(c, n);
    const int m = c.m;
    CovarianceSamples s;
    const bool ginibre = !order_n_means(c.space);
    if (ginibre) {
        for (int p = 1; p <= m; ++p) s.indices.push_back(p);
    } else {
        s.indices = covariance_indices(c.space, m);
    }
    const MeanPrediction pred = predicted_means(c.space, n, m);
    s.values = map_trials<std::vector<Complex>>(trials, c.workers, [&](std::size_t t) {
        const TraceVector w = traces_for_trial(spec, t, m);
        if (ginibre) return w.entries;
        return center_z(w, pred, n, c.space).z;
    });
    return s;
}

struct CovarianceEstimate {
    Complex value;
    double se_real = 0.0;
    double se_imag = 0.0;
};

/// Centered sample covariance of columns i, j; conjugate the second factor
/// for the Hermitian form. SE is that of the mean of the product series.
inline CovarianceEstimate sample_covariance(const std::vector<std::vector<Complex>>& v, const std::vector<Complex>& mean,
                                            std::size_t i, std::size_t j, bool conjugate) {
    const std::size_t n = v.size();
    std::vector<double> re(n);
    std::vector<double> im(n);
    for (std::size_t t = 0; t < n; ++t) {
        const Complex a = v[t][i] - mean[i];
        const Complex b = conjugate ? std::conj(v[t][j] - mean[j]) : v[t][j] - mean[j];
        const Complex prod = a * b;
        re[t] = prod.real();
        im[t] = prod.imag();
    }
    const SampleSummary sr = summarize(re);
    const SampleSummary si = summarize(im);
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    return {{sr.mean * unbias, si.mean * unbias}, sr.standard_error, si.standard_error};
}

inline std::vector<Complex> column_means(const std::vector<std::vector<Complex>>& v, std::size_t k) {
    std::vector<Complex> mean(k);
    std::vector<double> re(v.size());
    std::vector<double> im(v.size());
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t t = 0; t < v.size(); ++t) {
            re[t] = v[t][i].real();
            im[t] = v[t][i].imag();
        }
        mean[i] = {pairwise_sum(re) / static_cast<double>(v.size()), pairwise_sum(im) / static_cast<double>(v.size())};
    }
    return mean;
}

inline Complex i_power(int k) {
    switch (((k % 4) + 4) % 4) {
    case 0: return {1.0, 0.0};
    case 1: return {0.0, 1.0};
    case 2: return {-1.0, 0.0};
    default: return {0.0, -1.0};
    }
}

/// Limiting Hermitian covariance E Z_p conj(Z_q) for the configured kind.
inline Complex model_entry(SpaceKind kind, const CovarianceModel* model, int p, int q) {
    switch (kind) {
    case SpaceKind::GeneralComplex:
    case SpaceKind::GeneralReal:
        return p == q ? Complex{static_cast<double>(p), 0.0} : Complex{};
    case SpaceKind::AntihermitianComplex:
        return i_power(p - q) * to_double(model->sigma_at(p, q));
    default:
        return {to_double(model->sigma_at(p, q)), 0.0};
    }
}

/// Entries that vanish identically at every n by a symmetry of the ensemble.
inline bool covariance_exact_zero(SpaceKind kind, int p, int q, bool pseudo) {
    if (kind == SpaceKind::GeneralComplex) return pseudo || p != q;
    return (p + q) % 2 != 0;
}

inline CovarianceModel model_for(SpaceKind kind, int m, std::optional<Rational> beta) {
    if (kind == SpaceKind::AntihermitianComplex) {
        return covariance_model(SpaceKind::HermitianComplex, m, beta ? beta : std::optional<Rational>(Rational(1, 2)));
    }
    return covariance_model(kind, m, beta);
}

} // namespace detail

/// Empirical covariance of Z (or W for the Ginibre kinds) against the
/// limiting Sigma, plus a beta_factor adjudication for the structured kinds.
inline ExperimentReport run_covariance(const ExperimentConfig& c) {
    const auto samples = detail::covariance_samples(c, c.n, c.trials);
    const std::size_t k = samples.indices.size();
    const auto mean = detail::column_means(samples.values, k);
    const bool structured = detail::order_n_means(c.space);
    std::optional<CovarianceModel> model;
    if (structured) model = detail::model_for(c.space, c.m, c.beta_factor);
    const bool symmetric_model = !model || model->sigma.is_symmetric();
    const bool complex_rows = detail::complex_traces(c.space);
    const std::string stem = structured ? "Z" : "W";

    ExperimentReport rep;
    std::vector<std::vector<detail::CovarianceEstimate>> est(k, std::vector<detail::CovarianceEstimate>(k));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            if (symmetric_model && j < i) continue;
            est[i][j] = detail::sample_covariance(samples.values, mean, i, j, true);
        }

    auto add_entry = [&](std::vector<ReportRow>& rows, const std::string& prefix, const CovarianceModel* mdl,
                         std::size_t i, std::size_t j, bool pseudo, const detail::CovarianceEstimate& e,
                         RowStatus forced, bool* consistent, bool* inconsistent) {
        const int p = samples.indices[i];
        const int q = samples.indices[j];
        const Complex th = pseudo ? Complex{} : detail::model_entry(c.space, mdl, p, q);
        const bool zero = detail::covariance_exact_zero(c.space, p, q, pseudo);
        const double slack = zero ? 0.0 : detail::slack_for(c, std::max(p, q), c.n);
        const std::string name = prefix + (pseudo ? "pcov(" : "cov(") + stem + std::to_string(p) + "," + stem +
                                 std::to_string(q) + ")";
        auto push = [&](const std::string& nm, double value, double se, double theory) {
            const double band = 3.0 * se + slack + detail::roundoff(theory);
            ReportRow r = compare_row(nm, value, se, theory, band);
            if (consistent && r.status == RowStatus::Fail) *consistent = false;
            if (inconsistent && std::abs(value - theory) > 5.0 * se + slack + detail::roundoff(theory)) *inconsistent = true;
            if (forced == RowStatus::Info) r.status = RowStatus::Info;
            rows.push_back(std::move(r));
        };
        if (complex_rows || pseudo) {
            push(name + ".re", e.value.real(), e.se_real, th.real());
            push(name + ".im", e.value.imag(), e.se_imag, th.imag());
        } else {
            push(name, e.value.real(), e.se_real, th.real());
        }
    };

    const CovarianceModel* mdl = model ? &*model : nullptr;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            if (symmetric_model && j < i) continue;
            add_entry(rep.rows, "", mdl, i, j, false, est[i][j], RowStatus::Pass, nullptr, nullptr);
        }
    if (c.space == SpaceKind::GeneralComplex) {
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i; j < k; ++j) {
                const auto e = detail::sample_covariance(samples.values, mean, i, j, false);
                add_entry(rep.rows, "", nullptr, i, j, true, e, RowStatus::Pass, nullptr, nullptr);
            }
    }

    if (structured) {
        rep.notes["beta_factor"] = to_string(model->beta_factor);
        rep.notes["sigma_symmetric"] = model->sigma.is_symmetric();
        Json verdicts = Json::object();
        std::vector<std::string> consistent_variants;
        std::vector<std::string> inconsistent_variants;
        for (const Rational& beta : {Rational(1, 2), Rational(1)}) {
            const CovarianceModel variant = detail::model_for(c.space, c.m, beta);
            const bool variant_symmetric = variant.sigma.is_symmetric();
            const std::string tag = to_string(beta);
            bool consistent = true;
            bool inconsistent = false;
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    if (variant_symmetric && j < i) continue;
                    const auto e = (symmetric_model || j >= i) ? est[i][j]
                                                               : detail::sample_covariance(samples.values, mean, i, j, true);
                    add_entry(rep.rows, "beta=" + tag + ":", &variant, i, j, false, e, RowStatus::Info, &consistent,
                              &inconsistent);
                }
            const std::string verdict = consistent ? "consistent" : (inconsistent ? "inconsistent" : "undecided");
            verdicts[tag] = verdict;
            if (consistent) consistent_variants.push_back(tag);
            if (inconsistent) inconsistent_variants.push_back(tag);
        }
        rep.notes["adjudication"] = verdicts;
        if (consistent_variants.size() == 1 && inconsistent_variants.size() == 1) {
            rep.notes["supported_beta"] = consistent_variants.front();
        } else if (consistent_variants.empty()) {
            rep.notes["supported_beta"] = "none";
        } else {
            rep.notes["supported_beta"] = "ambiguous";
        }
    }
    rep.notes["centering"] = structured ? "Z from leading-order means" : "W minus sample mean";
    return rep;
}

namespace detail {

/// Real embedding of the per-trial vector and its limiting covariance.
struct EmbeddedSamples {
    std::vector<Eigen::VectorXd> x;
    Eigen::MatrixXd sigma;
};

inline EmbeddedSamples embedded_samples(const ExperimentConfig& c, int n) {
    const auto cs = covariance_samples(c, n, c.trials);
    const std::size_t k = cs.indices.size();
    const bool split = c.space == SpaceKind::GeneralComplex;
    const auto dim = static_cast<Eigen::Index>(split ? 2 * k : k);
    EmbeddedSamples e;
    e.sigma = Eigen::MatrixXd::Zero(dim, dim);
    if (c.space == SpaceKind::GeneralComplex || c.space == SpaceKind::GeneralReal) {
        for (std::size_t i = 0; i < k; ++i) {
            const double p = cs.indices[i];
            if (split) {
                e.sigma(static_cast<Eigen::Index>(2 * i), static_cast<Eigen::Index>(2 * i)) = p / 2.0;
                e.sigma(static_cast<Eigen::Index>(2 * i + 1), static_cast<Eigen::Index>(2 * i + 1)) = p / 2.0;
            } else {
                e.sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = p;
            }
        }
    } else {
        e.sigma = covariance_model(c.space, c.m, c.beta_factor).sigma.to_double();
    }
    const auto mean = column_means(cs.values, k);
    e.x.reserve(cs.values.size());
    for (const auto& v : cs.values) {
        Eigen::VectorXd x(dim);
        for (std::size_t i = 0; i < k; ++i) {
            const Complex z = v[i] - mean[i];
            if (split) {
                x[static_cast<Eigen::Index>(2 * i)] = z.real();
                x[static_cast<Eigen::Index>(2 * i + 1)] = z.imag();
            } else {
                x[static_cast<Eigen::Index>(i)] = z.real();
            }
        }
        e.x.push_back(std::move(x));
    }
    return e;
}

inline SmoothTestFunction test_function_for(const ExperimentConfig& c, const Eigen::MatrixXd& sigma) {
    if (c.test_function.family == "quadratic_clipped") return SmoothTestFunction::quadratic_clipped(c.test_function.radius);
    if (c.test_function.theta.empty()) return SmoothTestFunction::cos_linear(default_theta(sigma));
    if (static_cast<Eigen::Index>(c.test_function.theta.size()) != sigma.rows()) {
        throw ValidationError("theta has length " + std::to_string(c.test_function.theta.size()) + ", expected " +
                              std::to_string(sigma.rows()));
    }
    return SmoothTestFunction::cos_linear(Eigen::Map<const Eigen::VectorXd>(c.test_function.theta.data(),
                                                                             static_cast<Eigen::Index>(c.test_function.theta.size())));
}

struct DistancePoint {
    int n = 0;
    double ef = 0.0;
    double ef_se = 0.0;
    double reference = 0.0;
    double delta = 0.0;
    bool significant = false;
};

inline DistancePoint distance_at(const ExperimentConfig& c, int n, const Eigen::MatrixXd* nodes, SmoothTestFunction* f_out,
                                 Eigen::MatrixXd* sigma_out) {
    const EmbeddedSamples e = embedded_samples(c, n);
    const SmoothTestFunction f = test_function_for(c, e.sigma);
    std::vector<double> fx(e.x.size());
    for (std::size_t t = 0; t < e.x.size(); ++t) fx[t] = f(e.x[t]);
    const SampleSummary s = summarize(fx);
    DistancePoint pt;
    pt.n = n;
    pt.ef = s.mean;
    pt.ef_se = s.standard_error;
    pt.reference = gaussian_expectation(f, e.sigma, nodes);
    pt.delta = std::abs(pt.ef - pt.reference);
    pt.significant = pt.delta > 3.0 * pt.ef_se;
    if (f_out) *f_out = f;
    if (sigma_out) *sigma_out = e.sigma;
    return pt;
}

} // namespace detail

/// |E f(Z) - E f(Sigma^{1/2} G)| at a single n.
inline ExperimentReport run_distance(const ExperimentConfig& c) {
    SmoothTestFunction f;
    Eigen::MatrixXd sigma;
    std::optional<Eigen::MatrixXd> nodes;
    if (c.test_function.family == "quadratic_clipped") {
        const std::size_t dim = detail::embedded_samples(c, 2).sigma.rows();
        nodes = halton_normal_nodes(dim, c.quadrature_nodes);
    }
    const auto pt = detail::distance_at(c, c.n, nodes ? &*nodes : nullptr, &f, &sigma);
    ExperimentReport rep;
    rep.rows.push_back(compare_row("Ef", pt.ef, pt.ef_se, pt.reference, 3.0 * pt.ef_se));
    rep.rows.push_back(info_row("delta", pt.delta, pt.ef_se, 0.0, 3.0 * pt.ef_se));
    rep.notes["test_function"] = f.tag();
    rep.notes["M1"] = f.m1();
    rep.notes["M2"] = f.m2();
    rep.notes["significant"] = pt.significant;
    rep.notes["n_times_delta"] = pt.delta * c.n;
    return rep;
}

/// Weighted least-squares slope of log delta against log n.
struct SlopeFit {
    double slope = 0.0;
    double standard_error = 0.0;
    double intercept = 0.0;
};

inline SlopeFit fit_log_log(const std::vector<double>& n, const std::vector<double>& delta, const std::vector<double>& se) {
    if (n.size() < 2) throw ValidationError("slope fit needs at least two points");
    double sw = 0.0;
    double sx = 0.0;
    double sy = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) {
        const double w = se[i] > 0.0 ? std::pow(delta[i] / se[i], 2) : 1e12;
        sw += w;
        sx += w * std::log(n[i]);
        sy += w * std::log(delta[i]);
    }
    const double xb = sx / sw;
    const double yb = sy / sw;
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) {
        const double w = se[i] > 0.0 ? std::pow(delta[i] / se[i], 2) : 1e12;
        const double dx = std::log(n[i]) - xb;
        sxx += w * dx * dx;
        sxy += w * dx * (std::log(delta[i]) - yb);
    }
    SlopeFit fit;
    fit.slope = sxy / sxx;
    fit.standard_error = std::sqrt(1.0 / sxx);
    fit.intercept = yb - fit.slope * xb;
    return fit;
}

inline constexpr double kSlopeLow = -1.5;
inline constexpr double kSlopeHigh = -0.5;

/// Distance at each sweep size and the fitted rate. With fewer than three
/// sizes where delta exceeds 3 SE the verdict is "noise-dominated".
inline ExperimentReport run_sweep(const ExperimentConfig& c) {
    std::optional<Eigen::MatrixXd> nodes;
    ExperimentReport rep;
    std::vector<double> ns;
    std::vector<double> ds;
    std::vector<double> ses;
    std::vector<double> all_n;
    std::vector<double> all_d;
    std::vector<double> all_se;
    double noise_floor = 0.0;
    SmoothTestFunction f;
    for (int n : c.sweep_sizes) {
        if (c.test_function.family == "quadratic_clipped" && !nodes) {
            const std::size_t dim = detail::embedded_samples(c, 2).sigma.rows();
            nodes = halton_normal_nodes(dim, c.quadrature_nodes);
        }
        const auto pt = detail::distance_at(c, n, nodes ? &*nodes : nullptr, &f, nullptr);
        const std::string tag = "[n=" + std::to_string(n) + "]";
        rep.rows.push_back(info_row("Ef" + tag, pt.ef, pt.ef_se, pt.reference, 3.0 * pt.ef_se));
        rep.rows.push_back(info_row("delta" + tag, pt.delta, pt.ef_se, 0.0, 3.0 * pt.ef_se));
        noise_floor = std::max(noise_floor, 3.0 * pt.ef_se);
        all_n.push_back(n);
        all_d.push_back(std::max(pt.delta, std::numeric_limits<double>::min()));
        all_se.push_back(pt.ef_se);
        if (pt.significant) {
            ns.push_back(n);
            ds.push_back(pt.delta);
            ses.push_back(pt.ef_se);
        }
    }
    rep.notes["test_function"] = f.tag();
    rep.notes["M1"] = f.m1();
    rep.notes["M2"] = f.m2();
    rep.notes["significant_sizes"] = ns.size();
    rep.notes["noise_floor"] = noise_floor;
    rep.notes["slope_target"] = Json::array({kSlopeLow, kSlopeHigh});
    if (ns.size() >= 3) {
        const SlopeFit fit = fit_log_log(ns, ds, ses);
        ReportRow row = info_row("slope", fit.slope, fit.standard_error, -1.0, 0.5);
        row.status = (fit.slope >= kSlopeLow && fit.slope <= kSlopeHigh) ? RowStatus::Pass : RowStatus::Fail;
        rep.rows.push_back(row);
        rep.notes["verdict"] = "slope";
        rep.notes["slope_ci95"] = Json::array({fit.slope - 1.96 * fit.standard_error, fit.slope + 1.96 * fit.standard_error});
    } else {
        const SlopeFit fit = fit_log_log(all_n, all_d, all_se);
        rep.rows.push_back(info_row("slope_unresolved", fit.slope, fit.standard_error, -1.0, 0.5));
        rep.notes["verdict"] = "noise-dominated";
    }
    return rep;
}

namespace detail {

/// Real statistic whose tails are examined: W_p, or tr(H^p) = Re(i^{-p} W_p)
/// for the anti-Hermitian kind.
inline double tail_statistic(SpaceKind kind, const TraceVector& w, int p) {
    if (kind == SpaceKind::AntihermitianComplex) return (std::conj(i_power(p)) * w(p)).real();
    return w(p).real();
}

} // namespace detail

/// Survival of |S - mean| at k standard deviations (k = 0..6) for each
/// W_p on the sphere, with the Gaussian reference and the L4/L2 ratio.
inline ExperimentReport run_tails(const ExperimentConfig& c) {
    const EnsembleSpec spec = ensemble_of(c, c.n);
    const int m = c.m;
    const auto values = map_trials<std::vector<double>>(c.trials, c.workers, [&](std::size_t t) {
        const TraceVector w = detail::traces_for_trial(spec, t, m);
        std::vector<double> s(static_cast<std::size_t>(m));
        for (int p = 1; p <= m; ++p) s[static_cast<std::size_t>(p - 1)] = detail::tail_statistic(c.space, w, p);
        return s;
    });
    const double n_trials = static_cast<double>(values.size());
    ExperimentReport rep;
    Json degenerate = Json::array();
    for (int p = 1; p <= m; ++p) {
        const auto ip = static_cast<std::size_t>(p - 1);
        std::vector<double> s(values.size());
        for (std::size_t t = 0; t < values.size(); ++t) s[t] = values[t][ip];
        const SampleSummary sum = summarize(s);
        if (!(sum.standard_deviation > 1e-9 * (1.0 + std::abs(sum.mean)))) {
            degenerate.push_back(p);
            continue;
        }
        std::vector<double> sq(s.size());
        std::vector<double> qu(s.size());
        for (std::size_t t = 0; t < s.size(); ++t) {
            const double z = (s[t] - sum.mean) / sum.standard_deviation;
            s[t] = std::abs(z);
            sq[t] = z * z;
            qu[t] = sq[t] * sq[t];
        }
        const std::string stem = "W" + std::to_string(p);
        for (int k = 0; k <= 6; ++k) {
            const double count = static_cast<double>(std::count_if(s.begin(), s.end(), [k](double z) { return z >= k; }));
            const double prob = count / n_trials;
            const double se = std::sqrt(prob * (1.0 - prob) / n_trials);
            const double gauss = boost::math::erfc(k / std::sqrt(2.0));
            const std::string name = "survival[" + stem + ",k=" + std::to_string(k) + "]";
            if (k == 0) {
                rep.rows.push_back(compare_row(name, prob, se, 1.0, 0.0));
            } else if (k == 5) {
                ReportRow r = info_row(name, prob, se, gauss, 1e-2);
                r.status = prob <= 1e-2 ? RowStatus::Pass : RowStatus::Fail;
                rep.rows.push_back(r);
            } else {
                rep.rows.push_back(info_row(name, prob, se, gauss));
            }
        }
        const double l2 = std::sqrt(pairwise_sum(sq) / n_trials);
        const double l4 = std::pow(pairwise_sum(qu) / n_trials, 0.25);
        rep.rows.push_back(info_row("L4/L2[" + stem + "]", l4 / l2, 0.0, std::pow(3.0, 0.25)));
    }
    rep.notes["degenerate_powers"] = degenerate;
    rep.notes["reference"] = "Gaussian two-sided survival erfc(k/sqrt(2)); L4/L2 = 3^(1/4)";
    return rep;
}

/// Conditional epsilon^2 limits at one draw X (trial 0 of the ensemble).
inline ExperimentReport run_stein(const ExperimentConfig& c) {
    const EnsembleSpec spec = ensemble_of(c, c.n);
    const Matrix x = sample(spec, 0);
    const LimitReport lr = empirical_limits(spec.space, x, c.m, c.epsilons, c.trials, c.seed, c.workers);
    ExperimentReport rep;
    const bool complex_rows = !is_real_kind(c.space);
    for (const auto& row : lr.rows) {
        const RowStatus st = row.pass ? RowStatus::Pass : RowStatus::Fail;
        auto push = [&](const std::string& name, double est, double se, double th) {
            ReportRow r = info_row(name, est, se, th, 3.0 * se);
            r.status = st;
            rep.rows.push_back(r);
        };
        if (complex_rows) {
            push(row.name + ".re", row.estimate.real(), row.se_real, row.theory.real());
            push(row.name + ".im", row.estimate.imag(), row.se_imag, row.theory.imag());
        } else {
            push(row.name, row.estimate.real(), row.se_real, row.theory.real());
        }
    }
    for (std::size_t e = 0; e < lr.epsilons.size(); ++e) {
        rep.rows.push_back(info_row("cube[eps=" + detail::format_number(lr.epsilons[e]) + "]", lr.cube_mean[e], lr.cube_se[e], 0.0));
    }
    for (std::size_t e = 0; e < lr.cube_slopes.size(); ++e) {
        ReportRow r = info_row("cube_slope[" + std::to_string(e + 1) + "]", lr.cube_slopes[e], 0.0, 1.0, kCubeSlopeTolerance);
        r.status = cube_slope_ok(lr.cube_slopes[e], e + 1 == lr.cube_slopes.size()) ? RowStatus::Pass : RowStatus::Fail;
        rep.rows.push_back(r);
    }
    Json residuals = Json::object();
    for (const auto& row : lr.rows) residuals[row.name] = std::abs(row.residual);
    rep.notes["richardson_residual_abs"] = residuals;
    rep.notes["epsilons"] = lr.epsilons;
    rep.notes["limit_failures"] = lr.failures();
    return rep;
}

/// Validates the config, runs the experiment and fills in the header fields.
inline ExperimentReport run_experiment(const ExperimentConfig& c) {
    validate(c);
    const auto start = std::chrono::steady_clock::now();
    ExperimentReport rep;
    switch (c.experiment) {
    case ExperimentKind::Means: rep = run_means(c); break;
    case ExperimentKind::Covariance: rep = run_covariance(c); break;
    case ExperimentKind::Stein: rep = run_stein(c); break;
    case ExperimentKind::Sweep: rep = run_sweep(c); break;
    case ExperimentKind::Distance: rep = run_distance(c); break;
    case ExperimentKind::Tails: rep = run_tails(c); break;
    }
    rep.config = to_json(c);
    rep.seed = c.seed;
    rep.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rep.notes["passed"] = rep.count(RowStatus::Pass);
    rep.notes["failed"] = rep.count(RowStatus::Fail);
    return rep;
}

} // namespace rmtlab
