#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include <Eigen/Dense>

#include "rmtlab/error.hpp"
#include "rmtlab/matrix_spaces.hpp"
#include "rmtlab/rng.hpp"
#include "rmtlab/stats.hpp"

namespace rmtlab {

/// Draws R = ||X|| / sqrt(n); must satisfy E R^2 = 1.
using RadialSampler = std::function<double(CounterRng&)>;

/// Serializable description of a built-in custom radial family.
///   "lognormal": R = exp(s Z - s^2), Z standard normal, parameter s > 0.
///   "shell":     R^2 uniform on [1 - w, 1 + w], parameter 0 <= w < 1.
struct CustomRadialSpec {
    std::string family;
    double parameter = 0.0;
};

class RadialLaw {
public:
    enum class Kind { FixedNorm, GaussianCoords, CustomRadial };

    static RadialLaw fixed_norm() { return RadialLaw(Kind::FixedNorm); }
    static RadialLaw gaussian() { return RadialLaw(Kind::GaussianCoords); }

    static RadialLaw custom(RadialSampler sampler, std::string label = "custom") {
        RadialLaw law(Kind::CustomRadial);
        law.sampler_ = std::move(sampler);
        law.label_ = std::move(label);
        return law;
    }

    static RadialLaw custom(const CustomRadialSpec& spec) {
        RadialLaw law = custom(make_sampler(spec), spec.family);
        law.custom_spec_ = spec;
        return law;
    }

    [[nodiscard]] Kind kind() const { return kind_; }
    [[nodiscard]] const RadialSampler& sampler() const { return sampler_; }
    [[nodiscard]] const std::optional<CustomRadialSpec>& custom_spec() const { return custom_spec_; }

    /// "sphere", "gauss" or "custom".
    [[nodiscard]] std::string_view tag() const {
        switch (kind_) {
        case Kind::FixedNorm: return "sphere";
        case Kind::GaussianCoords: return "gauss";
        case Kind::CustomRadial: return "custom";
        }
        return "?";
    }

private:
    explicit RadialLaw(Kind kind) : kind_(kind) {}

    static RadialSampler make_sampler(const CustomRadialSpec& spec) {
        const double s = spec.parameter;
        if (spec.family == "lognormal") {
            if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("lognormal radial law needs sigma > 0");
            return [s](CounterRng& rng) { return std::exp(s * rng.normal() - s * s); };
        }
        if (spec.family == "shell") {
            if (!(s >= 0.0 && s < 1.0)) throw ValidationError("shell radial law needs 0 <= halfwidth < 1");
            return [s](CounterRng& rng) { return std::sqrt(1.0 - s + 2.0 * s * rng.uniform()); };
        }
        throw SchemaError("unknown custom radial family '" + spec.family + "'");
    }

    Kind kind_;
    RadialSampler sampler_;
    std::string label_;
    std::optional<CustomRadialSpec> custom_spec_;
};

inline RadialLaw radial_law_from_tag(std::string_view tag, const std::optional<CustomRadialSpec>& custom = {}) {
    if (tag == "sphere") return RadialLaw::fixed_norm();
    if (tag == "gauss") return RadialLaw::gaussian();
    if (tag == "custom") {
        if (!custom) throw SchemaError("radial 'custom' requires a custom law description");
        return RadialLaw::custom(*custom);
    }
    throw SchemaError("unknown radial tag '" + std::string(tag) + "'");
}

struct EnsembleSpec {
    MatrixSpace space;
    RadialLaw radial;
    std::uint64_t master_seed = 0;
};

inline constexpr std::size_t kCustomValidationDraws = 10000;
inline constexpr double kCustomValidationTolerance = 0.01;

/// Builds a spec, checking E R^2 = 1 (within 1%, over 10^4 draws) for custom laws.
inline EnsembleSpec make_ensemble(MatrixSpace space, RadialLaw radial, std::uint64_t master_seed) {
    if (radial.kind() == RadialLaw::Kind::CustomRadial) {
        if (!radial.sampler()) throw ValidationError("custom radial law has no sampler");
        CounterRng rng(master_seed, Stream::Validation, 0);
        double sum = 0.0;
        for (std::size_t i = 0; i < kCustomValidationDraws; ++i) {
            const double r = radial.sampler()(rng);
            if (!(r > 0.0) || !std::isfinite(r)) throw SamplerError("custom radial sampler produced " + std::to_string(r));
            sum += r * r;
        }
        const double mean_sq = sum / static_cast<double>(kCustomValidationDraws);
        if (std::abs(mean_sq - 1.0) > kCustomValidationTolerance) {
            throw ValidationError("custom radial law has E R^2 ~= " + std::to_string(mean_sq) + ", expected 1");
        }
    }
    return EnsembleSpec{std::move(space), std::move(radial), master_seed};
}

/// Rotationally invariant coordinate vector for one trial; pure in (seed, trial).
inline CoordinateVector sample_coordinates(const EnsembleSpec& spec, std::uint64_t trial_index) {
    const auto d = static_cast<Eigen::Index>(spec.space.dimension());
    const double n = spec.space.n();
    CounterRng rng(spec.master_seed, Stream::Ensemble, trial_index);
    CoordinateVector g(d);
    for (Eigen::Index i = 0; i < d; ++i) g[i] = rng.normal();

    switch (spec.radial.kind()) {
    case RadialLaw::Kind::GaussianCoords:
        g *= std::sqrt(n / static_cast<double>(d));
        break;
    case RadialLaw::Kind::FixedNorm:
        g *= std::sqrt(n) / g.norm();
        break;
    case RadialLaw::Kind::CustomRadial: {
        const double r = spec.radial.sampler()(rng);
        if (!(r > 0.0) || !std::isfinite(r)) throw SamplerError("custom radial sampler produced " + std::to_string(r));
        g *= std::sqrt(n) * r / g.norm();
        break;
    }
    }
    return g;
}

inline Matrix sample(const EnsembleSpec& spec, std::uint64_t trial_index) {
    return spec.space.embed(sample_coordinates(spec, trial_index));
}

struct DeficitEstimate {
    double value = 0.0;
    double standard_error = 0.0;
    bool exact = false;
};

/// Estimates t_k = |n^{-k/2} E ||X||^k - 1| = |E R^k - 1|.
inline DeficitEstimate radial_deficit_t(const EnsembleSpec& spec, int k, std::size_t trials, unsigned workers = 1) {
    if (k < 1) throw ValidationError("radial deficit needs k >= 1");
    const auto d = static_cast<double>(spec.space.dimension());
    switch (spec.radial.kind()) {
    case RadialLaw::Kind::FixedNorm:
        return {0.0, 0.0, true};
    case RadialLaw::Kind::GaussianCoords:
        if (k % 2 == 0) {
            // ||X||^2 = (n/d) chi^2_d, E (chi^2_d)^{k/2} = d (d+2) ... (d+k-2)
            double moment = 1.0;
            for (int j = 0; j < k / 2; ++j) moment *= (d + 2.0 * j) / d;
            return {std::abs(moment - 1.0), 0.0, true};
        }
        break;
    case RadialLaw::Kind::CustomRadial:
        break;
    }
    if (trials < 2) throw ValidationError("radial deficit estimate needs at least 2 trials");
    const auto dim = static_cast<Eigen::Index>(spec.space.dimension());
    const auto acc = accumulate_trials(trials, workers, 1, [&](std::size_t t, std::vector<double>& out) {
        CounterRng rng(spec.master_seed, Stream::Radial, t);
        double r = 0.0;
        if (spec.radial.kind() == RadialLaw::Kind::GaussianCoords) {
            double s = 0.0;
            for (Eigen::Index i = 0; i < dim; ++i) {
                const double z = rng.normal();
                s += z * z;
            }
            r = std::sqrt(s / d);
        } else {
            r = spec.radial.sampler()(rng);
            if (!(r > 0.0) || !std::isfinite(r)) throw SamplerError("custom radial sampler produced " + std::to_string(r));
        }
        out[0] = std::pow(r, k);
    });
    return {std::abs(acc.mean(0) - 1.0), acc.standard_error(0), false};
}

/// First two columns of a Haar-distributed orthogonal d x d matrix.
struct TwoFrame {
    Eigen::Matrix<double, Eigen::Dynamic, 2> K;

    [[nodiscard]] Eigen::Index dimension() const { return K.rows(); }
};

/// Gram-Schmidt on two iid standard Gaussian d-vectors; pure in (seed, trial).
inline TwoFrame haar_two_frame(int d, std::uint64_t master_seed, std::uint64_t trial_index) {
    if (d < 2) throw InvalidDimensionError("two-frame needs d >= 2");
    CounterRng rng(master_seed, Stream::Frame, trial_index);
    TwoFrame frame;
    frame.K.resize(d, 2);
    for (;;) {
        Eigen::VectorXd a(d);
        Eigen::VectorXd b(d);
        for (int i = 0; i < d; ++i) a[i] = rng.normal();
        for (int i = 0; i < d; ++i) b[i] = rng.normal();
        const double an = a.norm();
        if (!(an > 1e-300)) continue;
        a /= an;
        const double bn = b.norm();
        b -= a.dot(b) * a;
        b -= a.dot(b) * a; // second pass restores orthogonality lost to rounding
        const double rn = b.norm();
        if (!(rn > 1e-8 * bn)) continue; // numerically dependent draw
        frame.K.col(0) = a;
        frame.K.col(1) = b / rn;
        return frame;
    }
}

} // namespace rmtlab
