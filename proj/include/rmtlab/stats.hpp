#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

namespace rmtlab {

/// Fixed-order pairwise (tree) summation; the result depends only on the input order.
inline double pairwise_sum(std::span<const double> xs) {
    constexpr std::size_t kLeaf = 32;
    if (xs.size() <= kLeaf) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

struct SampleSummary {
    double mean = 0.0;
    double standard_error = 0.0;
    double standard_deviation = 0.0;
    std::size_t count = 0;
};

/// Mean and standard error of a sample, both by pairwise summation.
inline SampleSummary summarize(std::span<const double> xs) {
    SampleSummary s;
    s.count = xs.size();
    if (xs.empty()) return s;
    s.mean = pairwise_sum(xs) / static_cast<double>(xs.size());
    if (xs.size() < 2) return s;
    std::vector<double> dev(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) dev[i] = (xs[i] - s.mean) * (xs[i] - s.mean);
    const double var = pairwise_sum(dev) / static_cast<double>(xs.size() - 1);
    s.standard_deviation = std::sqrt(var);
    s.standard_error = s.standard_deviation / std::sqrt(static_cast<double>(xs.size()));
    return s;
}

/// Streaming mean/variance for a fixed number of components, merged with
/// Chan's formula. Merging in a fixed order gives reproducible results.
class MomentAccumulator {
public:
    MomentAccumulator() = default;
    explicit MomentAccumulator(std::size_t components) : mean_(components, 0.0), m2_(components, 0.0) {}

    void add(std::span<const double> x) {
        ++count_;
        const double nc = static_cast<double>(count_);
        for (std::size_t i = 0; i < mean_.size(); ++i) {
            const double delta = x[i] - mean_[i];
            mean_[i] += delta / nc;
            m2_[i] += delta * (x[i] - mean_[i]);
        }
    }

    void merge(const MomentAccumulator& other) {
        if (other.count_ == 0) return;
        if (count_ == 0) {
            *this = other;
            return;
        }
        const double na = static_cast<double>(count_);
        const double nb = static_cast<double>(other.count_);
        const double n = na + nb;
        for (std::size_t i = 0; i < mean_.size(); ++i) {
            const double delta = other.mean_[i] - mean_[i];
            mean_[i] += delta * nb / n;
            m2_[i] += other.m2_[i] + delta * delta * na * nb / n;
        }
        count_ += other.count_;
    }

    [[nodiscard]] std::size_t count() const { return count_; }
    [[nodiscard]] std::size_t components() const { return mean_.size(); }
    [[nodiscard]] double mean(std::size_t i) const { return mean_[i]; }
    [[nodiscard]] double variance(std::size_t i) const {
        return count_ > 1 ? m2_[i] / static_cast<double>(count_ - 1) : 0.0;
    }
    [[nodiscard]] double standard_error(std::size_t i) const {
        return count_ > 1 ? std::sqrt(variance(i) / static_cast<double>(count_)) : 0.0;
    }

private:
    std::size_t count_ = 0;
    std::vector<double> mean_;
    std::vector<double> m2_;
};

/// Trials per work unit. Block boundaries never depend on the worker count.
inline constexpr std::size_t kTrialBlock = 512;

/// Runs fn(begin, end) over consecutive trial blocks on `workers` threads and
/// returns the per-block results in block order.
template <typename Result>
std::vector<Result> run_blocks(std::size_t trials, unsigned workers,
                               const std::function<Result(std::size_t, std::size_t)>& fn) {
    const std::size_t blocks = (trials + kTrialBlock - 1) / kTrialBlock;
    std::vector<Result> results(blocks);
    workers = std::max(1U, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(blocks, 1))));

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        for (;;) {
            const std::size_t b = next.fetch_add(1);
            if (b >= blocks) return;
            try {
                const std::size_t begin = b * kTrialBlock;
                results[b] = fn(begin, std::min(trials, begin + kTrialBlock));
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(blocks);
                return;
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return results;
}

/// Evaluates fn(trial) for every trial and returns the values in trial order.
template <typename Value>
std::vector<Value> map_trials(std::size_t trials, unsigned workers, const std::function<Value(std::size_t)>& fn) {
    auto blocks = run_blocks<std::vector<Value>>(trials, workers, [&](std::size_t begin, std::size_t end) {
        std::vector<Value> out;
        out.reserve(end - begin);
        for (std::size_t t = begin; t < end; ++t) out.push_back(fn(t));
        return out;
    });
    std::vector<Value> all;
    all.reserve(trials);
    for (auto& b : blocks) {
        for (auto& v : b) all.push_back(std::move(v));
    }
    return all;
}

/// Tree reduction of block accumulators in block order.
inline MomentAccumulator merge_tree(std::vector<MomentAccumulator> parts) {
    if (parts.empty()) return {};
    while (parts.size() > 1) {
        std::vector<MomentAccumulator> next;
        next.reserve((parts.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < parts.size(); i += 2) {
            parts[i].merge(parts[i + 1]);
            next.push_back(std::move(parts[i]));
        }
        if (parts.size() % 2 == 1) next.push_back(std::move(parts.back()));
        parts = std::move(next);
    }
    return std::move(parts.front());
}

/// Accumulates a vector-valued per-trial statistic across workers deterministically.
inline MomentAccumulator accumulate_trials(std::size_t trials, unsigned workers, std::size_t components,
                                           const std::function<void(std::size_t, std::vector<double>&)>& fn) {
    auto parts = run_blocks<MomentAccumulator>(trials, workers, [&](std::size_t begin, std::size_t end) {
        MomentAccumulator acc(components);
        std::vector<double> x(components);
        for (std::size_t t = begin; t < end; ++t) {
            fn(t, x);
            acc.add(x);
        }
        return acc;
    });
    return merge_tree(std::move(parts));
}

} // namespace rmtlab
