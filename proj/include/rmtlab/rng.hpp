#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace rmtlab {

/// Stream tags separating independent uses of one master seed.
enum class Stream : std::uint64_t {
    Ensemble = 0x656e73656d626c65ULL,
    Frame = 0x6672616d65000000ULL,
    Radial = 0x72616469616c0000ULL,
    Validation = 0x76616c6964617465ULL,
    Oracle = 0x6f7261636c650000ULL,
    Rotation = 0x726f746174650000ULL,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// xoshiro256** generator whose state is a pure function of
/// (master seed, stream, trial index). No state is shared between trials.
class CounterRng {
public:
    CounterRng(std::uint64_t master_seed, Stream stream, std::uint64_t index) {
        std::uint64_t key = splitmix64(master_seed ^ splitmix64(static_cast<std::uint64_t>(stream)));
        key = splitmix64(key ^ splitmix64(index + 0x632be59bd9b4e019ULL));
        for (auto& word : state_) {
            key += 0x9e3779b97f4a7c15ULL;
            word = splitmix64(key);
        }
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform on the open interval (0, 1).
    double uniform() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

    /// Standard normal variate (Marsaglia polar method).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 0.0;
        double v = 0.0;
        double s = 0.0;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double scale = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * scale;
        has_spare_ = true;
        return u * scale;
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4]{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace rmtlab
