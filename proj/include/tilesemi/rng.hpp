#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace tilesemi {

// Deterministic random source. All randomness in the toolkit flows through
// this wrapper so that results only depend on the seeds we hand out, never on
// library-specific distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_index(std::uint64_t n) {
        // rejection sampling keeps the draw unbiased
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive bounds
        return lo + static_cast<std::int64_t>(uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // Box-Muller; implemented here instead of std::normal_distribution so the
    // stream is identical across standard libraries.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <class It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = uniform_index(i);
            std::swap(first[i - 1], first[j]);
        }
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_ << ' ' << (have_spare_ ? 1 : 0) << ' ';
        os.precision(17);
        os << spare_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        int flag = 0;
        is >> engine_ >> flag >> spare_;
        have_spare_ = flag != 0;
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64, used to derive independent stream seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stream derivation contract for parallel data loading: one independent
// stream per (base seed, worker, epoch) triple, plus a purpose tag so
// unrelated consumers (sampling, init, ...) never share a stream.
inline std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t worker_index,
                                 std::uint64_t epoch, std::uint64_t purpose = 0) {
    std::uint64_t h = mix_seed(base_seed ^ 0x243f6a8885a308d3ULL);
    h = mix_seed(h ^ mix_seed(worker_index));
    h = mix_seed(h ^ mix_seed(epoch));
    h = mix_seed(h ^ mix_seed(purpose));
    return h;
}

}  // namespace tilesemi
