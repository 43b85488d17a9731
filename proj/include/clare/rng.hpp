#pragma once

#include <cstdint>
#include <initializer_list>

namespace clare {

// splitmix64 step; also used to expand seeds into generator state.
inline std::uint64_t splitmix64_next(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Order-sensitive seed derivation so independent streams (per stage, per
// episode, per purpose) never alias. Cheap and fully portable.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
    std::uint64_t s = base;
    for (std::uint64_t p : parts) {
        s ^= p + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
        splitmix64_next(s);
    }
    return s;
}

// Tag strings folded into seeds ("pretrain", "eval", ...).
inline std::uint64_t seed_tag(const char* s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (; *s; ++s) {
        h ^= static_cast<unsigned char>(*s);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// xoshiro256++ with explicit integer state. The same seed yields the same
// stream on every platform; no standard-library distributions are used
// anywhere (their outputs are implementation defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64_next(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; the pair is cached so draws come in a
    // deterministic order.
    double gaussian();

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n);

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace clare
