#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace ardx {

// Deterministic RNG with hand-rolled distributions. std::mt19937 is portable
// but the std <random> distributions are implementation-defined, which would
// break bitwise reproducibility of experiments across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        // splitmix64 expansion of the seed into xoshiro256++ state
        uint64_t x = seed;
        for (auto& s : state_) {
            x += 0x9e3779b97f4a7c15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            s = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // [0, 1) with 53 random bits
    double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    // standard normal, Box-Muller with cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform01(); } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // unbiased integer in [0, n)
    int uniform_int(int n) {
        const uint64_t bound = uint64_t(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t r = next_u64();
        while (r >= limit) r = next_u64();
        return int(r % bound);
    }

    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i) p[i] = i;
        for (int i = n - 1; i > 0; --i) {
            const int j = uniform_int(i + 1);
            std::swap(p[i], p[j]);
        }
        return p;
    }

    // full generator state, for checkpointing (spare included)
    struct State {
        uint64_t s[4];
        bool has_spare;
        double spare;
    };
    State state() const { return {{state_[0], state_[1], state_[2], state_[3]}, has_spare_, spare_}; }
    void set_state(const State& st) {
        for (int i = 0; i < 4; ++i) state_[i] = st.s[i];
        has_spare_ = st.has_spare;
        spare_ = st.spare;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4] = {};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace ardx
