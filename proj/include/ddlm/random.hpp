#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ddlm/errors.hpp"

namespace ddlm {

// Counter-based random stream built on Philox4x32-10 (Salmon et al., SC'11).
// The generator is a pure function of (key, counter), so streams can be
// forked per (batch, position, step) label without any sequencing hazards:
// identical seed + identical call sequence gives identical output on every
// platform and thread count.
class RandomStream {
public:
    static constexpr std::string_view kAlgorithm = "philox4x32-10";

    explicit RandomStream(uint64_t seed = 0) : key_{split_lo(seed), split_hi(seed)} {}

    uint64_t seed() const { return (uint64_t(key_[1]) << 32) | key_[0]; }

    // Child stream deterministic in (seed, label). The label is run through
    // one Philox block keyed by this stream's seed, so nearby labels give
    // unrelated child seeds.
    RandomStream fork(uint64_t label) const {
        std::array<uint32_t, 4> ctr = {split_lo(label), split_hi(label), 0x5eedf0cau, 0x9e3779b9u};
        std::array<uint32_t, 4> out = philox_block(ctr, key_);
        return RandomStream((uint64_t(out[1]) << 32) | out[0]);
    }

    RandomStream fork(std::string_view label) const { return fork(fnv1a64(label)); }

    // Convenience for multi-index labels, e.g. fork(step, position).
    RandomStream fork(uint64_t a, uint64_t b) const { return fork(a).fork(b); }

    uint32_t next_u32() {
        if (buf_pos_ == 4) refill();
        return buf_[buf_pos_++];
    }

    uint64_t next_u64() {
        uint64_t lo = next_u32();
        uint64_t hi = next_u32();
        return (hi << 32) | lo;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n).
    uint64_t randint(uint64_t n) {
        if (n == 0) throw UsageError("randint: n must be positive");
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t r = next_u64();
        while (r >= limit) r = next_u64();
        return r % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller with cached spare.
    double normal(double mu = 0.0, double sigma = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + sigma * spare_;
        }
        double u = 1.0 - uniform();  // (0, 1], keeps log finite
        double v = uniform();
        double r = std::sqrt(-2.0 * std::log(u));
        double theta = 2.0 * 3.141592653589793238462643383279502884 * v;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mu + sigma * r * std::cos(theta);
    }

    // Normal(0, std) rejected outside +-2 std, the usual init truncation.
    double truncated_normal(double std_dev) {
        for (;;) {
            double x = normal(0.0, std_dev);
            if (std::abs(x) <= 2.0 * std_dev) return x;
        }
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(randint(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    static uint64_t fnv1a64(std::string_view s) {
        uint64_t h = 14695981039346656037ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    }

private:
    explicit RandomStream(std::array<uint32_t, 2> key) : key_(key) {}

    static uint32_t split_lo(uint64_t x) { return uint32_t(x & 0xffffffffu); }
    static uint32_t split_hi(uint64_t x) { return uint32_t(x >> 32); }

    static void mulhilo(uint32_t a, uint32_t b, uint32_t& lo, uint32_t& hi) {
        uint64_t p = uint64_t(a) * uint64_t(b);
        lo = uint32_t(p);
        hi = uint32_t(p >> 32);
    }

    static std::array<uint32_t, 4> philox_block(std::array<uint32_t, 4> ctr,
                                                std::array<uint32_t, 2> key) {
        constexpr uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
        constexpr uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
        for (int round = 0; round < 10; ++round) {
            uint32_t lo0, hi0, lo1, hi1;
            mulhilo(kM0, ctr[0], lo0, hi0);
            mulhilo(kM1, ctr[2], lo1, hi1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += kW0;
            key[1] += kW1;
        }
        return ctr;
    }

    void refill() {
        std::array<uint32_t, 4> ctr = {split_lo(counter_), split_hi(counter_), 0, 0};
        buf_ = philox_block(ctr, key_);
        ++counter_;
        buf_pos_ = 0;
    }

    std::array<uint32_t, 2> key_;
    uint64_t counter_ = 0;
    std::array<uint32_t, 4> buf_{};
    int buf_pos_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ddlm
