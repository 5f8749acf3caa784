#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace pivotrank {

/// FNV-1a, stable across platforms (std::hash is not).
class StableHash {
   public:
    StableHash& add(std::string_view s)
    {
        for (unsigned char c : s) {
            state_ = (state_ ^ c) * 0x100000001b3ULL;
        }
        // field separator so ("ab","c") != ("a","bc")
        state_ = (state_ ^ 0xffU) * 0x100000001b3ULL;
        return *this;
    }
    StableHash& add(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) {
            state_ = (state_ ^ ((v >> (8 * i)) & 0xffU)) * 0x100000001b3ULL;
        }
        return *this;
    }
    std::uint64_t value() const noexcept { return state_; }

   private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

/// mt19937_64 with distribution code of our own so sequences are identical
/// across standard library implementations.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n)
    {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = engine_();
        while (x >= limit) {
            x = engine_();
        }
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v)
    {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

   private:
    std::mt19937_64 engine_;
};

}  // namespace pivotrank
