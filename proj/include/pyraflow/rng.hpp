#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace pyraflow {

// splitmix64 finalizer; used to derive independent seeds for named streams
// so that parallel/reordered generation stays byte-reproducible.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    return mix64(mix64(mix64(seed ^ mix64(a)) ^ mix64(b)) ^ mix64(c));
}

// mt19937_64 with explicit float mappings. The engine is bit-specified by
// the standard; the distributions are not, so they are done by hand.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next() { return eng_(); }

    // [0, 1), 24-bit resolution (exact in float)
    float unit() { return static_cast<float>(eng_() >> 40) * 0x1p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * unit(); }

    // [0, n)
    std::size_t index(std::size_t n) { return eng_() % n; }

    // Fisher-Yates; std::shuffle's draw sequence is implementation-defined,
    // this one is pinned.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace pyraflow
