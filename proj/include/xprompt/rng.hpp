#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace xp {

// Deterministic RNG helpers on top of std::mt19937_64. The standard library
// distributions are implementation-defined, so sampling is done by hand;
// a given seed produces the same stream on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1), 53-bit resolution
    double next_double() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n); n must be > 0
    uint64_t below(uint64_t n);

    // standard normal via Box-Muller, spare value cached
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    template <typename T>
    const T& pick(const std::vector<T>& v) {
        return v[below(v.size())];
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

uint64_t fnv1a64(const void* data, size_t len, uint64_t state = 0xcbf29ce484222325ull);
uint64_t fnv1a64(std::string_view s, uint64_t state = 0xcbf29ce484222325ull);

// stable sub-seed derivation, e.g. one stream per user id
inline uint64_t derive_seed(uint64_t base, std::string_view tag) {
    return fnv1a64(tag, base ^ 0x9e3779b97f4a7c15ull);
}

}  // namespace xp
