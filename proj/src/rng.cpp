#include "xprompt/rng.hpp"

#include <cmath>

namespace xp {

uint64_t Rng::below(uint64_t n) {
    // rejection sampling on the top bits, unbiased
    const uint64_t limit = n * (UINT64_MAX / n);
    uint64_t x = gen_();
    while (x >= limit) {
        x = gen_();
    }
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; 1-u keeps log() away from zero
    const double u = 1.0 - next_double();
    const double v = next_double();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = 6.283185307179586476925286766559 * v;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t state) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        state ^= p[i];
        state *= 0x100000001b3ull;
    }
    return state;
}

uint64_t fnv1a64(std::string_view s, uint64_t state) {
    return fnv1a64(s.data(), s.size(), state);
}

}  // namespace xp
