// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace splatterlab {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    return splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
}

// Portable deterministic stream; the standard distributions are
// implementation-defined, so seeded data never goes through them.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int integer(int lo, int hi) { return lo + static_cast<int>(uniform() * (hi - lo + 1)); }
    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ull;
        return splitmix64(state_);
    }

private:
    std::uint64_t state_;
};

} // namespace splatterlab
