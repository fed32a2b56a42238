#pragma once

#include <cstdint>
#include <string_view>

namespace pibench::detail {

/// SplitMix64 (Steele, Lea, Flood 2014). Chosen as the payload generator
/// because its algorithm fits in four lines and reproduces bit-exactly on
/// any platform; the drawing procedure is documented in the README so other
/// implementations can regenerate the frozen fixtures.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

/// Stable 64-bit FNV-1a, used to fold strings into per-cell seeds.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

} // namespace pibench::detail
