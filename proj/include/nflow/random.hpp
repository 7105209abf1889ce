#ifndef NFLOW_RANDOM_HPP
#define NFLOW_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace nflow {

/// SplitMix64 (Steele, Lea, Flood 2014). Pinned so that bases are
/// reproducible bit-for-bit in any language.
class SplitMix64 {
  public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t operator()() noexcept { return next(); }
    static constexpr std::uint64_t min() noexcept { return 0; }
    static constexpr std::uint64_t max() noexcept { return ~std::uint64_t{0}; }

    /// Uniform in [0, 1) from the top 53 bits.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  private:
    std::uint64_t state_;
};

/// Draws `count` i.i.d. N(0, variance) values. Each pair consumes two raw
/// outputs (a, b): u1 = ((a >> 11) + 1) * 2^-53 in (0, 1], u2 = (b >> 11) * 2^-53,
/// r = sqrt(-2 ln u1), values r*cos(2 pi u2) then r*sin(2 pi u2). An odd
/// count drops the final sine value.
inline std::vector<double> box_muller_normals(std::uint64_t seed, std::size_t count,
                                              double variance) {
    SplitMix64 gen(seed);
    const double scale = std::sqrt(variance);
    std::vector<double> out;
    out.reserve(count);
    while (out.size() < count) {
        const double u1 = static_cast<double>((gen.next() >> 11) + 1) * 0x1.0p-53;
        const double u2 = static_cast<double>(gen.next() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        out.push_back(scale * r * std::cos(angle));
        if (out.size() < count) {
            out.push_back(scale * r * std::sin(angle));
        }
    }
    return out;
}

} // namespace nflow

#endif // NFLOW_RANDOM_HPP
