#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace twintower {

// Seeded RNG used everywhere a seed appears in the public surface.
// The raw engine is std::mt19937_64 (bit-exact by the standard); the
// distribution mappings are written out by hand so that streams do not
// depend on the standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller with a cached spare
    double normal(double mean, double stddev);

    // uniform integer in [0, n), unbiased
    std::uint64_t below(std::uint64_t n);

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Derives independent sub-seeds (per epoch, per tower, ...) from a base seed.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);

} // namespace twintower
