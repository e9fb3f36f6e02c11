#ifndef FACTO_RNG_HPP
#define FACTO_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace facto {

// splitmix64 finalizer, used to derive independent substream seeds from
// (seed, epoch, sample) tuples so parallel scheduling cannot change draws.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }
inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) { return mix64(mix64(a, b), c); }

// Seeded generator with hand-rolled distributions. std distributions are
// implementation-defined, so draws go through fixed arithmetic instead.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) {
        // rejection sampling keeps the draw unbiased
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do { v = eng_(); } while (v >= limit);
        return v % n;
    }

    // standard normal via Box-Muller
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do { u1 = uniform(); } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // normal(0, sigma) truncated to +-2 sigma by resampling
    double trunc_normal(double sigma) {
        double x;
        do { x = normal(); } while (std::abs(x) > 2.0);
        return x * sigma;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace facto

#endif
