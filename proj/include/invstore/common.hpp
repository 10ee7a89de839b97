// Shared aliases, error types and a reproducible RNG used across the library.
#ifndef INVSTORE_COMMON_HPP
#define INVSTORE_COMMON_HPP

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace invstore {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

struct InvstoreError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionMismatch : InvstoreError {
    using InvstoreError::InvstoreError;
};

struct SingularKkt : InvstoreError {
    using InvstoreError::InvstoreError;
};

struct SchemaError : InvstoreError {
    using InvstoreError::InvstoreError;
};

struct ModelLoadError : InvstoreError {
    using InvstoreError::InvstoreError;
};

struct InsufficientPrices : InvstoreError {
    using InvstoreError::InvstoreError;
};

struct NoActivationObserved : InvstoreError {
    using InvstoreError::InvstoreError;
};

struct DivergedLoss : InvstoreError {
    using InvstoreError::InvstoreError;
};

// Deterministic RNG. The uniform/normal draws are hand-mapped from the raw
// 64-bit stream so results do not depend on the standard library's
// distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // in [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, one value per call (the pair's sibling is cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        // modulo bias is irrelevant for the small n used here
        return engine_() % n;
    }

    std::uint64_t raw() { return engine_(); }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64; used to derive independent per-sample seeds from a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline void require(bool cond, const std::string& what) {
    if (!cond) throw DimensionMismatch(what);
}

} // namespace invstore

#endif
