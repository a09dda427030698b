#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace adaptfed {

/// Deterministic 64-bit generator: xoshiro256++ seeded through splitmix64.
/// Identical seed and call sequence produce identical streams on every
/// platform; none of the std distributions are used because their streams
/// are implementation-defined.
///
/// Sub-generators are derived with split(purpose), so that, e.g., the
/// partitioning stream never perturbs the initialization stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53 bits of precision.
    double next_double();

    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n);

    /// Independent generator keyed by (this seed, purpose, index).
    Rng split(const std::string& purpose, std::uint64_t index = 0) const;

    std::uint64_t seed() const { return seed_; }

    // --- samplers ---

    /// n i.i.d. draws from U(lo, hi). Requires lo < hi.
    std::vector<double> sample_uniform(double lo, double hi, std::size_t n);

    /// n i.i.d. Gaussian(mean, std) draws via Box-Muller. Requires std >= 0.
    std::vector<double> sample_gaussian(double mean, double std, std::size_t n);

    /// One Gamma(alpha, 1) draw, Marsaglia-Tsang; alpha < 1 handled by boost.
    double sample_gamma(double alpha);

    /// Dirichlet draw via normalized per-component Gamma draws. Output sums
    /// to 1 and is strictly positive. Requires all alpha > 0.
    std::vector<double> sample_dirichlet(const std::vector<double>& alpha);

    /// Fisher-Yates shuffle of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n);

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
};

}  // namespace adaptfed
