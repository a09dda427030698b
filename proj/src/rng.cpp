#include "adaptfed/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace adaptfed {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

// FNV-1a over the purpose string, mixed into the parent seed.
std::uint64_t hash_purpose(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("next_below: n must be positive");
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return v % n;
}

Rng Rng::split(const std::string& purpose, std::uint64_t index) const {
    std::uint64_t x = seed_ ^ hash_purpose(purpose);
    std::uint64_t a = splitmix64(x);
    x ^= index * 0x9E3779B97F4A7C15ULL;
    std::uint64_t b = splitmix64(x);
    return Rng(a ^ rotl(b, 32));
}

std::vector<double> Rng::sample_uniform(double lo, double hi, std::size_t n) {
    if (!(lo < hi)) throw std::invalid_argument("sample_uniform: requires lo < hi");
    std::vector<double> out(n);
    for (auto& v : out) v = lo + (hi - lo) * next_double();
    return out;
}

std::vector<double> Rng::sample_gaussian(double mean, double std, std::size_t n) {
    if (std < 0) throw std::invalid_argument("sample_gaussian: requires std >= 0");
    std::vector<double> out(n);
    for (auto& v : out) {
        // Box-Muller; each draw consumes exactly two uniforms so the stream
        // position is independent of n's parity.
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        v = mean + std * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
    return out;
}

double Rng::sample_gamma(double alpha) {
    if (!(alpha > 0)) throw std::invalid_argument("sample_gamma: requires alpha > 0");
    if (alpha < 1.0) {
        // boost: Gamma(a) = Gamma(a+1) * U^(1/a)
        const double u = std::max(next_double(), 1e-300);
        return sample_gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = sample_gaussian(0.0, 1.0, 1)[0];
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = next_double();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::vector<double> Rng::sample_dirichlet(const std::vector<double>& alpha) {
    if (alpha.empty()) throw std::invalid_argument("sample_dirichlet: empty alpha");
    std::vector<double> out(alpha.size());
    double total = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        if (!(alpha[i] > 0)) throw std::invalid_argument("sample_dirichlet: requires alpha > 0");
        out[i] = std::max(sample_gamma(alpha[i]), 1e-300);
        total += out[i];
    }
    for (auto& v : out) v /= total;
    return out;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = next_below(i);
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

}  // namespace adaptfed
