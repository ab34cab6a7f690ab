#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace demux {

// Malformed input files (bad TSV/JSONL rows, bad vocab files). Messages name
// the offending line where one exists.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration: bad ratios, unknown config keys, impossible sizes.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Runtime input violations: shape mismatches, out-of-range token ids.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training diverged (non-finite loss).
class TrainingDiverged : public std::runtime_error {
public:
    explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG. The engine is std::mt19937_64 (fully specified by the
// standard); the distribution mappings are spelled out here because the
// stdlib distributions are implementation-defined and results must reproduce
// across compilers.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    // Derive an independent stream, e.g. one per component or per seed run.
    Rng fork(std::uint64_t stream) const {
        return Rng(splitmix64(seed_of(engine_) ^ splitmix64(stream + 0x51ed2701ULL)));
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_int(std::uint64_t n) {
        // rejection sampling over the largest multiple of n
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform01() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Draw an index from an (unnormalized) nonnegative weight vector.
    std::size_t discrete(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double x = uniform01() * total;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            x -= weights[i];
            if (x < 0.0) return i;
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

private:
    static std::uint64_t seed_of(const std::mt19937_64& e) {
        // mt19937_64 state is not observable; re-seed forks from a copy's output
        std::mt19937_64 copy = e;
        return copy();
    }

    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

using LabelBits = std::vector<std::uint8_t>;
using LabelMatrix = std::vector<LabelBits>;  // one row of 0/1 per example

// Exact (erf-based) GELU and its derivative.
inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
}

inline double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
    const double pdf = std::exp(-0.5 * x * x) * 0.39894228040143267794;
    return cdf + x * pdf;
}

// --- minimal UTF-8 handling -------------------------------------------------

constexpr char32_t kReplacementChar = 0xFFFD;

// Decode UTF-8 into codepoints. Invalid bytes decode to U+FFFD so downstream
// code is total over arbitrary byte strings.
inline std::vector<char32_t> decode_utf8(const std::string& s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    std::size_t i = 0;
    const auto cont = [&](std::size_t k) {
        return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0u) == 0x80u;
    };
    while (i < s.size()) {
        const unsigned char b = static_cast<unsigned char>(s[i]);
        if (b < 0x80u) {
            out.push_back(b);
            i += 1;
        } else if ((b & 0xE0u) == 0xC0u && cont(1)) {
            char32_t c = ((b & 0x1Fu) << 6) | (static_cast<unsigned char>(s[i + 1]) & 0x3Fu);
            out.push_back(c < 0x80 ? kReplacementChar : c);
            i += 2;
        } else if ((b & 0xF0u) == 0xE0u && cont(1) && cont(2)) {
            char32_t c = ((b & 0x0Fu) << 12) | ((static_cast<unsigned char>(s[i + 1]) & 0x3Fu) << 6) |
                         (static_cast<unsigned char>(s[i + 2]) & 0x3Fu);
            out.push_back((c < 0x800 || (c >= 0xD800 && c <= 0xDFFF)) ? kReplacementChar : c);
            i += 3;
        } else if ((b & 0xF8u) == 0xF0u && cont(1) && cont(2) && cont(3)) {
            char32_t c = ((b & 0x07u) << 18) | ((static_cast<unsigned char>(s[i + 1]) & 0x3Fu) << 12) |
                         ((static_cast<unsigned char>(s[i + 2]) & 0x3Fu) << 6) |
                         (static_cast<unsigned char>(s[i + 3]) & 0x3Fu);
            out.push_back((c < 0x10000 || c > 0x10FFFF) ? kReplacementChar : c);
            i += 4;
        } else {
            out.push_back(kReplacementChar);
            i += 1;
        }
    }
    return out;
}

inline void append_utf8(std::string& out, char32_t c) {
    if (c < 0x80) {
        out.push_back(static_cast<char>(c));
    } else if (c < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (c >> 6)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    } else if (c < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (c >> 12)));
        out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (c >> 18)));
        out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    }
}

inline std::string encode_utf8(const std::vector<char32_t>& cs) {
    std::string out;
    out.reserve(cs.size());
    for (char32_t c : cs) append_utf8(out, c);
    return out;
}

}  // namespace demux
