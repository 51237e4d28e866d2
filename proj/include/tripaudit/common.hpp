#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tripaudit {

// Error categories; the CLI maps these onto exit codes.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Endpoint { pickup, dropoff };
enum class EstimateVariant { min_est, point, max_est };

inline std::string to_string(Endpoint e) { return e == Endpoint::pickup ? "pickup" : "dropoff"; }
inline std::string to_string(EstimateVariant v) {
    switch (v) {
        case EstimateVariant::min_est: return "min";
        case EstimateVariant::max_est: return "max";
        default: return "point";
    }
}

struct ConfigError;  // forward declared for the parsers below

Endpoint parse_endpoint(std::string_view s);
EstimateVariant parse_variant(std::string_view s);
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegeneracyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Neumaier-compensated accumulator. Used for every statistical sum so that
// results do not drift with accumulation grouping.
class Neumaier {
  public:
    void add(double x) {
        double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    void merge(const Neumaier& other) {
        add(other.sum_);
        comp_ += other.comp_;
    }
    double value() const { return sum_ + comp_; }

  private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double compensated_sum(std::span<const double> v) {
    Neumaier acc;
    for (double x : v) acc.add(x);
    return acc.value();
}

inline double mean(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("mean: empty input");
    return compensated_sum(v) / static_cast<double>(v.size());
}

// Population variance (divide by N).
inline double population_variance(std::span<const double> v) {
    double m = mean(v);
    Neumaier acc;
    for (double x : v) {
        double dev = x - m;
        acc.add(dev * dev);
    }
    return acc.value() / static_cast<double>(v.size());
}

inline double population_stddev(std::span<const double> v) {
    return std::sqrt(population_variance(v));
}

// Linear-interpolation percentile of an ascending-sorted vector, p in [0,100].
inline double percentile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw std::invalid_argument("percentile: empty input");
    if (p <= 0.0) return sorted.front();
    if (p >= 100.0) return sorted.back();
    double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(rank);
    double frac = rank - static_cast<double>(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

// Shortest round-trip decimal representation.
inline std::string format_double(double x) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    (void)ec;
    return std::string(buf, ptr);
}

inline std::string format_fixed(double x, int precision) {
    char buf[64];
    auto [ptr, ec] =
        std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::fixed, precision);
    (void)ec;
    return std::string(buf, ptr);
}

// FNV-1a, used for input provenance digests and seed derivation from names.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

inline std::string file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open file for digest: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
    }
    return hex64(h);
}

inline Endpoint parse_endpoint(std::string_view s) {
    if (s == "pickup") return Endpoint::pickup;
    if (s == "dropoff") return Endpoint::dropoff;
    throw ConfigError("unknown endpoint '" + std::string(s) + "' (expected pickup or dropoff)");
}

inline EstimateVariant parse_variant(std::string_view s) {
    if (s == "min") return EstimateVariant::min_est;
    if (s == "point") return EstimateVariant::point;
    if (s == "max") return EstimateVariant::max_est;
    throw ConfigError("unknown estimate variant '" + std::string(s) +
                      "' (expected min, point, or max)");
}

}  // namespace tripaudit
