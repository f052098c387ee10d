#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace steer {

// Machine-readable error categories; the CLI prints them on stderr and maps
// them to a nonzero exit status.
enum class ErrorCategory {
    invalid_question,
    invalid_response,
    parse,
    referential_integrity,
    duplicate_response,
    degenerate_split,
    dimension,
    undefined_mean,
    training_diverged,
    insufficient_data,
    invalid_k,
    empty_group,
    empty_support,
    lookup,
    invalid_input,
    vocab,
    alignment,
    frozen_violation,
    dependency,
    incompatibility,
    io,
    config,
};

std::string_view to_string(ErrorCategory cat);

class SteerError : public std::runtime_error {
  public:
    SteerError(ErrorCategory cat, const std::string& msg)
        : std::runtime_error(msg), cat_(cat) {}
    ErrorCategory category() const noexcept { return cat_; }

  private:
    ErrorCategory cat_;
};

[[noreturn]] inline void fail(ErrorCategory cat, const std::string& msg) {
    throw SteerError(cat, msg);
}

// ---------------------------------------------------------------------------
// Hashing (FNV-1a, 64 bit) for config fingerprints and input-file hashes.
// ---------------------------------------------------------------------------
constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

inline uint64_t fnv1a64(std::string_view bytes, uint64_t h = kFnvOffset) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hash_hex(uint64_t h);
uint64_t hash_file(const std::string& path);  // throws io error

// ---------------------------------------------------------------------------
// Seeding. All randomness flows from explicit seeds; sub-streams are derived
// with splitmix64 so results do not depend on iteration order.
// ---------------------------------------------------------------------------
using Rng = std::mt19937_64;

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    return splitmix64(seed ^ splitmix64(salt));
}

inline uint64_t mix_seed(uint64_t seed, std::string_view salt) {
    return mix_seed(seed, fnv1a64(salt));
}

// Partition-size rule: floor with a tiny epsilon so that e.g. 10 * (1 - 0.8)
// counts as 2, not 1, despite binary rounding of the fraction.
inline int floor_fraction_count(int n, double fraction) {
    return static_cast<int>(std::floor(static_cast<double>(n) * fraction + 1e-9));
}

// ---------------------------------------------------------------------------
// Small dense-vector helpers shared by the numeric modules.
// ---------------------------------------------------------------------------
inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

// Shortest round-trippable decimal text for a double; used by every CSV
// emitter so identical runs produce identical bytes.
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Logging. Level comes from PERSONA_STEER_LOG (error|warn|info|debug).
// ---------------------------------------------------------------------------
enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

LogLevel log_level();
void log_message(LogLevel level, const std::string& msg);

inline void log_info(const std::string& msg) { log_message(LogLevel::info, msg); }
inline void log_warn(const std::string& msg) { log_message(LogLevel::warn, msg); }
inline void log_debug(const std::string& msg) { log_message(LogLevel::debug, msg); }

}  // namespace steer
