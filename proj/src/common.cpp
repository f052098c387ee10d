#include "steer/common.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>

namespace steer {

std::string_view to_string(ErrorCategory cat) {
    switch (cat) {
        case ErrorCategory::invalid_question: return "invalid-question";
        case ErrorCategory::invalid_response: return "invalid-response";
        case ErrorCategory::parse: return "parse";
        case ErrorCategory::referential_integrity: return "referential-integrity";
        case ErrorCategory::duplicate_response: return "duplicate-response";
        case ErrorCategory::degenerate_split: return "degenerate-split";
        case ErrorCategory::dimension: return "dimension";
        case ErrorCategory::undefined_mean: return "undefined-mean";
        case ErrorCategory::training_diverged: return "training-diverged";
        case ErrorCategory::insufficient_data: return "insufficient-data";
        case ErrorCategory::invalid_k: return "invalid-k";
        case ErrorCategory::empty_group: return "empty-group";
        case ErrorCategory::empty_support: return "empty-support";
        case ErrorCategory::lookup: return "lookup";
        case ErrorCategory::invalid_input: return "invalid-input";
        case ErrorCategory::vocab: return "vocab";
        case ErrorCategory::alignment: return "alignment";
        case ErrorCategory::frozen_violation: return "frozen-violation";
        case ErrorCategory::dependency: return "dependency";
        case ErrorCategory::incompatibility: return "incompatibility";
        case ErrorCategory::io: return "io";
        case ErrorCategory::config: return "config";
    }
    return "unknown";
}

std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCategory::io, "cannot open file for hashing: " + path);
    uint64_t h = kFnvOffset;
    char buf[1 << 14];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = fnv1a64(std::string_view(buf, static_cast<size_t>(in.gcount())), h);
        if (!in) break;
    }
    return h;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("PERSONA_STEER_LOG");
        if (!env) return LogLevel::warn;
        std::string_view s(env);
        if (s == "error") return LogLevel::error;
        if (s == "warn") return LogLevel::warn;
        if (s == "info") return LogLevel::info;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::warn;
    }();
    return level;
}

void log_message(LogLevel level, const std::string& msg) {
    if (level > log_level()) return;
    static std::mutex mu;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::lock_guard<std::mutex> lock(mu);
    std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

}  // namespace steer
