#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>

namespace retropanel {

// Shortest decimal representation that round-trips the exact double.
// Locale independent, so serialized output is byte stable.
std::string format_double(double x);

enum class LogLevel : int { none = 0, error = 1, warn = 2, info = 3, debug = 4 };

// Level comes from the RETROPANEL_LOG environment variable
// (none|error|warn|info|debug), read once. Default: warn.
LogLevel log_level();
void log_message(LogLevel level, std::string_view message);

inline void log_error(std::string_view m) { log_message(LogLevel::error, m); }
inline void log_warn(std::string_view m) { log_message(LogLevel::warn, m); }
inline void log_info(std::string_view m) { log_message(LogLevel::info, m); }
inline void log_debug(std::string_view m) { log_message(LogLevel::debug, m); }

// Named RNG streams. Every stochastic step seeds its own engine from
// (seed, stream, index) so results do not depend on evaluation order or
// thread count.
namespace rng_stream {
inline constexpr std::uint64_t cv_fold = 0x01;
inline constexpr std::uint64_t bootstrap = 0x02;
inline constexpr std::uint64_t placebo = 0x03;
inline constexpr std::uint64_t comparison = 0x04;
inline constexpr std::uint64_t pooled = 0x05;
inline constexpr std::uint64_t dgp_loadings = 0x10;
inline constexpr std::uint64_t dgp_factors = 0x11;
inline constexpr std::uint64_t dgp_unit_effects = 0x12;
inline constexpr std::uint64_t dgp_time_effects = 0x13;
inline constexpr std::uint64_t dgp_noise = 0x14;
inline constexpr std::uint64_t dgp_covariate = 0x15;
}  // namespace rng_stream

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

// Runs fn(0..n-1) on up to `threads` workers. Results must be written to
// per-index slots by the caller; indices are claimed atomically, so the
// set of executed calls is the same for any thread count. Exceptions
// propagate (first one wins).
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace retropanel
