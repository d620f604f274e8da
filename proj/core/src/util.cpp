#include "retropanel/util.hpp"

#include <atomic>
#include <charconv>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <mutex>
#include <thread>
#include <vector>

#include "retropanel/errors.hpp"

namespace retropanel {

std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::parse_error: return "parse_error";
    case Errc::io_error: return "io_error";
    case Errc::missing_cell: return "missing_cell";
    case Errc::duplicate_cell: return "duplicate_cell";
    case Errc::non_binary_treatment: return "non_binary_treatment";
    case Errc::non_absorbing_treatment: return "non_absorbing_treatment";
    case Errc::never_treated_unit: return "never_treated_unit";
    case Errc::no_later_treated: return "no_later_treated";
    case Errc::no_always_treated: return "no_always_treated";
    case Errc::missing_post_window: return "missing_post_window";
    case Errc::window_not_all_treated: return "window_not_all_treated";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::covariate_mismatch: return "covariate_mismatch";
    case Errc::missing_counterfactual: return "missing_counterfactual";
    case Errc::bad_pivot: return "bad_pivot";
    case Errc::empty_grid: return "empty_grid";
    case Errc::fold_too_small: return "fold_too_small";
    case Errc::rank_too_low: return "rank_too_low";
    case Errc::collinear_treatment: return "collinear_treatment";
    case Errc::bad_config: return "bad_config";
    case Errc::degenerate_weights: return "degenerate_weights";
    case Errc::pipeline_failure: return "pipeline_failure";
    case Errc::svd_failure: return "svd_failure";
    case Errc::internal_error: return "internal_error";
  }
  return "unknown";
}

void raise(Errc code, const std::string& message) { throw Error(code, message); }

ExitCode exit_code_for(Errc code) {
  switch (code) {
    case Errc::bad_config:
      return ExitCode::usage;
    case Errc::degenerate_weights:
    case Errc::pipeline_failure:
      return ExitCode::convergence;
    case Errc::svd_failure:
    case Errc::internal_error:
      return ExitCode::internal;
    default:
      return ExitCode::data;
  }
}

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("RETROPANEL_LOG");
    if (env == nullptr) return LogLevel::warn;
    std::string v(env);
    if (v == "none") return LogLevel::none;
    if (v == "error") return LogLevel::error;
    if (v == "warn") return LogLevel::warn;
    if (v == "info") return LogLevel::info;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::warn;
  }();
  return level;
}

void log_message(LogLevel level, std::string_view message) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  static std::mutex mu;
  const char* tag = "info";
  switch (level) {
    case LogLevel::error: tag = "error"; break;
    case LogLevel::warn: tag = "warn"; break;
    case LogLevel::info: tag = "info"; break;
    case LogLevel::debug: tag = "debug"; break;
    default: break;
  }
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "retropanel [" << tag << "] " << message << "\n";
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      int i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace retropanel
