#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentinel/detector.hpp"

namespace sentinel::guard {

inline constexpr std::string_view kVersion = "0.1.0";

enum class Action { allow, block, flag };
std::string_view to_string(Action a);

/// What to do when the backend fails: answer 503, or additionally mark the
/// request blocked (fail-closed).
enum class OnError { fail, block };

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string bundle = "heuristic";
  std::optional<double> threshold;
  Action on_jailbreak = Action::block;
  OnError on_error = OnError::fail;
  std::size_t max_body_bytes = 64 * 1024;
  std::string log_destination = "stderr";  // "stderr", "none", or a file path
  std::string log_level = "info";          // debug | info | warn | error | off
  bool log_raw_text = false;
  std::chrono::milliseconds health_deadline{1000};
  std::string probe_text = "hi how are you?";
};

/// Throws Error("invalid_config").
void validate(const ServiceConfig& cfg);

/// Keys accepted by the config file (and, dash-separated, as serve flags).
const std::vector<std::string>& config_keys();

/// Overlays the keys present in `doc` onto `base`. Unknown keys are errors.
ServiceConfig apply_config_json(const nlohmann::json& doc, ServiceConfig base);

/// Overlays SENTINEL_LISTEN (host:port), SENTINEL_BUNDLE, SENTINEL_THRESHOLD
/// and SENTINEL_LOG_LEVEL onto `base`.
ServiceConfig apply_env(ServiceConfig base);

/// Parses "host:port" or ":port".
std::pair<std::string, int> parse_listen(std::string_view listen);

struct Counters {
  std::uint64_t requests = 0;
  std::uint64_t allows = 0;
  std::uint64_t blocks = 0;
  std::uint64_t flags = 0;
  std::uint64_t errors = 0;
  std::uint64_t backend_faults = 0;  // also counted in blocks or errors
};

struct HttpReply {
  int status = 200;
  std::string body;  // JSON
};

enum class Health { starting, ok, degraded };
std::string_view to_string(Health h);

// Endpoints:
//   POST /v1/classify  {"text": str, "threshold"?: num}
//        -> {"label","score","p_jailbreak","action","model_id","latency_ms"}
//   GET  /healthz      {"status": "ok"|"degraded"|"starting"}
//   GET  /v1/info      model, bundle checksum, threshold in effect, version, counters
class GuardService {
 public:
  explicit GuardService(ServiceConfig cfg);
  ~GuardService();
  GuardService(const GuardService&) = delete;
  GuardService& operator=(const GuardService&) = delete;

  /// Loads cfg.bundle, binds and serves on a background thread. Throws
  /// (missing bundle, bind failure) before any traffic is accepted.
  void start();
  /// As start(), with an already constructed detector.
  void start(Detector detector);
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();

  /// Bound port (useful with port 0).
  int port() const noexcept { return bound_port_; }

  /// Swaps in a new detector. In-flight requests finish on the old one.
  void reload(Detector detector);
  void reload_from_config();

  /// Installs a detector without starting the HTTP listener.
  void attach(Detector detector);

  HttpReply handle_classify(std::string_view body);
  HttpReply handle_health();
  HttpReply handle_info();
  /// Accounts a request rejected before the handler ran (oversize body).
  HttpReply reject_oversize();

  Counters counters() const noexcept;
  const ServiceConfig& config() const noexcept { return cfg_; }

 private:
  std::shared_ptr<const Detector> current() const;
  void log_classification(const std::string& text_hash, std::string_view text, const Verdict* v, Action action,
                          double latency_ms, const std::string& error_code);
  HttpReply error_reply(int status, std::string_view code, const std::string& message);

  struct Server;
  ServiceConfig cfg_;
  std::unique_ptr<Server> server_;
  std::thread listener_;
  std::shared_future<void> listener_done_;
  std::mutex lifecycle_mu_;
  int bound_port_ = 0;

  mutable std::mutex detector_mu_;
  std::shared_ptr<const Detector> detector_;

  std::mutex log_mu_;
  std::unique_ptr<std::ostream> log_file_;
  std::ostream* log_ = nullptr;
  int log_threshold_ = 1;

  std::atomic<std::uint64_t> requests_{0}, allows_{0}, blocks_{0}, flags_{0}, errors_{0}, faults_{0};
};

}  // namespace sentinel::guard
