// Eigen (via detector.hpp) must precede httplib; see backend_remote.cpp.
#include "sentinel/guard.hpp"

#include <httplib.h>

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <future>
#include <iostream>

#include "sentinel/hash.hpp"

namespace sentinel::guard {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

int level_rank(const std::string& level) {
  if (level == "debug") return 0;
  if (level == "info") return 1;
  if (level == "warn") return 2;
  if (level == "error") return 3;
  if (level == "off") return 4;
  throw Error("invalid_config", "log_level must be debug, info, warn, error or off");
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  const auto len = std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  std::snprintf(buf + len, sizeof buf - len, ".%03dZ", static_cast<int>(ms));
  return buf;
}

}  // namespace

std::string_view to_string(Action a) {
  switch (a) {
    case Action::allow: return "allow";
    case Action::block: return "block";
    case Action::flag: return "flag";
  }
  return "allow";
}

std::string_view to_string(Health h) {
  switch (h) {
    case Health::starting: return "starting";
    case Health::ok: return "ok";
    case Health::degraded: return "degraded";
  }
  return "starting";
}

void validate(const ServiceConfig& cfg) {
  if (cfg.port < 0 || cfg.port > 65535) throw Error("invalid_config", "port out of range");
  if (cfg.max_body_bytes < 1024) throw Error("invalid_config", "max_body_bytes must be >= 1 KiB");
  if (cfg.threshold && !(*cfg.threshold >= 0.0 && *cfg.threshold <= 1.0)) {
    throw Error("invalid_config", "threshold must lie in [0, 1]");
  }
  if (cfg.on_jailbreak == Action::allow) throw Error("invalid_config", "on_jailbreak must be block or flag");
  if (cfg.health_deadline.count() <= 0) throw Error("invalid_config", "health_deadline_ms must be > 0");
  (void)level_rank(cfg.log_level);
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "listen",  "bundle",     "threshold",        "on_jailbreak",       "on_error",   "max_body_bytes",
      "log",     "log_level",  "log_raw_text",     "health_deadline_ms", "probe_text"};
  return keys;
}

std::pair<std::string, int> parse_listen(std::string_view listen) {
  const auto colon = listen.rfind(':');
  if (colon == std::string_view::npos) throw Error("invalid_config", "listen must be host:port");
  std::string host(listen.substr(0, colon));
  if (host.empty()) host = "127.0.0.1";
  const std::string port_s(listen.substr(colon + 1));
  std::size_t used = 0;
  int port = -1;
  try {
    port = std::stoi(port_s, &used);
  } catch (const std::exception&) {
  }
  if (used != port_s.size() || port < 0 || port > 65535) throw Error("invalid_config", "bad port in listen");
  return {host, port};
}

ServiceConfig apply_config_json(const nlohmann::json& doc, ServiceConfig c) {
  if (!doc.is_object()) throw Error("invalid_config", "config file must hold a JSON object");
  const auto& keys = config_keys();
  try {
    for (const auto& [key, value] : doc.items()) {
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
        throw Error("invalid_config", "unknown config key '" + key + "'");
      }
    }
    if (doc.contains("listen")) std::tie(c.host, c.port) = parse_listen(doc["listen"].get<std::string>());
    if (doc.contains("bundle")) c.bundle = doc["bundle"].get<std::string>();
    if (doc.contains("threshold")) {
      c.threshold = doc["threshold"].is_null() ? std::nullopt : std::optional(doc["threshold"].get<double>());
    }
    if (doc.contains("on_jailbreak")) {
      const auto a = doc["on_jailbreak"].get<std::string>();
      if (a == "block") c.on_jailbreak = Action::block;
      else if (a == "flag") c.on_jailbreak = Action::flag;
      else throw Error("invalid_config", "on_jailbreak must be block or flag");
    }
    if (doc.contains("on_error")) {
      const auto e = doc["on_error"].get<std::string>();
      if (e == "block") c.on_error = OnError::block;
      else if (e == "fail") c.on_error = OnError::fail;
      else throw Error("invalid_config", "on_error must be fail or block");
    }
    if (doc.contains("max_body_bytes")) c.max_body_bytes = doc["max_body_bytes"].get<std::size_t>();
    if (doc.contains("log")) c.log_destination = doc["log"].get<std::string>();
    if (doc.contains("log_level")) c.log_level = doc["log_level"].get<std::string>();
    if (doc.contains("log_raw_text")) c.log_raw_text = doc["log_raw_text"].get<bool>();
    if (doc.contains("health_deadline_ms")) {
      c.health_deadline = std::chrono::milliseconds(doc["health_deadline_ms"].get<long long>());
    }
    if (doc.contains("probe_text")) c.probe_text = doc["probe_text"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_config", std::string("config type error: ") + e.what());
  }
  return c;
}

ServiceConfig apply_env(ServiceConfig c) {
  if (const char* v = std::getenv("SENTINEL_LISTEN"); v && *v) std::tie(c.host, c.port) = parse_listen(v);
  if (const char* v = std::getenv("SENTINEL_BUNDLE"); v && *v) c.bundle = v;
  if (const char* v = std::getenv("SENTINEL_THRESHOLD"); v && *v) {
    try {
      c.threshold = std::stod(v);
    } catch (const std::exception&) {
      throw Error("invalid_config", "SENTINEL_THRESHOLD is not a number");
    }
  }
  if (const char* v = std::getenv("SENTINEL_LOG_LEVEL"); v && *v) c.log_level = v;
  return c;
}

struct GuardService::Server {
  httplib::Server http;
};

GuardService::GuardService(ServiceConfig cfg) : cfg_(std::move(cfg)) {
  validate(cfg_);
  log_threshold_ = level_rank(cfg_.log_level);
  if (cfg_.log_destination == "stderr") {
    log_ = &std::cerr;
  } else if (cfg_.log_destination == "none" || cfg_.log_destination.empty()) {
    log_ = nullptr;
  } else {
    log_file_ = std::make_unique<std::ofstream>(cfg_.log_destination, std::ios::app);
    if (!*log_file_) throw Error("invalid_config", "cannot open log destination " + cfg_.log_destination);
    log_ = log_file_.get();
  }
}

GuardService::~GuardService() { stop(); }

std::shared_ptr<const Detector> GuardService::current() const {
  std::lock_guard lock(detector_mu_);
  return detector_;
}

void GuardService::attach(Detector detector) {
  auto next = std::make_shared<const Detector>(std::move(detector));
  std::lock_guard lock(detector_mu_);
  detector_ = std::move(next);
}

void GuardService::reload(Detector detector) { attach(std::move(detector)); }

void GuardService::reload_from_config() { reload(Detector(resolve_bundle(cfg_.bundle))); }

void GuardService::start() {
  ModelBundle bundle;
  try {
    bundle = resolve_bundle(cfg_.bundle);
  } catch (const Error& e) {
    throw Error(e.code(), "cannot load bundle '" + cfg_.bundle + "': " + e.what());
  }
  start(Detector(std::move(bundle)));
}

void GuardService::start(Detector detector) {
  attach(std::move(detector));
  server_ = std::make_unique<Server>();
  auto& http = server_->http;
  http.set_payload_max_length(cfg_.max_body_bytes);
  // httplib's default adds SO_REUSEPORT, which lets a second instance share
  // the port silently. A taken port must be a bind error.
  http.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  const auto send = [](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  };
  http.Post("/v1/classify", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_classify(req.body));
  });
  http.Get("/healthz", [this, send](const httplib::Request&, httplib::Response& res) { send(res, handle_health()); });
  http.Get("/v1/info", [this, send](const httplib::Request&, httplib::Response& res) { send(res, handle_info()); });
  // Bodies over the limit never reach the route handler.
  http.set_error_handler([this, send](const httplib::Request& req, httplib::Response& res) {
    if (res.status == 413 && req.path == "/v1/classify") {
      send(res, reject_oversize());
    } else if (res.body.empty()) {
      res.set_content(ordered_json{{"error", {{"code", "http_" + std::to_string(res.status)}}}}.dump(),
                      "application/json");
    }
  });

  if (cfg_.port == 0) {
    bound_port_ = http.bind_to_any_port(cfg_.host);
    if (bound_port_ <= 0) throw Error("bind_failure", "cannot bind " + cfg_.host + ":0");
  } else {
    if (!http.bind_to_port(cfg_.host, cfg_.port)) {
      throw Error("bind_failure", "cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    }
    bound_port_ = cfg_.port;
  }
  std::promise<void> finished;
  listener_done_ = finished.get_future().share();
  listener_ = std::thread([this, finished = std::move(finished)]() mutable {
    server_->http.listen_after_bind();
    finished.set_value();
  });
  server_->http.wait_until_ready();
}

void GuardService::stop() {
  std::lock_guard lock(lifecycle_mu_);
  if (server_) server_->http.stop();
  if (listener_.joinable()) listener_.join();
}

void GuardService::wait() {
  if (listener_done_.valid()) listener_done_.wait();
}

HttpReply GuardService::error_reply(int status, std::string_view code, const std::string& message) {
  return {status, ordered_json{{"error", {{"code", code}, {"message", message}}}}.dump()};
}

HttpReply GuardService::reject_oversize() {
  ++requests_;
  ++errors_;
  return error_reply(413, "payload_too_large",
                     "request body exceeds " + std::to_string(cfg_.max_body_bytes) + " bytes");
}

HttpReply GuardService::handle_classify(std::string_view body) {
  ++requests_;
  if (body.size() > cfg_.max_body_bytes) {
    --requests_;
    return reject_oversize();
  }
  const json req = json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object()) {
    ++errors_;
    return error_reply(400, "malformed_json", "request body must be a JSON object");
  }
  if (!req.contains("text")) {
    ++errors_;
    return error_reply(400, "missing_text", "\"text\" is required");
  }
  if (!req["text"].is_string()) {
    ++errors_;
    return error_reply(400, "invalid_text", "\"text\" must be a string");
  }
  std::optional<double> threshold = cfg_.threshold;
  if (req.contains("threshold") && !req["threshold"].is_null()) {
    const auto& t = req["threshold"];
    if (!t.is_number() || t.get<double>() < 0.0 || t.get<double>() > 1.0) {
      ++errors_;
      return error_reply(400, "invalid_threshold", "\"threshold\" must be a number in [0, 1]");
    }
    threshold = t.get<double>();
  }

  const auto detector = current();
  if (!detector) {
    ++errors_;
    return error_reply(503, "starting", "detector not loaded yet");
  }
  const std::string text = req["text"].get<std::string>();
  const std::string text_hash = sha256_hex(text);
  const auto t0 = Clock::now();
  Verdict verdict;
  try {
    verdict = detector->classify(text, threshold);
  } catch (const Error& e) {
    const double latency_ms = Milliseconds(Clock::now() - t0).count();
    ++faults_;
    ordered_json j{{"error", {{"code", e.code()}, {"message", e.what()}}}};
    if (cfg_.on_error == OnError::block) {
      ++blocks_;
      j["action"] = "block";
      j["model_id"] = detector->bundle().model_id;
      j["latency_ms"] = latency_ms;
      log_classification(text_hash, text, nullptr, Action::block, latency_ms, e.code());
    } else {
      ++errors_;
      log_classification(text_hash, text, nullptr, Action::allow, latency_ms, e.code());
    }
    return {503, j.dump()};
  }
  const double latency_ms = Milliseconds(Clock::now() - t0).count();

  const Action action = verdict.label == Label::jailbreak ? cfg_.on_jailbreak : Action::allow;
  switch (action) {
    case Action::allow: ++allows_; break;
    case Action::block: ++blocks_; break;
    case Action::flag: ++flags_; break;
  }
  log_classification(text_hash, text, &verdict, action, latency_ms, {});

  ordered_json j;
  j["label"] = to_string(verdict.label);
  j["score"] = verdict.score;
  j["p_jailbreak"] = verdict.jailbreak_probability;
  j["action"] = to_string(action);
  j["model_id"] = verdict.model_id;
  j["latency_ms"] = latency_ms;
  return {200, j.dump()};
}

HttpReply GuardService::handle_health() {
  const auto detector = current();
  if (!detector) return {200, ordered_json{{"status", "starting"}}.dump()};

  // The probe runs on its own thread so a wedged backend cannot hold the
  // health endpoint past the deadline.
  auto done = std::make_shared<std::promise<bool>>();
  auto result = done->get_future();
  std::thread([detector, done, probe = cfg_.probe_text] {
    try {
      (void)detector->classify(probe);
      done->set_value(true);
    } catch (...) {
      done->set_value(false);
    }
  }).detach();
  const bool healthy =
      result.wait_for(cfg_.health_deadline) == std::future_status::ready && result.get();
  return {200, ordered_json{{"status", to_string(healthy ? Health::ok : Health::degraded)}}.dump()};
}

HttpReply GuardService::handle_info() {
  const auto detector = current();
  const Counters c = counters();
  ordered_json j;
  j["model_id"] = detector ? ordered_json(detector->bundle().model_id) : ordered_json(nullptr);
  j["bundle_checksum"] = detector ? ordered_json(detector->bundle().checksum) : ordered_json(nullptr);
  j["threshold"] = cfg_.threshold ? ordered_json(*cfg_.threshold)
                                  : detector ? ordered_json(detector->bundle().threshold) : ordered_json(nullptr);
  j["version"] = kVersion;
  j["counters"] = {{"requests", c.requests}, {"allows", c.allows},   {"blocks", c.blocks},
                   {"flags", c.flags},       {"errors", c.errors},   {"backend_faults", c.backend_faults}};
  return {200, j.dump()};
}

Counters GuardService::counters() const noexcept {
  return {requests_.load(), allows_.load(), blocks_.load(), flags_.load(), errors_.load(), faults_.load()};
}

void GuardService::log_classification(const std::string& text_hash, std::string_view text, const Verdict* v,
                                      Action action, double latency_ms, const std::string& error_code) {
  if (!log_ || log_threshold_ > (error_code.empty() ? 1 : 3)) return;
  ordered_json j;
  j["timestamp"] = utc_now();
  j["text_hash"] = text_hash;
  if (cfg_.log_raw_text) j["text"] = text;
  j["label"] = v ? ordered_json(to_string(v->label)) : ordered_json(nullptr);
  j["p_jailbreak"] = v ? ordered_json(v->jailbreak_probability) : ordered_json(nullptr);
  j["action"] = error_code.empty() || cfg_.on_error == OnError::block ? ordered_json(to_string(action))
                                                                      : ordered_json(nullptr);
  j["latency_ms"] = latency_ms;
  if (!error_code.empty()) j["error"] = error_code;
  const std::string line = j.dump(-1, ' ', false, json::error_handler_t::replace);
  std::lock_guard lock(log_mu_);
  *log_ << line << '\n';
  log_->flush();
}

}  // namespace sentinel::guard
