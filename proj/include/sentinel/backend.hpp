#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "sentinel/error.hpp"
#include "sentinel/softmax.hpp"
#include "sentinel/tokenizer.hpp"

namespace sentinel {

/// Raised by backends; the detector reports it as a classification error,
/// never as a verdict.
class BackendError : public Error {
 public:
  explicit BackendError(const std::string& message) : Error("backend_failure", message) {}
};

/// Maps a batch of token sequences to one row of two logits per item, in
/// label-map order. Identical inputs must give identical logits.
class InferenceBackend {
 public:
  virtual ~InferenceBackend() = default;

  virtual LogitMatrixd infer(std::span<const TokenSequence> batch) = 0;

  /// Backends returning false are pooled and serialised per session by the detector.
  virtual bool thread_safe() const noexcept { return true; }

  virtual std::string kind() const = 0;
};

/// Deterministic test backend: fixed logits or a function of the tokens,
/// optional per-call delay, and fault injection.
class StubBackend final : public InferenceBackend {
 public:
  using LogitFn = std::function<Logits2<double>(const TokenSequence&)>;
  using FaultFn = std::function<bool(const TokenSequence&)>;

  explicit StubBackend(Logits2<double> logits = Logits2<double>::Zero());
  explicit StubBackend(LogitFn fn);

  LogitMatrixd infer(std::span<const TokenSequence> batch) override;
  std::string kind() const override { return "stub"; }

  void set_delay(std::chrono::microseconds delay) noexcept { delay_us_.store(delay.count()); }
  /// Every call fails while set.
  void set_failing(bool failing) noexcept { failing_.store(failing); }
  /// Calls containing a matching item fail (per-item fault injection).
  void set_fault(FaultFn fault);
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  LogitFn fn_;
  std::atomic<long long> delay_us_{0};
  std::atomic<bool> failing_{false};
  std::atomic<std::size_t> calls_{0};
  mutable std::mutex fault_mu_;
  FaultFn fault_;
};

/// Client for a remote logits endpoint.
///   POST {path}  {"input_ids": [[...]], "attention_mask": [[...]]}
///   200          {"logits": [[l0, l1], ...]}
/// Sequences are right-padded with the tokenizer's pad id.
class RemoteBackend final : public InferenceBackend {
 public:
  struct Options {
    std::string url = "http://127.0.0.1:8081";  // scheme://host:port
    std::string path = "/v1/logits";
    std::chrono::milliseconds timeout{5000};
    std::int64_t pad_id = 0;
  };

  explicit RemoteBackend(Options options);
  LogitMatrixd infer(std::span<const TokenSequence> batch) override;
  std::string kind() const override { return "remote"; }

 private:
  Options options_;
};

/// True when the library was built against onnxruntime.
bool onnx_runtime_available() noexcept;

/// Exported-graph backend over `model.onnx`. Inputs `input_ids` and
/// `attention_mask` (int64, [batch, seq]); output [batch, 2] logits.
/// Throws Error("backend_unavailable") when built without onnxruntime.
std::unique_ptr<InferenceBackend> make_onnx_backend(const std::filesystem::path& model_path,
                                                    const nlohmann::json& options, std::int64_t pad_id);

}  // namespace sentinel
