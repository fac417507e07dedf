#include "sentinel/backend.hpp"

#include <thread>

namespace sentinel {

StubBackend::StubBackend(Logits2<double> logits)
    : fn_([logits](const TokenSequence&) { return logits; }) {}

StubBackend::StubBackend(LogitFn fn) : fn_(std::move(fn)) {}

void StubBackend::set_fault(FaultFn fault) {
  std::lock_guard lock(fault_mu_);
  fault_ = std::move(fault);
}

LogitMatrixd StubBackend::infer(std::span<const TokenSequence> batch) {
  ++calls_;
  if (const auto us = delay_us_.load(); us > 0) std::this_thread::sleep_for(std::chrono::microseconds(us));
  if (failing_.load()) throw BackendError("stub backend: injected failure");
  {
    std::lock_guard lock(fault_mu_);
    if (fault_) {
      for (const auto& seq : batch) {
        if (fault_(seq)) throw BackendError("stub backend: injected item failure");
      }
    }
  }
  LogitMatrixd out(static_cast<Eigen::Index>(batch.size()), 2);
  for (std::size_t i = 0; i < batch.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = fn_(batch[i]).transpose();
  return out;
}

}  // namespace sentinel
