#include "sentinel/verdict.hpp"

#include <algorithm>

namespace sentinel {

Verdict make_verdict(double jailbreak_probability, double threshold, std::string model_id,
                     Milliseconds latency) {
  Verdict v;
  v.jailbreak_probability = jailbreak_probability;
  v.label = jailbreak_probability >= threshold ? Label::jailbreak : Label::benign;
  v.score = std::max(jailbreak_probability, 1.0 - jailbreak_probability);
  v.model_id = std::move(model_id);
  v.latency = latency;
  return v;
}

}  // namespace sentinel
