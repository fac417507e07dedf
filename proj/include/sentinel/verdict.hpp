#pragma once

#include <chrono>
#include <string>

#include "sentinel/label.hpp"

namespace sentinel {

using Milliseconds = std::chrono::duration<double, std::milli>;

/// Result of screening one prompt.
///   score == max(jailbreak_probability, 1 - jailbreak_probability)
///   label == jailbreak  iff  jailbreak_probability >= threshold
struct Verdict {
  Label label = Label::benign;
  double score = 1.0;
  double jailbreak_probability = 0.0;
  std::string model_id;
  Milliseconds latency{0};
};

/// Applies the decision rule; ties at the threshold resolve to jailbreak.
Verdict make_verdict(double jailbreak_probability, double threshold, std::string model_id,
                     Milliseconds latency = Milliseconds{0});

}  // namespace sentinel
