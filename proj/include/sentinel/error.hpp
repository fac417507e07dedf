#pragma once

#include <stdexcept>
#include <string>

namespace sentinel {

// Every failure carries a stable machine-readable code next to the human
// message, e.g. "source_unreadable" or "label_map_not_bijective".
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace sentinel
