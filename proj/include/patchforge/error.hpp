#pragma once

#include <stdexcept>
#include <string>

namespace patchforge {

// Each category maps to a distinct process exit code in the CLI.
enum class ErrorCategory {
  internal = 1,
  usage = 2,
  config = 3,
  io = 4,
  data = 5,
  numeric = 6,
  shape = 7,
  checkpoint = 8,
  model = 9,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

const char* to_string(ErrorCategory category) noexcept;

}  // namespace patchforge
