#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace forge {

enum class Errc {
  MissingFile,
  SchemaError,
  InvalidProbability,
  EmptyLibrary,
  IoError,
  ShapeMismatch,
  EmptyList,
  BadWeights,
  UnknownModelId,
  InfeasibleBudget,
  BadK,
  TooLarge,
  MalformedState,
  OutOfMemory,
  InfeasibleStart,
  BadConfig,
  ParseError,
  BadArgument,
};

std::string_view to_string(Errc code) noexcept;

// Every failure raised by the library carries one of the codes above so the
// CLI can map it onto a machine-readable error document.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace forge
