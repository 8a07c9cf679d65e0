#include "forge/error.hpp"

namespace forge {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::MissingFile: return "MissingFile";
    case Errc::SchemaError: return "SchemaError";
    case Errc::InvalidProbability: return "InvalidProbability";
    case Errc::EmptyLibrary: return "EmptyLibrary";
    case Errc::IoError: return "IoError";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptyList: return "EmptyList";
    case Errc::BadWeights: return "BadWeights";
    case Errc::UnknownModelId: return "UnknownModelId";
    case Errc::InfeasibleBudget: return "InfeasibleBudget";
    case Errc::BadK: return "BadK";
    case Errc::TooLarge: return "TooLarge";
    case Errc::MalformedState: return "MalformedState";
    case Errc::OutOfMemory: return "OutOfMemory";
    case Errc::InfeasibleStart: return "InfeasibleStart";
    case Errc::BadConfig: return "BadConfig";
    case Errc::ParseError: return "ParseError";
    case Errc::BadArgument: return "BadArgument";
  }
  return "Unknown";
}

}  // namespace forge
