#include "qlab/error.hpp"

namespace qlab {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::NotSymmetric: return "NotSymmetric";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::DegenerateCalibration: return "DegenerateCalibration";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::WrongLanguageCount: return "WrongLanguageCount";
    case ErrorKind::ContextOverflow: return "ContextOverflow";
    case ErrorKind::UnknownProjection: return "UnknownProjection";
    case ErrorKind::EmptyStream: return "EmptyStream";
    case ErrorKind::VocabMismatch: return "VocabMismatch";
    case ErrorKind::TokenizerMismatch: return "TokenizerMismatch";
    case ErrorKind::NonPositivePpl: return "NonPositivePpl";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
      return 2;
    case ErrorKind::NotPositiveDefinite:
    case ErrorKind::NotSymmetric:
    case ErrorKind::DegenerateCalibration:
    case ErrorKind::DegenerateInput:
    case ErrorKind::NonFiniteInput:
    case ErrorKind::NonPositivePpl:
      return 4;
    default:
      return 3;
  }
}

}  // namespace qlab
