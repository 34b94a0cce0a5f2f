#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cogfactor {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Labels = std::vector<std::int64_t>;
using Rng = std::mt19937_64;

enum class ErrorCode {
  GramSingular,
  ShapeMismatch,
  InvalidArgument,
  UnknownStudy,
  LabelOutOfRange,
  InvalidRate,
  NonFiniteGradient,
  EmptyStudy,
  InvalidConfig,
  TooFewSubjects,
  TooFewSamples,
  MissingAuxiliary,
  BadMagic,
  TruncatedFile,
  UnsupportedDtype,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::GramSingular: return "GramSingular";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnknownStudy: return "UnknownStudy";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::InvalidRate: return "InvalidRate";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::EmptyStudy: return "EmptyStudy";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::TooFewSubjects: return "TooFewSubjects";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::MissingAuxiliary: return "MissingAuxiliary";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return "(" + std::to_string(rows) + " x " + std::to_string(cols) + ")";
}

/// Gathers rows of `src` in the order given by `rows`.
template <typename IndexRange>
Matrix gather_rows(const Matrix& src, const IndexRange& rows) {
  Matrix out(static_cast<Eigen::Index>(std::size(rows)), src.cols());
  Eigen::Index r = 0;
  for (auto i : rows) out.row(r++) = src.row(static_cast<Eigen::Index>(i));
  return out;
}

template <typename T, typename IndexRange>
std::vector<T> gather(const std::vector<T>& src, const IndexRange& idx) {
  std::vector<T> out;
  out.reserve(std::size(idx));
  for (auto i : idx) out.push_back(src[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace cogfactor
