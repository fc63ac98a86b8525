#pragma once

// Shared domain types: matrices, vocabulary, token sequences, hidden states,
// bridge parameters, and the error type every module throws.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace lexsem {

enum class ErrorKind {
  invalid_argument,
  dimension_mismatch,
  non_finite,
  io,
  bad_magic,
  version_mismatch,
  truncated,
  duplicate_id,
  missing_field,
  malformed,
  out_of_range,
  insufficient_candidates,
  empty_input,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::dimension_mismatch: return "dimension_mismatch";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::io: return "io";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::version_mismatch: return "version_mismatch";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::duplicate_id: return "duplicate_id";
    case ErrorKind::missing_field: return "missing_field";
    case ErrorKind::malformed: return "malformed";
    case ErrorKind::out_of_range: return "out_of_range";
    case ErrorKind::insufficient_candidates: return "insufficient_candidates";
    case ErrorKind::empty_input: return "empty_input";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

/// Dense row-major matrix. Rows are exposed as spans.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::dimension_mismatch,
            "matrix payload does not match its shape");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Vector = std::vector<double>;

template <typename Range>
bool all_finite(const Range& values) {
  return std::all_of(std::begin(values), std::end(values),
                     [](auto v) { return std::isfinite(static_cast<double>(v)); });
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Numerically stable softmax (max subtraction).
inline Vector softmax(std::span<const double> logits) {
  Vector out(logits.size());
  if (logits.empty()) return out;
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

/// log(sum(exp(x))) with max subtraction.
inline double log_sum_exp(std::span<const double> x) {
  const double peak = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (double v : x) total += std::exp(v - peak);
  return peak + std::log(total);
}

using TokenId = std::uint32_t;

class Vocabulary {
 public:
  explicit Vocabulary(std::size_t size) : size_(size) {
    require(size_ >= 2, ErrorKind::invalid_argument, "vocabulary size must be >= 2");
  }
  explicit Vocabulary(std::vector<std::string> terms) : size_(terms.size()), terms_(std::move(terms)) {
    require(size_ >= 2, ErrorKind::invalid_argument, "vocabulary size must be >= 2");
    std::unordered_set<std::string_view> seen;
    for (const auto& t : *terms_) {
      require(seen.insert(t).second, ErrorKind::duplicate_id, "duplicate vocabulary term: " + t);
    }
  }

  std::size_t size() const noexcept { return size_; }
  const std::optional<std::vector<std::string>>& terms() const noexcept { return terms_; }

 private:
  std::size_t size_;
  std::optional<std::vector<std::string>> terms_;
};

class TokenSequence {
 public:
  TokenSequence() = default;
  TokenSequence(std::vector<TokenId> ids, std::size_t vocab_size) : ids_(std::move(ids)) {
    for (TokenId id : ids_) {
      require(id < vocab_size, ErrorKind::out_of_range,
              "token id " + std::to_string(id) + " outside vocabulary of size " +
                  std::to_string(vocab_size));
    }
  }

  std::span<const TokenId> ids() const noexcept { return ids_; }
  std::size_t length() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }

 private:
  std::vector<TokenId> ids_;
};

/// Per-position hidden states h_1..h_L plus the [CLS] state h_0.
class HiddenStateMatrix {
 public:
  HiddenStateMatrix() = default;
  HiddenStateMatrix(Matrix<double> rows, Vector cls_state)
      : rows_(std::move(rows)), cls_(std::move(cls_state)) {
    require(!cls_.empty(), ErrorKind::invalid_argument, "hidden dimension must be >= 1");
    require(rows_.rows() == 0 || rows_.cols() == cls_.size(), ErrorKind::dimension_mismatch,
            "hidden rows and cls state disagree on dimension");
    require(all_finite(rows_.values()) && all_finite(cls_), ErrorKind::non_finite,
            "hidden states contain non-finite values");
  }

  std::size_t length() const noexcept { return rows_.rows(); }
  std::size_t dim() const noexcept { return cls_.size(); }
  const Matrix<double>& rows() const noexcept { return rows_; }
  std::span<const double> row(std::size_t j) const { return rows_.row(j); }
  std::span<const double> cls_state() const noexcept { return cls_; }

 private:
  Matrix<double> rows_;
  Vector cls_;
};

/// Learned bridge state: projection W (d x m) and, for LLR, U (d x |V|) and b (|V|).
struct BridgeParameters {
  Matrix<double> projection;
  std::optional<Matrix<double>> llr_projection;
  std::optional<Vector> llr_bias;

  std::size_t dim() const noexcept { return projection.rows(); }
  std::size_t input_size() const noexcept { return projection.cols(); }
  bool has_llr() const noexcept { return llr_projection.has_value() && llr_bias.has_value(); }

  void validate() const {
    require(projection.rows() >= 1 && projection.cols() >= 1, ErrorKind::dimension_mismatch,
            "projection must be non-empty");
    require(all_finite(projection.values()), ErrorKind::non_finite, "projection is non-finite");
    require(llr_projection.has_value() == llr_bias.has_value(), ErrorKind::invalid_argument,
            "LLR projection and bias must be provided together");
    if (has_llr()) {
      require(llr_projection->rows() == dim(), ErrorKind::dimension_mismatch,
              "LLR projection must have d rows");
      require(llr_projection->cols() == llr_bias->size(), ErrorKind::dimension_mismatch,
              "LLR bias length must equal LLR projection columns");
      require(all_finite(llr_projection->values()) && all_finite(*llr_bias),
              ErrorKind::non_finite, "LLR parameters are non-finite");
    }
  }

  /// Same shapes, all zeros. Used as a gradient accumulator.
  BridgeParameters zeros_like() const {
    BridgeParameters out{Matrix<double>(projection.rows(), projection.cols()), std::nullopt,
                         std::nullopt};
    if (has_llr()) {
      out.llr_projection = Matrix<double>(llr_projection->rows(), llr_projection->cols());
      out.llr_bias = Vector(llr_bias->size(), 0.0);
    }
    return out;
  }

  bool operator==(const BridgeParameters&) const = default;
};

}  // namespace lexsem
