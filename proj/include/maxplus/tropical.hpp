#pragma once

/**
 * @file tropical.hpp
 * @brief Max-plus and min-plus semiring arithmetic with masked bottom entries.
 *
 * In the max-plus semiring "addition" is max and "multiplication" is +, with
 * -inf as the additive identity. Min-plus is the order dual (min, +, +inf).
 *
 * The bottom element is never stored as an IEEE infinity. A TropicalMatrix
 * carries an activity mask instead: inactive entries are semantically bottom,
 * their stored values are never read, and they can never win a maximum.
 */

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maxplus/tensor.hpp"

namespace maxplus {

/// A real extended with the semiring's bottom element.
struct ExtScalar {
  double value = 0.0;
  bool is_bottom = true;

  static constexpr ExtScalar bottom() { return {}; }
  static constexpr ExtScalar finite(double v) { return {v, false}; }

  friend bool operator==(const ExtScalar& a, const ExtScalar& b) {
    return a.is_bottom == b.is_bottom && (a.is_bottom || a.value == b.value);
  }
};

// Tropical "multiplication": bottom absorbs.
constexpr ExtScalar otimes(ExtScalar a, ExtScalar b) {
  if (a.is_bottom || b.is_bottom) return ExtScalar::bottom();
  return ExtScalar::finite(a.value + b.value);
}

// Max-plus "addition": bottom is the identity.
constexpr ExtScalar oplus_max(ExtScalar a, ExtScalar b) {
  if (a.is_bottom) return b;
  if (b.is_bottom) return a;
  return a.value >= b.value ? a : b;
}

constexpr ExtScalar oplus_min(ExtScalar a, ExtScalar b) {
  if (a.is_bottom) return b;
  if (b.is_bottom) return a;
  return a.value <= b.value ? a : b;
}

/// Non-owning view of masked tropical storage (row-major).
struct TropicalView {
  std::size_t rows = 0, cols = 0;
  std::span<const double> values;
  std::span<const std::uint8_t> active;

  bool is_active(std::size_t r, std::size_t c) const noexcept { return active[r * cols + c] != 0; }
  double value(std::size_t r, std::size_t c) const noexcept { return values[r * cols + c]; }
};

class TropicalMatrix {
 public:
  TropicalMatrix() = default;
  /// All-active matrix with the given fill value.
  TropicalMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill), active_(rows * cols, 1) {
    if (rows == 0 || cols == 0) throw ContractViolation("tropical matrix dimensions must be positive");
  }
  TropicalMatrix(std::size_t rows, std::size_t cols, std::vector<double> values, std::vector<std::uint8_t> active)
      : rows_(rows), cols_(cols), values_(std::move(values)), active_(std::move(active)) {
    if (rows == 0 || cols == 0) throw ContractViolation("tropical matrix dimensions must be positive");
    if (values_.size() != rows * cols || active_.size() != rows * cols)
      throw ContractViolation("tropical matrix storage does not match " + std::to_string(rows) + "x" +
                              std::to_string(cols));
  }
  /// Every entry inactive (the semiring zero matrix).
  static TropicalMatrix bottom(std::size_t rows, std::size_t cols) {
    return {rows, cols, std::vector<double>(rows * cols, 0.0), std::vector<std::uint8_t>(rows * cols, 0)};
  }
  /// 0 on the diagonal, bottom elsewhere.
  static TropicalMatrix identity(std::size_t n) {
    auto m = bottom(n, n);
    for (std::size_t i = 0; i < n; ++i) m.set(i, i, 0.0);
    return m;
  }
  /// From a real matrix, everything active.
  static TropicalMatrix from_tensor(const Tensor& t) {
    require_matrix(t, "tropical source");
    return {t.rows(), t.cols(), t.storage(), std::vector<std::uint8_t>(t.size(), 1)};
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }

  bool active(std::size_t r, std::size_t c) const noexcept { return active_[r * cols_ + c] != 0; }
  double value(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }
  ExtScalar at(std::size_t r, std::size_t c) const noexcept {
    return active(r, c) ? ExtScalar::finite(value(r, c)) : ExtScalar::bottom();
  }
  void set(std::size_t r, std::size_t c, double v) {
    values_[r * cols_ + c] = v;
    active_[r * cols_ + c] = 1;
  }
  void deactivate(std::size_t r, std::size_t c) { active_[r * cols_ + c] = 0; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<std::uint8_t> mask() noexcept { return active_; }
  std::span<const std::uint8_t> mask() const noexcept { return active_; }

  TropicalView view() const noexcept { return {rows_, cols_, values_, active_}; }

  std::size_t active_count() const {
    std::size_t n = 0;
    for (auto a : active_) n += a != 0;
    return n;
  }
  bool row_empty(std::size_t r) const {
    for (std::size_t c = 0; c < cols_; ++c)
      if (active(r, c)) return false;
    return true;
  }

  /// Entrywise negation of active values; maps the max-plus view to min-plus.
  TropicalMatrix negated() const {
    TropicalMatrix out = *this;
    for (auto& v : out.values_) v = -v;
    return out;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> values_;
  std::vector<std::uint8_t> active_;
};

/// Per output entry, which candidate attained the extremum.
struct ArgmaxRecord {
  static constexpr std::int32_t kBottom = -1;  // no active candidate
  static constexpr std::int32_t kBias = -2;    // the broadcast bias won

  std::size_t rows = 0, cols = 0;
  std::vector<std::int32_t> winner;  // inner index k, or one of the sentinels

  std::int32_t operator()(std::size_t i, std::size_t j) const { return winner[i * cols + j]; }
};

/// Real matrix plus bottom flags, as produced by a tropical product.
struct TropicalProduct {
  Tensor values;
  std::vector<std::uint8_t> bottom;
  ArgmaxRecord argmax;

  bool is_bottom(std::size_t i, std::size_t j) const { return bottom[i * values.cols() + j] != 0; }
};

namespace detail {

struct Greater {
  static bool better(double a, double b) { return a > b; }
};
struct Less {
  static bool better(double a, double b) { return a < b; }
};

// Shared kernel for both semirings. Candidates are visited in increasing
// inner index, and only a strictly better value replaces the incumbent, so
// ties resolve to the lowest index. The optional bias row is visited last.
template <typename Order>
TropicalProduct tropical_product(const TropicalView& a, const Tensor& x, const TropicalView* bias) {
  require_matrix(x, "tropical product right operand");
  if (a.cols != x.rows())
    throw ContractViolation("tropical product: inner dimensions disagree (" + std::to_string(a.rows) + "x" +
                            std::to_string(a.cols) + " vs " + shape_string(x.shape()) + ")");
  if (bias && (bias->rows != a.rows || bias->cols != 1))
    throw ContractViolation("tropical product: bias must be " + std::to_string(a.rows) + "x1");

  const std::size_t m = a.rows, k = a.cols, b = x.cols();
  TropicalProduct out{Tensor::matrix(m, b), std::vector<std::uint8_t>(m * b, 1),
                      ArgmaxRecord{m, b, std::vector<std::int32_t>(m * b, ArgmaxRecord::kBottom)}};
  auto& val = out.values.storage();
  auto& win = out.argmax.winner;

  for (std::size_t i = 0; i < m; ++i) {
    double* orow = val.data() + i * b;
    std::int32_t* wrow = win.data() + i * b;
    bool seeded = false;
    for (std::size_t kk = 0; kk < k; ++kk) {
      if (!a.is_active(i, kk)) continue;
      const double w = a.value(i, kk);
      const double* xrow = x.storage().data() + kk * b;
      if (!seeded) {
        for (std::size_t j = 0; j < b; ++j) {
          orow[j] = w + xrow[j];
          wrow[j] = static_cast<std::int32_t>(kk);
        }
        seeded = true;
        continue;
      }
      for (std::size_t j = 0; j < b; ++j) {
        const double c = w + xrow[j];
        if (Order::better(c, orow[j])) {
          orow[j] = c;
          wrow[j] = static_cast<std::int32_t>(kk);
        }
      }
    }
    if (bias && bias->is_active(i, 0)) {
      const double w0 = bias->value(i, 0);
      for (std::size_t j = 0; j < b; ++j) {
        if (!seeded || Order::better(w0, orow[j])) {
          orow[j] = w0;
          wrow[j] = ArgmaxRecord::kBias;
        }
      }
      seeded = true;
    }
    if (seeded) std::fill(out.bottom.begin() + i * b, out.bottom.begin() + (i + 1) * b, 0);
  }
  return out;
}

}  // namespace detail

/// (A ⊞ x)_ij = max over active k of A_ik + x_kj.
inline TropicalProduct max_plus_matmul(const TropicalMatrix& a, const Tensor& x) {
  return detail::tropical_product<detail::Greater>(a.view(), x, nullptr);
}

/// (A ⊞ x) ∨ w0, with the bias as one more candidate per row.
inline TropicalProduct max_plus_matmul(const TropicalMatrix& a, const Tensor& x, const TropicalMatrix& bias) {
  const auto bv = bias.view();
  return detail::tropical_product<detail::Greater>(a.view(), x, &bv);
}

/// (A ⊞′ x)_ij = min over active k of A_ik + x_kj; inactive means +inf here.
inline TropicalProduct min_plus_matmul(const TropicalMatrix& a, const Tensor& x) {
  return detail::tropical_product<detail::Less>(a.view(), x, nullptr);
}

namespace detail {
inline Tensor column(std::span<const double> x) {
  if (x.empty()) throw ContractViolation("morphological operand must have at least one entry");
  return Tensor::matrix(x.size(), 1, std::vector<double>(x.begin(), x.end()));
}
inline void require_row_vector(const TropicalMatrix& w, std::size_t n) {
  if (w.rows() != 1 || w.cols() != n)
    throw ContractViolation("structuring element must be 1x" + std::to_string(n));
}
}  // namespace detail

/// Vector dilation δ_w(x) = max_i (x_i + w_i). Bottom if w has no active entry.
inline ExtScalar dilation(const TropicalMatrix& w, std::span<const double> x) {
  detail::require_row_vector(w, x.size());
  const auto p = max_plus_matmul(w, detail::column(x));
  return p.is_bottom(0, 0) ? ExtScalar::bottom() : ExtScalar::finite(p.values[0]);
}

/// Vector erosion ε_m(x) = min_i (x_i + m_i). Bottom (+inf) if m has no active entry.
inline ExtScalar erosion(const TropicalMatrix& m, std::span<const double> x) {
  detail::require_row_vector(m, x.size());
  const auto p = min_plus_matmul(m, detail::column(x));
  return p.is_bottom(0, 0) ? ExtScalar::bottom() : ExtScalar::finite(p.values[0]);
}

/// Biased dilation w0 ∨ δ_w(x). Always finite because w0 is.
inline double morphological_perceptron(double w0, const TropicalMatrix& w, std::span<const double> x) {
  return oplus_max(ExtScalar::finite(w0), dilation(w, x)).value;
}

}  // namespace maxplus
