#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pfgan/error.hpp"

namespace pfgan {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Aligned so that vectorized kernels split every buffer the same way; with
// arbitrary heap alignment, reductions round differently from run to run.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

// Dense row-major array of doubles. Every graph value is rank 2; rank 1 and
// rank 0 shapes only appear in checkpoints and are viewed as a single row.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::size_t> shape, const std::vector<double>& values)
      : shape_(std::move(shape)), values_(values.begin(), values.end()) {
    std::size_t n = 1;
    for (auto d : shape_) {
      if (d == 0) throw InputError("tensor dimensions must be positive");
      n *= d;
    }
    if (n != values_.size()) {
      throw InputError("tensor shape does not match value count (" + std::to_string(n) +
                       " vs " + std::to_string(values_.size()) + ")");
    }
  }

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape_{rows, cols}, values_(rows * cols, fill) {}

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor(rows, cols); }
  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> vals) {
    return Tensor({rows, cols}, std::vector<double>(vals));
  }

  static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty() || rows.front().empty()) throw InputError("empty matrix");
    Tensor t(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != t.cols()) throw InputError("ragged matrix rows");
      std::copy(rows[r].begin(), rows[r].end(), t.row_ptr(r));
    }
    return t;
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::size_t rows() const noexcept {
    if (shape_.size() < 2) return values_.empty() ? 0 : 1;
    std::size_t r = 1;
    for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return r;
  }
  std::size_t cols() const noexcept {
    if (shape_.empty()) return values_.empty() ? 0 : 1;
    return shape_.back();
  }

  Storage& values() noexcept { return values_; }
  const Storage& values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  double* row_ptr(std::size_t r) noexcept { return values_.data() + r * cols(); }
  const double* row_ptr(std::size_t r) const noexcept { return values_.data() + r * cols(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols() + c]; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  MatrixMap map() noexcept {
    return MatrixMap(values_.data(), static_cast<Eigen::Index>(rows()),
                     static_cast<Eigen::Index>(cols()));
  }
  ConstMatrixMap map() const noexcept {
    return ConstMatrixMap(values_.data(), static_cast<Eigen::Index>(rows()),
                          static_cast<Eigen::Index>(cols()));
  }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

  bool all_finite() const noexcept {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  Tensor row(std::size_t r) const {
    Tensor out(1, cols());
    std::copy(row_ptr(r), row_ptr(r) + cols(), out.data());
    return out;
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  // Bitwise equality of shape and values.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::size_t> shape_;
  Storage values_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw InputError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Trainable tensor with its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor(value.shape(), std::vector<double>(value.size(), 0.0));
  }

  void zero_grad() { grad.fill(0.0); }
};

// Ordered, name-unique collection of parameters. Insertion order is the
// serialization and optimizer order.
class ParamSet {
 public:
  Param& add(std::string name, Tensor value) {
    if (find(name)) throw ConfigError("duplicate parameter name: " + name);
    params_.emplace_back(std::move(name), std::move(value));
    return params_.back();
  }

  Param* find(std::string_view name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  const Param* find(std::string_view name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  Param& at(std::string_view name) {
    if (auto* p = find(name)) return *p;
    throw ConfigError("unknown parameter: " + std::string(name));
  }
  const Param& at(std::string_view name) const {
    if (const auto* p = find(name)) return *p;
    throw ConfigError("unknown parameter: " + std::string(name));
  }

  std::size_t size() const noexcept { return params_.size(); }
  bool empty() const noexcept { return params_.empty(); }
  std::size_t scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }
  Param& operator[](std::size_t i) noexcept { return params_[i]; }
  const Param& operator[](std::size_t i) const noexcept { return params_[i]; }

  // Values, names, and shapes must match bitwise; gradients are ignored.
  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].name != b[i].name || !(a[i].value == b[i].value)) return false;
    }
    return true;
  }

 private:
  // References handed out by add()/at() are invalidated by later add() calls.
  std::vector<Param> params_;
};

}  // namespace pfgan
