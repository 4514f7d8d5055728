#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "charlm/error.hpp"

namespace charlm {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major array. Instantiated for float (training, evaluation) and
/// double (gradient checks).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t axis) const;

  // Matrix view of the tensor: first axis is rows, the rest are folded into
  // columns. A rank-1 tensor is a single row.
  std::size_t rows() const noexcept { return cols_ == 0 ? 0 : data_.size() / cols_; }
  std::size_t cols() const noexcept { return cols_; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }
  T& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols(), cols()}; }

  void fill(T value) noexcept;
  void zero() noexcept { fill(T{0}); }
  bool all_finite() const noexcept;

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
  std::size_t cols_ = 0;
};

/// Row-major matrix view over contiguous storage.
template <typename T>
struct MatrixRef {
  T* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  MatrixRef() = default;
  MatrixRef(T* d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {}
  template <typename U>
    requires std::is_same_v<const U, T> && (!std::is_same_v<U, T>)
  MatrixRef(MatrixRef<U> m) : data(m.data), rows(m.rows), cols(m.cols) {}
};

template <typename T>
MatrixRef<T> as_matrix(Tensor<T>& t) { return {t.data(), t.rows(), t.cols()}; }
template <typename T>
MatrixRef<const T> as_matrix(const Tensor<T>& t) { return {t.data(), t.rows(), t.cols()}; }

// Kernels. Every output element is summed in ascending order of the shared
// index, independent of how many rows or columns are computed together, so a
// row's result never depends on what else is in the batch.

/// c += a * b
template <typename T>
void matmul_acc(MatrixRef<const T> a, MatrixRef<const T> b, MatrixRef<T> c);
/// c += a^T * b
template <typename T>
void matmul_tn_acc(MatrixRef<const T> a, MatrixRef<const T> b, MatrixRef<T> c);
/// c += a * b^T
template <typename T>
void matmul_nt_acc(MatrixRef<const T> a, MatrixRef<const T> b, MatrixRef<T> c);

/// Standard matrix product of rank-2 tensors.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Portable seeded generator: std::mt19937_64 (its output sequence is fixed by
/// the C++ standard) with hand-rolled conversions, since the standard
/// distributions differ between library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::string state() const;
  void set_state(const std::string& state);

  bool operator==(const Rng&) const = default;

 private:
  std::mt19937_64 engine_;
};

/// I.i.d. uniform values in [lo, hi).
template <typename T>
Tensor<T> uniform_init(const Shape& shape, double lo, double hi, Rng& rng);

template <typename T>
void uniform_fill(std::span<T> out, double lo, double hi, Rng& rng);

/// Rescales the gradients in place so that their joint L2 norm is at most
/// `threshold` and returns the norm before clipping. Clipping only happens
/// when the norm exceeds the threshold by more than one part in 10^7, so a
/// second application never changes an already clipped set.
template <typename T>
double clip_global_norm(std::span<Tensor<T>* const> grads, double threshold);

template <typename T>
double global_norm(std::span<Tensor<T>* const> grads);

/// Central finite differences of a scalar function, one coordinate at a time.
Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                const Tensor<double>& x, double eps = 1e-5);

}  // namespace charlm
