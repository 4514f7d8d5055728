#include "charlm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace charlm {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

std::size_t checked_volume(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
    n *= e;
  }
  return n;
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  data_.assign(checked_volume(shape_), fill);
  cols_ = shape_.size() <= 1 ? data_.size() : data_.size() / shape_[0];
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_volume(shape_) != data_.size()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
  cols_ = shape_.size() <= 1 ? data_.size() : data_.size() / shape_[0];
}

template <typename T>
Tensor<T> Tensor<T>::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = T{1};
  return t;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("axis out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

template <typename T>
void Tensor<T>::fill(T value) noexcept {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// kernels

namespace {

constexpr std::size_t kColBlock = 256;

template <typename T>
void require(bool ok, const char* what, std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) {
  if (!ok) {
    throw ShapeError(std::string(what) + ": incompatible shapes " + shape_string({r0, c0}) + " and " +
                     shape_string({r1, c1}));
  }
}

// 32-byte vectors; the unaligned variant is used for loads and stores.
template <typename T>
struct Vec {
  static constexpr std::size_t lanes = 32 / sizeof(T);
  typedef T type __attribute__((vector_size(32)));
  typedef T unaligned __attribute__((vector_size(32), aligned(alignof(T))));

  static type load(const T* p) { return *reinterpret_cast<const unaligned*>(p); }
  static void store(T* p, type v) { *reinterpret_cast<unaligned*>(p) = v; }
  // x - 0 is exact for every x (including -0 and NaN) and folds to a broadcast.
  static type broadcast(T x) { return x - type{}; }
};

// A general view: element (i, p) of the left operand is a[i * rs + p * cs].
template <typename T>
struct Strided {
  const T* a;
  std::size_t rs, cs;
  const T* row(std::size_t i) const { return a + i * rs; }
};

// c[4 x 2L] += a[4 x k] * b[k x 2L], L = vector lanes. Each output element is
// accumulated over p = 0..k-1 in order, exactly like the scalar loop.
template <typename T>
inline void micro_4x2(std::size_t k, Strided<T> a, const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  using V = Vec<T>;
  constexpr std::size_t L = V::lanes;
  typename V::type c00 = V::load(c), c01 = V::load(c + L);
  typename V::type c10 = V::load(c + ldc), c11 = V::load(c + ldc + L);
  typename V::type c20 = V::load(c + 2 * ldc), c21 = V::load(c + 2 * ldc + L);
  typename V::type c30 = V::load(c + 3 * ldc), c31 = V::load(c + 3 * ldc + L);
  const T* a0 = a.row(0);
  const T* a1 = a.row(1);
  const T* a2 = a.row(2);
  const T* a3 = a.row(3);
  for (std::size_t p = 0; p < k; ++p) {
    const T* bp = b + p * ldb;
    const typename V::type b0 = V::load(bp), b1 = V::load(bp + L);
    const std::size_t o = p * a.cs;
    typename V::type x = V::broadcast(a0[o]);
    c00 += x * b0;
    c01 += x * b1;
    x = V::broadcast(a1[o]);
    c10 += x * b0;
    c11 += x * b1;
    x = V::broadcast(a2[o]);
    c20 += x * b0;
    c21 += x * b1;
    x = V::broadcast(a3[o]);
    c30 += x * b0;
    c31 += x * b1;
  }
  V::store(c, c00);
  V::store(c + L, c01);
  V::store(c + ldc, c10);
  V::store(c + ldc + L, c11);
  V::store(c + 2 * ldc, c20);
  V::store(c + 2 * ldc + L, c21);
  V::store(c + 3 * ldc, c30);
  V::store(c + 3 * ldc + L, c31);
}

template <typename T>
inline void micro_1x2(std::size_t k, const T* a, std::size_t cs, const T* b, std::size_t ldb, T* c) {
  using V = Vec<T>;
  constexpr std::size_t L = V::lanes;
  typename V::type c0 = V::load(c), c1 = V::load(c + L);
  for (std::size_t p = 0; p < k; ++p) {
    const T* bp = b + p * ldb;
    const typename V::type x = V::broadcast(a[p * cs]);
    c0 += x * V::load(bp);
    c1 += x * V::load(bp + L);
  }
  V::store(c, c0);
  V::store(c + L, c1);
}

template <typename T>
inline void scalar_cols(std::size_t k, const T* a, std::size_t cs, const T* b, std::size_t ldb, T* c,
                        std::size_t cols) {
  for (std::size_t j = 0; j < cols; ++j) {
    T s = c[j];
    for (std::size_t p = 0; p < k; ++p) s += a[p * cs] * b[p * ldb + j];
    c[j] = s;
  }
}

// c [m x n] += A [m x k] * b [k x n], A given as a strided view.
template <typename T>
void gemm(std::size_t m, std::size_t k, std::size_t n, Strided<T> a, const T* b, T* c) {
  constexpr std::size_t nr = 2 * Vec<T>::lanes;
  for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::size_t j1 = std::min(n, j0 + kColBlock);
    const std::size_t jv = j0 + (j1 - j0) / nr * nr;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      for (std::size_t j = j0; j < jv; j += nr) micro_4x2<T>(k, {a.row(i), a.rs, a.cs}, b + j, n, c + i * n + j, n);
      for (std::size_t r = i; r < i + 4; ++r) scalar_cols(k, a.row(r), a.cs, b + jv, n, c + r * n + jv, j1 - jv);
    }
    for (; i < m; ++i) {
      for (std::size_t j = j0; j < jv; j += nr) micro_1x2(k, a.row(i), a.cs, b + j, n, c + i * n + j);
      scalar_cols(k, a.row(i), a.cs, b + jv, n, c + i * n + jv, j1 - jv);
    }
  }
}

}  // namespace

template <typename T>
void matmul_acc(MatrixRef<const T> a, MatrixRef<const T> b, MatrixRef<T> c) {
  require<T>(a.cols == b.rows, "matmul", a.rows, a.cols, b.rows, b.cols);
  require<T>(c.rows == a.rows && c.cols == b.cols, "matmul output", c.rows, c.cols, a.rows, b.cols);
  gemm<T>(a.rows, a.cols, b.cols, {a.data, a.cols, 1}, b.data, c.data);
}

template <typename T>
void matmul_tn_acc(MatrixRef<const T> a, MatrixRef<const T> b, MatrixRef<T> c) {
  // a: [p x m], b: [p x n], c: [m x n]
  require<T>(a.rows == b.rows, "matmul_tn", a.rows, a.cols, b.rows, b.cols);
  require<T>(c.rows == a.cols && c.cols == b.cols, "matmul_tn output", c.rows, c.cols, a.cols, b.cols);
  gemm<T>(a.cols, a.rows, b.cols, {a.data, 1, a.cols}, b.data, c.data);
}

template <typename T>
void matmul_nt_acc(MatrixRef<const T> a, MatrixRef<const T> b, MatrixRef<T> c) {
  // a: [m x k], b: [n x k], c: [m x n]
  require<T>(a.cols == b.cols, "matmul_nt", a.rows, a.cols, b.rows, b.cols);
  require<T>(c.rows == a.rows && c.cols == b.rows, "matmul_nt output", c.rows, c.cols, a.rows, b.rows);
  std::vector<T> bt(b.rows * b.cols);
  constexpr std::size_t tile = 32;
  for (std::size_t r0 = 0; r0 < b.rows; r0 += tile) {
    for (std::size_t q0 = 0; q0 < b.cols; q0 += tile) {
      for (std::size_t r = r0; r < std::min(b.rows, r0 + tile); ++r)
        for (std::size_t q = q0; q < std::min(b.cols, q0 + tile); ++q) bt[q * b.rows + r] = b.data[r * b.cols + q];
    }
  }
  matmul_acc<T>(a, MatrixRef<const T>{bt.data(), b.cols, b.rows}, c);
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  Tensor<T> c({a.dim(0), b.dim(1)});
  matmul_acc<T>(as_matrix(a), as_matrix(b), as_matrix(c));
  return c;
}

// ---------------------------------------------------------------------------
// rng

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ArgumentError("Rng::below requires n > 0");
  // rejection sampling keeps the draw unbiased
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (!is) throw ParseError("malformed rng state");
}

template <typename T>
void uniform_fill(std::span<T> out, double lo, double hi, Rng& rng) {
  if (!(lo < hi)) throw ArgumentError("uniform_init requires lo < hi");
  const T top = static_cast<T>(hi);
  for (T& v : out) {
    T x = static_cast<T>(lo + (hi - lo) * rng.uniform());
    if (x >= top) x = std::nextafter(top, static_cast<T>(lo));
    v = x;
  }
}

template <typename T>
Tensor<T> uniform_init(const Shape& shape, double lo, double hi, Rng& rng) {
  if (!(lo < hi)) throw ArgumentError("uniform_init requires lo < hi");
  Tensor<T> t(shape);
  uniform_fill<T>(t.values(), lo, hi, rng);
  return t;
}

// ---------------------------------------------------------------------------
// gradient utilities

template <typename T>
double global_norm(std::span<Tensor<T>* const> grads) {
  double sq = 0.0;
  for (const Tensor<T>* g : grads)
    for (T v : g->values()) sq += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sq);
}

template <typename T>
double clip_global_norm(std::span<Tensor<T>* const> grads, double threshold) {
  if (!(threshold > 0.0)) throw ArgumentError("clip threshold must be positive");
  const double norm = global_norm<T>(grads);
  if (norm > threshold * (1.0 + 1e-7)) {
    const T scale = static_cast<T>(threshold / norm);
    for (Tensor<T>* g : grads)
      for (T& v : g->values()) v *= scale;
  }
  return norm;
}

Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                const Tensor<double>& x, double eps) {
  if (!(eps > 0.0)) throw ArgumentError("finite difference step must be positive");
  Tensor<double> probe = x;
  Tensor<double> grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

#define CHARLM_INSTANTIATE(T)                                                              \
  template class Tensor<T>;                                                                \
  template void matmul_acc<T>(MatrixRef<const T>, MatrixRef<const T>, MatrixRef<T>);       \
  template void matmul_tn_acc<T>(MatrixRef<const T>, MatrixRef<const T>, MatrixRef<T>);    \
  template void matmul_nt_acc<T>(MatrixRef<const T>, MatrixRef<const T>, MatrixRef<T>);    \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> uniform_init<T>(const Shape&, double, double, Rng&);                  \
  template void uniform_fill<T>(std::span<T>, double, double, Rng&);                       \
  template double global_norm<T>(std::span<Tensor<T>* const>);                             \
  template double clip_global_norm<T>(std::span<Tensor<T>* const>, double);

CHARLM_INSTANTIATE(float)
CHARLM_INSTANTIATE(double)

#undef CHARLM_INSTANTIATE

}  // namespace charlm
