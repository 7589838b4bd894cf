/**
 * Copyright 2026 The signreg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "signreg/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <sstream>

#include "signreg/error.hpp"

namespace signreg {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    raise(ErrorKind::kShapeMismatch, std::string(op) + ": " + shape_to_string(a.shape()) +
                                         " vs " + shape_to_string(b.shape()));
  }
}

void require_rank2(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    raise(ErrorKind::kShapeMismatch,
          std::string(op) + " expects rank-2 operands, got " + shape_to_string(a.shape()));
  }
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  std::vector<double> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  return Tensor(a.shape(), std::move(out));
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void validate_shape(const Shape& shape) {
  if (shape.empty()) raise(ErrorKind::kInvalidShape, "shape must have rank >= 1");
  if (std::find(shape.begin(), shape.end(), 0) != shape.end()) {
    raise(ErrorKind::kInvalidShape, "zero extent in shape " + shape_to_string(shape));
  }
}

Tensor::Tensor() : shape_{1}, data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  validate_shape(shape_);
  if (shape_size(shape_) != data.size()) {
    raise(ErrorKind::kInvalidShape, "shape " + shape_to_string(shape_) + " needs " +
                                        std::to_string(shape_size(shape_)) + " elements, got " +
                                        std::to_string(data.size()));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::full(Shape shape, double value) {
  validate_shape(shape);
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

std::size_t Tensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) {
    raise(ErrorKind::kShapeMismatch, "index rank does not match tensor rank");
  }
  std::size_t flat = 0;
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= shape_[k]) raise(ErrorKind::kInvalidArgument, "index out of range");
    flat = flat * shape_[k] + index[k];
  }
  return flat;
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return (*data_)[offset(std::span<const std::size_t>(index.begin(), index.size()))];
}

Tensor Tensor::reshaped(Shape shape) const {
  validate_shape(shape);
  if (shape_size(shape) != size()) {
    raise(ErrorKind::kShapeMismatch,
          "cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

bool Tensor::identical(const Tensor& other) const noexcept {
  if (shape_ != other.shape_) return false;
  const auto a = data();
  const auto b = other.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

Tensor zeros(Shape shape) { return Tensor::full(std::move(shape), 0.0); }

void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* __restrict a,
                     const double* __restrict b, double* __restrict c) {
  constexpr std::size_t kTile = 512;  // columns of c kept hot in L1
  for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
    const std::size_t j1 = std::min(n, j0 + kTile);
    for (std::size_t i = 0; i < m; ++i) {
      double* row = c + i * n;
      const double* ai = a + i * k;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const double s0 = ai[p], s1 = ai[p + 1], s2 = ai[p + 2], s3 = ai[p + 3];
        const double* b0 = b + p * n;
        const double* b1 = b0 + n;
        const double* b2 = b1 + n;
        const double* b3 = b2 + n;
        for (std::size_t j = j0; j < j1; ++j) row[j] += s0 * b0[j] + s1 * b1[j] + s2 * b2[j] + s3 * b3[j];
      }
      for (; p < k; ++p) {
        const double s = ai[p];
        const double* bp = b + p * n;
        for (std::size_t j = j0; j < j1; ++j) row[j] += s * bp[j];
      }
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    raise(ErrorKind::kShapeMismatch,
          "matmul " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_accumulate(m, n, k, a.data().data(), b.data().data(), out.data());
  return Tensor({m, n}, std::move(out));
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  if (b.dim(0) != a.dim(0)) {
    raise(ErrorKind::kShapeMismatch,
          "matmul_tn " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  }
  return matmul(transpose(a), b);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (b.dim(1) != a.dim(1)) {
    raise(ErrorKind::kShapeMismatch,
          "matmul_nt " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  }
  return matmul(a, transpose(b));
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return Tensor({n, m}, std::move(out));
}

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return Tensor(a.shape(), std::move(out));
}

Tensor axpy(const Tensor& a, double factor, const Tensor& b) {
  return zip(a, b, "axpy", [factor](double x, double y) { return x + factor * y; });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_row_bias");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (bias.size() != cols) {
    raise(ErrorKind::kShapeMismatch,
          "bias " + shape_to_string(bias.shape()) + " for " + shape_to_string(x.shape()));
  }
  std::vector<double> out(x.size());
  const auto v = x.data();
  const auto b = bias.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = v[i * cols + j] + b[j];
  return Tensor(x.shape(), std::move(out));
}

Tensor sum_rows(const Tensor& x) {
  require_rank2(x, "sum_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(cols, 0.0);
  const auto v = x.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j] += v[i * cols + j];
  return Tensor({cols}, std::move(out));
}

double sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return acc;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

bool all_finite(const Tensor& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](double v) { return std::isfinite(v); });
}

Tensor slice_leading(const Tensor& a, std::size_t index) {
  if (a.rank() < 2) raise(ErrorKind::kShapeMismatch, "slice_leading needs rank >= 2");
  if (index >= a.dim(0)) raise(ErrorKind::kInvalidArgument, "slice index out of range");
  Shape inner(a.shape().begin() + 1, a.shape().end());
  const std::size_t n = shape_size(inner);
  const auto x = a.data();
  return Tensor(std::move(inner), std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(index * n),
                                                      x.begin() + static_cast<std::ptrdiff_t>((index + 1) * n)));
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) raise(ErrorKind::kInvalidShape, "cannot stack zero tensors");
  Shape shape{items.size()};
  shape.insert(shape.end(), items[0].shape().begin(), items[0].shape().end());
  std::vector<double> out;
  out.reserve(shape_size(shape));
  for (const auto& t : items) {
    require_same_shape(items[0], t, "stack");
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(shape), std::move(out));
}

Tensor normal(Rng& rng, Shape shape, double mu, double sigma) {
  if (!(sigma >= 0.0)) raise(ErrorKind::kInvalidArgument, "negative-sigma: sigma must be >= 0");
  validate_shape(shape);
  std::vector<double> out(shape_size(shape));
  for (auto& v : out) v = mu + sigma * rng.normal();
  return Tensor(std::move(shape), std::move(out));
}

Tensor uniform(Rng& rng, Shape shape, double lo, double hi) {
  validate_shape(shape);
  std::vector<double> out(shape_size(shape));
  for (auto& v : out) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(out));
}

}  // namespace signreg
