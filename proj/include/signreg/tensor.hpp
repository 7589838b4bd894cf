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

#ifndef SIGNREG_TENSOR_HPP_
#define SIGNREG_TENSOR_HPP_

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "signreg/rng.hpp"

namespace signreg {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);
// Throws kInvalidShape unless rank >= 1 and every extent >= 1.
void validate_shape(const Shape& shape);

// Dense row-major array of doubles. Storage is shared and never written after
// construction, so copies are cheap and tensors can be read from any thread.
class Tensor {
 public:
  // A single 0.0; keeps the rank >= 1 invariant for default-constructed slots.
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor full(Shape shape, double value);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_->size(); }

  std::span<const double> data() const noexcept { return {data_->data(), data_->size()}; }
  double operator[](std::size_t flat) const noexcept { return (*data_)[flat]; }
  double at(std::initializer_list<std::size_t> index) const;
  std::size_t offset(std::span<const std::size_t> index) const;

  // Same storage, new shape; element count must match.
  Tensor reshaped(Shape shape) const;
  std::vector<double> to_vector() const { return *data_; }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  // Bitwise equality of shape and contents.
  bool identical(const Tensor& other) const noexcept;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

Tensor zeros(Shape shape);

// c[m,n] += a[m,k] * b[k,n]; row-major, contiguous, non-overlapping.
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                     double* c);

Tensor matmul(const Tensor& a, const Tensor& b);
// aᵀ·b and a·bᵀ without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a + factor * b
Tensor axpy(const Tensor& a, double factor, const Tensor& b);

// x[batch, n] + bias[n] broadcast over the leading axis.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
// Sums x[batch, n] over the leading axis, giving [n].
Tensor sum_rows(const Tensor& x);

double sum(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);
double norm2(const Tensor& a);
bool all_finite(const Tensor& a);

// Row `index` of the leading axis, with that axis dropped.
Tensor slice_leading(const Tensor& a, std::size_t index);
// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);

Tensor normal(Rng& rng, Shape shape, double mu, double sigma);
Tensor uniform(Rng& rng, Shape shape, double lo, double hi);

}  // namespace signreg

#endif  // SIGNREG_TENSOR_HPP_
