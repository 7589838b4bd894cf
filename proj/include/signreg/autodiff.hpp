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

#ifndef SIGNREG_AUTODIFF_HPP_
#define SIGNREG_AUTODIFF_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "signreg/tensor.hpp"

namespace signreg {

enum class OpKind {
  kInput,
  kParameter,
  kConstant,
  kMatMul,
  kAdd,
  kAddBias,
  kMul,
  kScale,
  kSum,
  kReshape,
  kRelu,
  kSoftplus,
  kConv2d,
  kMaxPool2d,
  kDropout,
  kCrossEntropy,
  kAleatoricLoss,
};

std::string_view to_string(OpKind kind);

// Handle to a node on a specific tape. The tape id catches handles used
// against the wrong tape.
struct NodeRef {
  std::uint64_t tape = 0;
  std::uint32_t index = 0;

  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

// Given the cotangent of a node, produce cotangents for its parents.
// `need[i]` is false when parent i does not lead to any requested gradient;
// the entry may then be left empty.
using BackwardFn = std::function<std::vector<std::optional<Tensor>>(
    const Tensor& cotangent, const std::vector<bool>& need)>;

struct TapeNode {
  OpKind kind;
  std::vector<std::uint32_t> parents;
  Tensor value;
  BackwardFn backward;
  std::string name;  // parameter name, empty otherwise
};

class Tape;

// Cotangents from one backward sweep, keyed by node.
class GradMap {
 public:
  // Cotangent of `node`; zeros of the node's shape when no path reached it.
  Tensor at(NodeRef node) const;
  bool reached(NodeRef node) const;

 private:
  friend class Tape;
  std::uint64_t tape_ = 0;
  std::vector<Shape> shapes_;
  std::vector<std::optional<Tensor>> grads_;
};

// Records one forward computation. Nodes are appended in evaluation order,
// so parents always precede children and the graph is acyclic by
// construction. A tape owns its values and is discarded after backward.
class Tape {
 public:
  Tape();
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // The first input registered is the default target of vjp.
  NodeRef input(Tensor value);
  NodeRef parameter(std::string name, Tensor value);
  NodeRef constant(Tensor value);
  NodeRef record(OpKind kind, const std::vector<NodeRef>& parents, Tensor value,
                 BackwardFn backward);

  const Tensor& value(NodeRef node) const { return node_at(node).value; }
  const TapeNode& node_at(NodeRef node) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  std::uint64_t id() const noexcept { return id_; }
  NodeRef primary_input() const;
  std::vector<NodeRef> parameters() const;

  // Reverse sweep from `from` seeded with `cotangent`, restricted to the
  // nodes needed to reach `targets` (all nodes when `targets` is empty).
  GradMap backward(NodeRef from, const Tensor& cotangent,
                   const std::vector<NodeRef>& targets = {}) const;

 private:
  std::uint32_t check(NodeRef node) const;
  NodeRef push(TapeNode node);

  std::uint64_t id_;
  std::vector<TapeNode> nodes_;
  std::optional<std::uint32_t> primary_input_;
};

using Composition = std::function<NodeRef(Tape&, NodeRef)>;

struct Traced {
  Tensor output;
  NodeRef output_node;
  Tape tape;
};

// Runs `fn` on a fresh tape whose primary input holds `input`.
Traced forward(const Composition& fn, const Tensor& input);

// cotangentᵀ · ∂node/∂wrt, shaped like `wrt` (the primary input by default).
Tensor vjp(const Tape& tape, NodeRef at, const Tensor& cotangent);
Tensor vjp(const Tape& tape, NodeRef at, const Tensor& cotangent, NodeRef wrt);

// Element i is Σ_a ∂node^a/∂x^i: a vjp with an all-ones cotangent.
Tensor summed_jacobian(const Tape& tape, NodeRef at);

// Gradient of a scalar node with respect to every parameter on the tape.
std::map<std::string, Tensor> param_gradients(const Tape& tape, NodeRef loss);

namespace ops {

NodeRef matmul(Tape& tape, NodeRef a, NodeRef b);
NodeRef add(Tape& tape, NodeRef a, NodeRef b);
// x[batch, n] + bias[n]
NodeRef add_bias(Tape& tape, NodeRef x, NodeRef bias);
NodeRef mul(Tape& tape, NodeRef a, NodeRef b);
NodeRef scale(Tape& tape, NodeRef a, double factor);
// Sum of all elements as a [1] tensor.
NodeRef sum(Tape& tape, NodeRef a);
NodeRef reshape(Tape& tape, NodeRef a, Shape shape);
// Derivative at exactly 0 is 0.
NodeRef relu(Tape& tape, NodeRef a);
NodeRef softplus(Tape& tape, NodeRef a);
// x[batch, c, h, w] * w[o, c, k, k] + b[o]; stride 1, zero "same" padding, odd k.
NodeRef conv2d(Tape& tape, NodeRef x, NodeRef weight, NodeRef bias);
// Non-overlapping size x size windows; ties go to the lowest flat index.
NodeRef maxpool2d(Tape& tape, NodeRef x, std::size_t size = 2);
// Inverted dropout; the sampled mask is kept on the tape.
NodeRef dropout(Tape& tape, NodeRef x, double drop_prob, Rng& rng);

}  // namespace ops

// Eager kernels shared by the ops above and by test oracles.
namespace kernels {

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor maxpool2d(const Tensor& x, std::size_t size, std::vector<std::uint32_t>* argmax = nullptr);

}  // namespace kernels

}  // namespace signreg

#endif  // SIGNREG_AUTODIFF_HPP_
