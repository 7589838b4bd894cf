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

#include "signreg/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "signreg/error.hpp"

namespace signreg {
namespace {

std::atomic<std::uint64_t> next_tape_id{1};

std::vector<std::optional<Tensor>> none(std::size_t n) { return std::vector<std::optional<Tensor>>(n); }

struct ConvGeometry {
  std::size_t batch, channels, height, width, out_channels, kernel, pad;
  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t pixels() const { return height * width; }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 4 || weight.rank() != 4) {
    raise(ErrorKind::kShapeMismatch, "conv2d expects x[b,c,h,w] and w[o,c,k,k], got " +
                                         shape_to_string(x.shape()) + " and " +
                                         shape_to_string(weight.shape()));
  }
  const std::size_t k = weight.dim(2);
  if (weight.dim(3) != k || k % 2 == 0) {
    raise(ErrorKind::kShapeMismatch, "conv2d kernel must be square and odd");
  }
  if (weight.dim(1) != x.dim(1)) {
    raise(ErrorKind::kShapeMismatch, "conv2d channel mismatch: input " +
                                         shape_to_string(x.shape()) + ", weight " +
                                         shape_to_string(weight.shape()));
  }
  if (bias.size() != weight.dim(0)) raise(ErrorKind::kShapeMismatch, "conv2d bias size");
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), k, k / 2};
}

// cols[(c*k + ky)*k + kx, y*w + x] = input[c, y + ky - pad, x + kx - pad] (zero outside).
// `stride` is the distance between rows of `cols`, so several images can sit
// side by side.
void im2col(const ConvGeometry& g, const double* image, double* cols, std::size_t stride) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * stride;
        for (std::size_t y = 0; y < g.height; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + y * g.width;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.width, 0.0);
            continue;
          }
          const double* src = image + (c * g.height + static_cast<std::size_t>(sy)) * g.width;
          for (std::size_t x = 0; x < g.width; ++x) {
            const auto sx = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(g.pad);
            dst[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(g.width)) ? 0.0
                                                                            : src[sx];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* image, std::size_t stride) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * stride;
        for (std::size_t y = 0; y < g.height; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* dst = image + (c * g.height + static_cast<std::size_t>(sy)) * g.width;
          const double* src = row + y * g.width;
          for (std::size_t x = 0; x < g.width; ++x) {
            const auto sx = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(g.width)) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

// Images per im2col block; keeps the block around a few thousand columns.
std::size_t conv_chunk(const ConvGeometry& g) { return std::max<std::size_t>(1, 4096 / g.pixels()); }

}  // namespace

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kSum: return "sum";
    case OpKind::kReshape: return "reshape";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kMaxPool2d: return "maxpool2d";
    case OpKind::kDropout: return "dropout";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kAleatoricLoss: return "aleatoric_loss";
  }
  return "unknown";
}

Tensor GradMap::at(NodeRef node) const {
  if (node.tape != tape_ || node.index >= grads_.size()) {
    raise(ErrorKind::kNodeNotOnTape, "gradient requested for a node of another tape");
  }
  const auto& g = grads_[node.index];
  return g ? *g : zeros(shapes_[node.index]);
}

bool GradMap::reached(NodeRef node) const {
  return node.tape == tape_ && node.index < grads_.size() && grads_[node.index].has_value();
}

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

std::uint32_t Tape::check(NodeRef node) const {
  if (node.tape != id_ || node.index >= nodes_.size()) {
    raise(ErrorKind::kNodeNotOnTape, "node is not recorded on this tape");
  }
  return node.index;
}

const TapeNode& Tape::node_at(NodeRef node) const { return nodes_[check(node)]; }

NodeRef Tape::push(TapeNode node) {
  nodes_.push_back(std::move(node));
  return NodeRef{id_, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeRef Tape::input(Tensor value) {
  auto ref = push(TapeNode{OpKind::kInput, {}, std::move(value), nullptr, {}});
  if (!primary_input_) primary_input_ = ref.index;
  return ref;
}

NodeRef Tape::parameter(std::string name, Tensor value) {
  return push(TapeNode{OpKind::kParameter, {}, std::move(value), nullptr, std::move(name)});
}

NodeRef Tape::constant(Tensor value) {
  return push(TapeNode{OpKind::kConstant, {}, std::move(value), nullptr, {}});
}

NodeRef Tape::record(OpKind kind, const std::vector<NodeRef>& parents, Tensor value,
                     BackwardFn backward) {
  std::vector<std::uint32_t> idx;
  idx.reserve(parents.size());
  for (const auto& p : parents) idx.push_back(check(p));
  return push(TapeNode{kind, std::move(idx), std::move(value), std::move(backward), {}});
}

NodeRef Tape::primary_input() const {
  if (!primary_input_) raise(ErrorKind::kState, "tape has no input node");
  return NodeRef{id_, *primary_input_};
}

std::vector<NodeRef> Tape::parameters() const {
  std::vector<NodeRef> out;
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::kParameter) out.push_back(NodeRef{id_, i});
  }
  return out;
}

GradMap Tape::backward(NodeRef from, const Tensor& cotangent,
                       const std::vector<NodeRef>& targets) const {
  const auto start = check(from);
  if (!cotangent.same_shape(nodes_[start].value)) {
    raise(ErrorKind::kShapeMismatch, "cotangent " + shape_to_string(cotangent.shape()) +
                                         " for node of shape " +
                                         shape_to_string(nodes_[start].value.shape()));
  }
  // depends[i]: node i lies downstream of some target, so its cotangent matters.
  std::vector<bool> depends(nodes_.size(), targets.empty());
  if (!targets.empty()) {
    for (const auto& t : targets) depends[check(t)] = true;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (depends[i]) continue;
      for (auto p : nodes_[i].parents) {
        if (depends[p]) {
          depends[i] = true;
          break;
        }
      }
    }
  }

  GradMap out;
  out.tape_ = id_;
  out.shapes_.reserve(nodes_.size());
  for (const auto& n : nodes_) out.shapes_.push_back(n.value.shape());
  out.grads_.resize(nodes_.size());
  if (!depends[start]) return out;
  out.grads_[start] = cotangent;

  for (std::size_t i = start + 1; i-- > 0;) {
    const auto& node = nodes_[i];
    if (!out.grads_[i] || !node.backward || node.parents.empty()) continue;
    std::vector<bool> need(node.parents.size());
    bool any = false;
    for (std::size_t p = 0; p < need.size(); ++p) {
      need[p] = depends[node.parents[p]];
      any = any || need[p];
    }
    if (!any) continue;
    auto parent_grads = node.backward(*out.grads_[i], need);
    for (std::size_t p = 0; p < node.parents.size(); ++p) {
      if (!need[p] || !parent_grads[p]) continue;
      auto& slot = out.grads_[node.parents[p]];
      slot = slot ? add(*slot, *parent_grads[p]) : std::move(*parent_grads[p]);
    }
  }
  return out;
}

Traced forward(const Composition& fn, const Tensor& input) {
  Tape tape;
  const auto in = tape.input(input);
  const auto out = fn(tape, in);
  Tensor value = tape.value(out);
  return Traced{std::move(value), out, std::move(tape)};
}

Tensor vjp(const Tape& tape, NodeRef at, const Tensor& cotangent) {
  return vjp(tape, at, cotangent, tape.primary_input());
}

Tensor vjp(const Tape& tape, NodeRef at, const Tensor& cotangent, NodeRef wrt) {
  return tape.backward(at, cotangent, {wrt}).at(wrt);
}

Tensor summed_jacobian(const Tape& tape, NodeRef at) {
  return vjp(tape, at, Tensor::ones(tape.value(at).shape()));
}

std::map<std::string, Tensor> param_gradients(const Tape& tape, NodeRef loss) {
  if (tape.value(loss).size() != 1) {
    raise(ErrorKind::kNonScalarLoss,
          "loss node has shape " + shape_to_string(tape.value(loss).shape()));
  }
  const auto params = tape.parameters();
  const auto grads = tape.backward(loss, Tensor::ones(tape.value(loss).shape()), params);
  std::map<std::string, Tensor> out;
  for (const auto& p : params) {
    const auto& name = tape.node_at(p).name;
    auto g = grads.at(p);
    auto it = out.find(name);
    if (it == out.end()) {
      out.emplace(name, std::move(g));
    } else {
      it->second = add(it->second, g);
    }
  }
  return out;
}

namespace kernels {

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto g = conv_geometry(x, weight, bias);
  const std::size_t hw = g.pixels(), q = g.patch(), chunk = conv_chunk(g);
  std::vector<double> out(g.batch * g.out_channels * hw);
  std::vector<double> cols(q * chunk * hw), tmp(g.out_channels * chunk * hw);
  const double* w = weight.data().data();
  const double* b = bias.data().data();
  for (std::size_t n0 = 0; n0 < g.batch; n0 += chunk) {
    const std::size_t nb = std::min(chunk, g.batch - n0), width = nb * hw;
    for (std::size_t n = 0; n < nb; ++n) {
      im2col(g, x.data().data() + (n0 + n) * g.channels * hw, cols.data() + n * hw, width);
    }
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      std::fill(tmp.data() + o * width, tmp.data() + (o + 1) * width, b[o]);
    }
    gemm_accumulate(g.out_channels, width, q, w, cols.data(), tmp.data());
    for (std::size_t n = 0; n < nb; ++n) {
      for (std::size_t o = 0; o < g.out_channels; ++o) {
        const double* src = tmp.data() + o * width + n * hw;
        std::copy(src, src + hw, out.data() + ((n0 + n) * g.out_channels + o) * hw);
      }
    }
  }
  return Tensor({g.batch, g.out_channels, g.height, g.width}, std::move(out));
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  return Tensor(x.shape(), std::move(out));
}

Tensor softplus(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::max(v[i], 0.0) + std::log1p(std::exp(-std::abs(v[i])));
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor maxpool2d(const Tensor& x, std::size_t size, std::vector<std::uint32_t>* argmax) {
  if (x.rank() != 4) raise(ErrorKind::kShapeMismatch, "maxpool2d expects x[b,c,h,w]");
  if (size == 0 || x.dim(2) < size || x.dim(3) < size) {
    raise(ErrorKind::kShapeMismatch, "maxpool2d window larger than input " +
                                         shape_to_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / size, ow = w / size;
  std::vector<double> out(planes * oh * ow);
  if (argmax) argmax->assign(out.size(), 0);
  const auto v = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * h * w + oy * size * w + ox * size;
        for (std::size_t dy = 0; dy < size; ++dy) {
          for (std::size_t dx = 0; dx < size; ++dx) {
            const std::size_t at = p * h * w + (oy * size + dy) * w + ox * size + dx;
            if (v[at] > v[best]) best = at;  // strict: first maximum wins
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = v[best];
        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return Tensor({x.dim(0), x.dim(1), oh, ow}, std::move(out));
}

}  // namespace kernels

namespace ops {

NodeRef matmul(Tape& tape, NodeRef a, NodeRef b) {
  const Tensor av = tape.value(a), bv = tape.value(b);
  return tape.record(OpKind::kMatMul, {a, b}, signreg::matmul(av, bv),
                     [av, bv](const Tensor& g, const std::vector<bool>& need) {
                       auto out = none(2);
                       if (need[0]) out[0] = matmul_nt(g, bv);
                       if (need[1]) out[1] = matmul_tn(av, g);
                       return out;
                     });
}

NodeRef add(Tape& tape, NodeRef a, NodeRef b) {
  return tape.record(OpKind::kAdd, {a, b}, signreg::add(tape.value(a), tape.value(b)),
                     [](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<std::optional<Tensor>>{g, g};
                     });
}

NodeRef add_bias(Tape& tape, NodeRef x, NodeRef bias) {
  const Shape bias_shape = tape.value(bias).shape();
  return tape.record(OpKind::kAddBias, {x, bias},
                     add_row_bias(tape.value(x), tape.value(bias)),
                     [bias_shape](const Tensor& g, const std::vector<bool>& need) {
                       auto out = none(2);
                       if (need[0]) out[0] = g;
                       if (need[1]) out[1] = sum_rows(g).reshaped(bias_shape);
                       return out;
                     });
}

NodeRef mul(Tape& tape, NodeRef a, NodeRef b) {
  const Tensor av = tape.value(a), bv = tape.value(b);
  return tape.record(OpKind::kMul, {a, b}, signreg::mul(av, bv),
                     [av, bv](const Tensor& g, const std::vector<bool>& need) {
                       auto out = none(2);
                       if (need[0]) out[0] = signreg::mul(g, bv);
                       if (need[1]) out[1] = signreg::mul(g, av);
                       return out;
                     });
}

NodeRef scale(Tape& tape, NodeRef a, double factor) {
  return tape.record(OpKind::kScale, {a}, signreg::scale(tape.value(a), factor),
                     [factor](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<std::optional<Tensor>>{signreg::scale(g, factor)};
                     });
}

NodeRef sum(Tape& tape, NodeRef a) {
  const Shape shape = tape.value(a).shape();
  return tape.record(OpKind::kSum, {a}, Tensor::scalar(signreg::sum(tape.value(a))),
                     [shape](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<std::optional<Tensor>>{Tensor::full(shape, g[0])};
                     });
}

NodeRef reshape(Tape& tape, NodeRef a, Shape shape) {
  const Shape original = tape.value(a).shape();
  return tape.record(OpKind::kReshape, {a}, tape.value(a).reshaped(std::move(shape)),
                     [original](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<std::optional<Tensor>>{g.reshaped(original)};
                     });
}

NodeRef relu(Tape& tape, NodeRef a) {
  const Tensor x = tape.value(a);
  return tape.record(OpKind::kRelu, {a}, kernels::relu(x),
                     [x](const Tensor& g, const std::vector<bool>&) {
                       std::vector<double> out(g.size());
                       const auto gv = g.data();
                       const auto xv = x.data();
                       for (std::size_t i = 0; i < out.size(); ++i) {
                         out[i] = xv[i] > 0.0 ? gv[i] : 0.0;
                       }
                       return std::vector<std::optional<Tensor>>{Tensor(g.shape(), std::move(out))};
                     });
}

NodeRef softplus(Tape& tape, NodeRef a) {
  const Tensor x = tape.value(a);
  return tape.record(OpKind::kSoftplus, {a}, kernels::softplus(x),
                     [x](const Tensor& g, const std::vector<bool>&) {
                       std::vector<double> out(g.size());
                       const auto gv = g.data();
                       const auto xv = x.data();
                       for (std::size_t i = 0; i < out.size(); ++i) {
                         out[i] = gv[i] / (1.0 + std::exp(-xv[i]));
                       }
                       return std::vector<std::optional<Tensor>>{Tensor(g.shape(), std::move(out))};
                     });
}

NodeRef conv2d(Tape& tape, NodeRef x, NodeRef weight, NodeRef bias) {
  const Tensor xv = tape.value(x), wv = tape.value(weight), bv = tape.value(bias);
  auto value = kernels::conv2d(xv, wv, bv);
  return tape.record(
      OpKind::kConv2d, {x, weight, bias}, std::move(value),
      [xv, wv, bv](const Tensor& grad, const std::vector<bool>& need) {
        const auto g = conv_geometry(xv, wv, bv);
        const std::size_t hw = g.pixels(), q = g.patch(), chunk = conv_chunk(g);
        const std::size_t oc = g.out_channels;
        const double* w = wv.data().data();
        const double* gy = grad.data().data();
        std::vector<double> dx(need[0] ? xv.size() : 0, 0.0);
        std::vector<double> dw(need[1] ? wv.size() : 0, 0.0);
        std::vector<double> db(need[2] ? bv.size() : 0, 0.0);
        std::vector<double> cols(q * chunk * hw), gblock(oc * chunk * hw);
        std::vector<double> cols_t(need[1] ? q * chunk * hw : 0), w_t(need[0] ? q * oc : 0);
        for (std::size_t o = 0; o < w_t.size() / q; ++o) {
          for (std::size_t p = 0; p < q; ++p) w_t[p * oc + o] = w[o * q + p];
        }
        for (std::size_t n0 = 0; n0 < g.batch; n0 += chunk) {
          const std::size_t nb = std::min(chunk, g.batch - n0), width = nb * hw;
          // gblock[o, n*hw + j] = gy[n0 + n, o, j]
          for (std::size_t n = 0; n < nb; ++n) {
            for (std::size_t o = 0; o < oc; ++o) {
              const double* src = gy + ((n0 + n) * oc + o) * hw;
              std::copy(src, src + hw, gblock.data() + o * width + n * hw);
            }
          }
          if (need[0]) {
            std::fill(cols.begin(), cols.begin() + q * width, 0.0);
            gemm_accumulate(q, width, oc, w_t.data(), gblock.data(), cols.data());
            for (std::size_t n = 0; n < nb; ++n) {
              col2im_add(g, cols.data() + n * hw, dx.data() + (n0 + n) * g.channels * hw, width);
            }
          }
          if (need[1]) {
            for (std::size_t n = 0; n < nb; ++n) {
              im2col(g, xv.data().data() + (n0 + n) * g.channels * hw, cols.data() + n * hw, width);
            }
            for (std::size_t p = 0; p < q; ++p) {
              for (std::size_t j = 0; j < width; ++j) cols_t[j * q + p] = cols[p * width + j];
            }
            gemm_accumulate(oc, q, width, gblock.data(), cols_t.data(), dw.data());
          }
          if (need[2]) {
            for (std::size_t o = 0; o < oc; ++o) {
              const double* grow = gblock.data() + o * width;
              double acc = 0.0;
              for (std::size_t j = 0; j < width; ++j) acc += grow[j];
              db[o] += acc;
            }
          }
        }
        auto out = none(3);
        if (need[0]) out[0] = Tensor(xv.shape(), std::move(dx));
        if (need[1]) out[1] = Tensor(wv.shape(), std::move(dw));
        if (need[2]) out[2] = Tensor(bv.shape(), std::move(db));
        return out;
      });
}

NodeRef maxpool2d(Tape& tape, NodeRef x, std::size_t size) {
  std::vector<std::uint32_t> argmax;
  const Shape in_shape = tape.value(x).shape();
  auto value = kernels::maxpool2d(tape.value(x), size, &argmax);
  return tape.record(OpKind::kMaxPool2d, {x}, std::move(value),
                     [in_shape, argmax = std::move(argmax)](const Tensor& g,
                                                             const std::vector<bool>&) {
                       std::vector<double> out(shape_size(in_shape), 0.0);
                       const auto gv = g.data();
                       for (std::size_t o = 0; o < argmax.size(); ++o) out[argmax[o]] += gv[o];
                       return std::vector<std::optional<Tensor>>{Tensor(in_shape, std::move(out))};
                     });
}

NodeRef dropout(Tape& tape, NodeRef x, double drop_prob, Rng& rng) {
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) {
    raise(ErrorKind::kInvalidArgument, "drop probability must be in [0, 1)");
  }
  const Tensor& xv = tape.value(x);
  std::vector<double> mask(xv.size(), 1.0);
  if (drop_prob > 0.0) {
    const double keep_scale = 1.0 / (1.0 - drop_prob);
    for (auto& m : mask) m = rng.bernoulli(drop_prob) ? 0.0 : keep_scale;
  }
  Tensor mask_t(xv.shape(), std::move(mask));
  return tape.record(OpKind::kDropout, {x}, signreg::mul(xv, mask_t),
                     [mask_t](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<std::optional<Tensor>>{signreg::mul(g, mask_t)};
                     });
}

}  // namespace ops
}  // namespace signreg
