// Copyright (c) 2026 The gmmresnet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// A small dense-tensor engine with reverse-mode gradients. It covers exactly
// the operations the grouped ResNet needs. Values are double precision and
// laid out row-major; 1-D feature maps use N x C x T.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "gmmresnet/errors.hpp"

namespace gmmresnet::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += (i ? "x" : "") + std::to_string(s[i]);
  }
  return out + "]";
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily by backward
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads self.grad and accumulates into the inputs' gradients.
  std::function<void(Node& self)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value.assign(shape_numel(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: " + std::to_string(values.size()) +
                       " values do not fill shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<double> values() { return node_->value; }
  std::span<const double> values() const { return node_->value; }
  double item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor");
    return node_->value[0];
  }

  // Gradient after backward(); zeros if none reached this tensor.
  std::vector<double> grad() const {
    if (node_->grad.size() == node_->value.size()) return node_->grad;
    return std::vector<double>(node_->value.size(), 0.0);
  }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }
  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Creates the output node for an op; backward is attached only when some
// input needs gradients.
inline Tensor make_result(std::string op, Shape shape,
                          std::vector<double> value,
                          std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->op = std::move(op);
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.defined() && in.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    for (auto& in : inputs) {
      if (in.defined()) n->inputs.push_back(in.ptr());
    }
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace detail

// Runs reverse-mode accumulation from a scalar. Afterwards the interior of the
// graph is released; leaf gradients remain until zero_grad().
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, bool>> stack{{&loss.node(), false}};
  while (!stack.empty()) {
    auto [node, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(node);
      continue;
    }
    if (!visited.insert(node).second) continue;
    stack.emplace_back(node, true);
    for (const auto& in : node->inputs) {
      if (in->requires_grad && !visited.count(in.get())) {
        stack.emplace_back(in.get(), false);
      }
    }
  }
  loss.node().grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
  for (Node* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->inputs.clear();
    }
  }
}

// Operation names reachable from `root`, with multiplicity.
inline std::map<std::string, int> graph_ops(const Tensor& root) {
  std::map<std::string, int> hist;
  std::unordered_set<const Node*> visited;
  std::vector<const Node*> stack{&root.node()};
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    if (!visited.insert(n).second) continue;
    if (n->op != "leaf") ++hist[n->op];
    for (const auto& in : n->inputs) stack.push_back(in.get());
  }
  return hist;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch " +
                                              shape_str(a.shape()) + " vs " +
                                              shape_str(b.shape()));
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
  Node* pa = &a.node();
  Node* pb = &b.node();
  return detail::make_result("add", a.shape(), std::move(v), {a, b},
                             [pa, pb](Node& self) {
                               for (Node* p : {pa, pb}) {
                                 if (!p->requires_grad) continue;
                                 auto& g = p->grad_buffer();
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   g[i] += self.grad[i];
                                 }
                               }
                             });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (double& x : v) x *= s;
  Node* pa = &a.node();
  return detail::make_result("scale", a.shape(), std::move(v), {a},
                             [pa, s](Node& self) {
                               auto& g = pa->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 g[i] += s * self.grad[i];
                               }
                             });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
  Node* pa = &a.node();
  Node* pb = &b.node();
  return detail::make_result(
      "mul", a.shape(), std::move(v), {a, b}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
          auto& g = pa->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
          auto& g = pb->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
        }
      });
}

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double x : a.values()) total += x;
  Node* pa = &a.node();
  return detail::make_result("sum", {1}, {total}, {a}, [pa](Node& self) {
    auto& g = pa->grad_buffer();
    for (double& x : g) x += self.grad[0];
  });
}

// Elementwise mean of equally shaped tensors.
inline Tensor mean_of(const std::vector<Tensor>& xs) {
  detail::require(!xs.empty(), "mean_of: no inputs");
  const double inv = 1.0 / static_cast<double>(xs.size());
  std::vector<double> v(xs[0].numel(), 0.0);
  std::vector<Node*> nodes;
  for (const auto& x : xs) {
    detail::require(x.shape() == xs[0].shape(), "mean_of: shape mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += x.values()[i];
    nodes.push_back(&x.node());
  }
  for (double& x : v) x *= inv;
  return detail::make_result("mean_of", xs[0].shape(), std::move(v), xs,
                             [nodes, inv](Node& self) {
                               for (Node* p : nodes) {
                                 if (!p->requires_grad) continue;
                                 auto& g = p->grad_buffer();
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   g[i] += inv * self.grad[i];
                                 }
                               }
                             });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (double& x : v) x = x > 0.0 ? x : 0.0;
  Node* pa = &a.node();
  return detail::make_result("relu", a.shape(), std::move(v), {a},
                             [pa](Node& self) {
                               auto& g = pa->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 if (pa->value[i] > 0.0) g[i] += self.grad[i];
                               }
                             });
}

// Cross-correlation over time. input N x Cin x T, weight Cout x Cin x k,
// optional bias Cout. Output length floor((T + 2p - k) / s) + 1.
inline Tensor conv1d(const Tensor& input, const Tensor& weight,
                     const Tensor& bias, std::size_t stride,
                     std::size_t padding) {
  using detail::require;
  require(input.rank() == 3 && weight.rank() == 3,
          "conv1d: expected N x C x T input and Cout x Cin x k weight");
  const std::size_t n_batch = input.dim(0), c_in = input.dim(1),
                    t_in = input.dim(2);
  const std::size_t c_out = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == c_in, "conv1d: input has " + std::to_string(c_in) +
                                     " channels, weight expects " +
                                     std::to_string(weight.dim(1)));
  require(k % 2 == 1, "conv1d: kernel size must be odd");
  require(stride >= 1, "conv1d: stride must be >= 1");
  require(t_in + 2 * padding >= k, "conv1d: input too short for kernel");
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == c_out, "conv1d: bias shape");
  }
  const std::size_t t_out = (t_in + 2 * padding - k) / stride + 1;
  const auto rows = static_cast<Eigen::Index>(c_in * k);
  const auto cols = static_cast<Eigen::Index>(t_out);

  // im2col: unfolded(ci * k + j, t) = x(ci, t * stride + j - padding).
  auto unfold = [=](const double* x, detail::RowMat& u) {
    u.setZero(rows, cols);
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      for (std::size_t j = 0; j < k; ++j) {
        const auto r = static_cast<Eigen::Index>(ci * k + j);
        for (std::size_t t = 0; t < t_out; ++t) {
          const long src = static_cast<long>(t * stride + j) -
                           static_cast<long>(padding);
          if (src >= 0 && src < static_cast<long>(t_in)) {
            u(r, static_cast<Eigen::Index>(t)) = x[ci * t_in + src];
          }
        }
      }
    }
  };

  std::vector<double> out(n_batch * c_out * t_out);
  detail::ConstMapMat w(weight.values().data(), static_cast<Eigen::Index>(c_out),
                        rows);
  detail::RowMat unfolded;
  for (std::size_t n = 0; n < n_batch; ++n) {
    unfold(input.values().data() + n * c_in * t_in, unfolded);
    detail::MapMat y(out.data() + n * c_out * t_out,
                     static_cast<Eigen::Index>(c_out), cols);
    y.noalias() = w * unfolded;
    if (bias.defined()) {
      for (std::size_t co = 0; co < c_out; ++co) {
        y.row(static_cast<Eigen::Index>(co)).array() += bias.values()[co];
      }
    }
  }

  Node* px = &input.node();
  Node* pw = &weight.node();
  Node* pb = bias.defined() ? &bias.node() : nullptr;
  return detail::make_result(
      "conv1d", {n_batch, c_out, t_out}, std::move(out), {input, weight, bias},
      [=](Node& self) {
        detail::ConstMapMat wm(pw->value.data(),
                               static_cast<Eigen::Index>(c_out), rows);
        detail::RowMat u, du;
        for (std::size_t n = 0; n < n_batch; ++n) {
          detail::ConstMapMat dy(self.grad.data() + n * c_out * t_out,
                                 static_cast<Eigen::Index>(c_out), cols);
          if (pw->requires_grad) {
            unfold(px->value.data() + n * c_in * t_in, u);
            detail::MapMat dw(pw->grad_buffer().data(),
                              static_cast<Eigen::Index>(c_out), rows);
            dw.noalias() += dy * u.transpose();
          }
          if (pb && pb->requires_grad) {
            auto& gb = pb->grad_buffer();
            for (std::size_t co = 0; co < c_out; ++co) {
              gb[co] += dy.row(static_cast<Eigen::Index>(co)).sum();
            }
          }
          if (px->requires_grad) {
            du.noalias() = wm.transpose() * dy;
            double* dx = px->grad_buffer().data() + n * c_in * t_in;
            for (std::size_t ci = 0; ci < c_in; ++ci) {
              for (std::size_t j = 0; j < k; ++j) {
                const auto r = static_cast<Eigen::Index>(ci * k + j);
                for (std::size_t t = 0; t < t_out; ++t) {
                  const long src = static_cast<long>(t * stride + j) -
                                   static_cast<long>(padding);
                  if (src >= 0 && src < static_cast<long>(t_in)) {
                    dx[ci * t_in + src] += du(r, static_cast<Eigen::Index>(t));
                  }
                }
              }
            }
          }
        }
      });
}

enum class Mode { kTrain, kEval };

struct BatchNormState {
  Tensor gamma;  // C, learnable
  Tensor beta;   // C, learnable
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  Mode mode = Mode::kTrain;

  static BatchNormState create(std::size_t channels, double momentum = 0.1,
                               double epsilon = 1e-5) {
    BatchNormState s;
    s.gamma = Tensor::from({channels}, std::vector<double>(channels, 1.0), true);
    s.beta = Tensor::zeros({channels}, true);
    s.running_mean.assign(channels, 0.0);
    s.running_var.assign(channels, 1.0);
    s.momentum = momentum;
    s.epsilon = epsilon;
    return s;
  }
  std::size_t channels() const { return running_mean.size(); }
};

// Normalizes each channel over (N, T). Train mode uses batch statistics and
// updates the running estimates (unbiased variance); eval mode reads them.
inline Tensor batchnorm1d(const Tensor& input, BatchNormState& state) {
  detail::require(input.rank() == 3, "batchnorm1d: expected N x C x T input");
  const std::size_t n_batch = input.dim(0), c = input.dim(1), t = input.dim(2);
  detail::require(c == state.channels(),
                  "batchnorm1d: channel count mismatch");
  const std::size_t m = n_batch * t;
  const bool training = state.mode == Mode::kTrain;
  if (training && m < 2) {
    throw ShapeError("batchnorm1d: train mode needs at least 2 values per channel");
  }
  auto x = input.values();
  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu, var;
    if (training) {
      double s = 0.0;
      for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t i = 0; i < t; ++i) s += x[(n * c + ch) * t + i];
      }
      mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t i = 0; i < t; ++i) {
          const double d = x[(n * c + ch) * t + i] - mu;
          ss += d * d;
        }
      }
      var = ss / static_cast<double>(m);
      const double unbiased = ss / static_cast<double>(m - 1);
      state.running_mean[ch] =
          (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mu;
      state.running_var[ch] =
          (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    } else {
      mu = state.running_mean[ch];
      var = state.running_var[ch];
    }
    mean[ch] = mu;
    inv_std[ch] = 1.0 / std::sqrt(var + state.epsilon);
  }
  std::vector<double> xhat(x.size()), out(x.size());
  auto gamma = state.gamma.values();
  auto beta = state.beta.values();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < t; ++i) {
        const std::size_t idx = (n * c + ch) * t + i;
        xhat[idx] = (x[idx] - mean[ch]) * inv_std[ch];
        out[idx] = gamma[ch] * xhat[idx] + beta[ch];
      }
    }
  }
  Node* px = &input.node();
  Node* pg = &state.gamma.node();
  Node* pb = &state.beta.node();
  return detail::make_result(
      "batchnorm1d", input.shape(), std::move(out),
      {input, state.gamma, state.beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& dy = self.grad;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < n_batch; ++n) {
            for (std::size_t i = 0; i < t; ++i) {
              const std::size_t idx = (n * c + ch) * t + i;
              sum_dy += dy[idx];
              sum_dy_xhat += dy[idx] * xhat[idx];
            }
          }
          if (pg->requires_grad) pg->grad_buffer()[ch] += sum_dy_xhat;
          if (pb->requires_grad) pb->grad_buffer()[ch] += sum_dy;
          if (!px->requires_grad) continue;
          auto& dx = px->grad_buffer();
          const double g = pg->value[ch];
          const double md = static_cast<double>(m);
          for (std::size_t n = 0; n < n_batch; ++n) {
            for (std::size_t i = 0; i < t; ++i) {
              const std::size_t idx = (n * c + ch) * t + i;
              if (training) {
                dx[idx] += g * inv_std[ch] / md *
                           (md * dy[idx] - sum_dy - xhat[idx] * sum_dy_xhat);
              } else {
                dx[idx] += g * inv_std[ch] * dy[idx];
              }
            }
          }
        }
      });
}

// Adaptive max over time: N x C x T -> N x C. Ties go to the earliest step.
inline Tensor max_pool_time(const Tensor& input) {
  detail::require(input.rank() == 3 && input.dim(2) >= 1,
                  "max_pool_time: expected N x C x T input with T >= 1");
  const std::size_t rows = input.dim(0) * input.dim(1), t = input.dim(2);
  std::vector<double> out(rows);
  std::vector<std::size_t> argmax(rows);
  auto x = input.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < t; ++i) {
      if (x[r * t + i] > x[r * t + best]) best = i;
    }
    argmax[r] = best;
    out[r] = x[r * t + best];
  }
  Node* px = &input.node();
  return detail::make_result(
      "max_pool_time", {input.dim(0), input.dim(1)}, std::move(out), {input},
      [px, t, argmax = std::move(argmax)](Node& self) {
        auto& g = px->grad_buffer();
        for (std::size_t r = 0; r < argmax.size(); ++r) {
          g[r * t + argmax[r]] += self.grad[r];
        }
      });
}

// y = x W' + b with x N x F, W O x F, b O.
inline Tensor linear(const Tensor& input, const Tensor& weight,
                     const Tensor& bias) {
  detail::require(input.rank() == 2 && weight.rank() == 2 &&
                      input.dim(1) == weight.dim(1),
                  "linear: expected N x F input and O x F weight");
  const auto n = static_cast<Eigen::Index>(input.dim(0));
  const auto f = static_cast<Eigen::Index>(input.dim(1));
  const auto o = static_cast<Eigen::Index>(weight.dim(0));
  if (bias.defined()) {
    detail::require(bias.rank() == 1 && bias.dim(0) == weight.dim(0),
                    "linear: bias shape");
  }
  std::vector<double> out(static_cast<std::size_t>(n * o));
  detail::MapMat y(out.data(), n, o);
  y.noalias() = detail::ConstMapMat(input.values().data(), n, f) *
                detail::ConstMapMat(weight.values().data(), o, f).transpose();
  if (bias.defined()) {
    for (Eigen::Index j = 0; j < o; ++j) y.col(j).array() += bias.values()[j];
  }
  Node* px = &input.node();
  Node* pw = &weight.node();
  Node* pb = bias.defined() ? &bias.node() : nullptr;
  return detail::make_result(
      "linear", {input.dim(0), weight.dim(0)}, std::move(out),
      {input, weight, bias}, [=](Node& self) {
        detail::ConstMapMat dy(self.grad.data(), n, o);
        if (px->requires_grad) {
          detail::MapMat(px->grad_buffer().data(), n, f).noalias() +=
              dy * detail::ConstMapMat(pw->value.data(), o, f);
        }
        if (pw->requires_grad) {
          detail::MapMat(pw->grad_buffer().data(), o, f).noalias() +=
              dy.transpose() * detail::ConstMapMat(px->value.data(), n, f);
        }
        if (pb && pb->requires_grad) {
          auto& gb = pb->grad_buffer();
          for (Eigen::Index j = 0; j < o; ++j) gb[j] += dy.col(j).sum();
        }
      });
}

// Mean over the batch of -log softmax(logits)[label].
inline Tensor softmax_cross_entropy(const Tensor& logits,
                                    std::span<const int> labels) {
  detail::require(logits.rank() == 2, "softmax_cross_entropy: expected N x C");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  detail::require(labels.size() == n && n > 0,
                  "softmax_cross_entropy: need one label per row");
  std::vector<double> prob(n * c);
  double loss = 0.0;
  auto z = logits.values();
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ShapeError("softmax_cross_entropy: label " +
                       std::to_string(labels[i]) + " out of range");
    }
    double mx = z[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[i * c + j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) prob[i * c + j] = std::exp(z[i * c + j] - lse);
    loss += lse - z[i * c + static_cast<std::size_t>(labels[i])];
  }
  loss /= static_cast<double>(n);
  Node* pz = &logits.node();
  std::vector<int> lab(labels.begin(), labels.end());
  return detail::make_result(
      "softmax_cross_entropy", {1}, {loss}, {logits},
      [pz, n, c, prob = std::move(prob), lab = std::move(lab)](Node& self) {
        auto& g = pz->grad_buffer();
        const double s = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const double onehot = static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
            g[i * c + j] += s * (prob[i * c + j] - onehot);
          }
        }
      });
}

// Concatenates N x C_i x T tensors along channels.
inline Tensor concat_channels(const std::vector<Tensor>& xs) {
  detail::require(!xs.empty(), "concat_channels: no inputs");
  const std::size_t n = xs[0].dim(0), t = xs[0].dim(2);
  std::size_t total_c = 0;
  for (const auto& x : xs) {
    detail::require(x.rank() == 3 && x.dim(0) == n && x.dim(2) == t,
                    "concat_channels: shape mismatch");
    total_c += x.dim(1);
  }
  std::vector<double> out(n * total_c * t);
  std::vector<std::pair<Node*, std::size_t>> parts;  // node, channel offset
  std::size_t offset = 0;
  for (const auto& x : xs) {
    const std::size_t c = x.dim(1);
    for (std::size_t b = 0; b < n; ++b) {
      std::copy_n(x.values().data() + b * c * t, c * t,
                  out.data() + (b * total_c + offset) * t);
    }
    parts.emplace_back(&x.node(), offset);
    offset += c;
  }
  return detail::make_result(
      "concat_channels", {n, total_c, t}, std::move(out), xs,
      [parts, n, t, total_c](Node& self) {
        for (auto [p, off] : parts) {
          if (!p->requires_grad) continue;
          const std::size_t c = p->shape[1];
          auto& g = p->grad_buffer();
          for (std::size_t b = 0; b < n; ++b) {
            const double* src = self.grad.data() + (b * total_c + off) * t;
            double* dst = g.data() + b * c * t;
            for (std::size_t i = 0; i < c * t; ++i) dst[i] += src[i];
          }
        }
      });
}

}  // namespace gmmresnet::ad
