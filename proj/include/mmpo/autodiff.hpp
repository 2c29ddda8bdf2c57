// Copyright (c) 2026 mmpo-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mmpo/common.hpp"
#include "mmpo/numerics.hpp"
#include "mmpo/tensor.hpp"

namespace mmpo {

// Reverse-mode autodiff over TensorT<T>.
//
// A TapeT owns the computation graph for one forward pass. Nodes are stored
// in creation order, which is a valid topological order because every op's
// inputs exist before its output; backward() walks that order in reverse and
// visits each touched node exactly once. Graphs are built per forward pass
// and dropped with the tape; node values are never mutated in place.
template <typename T>
struct NodeT {
  TensorT<T> value;
  TensorT<T> grad;  // empty until the backward sweep first touches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::function<void(NodeT&)> backward_fn;

  void ensure_grad() {
    if (grad.numel() == 0) grad = TensorT<T>::zeros(value.shape());
  }
};

template <typename T>
class VarT {
 public:
  VarT() = default;
  explicit VarT(NodeT<T>* node) : node_(node) {}

  const TensorT<T>& value() const { return node_->value; }
  const TensorT<T>& grad() const {
    node_->ensure_grad();  // zero-filled if backward never reached this node
    return node_->grad;
  }
  const std::vector<std::int64_t>& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  NodeT<T>* node() const { return node_; }
  bool valid() const { return node_ != nullptr; }

 private:
  NodeT<T>* node_ = nullptr;
};

template <typename T>
class TapeT {
 public:
  using Var = VarT<T>;
  using Tensor = TensorT<T>;
  using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<MatRM>;
  using MapCM = Eigen::Map<const MatRM>;

  // ---- graph entry points ----

  Var leaf(Tensor value, bool requires_grad = true) {
    check_finite(value, "leaf");
    NodeT<T>* n = alloc();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->op = requires_grad ? "leaf" : "constant";
    return Var(n);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  std::size_t size() const { return nodes_.size(); }

  // ---- elementwise / scalar ----

  Var add(Var a, Var b) {
    require_same_shape("add", a, b);
    Tensor out = a.value();
    const auto& bd = b.value().data();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += bd[static_cast<std::size_t>(i)];
    return unary_or_binary("add", std::move(out), a, b, [](NodeT<T>& self, NodeT<T>* pa, NodeT<T>* pb) {
      accumulate(pa, self.grad, [](T g) { return g; });
      accumulate(pb, self.grad, [](T g) { return g; });
    });
  }

  // b's shape must be a suffix of a's shape; b is tiled over the leading axes.
  Var add_broadcast(Var a, Var b) {
    require_suffix_shape("add_broadcast", a, b);
    Tensor out = a.value();
    const auto& bd = b.value().data();
    const std::int64_t bn = b.value().numel();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += bd[static_cast<std::size_t>(i % bn)];
    return unary_or_binary("add_broadcast", std::move(out), a, b,
                           [bn](NodeT<T>& self, NodeT<T>* pa, NodeT<T>* pb) {
                             accumulate(pa, self.grad, [](T g) { return g; });
                             if (pb->requires_grad) {
                               pb->ensure_grad();
                               const auto& g = self.grad;
                               for (std::int64_t i = 0; i < g.numel(); ++i) pb->grad[i % bn] += g[i];
                             }
                           });
  }

  Var sub(Var a, Var b) {
    require_same_shape("sub", a, b);
    Tensor out = a.value();
    const auto& bd = b.value().data();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= bd[static_cast<std::size_t>(i)];
    return unary_or_binary("sub", std::move(out), a, b, [](NodeT<T>& self, NodeT<T>* pa, NodeT<T>* pb) {
      accumulate(pa, self.grad, [](T g) { return g; });
      accumulate(pb, self.grad, [](T g) { return -g; });
    });
  }

  Var mul(Var a, Var b) {
    require_same_shape("mul", a, b);
    Tensor out = a.value();
    const auto& bd = b.value().data();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= bd[static_cast<std::size_t>(i)];
    return unary_or_binary("mul", std::move(out), a, b, [](NodeT<T>& self, NodeT<T>* pa, NodeT<T>* pb) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) pa->grad[i] += self.grad[i] * pb->value[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) pb->grad[i] += self.grad[i] * pa->value[i];
      }
    });
  }

  Var neg(Var a) { return scale(a, T(-1)); }

  Var scale(Var a, T c) {
    Tensor out = a.value();
    for (auto& v : out.data()) v *= c;
    return unary("scale", std::move(out), a, [c](NodeT<T>& self, NodeT<T>* pa) {
      accumulate(pa, self.grad, [c](T g) { return c * g; });
    });
  }

  Var add_scalar(Var a, T c) {
    Tensor out = a.value();
    for (auto& v : out.data()) v += c;
    return unary("add_scalar", std::move(out), a, [](NodeT<T>& self, NodeT<T>* pa) {
      accumulate(pa, self.grad, [](T g) { return g; });
    });
  }

  Var tanh_(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = std::tanh(v);
    return unary("tanh", std::move(out), a, [](NodeT<T>& self, NodeT<T>* pa) {
      if (!pa->requires_grad) return;
      pa->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
        const T y = self.value[i];
        pa->grad[i] += self.grad[i] * (T(1) - y * y);
      }
    });
  }

  Var sigmoid_(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = sigmoid(v);
    return unary("sigmoid", std::move(out), a, [](NodeT<T>& self, NodeT<T>* pa) {
      if (!pa->requires_grad) return;
      pa->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
        const T y = self.value[i];
        pa->grad[i] += self.grad[i] * y * (T(1) - y);
      }
    });
  }

  Var exp_(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = std::exp(v);
    return unary("exp", std::move(out), a, [](NodeT<T>& self, NodeT<T>* pa) {
      if (!pa->requires_grad) return;
      pa->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i)
        pa->grad[i] += self.grad[i] * self.value[i];
    });
  }

  Var log_(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = std::log(v);
    return unary("log", std::move(out), a, [](NodeT<T>& self, NodeT<T>* pa) {
      if (!pa->requires_grad) return;
      pa->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i)
        pa->grad[i] += self.grad[i] / pa->value[i];
    });
  }

  Var log_sigmoid_(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = log_sigmoid(v);
    return unary("log_sigmoid", std::move(out), a, [](NodeT<T>& self, NodeT<T>* pa) {
      if (!pa->requires_grad) return;
      pa->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i)
        pa->grad[i] += self.grad[i] * sigmoid(-pa->value[i]);
    });
  }

  // Elementwise log(e^a + e^b); adjoints are the two softmax weights.
  Var logaddexp(Var a, Var b) {
    require_same_shape("logaddexp", a, b);
    Tensor out = a.value();
    const auto& bd = b.value().data();
    for (std::int64_t i = 0; i < out.numel(); ++i)
      out[i] = mmpo::logaddexp(out[i], bd[static_cast<std::size_t>(i)]);
    return unary_or_binary("logaddexp", std::move(out), a, b,
                           [](NodeT<T>& self, NodeT<T>* pa, NodeT<T>* pb) {
                             for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
                               const T d = pa->value[i] - pb->value[i];
                               if (pa->requires_grad) {
                                 pa->ensure_grad();
                                 pa->grad[i] += self.grad[i] * sigmoid(d);
                               }
                               if (pb->requires_grad) {
                                 pb->ensure_grad();
                                 pb->grad[i] += self.grad[i] * sigmoid(-d);
                               }
                             }
                           });
  }

  // ---- dense linear algebra ----

  Var matmul(Var a, Var b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
      throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                  shape_str(b.shape()));
    }
    const std::int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out({m, n});
    MapM(out.ptr(), m, n).noalias() = MapCM(a.value().ptr(), m, k) * MapCM(b.value().ptr(), k, n);
    return unary_or_binary("matmul", std::move(out), a, b,
                           [m, k, n](NodeT<T>& self, NodeT<T>* pa, NodeT<T>* pb) {
                             MapCM g(self.grad.ptr(), m, n);
                             if (pa->requires_grad) {
                               pa->ensure_grad();
                               MapM(pa->grad.ptr(), m, k).noalias() +=
                                   g * MapCM(pb->value.ptr(), k, n).transpose();
                             }
                             if (pb->requires_grad) {
                               pb->ensure_grad();
                               MapM(pb->grad.ptr(), k, n).noalias() +=
                                   MapCM(pa->value.ptr(), m, k).transpose() * g;
                             }
                           });
  }

  // Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N].
  Var bmm(Var a, Var b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1]) {
      throw std::invalid_argument("bmm: incompatible shapes " + shape_str(sa) + " x " +
                                  shape_str(sb));
    }
    const std::int64_t bsz = sa[0], m = sa[1], k = sa[2], n = sb[2];
    Tensor out({bsz, m, n});
    for (std::int64_t i = 0; i < bsz; ++i) {
      MapM(out.ptr() + i * m * n, m, n).noalias() =
          MapCM(a.value().ptr() + i * m * k, m, k) * MapCM(b.value().ptr() + i * k * n, k, n);
    }
    return unary_or_binary(
        "bmm", std::move(out), a, b, [bsz, m, k, n](NodeT<T>& self, NodeT<T>* pa, NodeT<T>* pb) {
          for (std::int64_t i = 0; i < bsz; ++i) {
            MapCM g(self.grad.ptr() + i * m * n, m, n);
            if (pa->requires_grad) {
              pa->ensure_grad();
              MapM(pa->grad.ptr() + i * m * k, m, k).noalias() +=
                  g * MapCM(pb->value.ptr() + i * k * n, k, n).transpose();
            }
            if (pb->requires_grad) {
              pb->ensure_grad();
              MapM(pb->grad.ptr() + i * k * n, k, n).noalias() +=
                  MapCM(pa->value.ptr() + i * m * k, m, k).transpose() * g;
            }
          }
        });
  }

  // ---- structural ----

  Var reshape(Var a, std::vector<std::int64_t> new_shape) {
    Tensor out = a.value().reshaped(new_shape);
    return unary("reshape", std::move(out), a, [](NodeT<T>& self, NodeT<T>* pa) {
      if (!pa->requires_grad) return;
      pa->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) pa->grad[i] += self.grad[i];
    });
  }

  Var permute(Var a, std::vector<std::int64_t> axes) {
    const auto& sh = a.shape();
    const std::int64_t r = static_cast<std::int64_t>(sh.size());
    if (static_cast<std::int64_t>(axes.size()) != r) {
      throw std::invalid_argument("permute: axes rank mismatch for " + shape_str(sh));
    }
    std::vector<std::int64_t> out_shape(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = sh[static_cast<std::size_t>(axes[i])];
    std::vector<std::int64_t> in_strides = strides_of(sh);
    std::vector<std::int64_t> gather_strides(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i)
      gather_strides[i] = in_strides[static_cast<std::size_t>(axes[i])];

    Tensor out(out_shape);
    copy_strided(a.value(), out, out_shape, gather_strides, /*scatter=*/false);
    return unary("permute", std::move(out), a,
                 [out_shape, gather_strides](NodeT<T>& self, NodeT<T>* pa) {
                   if (!pa->requires_grad) return;
                   pa->ensure_grad();
                   scatter_strided(self.grad, pa->grad, out_shape, gather_strides);
                 });
  }

  Var slice(Var a, std::int64_t axis, std::int64_t start, std::int64_t len) {
    const auto& sh = a.shape();
    if (axis < 0 || axis >= static_cast<std::int64_t>(sh.size()) || start < 0 || len <= 0 ||
        start + len > sh[static_cast<std::size_t>(axis)]) {
      throw std::invalid_argument("slice: invalid range on shape " + shape_str(sh));
    }
    std::int64_t outer = 1, inner = 1;
    for (std::int64_t i = 0; i < axis; ++i) outer *= sh[static_cast<std::size_t>(i)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < sh.size(); ++i) inner *= sh[i];
    const std::int64_t ax = sh[static_cast<std::size_t>(axis)];

    std::vector<std::int64_t> out_shape = sh;
    out_shape[static_cast<std::size_t>(axis)] = len;
    Tensor out(out_shape);
    for (std::int64_t o = 0; o < outer; ++o) {
      const T* src = a.value().ptr() + (o * ax + start) * inner;
      T* dst = out.ptr() + o * len * inner;
      std::copy(src, src + len * inner, dst);
    }
    return unary("slice", std::move(out), a,
                 [outer, inner, ax, start, len](NodeT<T>& self, NodeT<T>* pa) {
                   if (!pa->requires_grad) return;
                   pa->ensure_grad();
                   for (std::int64_t o = 0; o < outer; ++o) {
                     const T* src = self.grad.ptr() + o * len * inner;
                     T* dst = pa->grad.ptr() + (o * ax + start) * inner;
                     for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                   }
                 });
  }

  // ---- rows (last axis) ----

  Var row_log_softmax(Var a) {
    auto [rows, width] = row_dims(a);
    Tensor out = a.value();
    for (std::int64_t r = 0; r < rows; ++r) {
      T* p = out.ptr() + r * width;
      T m = p[0];
      for (std::int64_t j = 1; j < width; ++j) m = std::max(m, p[j]);
      T sum = T(0);
      for (std::int64_t j = 0; j < width; ++j) sum += std::exp(p[j] - m);
      const T lse = m + std::log(sum);
      for (std::int64_t j = 0; j < width; ++j) p[j] -= lse;
    }
    return unary("log_softmax", std::move(out), a,
                 [rows, width](NodeT<T>& self, NodeT<T>* pa) {
                   if (!pa->requires_grad) return;
                   pa->ensure_grad();
                   for (std::int64_t r = 0; r < rows; ++r) {
                     const T* y = self.value.ptr() + r * width;
                     const T* g = self.grad.ptr() + r * width;
                     T* d = pa->grad.ptr() + r * width;
                     T gsum = T(0);
                     for (std::int64_t j = 0; j < width; ++j) gsum += g[j];
                     for (std::int64_t j = 0; j < width; ++j) d[j] += g[j] - std::exp(y[j]) * gsum;
                   }
                 });
  }

  Var row_softmax(Var a) {
    auto [rows, width] = row_dims(a);
    Tensor out = a.value();
    for (std::int64_t r = 0; r < rows; ++r) {
      softmax_inplace(std::span<T>(out.ptr() + r * width, static_cast<std::size_t>(width)));
    }
    return unary("softmax", std::move(out), a, [rows, width](NodeT<T>& self, NodeT<T>* pa) {
      if (!pa->requires_grad) return;
      pa->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* y = self.value.ptr() + r * width;
        const T* g = self.grad.ptr() + r * width;
        T* d = pa->grad.ptr() + r * width;
        T dot = T(0);
        for (std::int64_t j = 0; j < width; ++j) dot += g[j] * y[j];
        for (std::int64_t j = 0; j < width; ++j) d[j] += y[j] * (g[j] - dot);
      }
    });
  }

  Var row_logsumexp(Var a) {
    auto [rows, width] = row_dims(a);
    Tensor out(drop_last(a.shape()));
    for (std::int64_t r = 0; r < rows; ++r) {
      out[r] = mmpo::logsumexp(
          std::span<const T>(a.value().ptr() + r * width, static_cast<std::size_t>(width)));
    }
    return unary("logsumexp", std::move(out), a, [rows, width](NodeT<T>& self, NodeT<T>* pa) {
      if (!pa->requires_grad) return;
      pa->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* x = pa->value.ptr() + r * width;
        T* d = pa->grad.ptr() + r * width;
        const T lse = self.value[r];
        const T g = self.grad[r];
        for (std::int64_t j = 0; j < width; ++j) d[j] += g * std::exp(x[j] - lse);
      }
    });
  }

  // Shannon entropy of softmax(row). Adjoint: dH/dx_k = -p_k (log p_k + H).
  Var row_entropy(Var a) {
    auto [rows, width] = row_dims(a);
    Tensor out(drop_last(a.shape()));
    for (std::int64_t r = 0; r < rows; ++r) {
      out[r] = entropy_from_logits(
          std::span<const T>(a.value().ptr() + r * width, static_cast<std::size_t>(width)));
    }
    return unary("entropy", std::move(out), a, [rows, width](NodeT<T>& self, NodeT<T>* pa) {
      if (!pa->requires_grad) return;
      pa->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* x = pa->value.ptr() + r * width;
        T* d = pa->grad.ptr() + r * width;
        const T h = self.value[r];
        const T g = self.grad[r];
        T m = x[0];
        for (std::int64_t j = 1; j < width; ++j) m = std::max(m, x[j]);
        T sum = T(0);
        for (std::int64_t j = 0; j < width; ++j) sum += std::exp(x[j] - m);
        const T lse = m + std::log(sum);
        for (std::int64_t j = 0; j < width; ++j) {
          const T lp = x[j] - lse;
          const T p = std::exp(lp);
          if (p > T(0)) d[j] += g * (-p * (lp + h));
        }
      }
    });
  }

  Var row_sum(Var a) {
    auto [rows, width] = row_dims(a);
    Tensor out(drop_last(a.shape()));
    for (std::int64_t r = 0; r < rows; ++r) {
      T s = T(0);
      const T* p = a.value().ptr() + r * width;
      for (std::int64_t j = 0; j < width; ++j) s += p[j];
      out[r] = s;
    }
    return unary("row_sum", std::move(out), a, [rows, width](NodeT<T>& self, NodeT<T>* pa) {
      if (!pa->requires_grad) return;
      pa->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        T* d = pa->grad.ptr() + r * width;
        const T g = self.grad[r];
        for (std::int64_t j = 0; j < width; ++j) d[j] += g;
      }
    });
  }

  Var sum_all(Var a) {
    T s = T(0);
    for (T v : a.value().data()) s += v;
    return unary("sum_all", Tensor::scalar(s), a, [](NodeT<T>& self, NodeT<T>* pa) {
      if (!pa->requires_grad) return;
      pa->ensure_grad();
      const T g = self.grad[0];
      for (std::int64_t i = 0; i < pa->grad.numel(); ++i) pa->grad[i] += g;
    });
  }

  Var mean_all(Var a) {
    const T inv = T(1) / static_cast<T>(a.value().numel());
    return scale(sum_all(a), inv);
  }

  // ---- lookup ----

  // table: [V, D]; ids: any shape; out: ids.shape + [D].
  Var embedding(Var table, const ITensor& ids) {
    const auto& ts = table.shape();
    if (ts.size() != 2) throw std::invalid_argument("embedding: table must be rank 2");
    const std::int64_t v = ts[0], d = ts[1];
    for (std::int64_t i = 0; i < ids.numel(); ++i) {
      if (ids[i] < 0 || ids[i] >= v) {
        throw std::invalid_argument("embedding: id " + std::to_string(ids[i]) +
                                    " out of range for table " + shape_str(ts));
      }
    }
    std::vector<std::int64_t> out_shape = ids.shape();
    out_shape.push_back(d);
    Tensor out(out_shape);
    for (std::int64_t i = 0; i < ids.numel(); ++i) {
      const T* src = table.value().ptr() + static_cast<std::int64_t>(ids[i]) * d;
      std::copy(src, src + d, out.ptr() + i * d);
    }
    return unary("embedding", std::move(out), table, [ids, d](NodeT<T>& self, NodeT<T>* pa) {
      if (!pa->requires_grad) return;
      pa->ensure_grad();
      for (std::int64_t i = 0; i < ids.numel(); ++i) {
        const T* g = self.grad.ptr() + i * d;
        T* dst = pa->grad.ptr() + static_cast<std::int64_t>(ids[i]) * d;
        for (std::int64_t j = 0; j < d; ++j) dst[j] += g[j];
      }
    });
  }

  // a: [..., W]; ids: [...] selecting one entry per row.
  Var gather_last(Var a, const ITensor& ids) {
    auto [rows, width] = row_dims(a);
    if (ids.numel() != rows) {
      throw std::invalid_argument("gather_last: ids shape " + shape_str(ids.shape()) +
                                  " does not match rows of " + shape_str(a.shape()));
    }
    for (std::int64_t i = 0; i < rows; ++i) {
      if (ids[i] < 0 || ids[i] >= width) {
        throw std::invalid_argument("gather_last: id out of range: " + std::to_string(ids[i]));
      }
    }
    Tensor out(drop_last(a.shape()));
    for (std::int64_t r = 0; r < rows; ++r) out[r] = a.value()[r * width + ids[r]];
    return unary("gather_last", std::move(out), a,
                 [ids, rows, width](NodeT<T>& self, NodeT<T>* pa) {
                   if (!pa->requires_grad) return;
                   pa->ensure_grad();
                   for (std::int64_t r = 0; r < rows; ++r) {
                     pa->grad[r * width + ids[r]] += self.grad[r];
                   }
                 });
  }

  // ---- normalization ----

  // Row-wise layer norm over the last axis with population variance,
  // then affine (gain, bias), both shaped [D].
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-5)) {
    auto [rows, d] = row_dims(x);
    if (gain.shape() != std::vector<std::int64_t>{d} || bias.shape() != std::vector<std::int64_t>{d}) {
      throw std::invalid_argument("layer_norm: affine params must be shaped [" + std::to_string(d) +
                                  "], got " + shape_str(gain.shape()) + " and " +
                                  shape_str(bias.shape()));
    }
    Tensor out(x.shape());
    Tensor xhat(x.shape());
    std::vector<T> inv_std(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* p = x.value().ptr() + r * d;
      T mean = T(0);
      for (std::int64_t j = 0; j < d; ++j) mean += p[j];
      mean /= static_cast<T>(d);
      T var = T(0);
      for (std::int64_t j = 0; j < d; ++j) {
        const T c = p[j] - mean;
        var += c * c;
      }
      var /= static_cast<T>(d);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(r)] = is;
      for (std::int64_t j = 0; j < d; ++j) {
        const T xh = (p[j] - mean) * is;
        xhat[r * d + j] = xh;
        out[r * d + j] = xh * gain.value()[j] + bias.value()[j];
      }
    }
    NodeT<T>* n = alloc();
    n->value = std::move(out);
    check_finite(n->value, "layer_norm");
    n->op = "layer_norm";
    n->requires_grad = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    NodeT<T>*px = x.node(), *pg = gain.node(), *pb = bias.node();
    if (n->requires_grad) {
      n->backward_fn = [px, pg, pb, rows, d, xhat = std::move(xhat),
                        inv_std = std::move(inv_std)](NodeT<T>& self) {
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* g = self.grad.ptr() + r * d;
          const T* xh = xhat.ptr() + r * d;
          if (pg->requires_grad) {
            pg->ensure_grad();
            for (std::int64_t j = 0; j < d; ++j) pg->grad[j] += g[j] * xh[j];
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::int64_t j = 0; j < d; ++j) pb->grad[j] += g[j];
          }
          if (px->requires_grad) {
            px->ensure_grad();
            T m1 = T(0), m2 = T(0);
            for (std::int64_t j = 0; j < d; ++j) {
              const T gj = g[j] * pg->value[j];
              m1 += gj;
              m2 += gj * xh[j];
            }
            m1 /= static_cast<T>(d);
            m2 /= static_cast<T>(d);
            const T is = inv_std[static_cast<std::size_t>(r)];
            T* dx = px->grad.ptr() + r * d;
            for (std::int64_t j = 0; j < d; ++j) {
              const T gj = g[j] * pg->value[j];
              dx[j] += is * (gj - m1 - xh[j] * m2);
            }
          }
        }
      };
    }
    return Var(n);
  }

  // ---- backward ----

  // Propagates d(root)/d(node) into every contributing node's grad field.
  // root must be scalar-valued. Grads accumulate additively, so a node
  // reached along several paths receives the sum over paths.
  void backward(Var root) {
    NodeT<T>* rn = root.node();
    if (rn->value.numel() != 1) {
      throw std::invalid_argument("backward: root must be scalar, got shape " +
                                  shape_str(rn->value.shape()));
    }
    if (!rn->requires_grad) return;
    rn->ensure_grad();
    rn->grad[0] += T(1);
    bool seen_root = false;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      NodeT<T>* n = it->get();
      if (!seen_root) {
        if (n == rn) seen_root = true;
        else continue;
      }
      if (n->requires_grad && n->grad.numel() != 0 && n->backward_fn) n->backward_fn(*n);
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) n->grad = Tensor();
  }

 private:
  std::deque<std::unique_ptr<NodeT<T>>> nodes_;

  NodeT<T>* alloc() {
    nodes_.push_back(std::make_unique<NodeT<T>>());
    return nodes_.back().get();
  }

  static void check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) {
      throw numeric_error(std::string("op '") + op + "' produced a non-finite value");
    }
  }

  template <typename Fn>
  Var unary(const char* op, Tensor out, Var a, Fn&& fn) {
    check_finite(out, op);
    NodeT<T>* n = alloc();
    n->value = std::move(out);
    n->op = op;
    n->requires_grad = a.requires_grad();
    if (n->requires_grad) {
      NodeT<T>* pa = a.node();
      n->backward_fn = [pa, fn = std::forward<Fn>(fn)](NodeT<T>& self) { fn(self, pa); };
    }
    return Var(n);
  }

  template <typename Fn>
  Var unary_or_binary(const char* op, Tensor out, Var a, Var b, Fn&& fn) {
    check_finite(out, op);
    NodeT<T>* n = alloc();
    n->value = std::move(out);
    n->op = op;
    n->requires_grad = a.requires_grad() || b.requires_grad();
    if (n->requires_grad) {
      NodeT<T>*pa = a.node(), *pb = b.node();
      n->backward_fn = [pa, pb, fn = std::forward<Fn>(fn)](NodeT<T>& self) { fn(self, pa, pb); };
    }
    return Var(n);
  }

  template <typename Fn>
  static void accumulate(NodeT<T>* p, const Tensor& g, Fn&& fn) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) p->grad[i] += fn(g[i]);
  }

  static std::pair<std::int64_t, std::int64_t> row_dims(Var a) {
    const auto& sh = a.shape();
    const std::int64_t width = sh.back();
    return {a.value().numel() / width, width};
  }

  static std::vector<std::int64_t> drop_last(const std::vector<std::int64_t>& sh) {
    if (sh.size() <= 1) return {1};
    return std::vector<std::int64_t>(sh.begin(), sh.end() - 1);
  }

  static std::vector<std::int64_t> strides_of(const std::vector<std::int64_t>& sh) {
    std::vector<std::int64_t> st(sh.size(), 1);
    for (std::int64_t i = static_cast<std::int64_t>(sh.size()) - 2; i >= 0; --i) {
      st[static_cast<std::size_t>(i)] =
          st[static_cast<std::size_t>(i + 1)] * sh[static_cast<std::size_t>(i + 1)];
    }
    return st;
  }

  // out[flat] = in[dot(coords, gather_strides)] where coords enumerate out_shape.
  static void copy_strided(const Tensor& in, Tensor& out,
                           const std::vector<std::int64_t>& out_shape,
                           const std::vector<std::int64_t>& gather_strides, bool scatter) {
    (void)scatter;
    std::vector<std::int64_t> coord(out_shape.size(), 0);
    const std::int64_t n = out.numel();
    for (std::int64_t flat = 0; flat < n; ++flat) {
      std::int64_t src = 0;
      for (std::size_t i = 0; i < coord.size(); ++i) src += coord[i] * gather_strides[i];
      out[flat] = in[src];
      for (std::int64_t i = static_cast<std::int64_t>(coord.size()) - 1; i >= 0; --i) {
        if (++coord[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
        coord[static_cast<std::size_t>(i)] = 0;
      }
    }
  }

  static void scatter_strided(const Tensor& grad_out, Tensor& grad_in,
                              const std::vector<std::int64_t>& out_shape,
                              const std::vector<std::int64_t>& gather_strides) {
    std::vector<std::int64_t> coord(out_shape.size(), 0);
    const std::int64_t n = grad_out.numel();
    for (std::int64_t flat = 0; flat < n; ++flat) {
      std::int64_t src = 0;
      for (std::size_t i = 0; i < coord.size(); ++i) src += coord[i] * gather_strides[i];
      grad_in[src] += grad_out[flat];
      for (std::int64_t i = static_cast<std::int64_t>(coord.size()) - 1; i >= 0; --i) {
        if (++coord[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
        coord[static_cast<std::size_t>(i)] = 0;
      }
    }
  }

  static void require_same_shape(const char* op, Var a, Var b) {
    if (a.shape() != b.shape()) {
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                  " vs " + shape_str(b.shape()));
    }
  }

  static void require_suffix_shape(const char* op, Var a, Var b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sb.size() > sa.size() ||
        !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
      throw std::invalid_argument(std::string(op) + ": " + shape_str(sb) +
                                  " is not a trailing shape of " + shape_str(sa));
    }
  }
};

using Tape = TapeT<double>;
using Var = VarT<double>;

// Gradients of scalar root w.r.t. a named set of leaves. Leaves never
// reached by backward get zero gradients of the right shape.
template <typename T>
std::map<std::string, TensorT<T>> gradient_map(const std::map<std::string, VarT<T>>& leaves) {
  std::map<std::string, TensorT<T>> out;
  for (const auto& [name, var] : leaves) {
    if (var.node()->grad.numel() != 0) {
      out.emplace(name, var.node()->grad);
    } else {
      out.emplace(name, TensorT<T>::zeros(var.value().shape()));
    }
  }
  return out;
}

}  // namespace mmpo
