// Copyright 2026 The capzero Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "capzero/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "capzero/errors.hpp"

namespace capzero {
namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void check_same_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) {
    throw ContractError("operands belong to different graphs");
  }
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw ContractError(std::string(op) + ": rank mismatch " +
                        shape_string(a) + " vs " + shape_string(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw ContractError(std::string(op) + ": incompatible shapes " +
                          shape_string(a) + " vs " + shape_string(b));
    }
  }
  return out;
}

// Visits every element of `out` with the flat offsets of the operand
// elements that broadcast onto it.
template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b,
                        Fn&& fn) {
  const std::size_t rank = out.size();
  if (a == out && b == out) {
    const std::size_t n = shape_size(out);
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  std::vector<std::size_t> a_stride(rank), b_stride(rank);
  std::size_t as = 1, bs = 1;
  for (std::size_t i = rank; i-- > 0;) {
    a_stride[i] = a[i] == 1 ? 0 : as;
    b_stride[i] = b[i] == 1 ? 0 : bs;
    as *= a[i];
    bs *= b[i];
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ai = 0, bi = 0;
  const std::size_t n = shape_size(out);
  for (std::size_t o = 0; o < n; ++o) {
    fn(o, ai, bi);
    for (std::size_t ax = rank; ax-- > 0;) {
      if (++idx[ax] < out[ax]) {
        ai += a_stride[ax];
        bi += b_stride[ax];
        break;
      }
      ai -= a_stride[ax] * (out[ax] - 1);
      bi -= b_stride[ax] * (out[ax] - 1);
      idx[ax] = 0;
    }
  }
}

enum class Arith { kAdd, kSub, kMul };

Var arith(Var a, Var b, Arith kind, const char* name) {
  check_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Shape out_shape = broadcast_shape(av.shape(), bv.shape(), name);
  Tensor out(out_shape);
  for_each_broadcast(out_shape, av.shape(), bv.shape(),
                     [&](std::size_t o, std::size_t i, std::size_t j) {
                       switch (kind) {
                         case Arith::kAdd: out[o] = av[i] + bv[j]; break;
                         case Arith::kSub: out[o] = av[i] - bv[j]; break;
                         case Arith::kMul: out[o] = av[i] * bv[j]; break;
                       }
                     });
  const NodeId ia = a.id(), ib = b.id();
  return a.graph().record(
      name, {ia, ib}, std::move(out),
      [ia, ib, kind, out_shape](Graph& g, NodeId self) {
        const Tensor& dy = g.grad(self);
        const Shape& sa = g.value(ia).shape();
        const Shape& sb = g.value(ib).shape();
        Tensor& da = g.accumulate(ia);
        if (kind == Arith::kMul) {
          const Tensor& av = g.value(ia);
          const Tensor& bv = g.value(ib);
          for_each_broadcast(out_shape, sa, sb,
                             [&](std::size_t o, std::size_t i, std::size_t j) {
                               da[i] += dy[o] * bv[j];
                             });
          Tensor& db = g.accumulate(ib);
          for_each_broadcast(out_shape, sa, sb,
                             [&](std::size_t o, std::size_t i, std::size_t j) {
                               db[j] += dy[o] * av[i];
                             });
          return;
        }
        const double sign = kind == Arith::kSub ? -1.0 : 1.0;
        for_each_broadcast(out_shape, sa, sb,
                           [&](std::size_t o, std::size_t i, std::size_t) {
                             da[i] += dy[o];
                           });
        Tensor& db = g.accumulate(ib);
        for_each_broadcast(out_shape, sa, sb,
                           [&](std::size_t o, std::size_t, std::size_t j) {
                             db[j] += sign * dy[o];
                           });
      });
}

void check_targets(std::span<const int> targets, std::size_t rows,
                   std::size_t vocab, const char* op) {
  if (targets.size() != rows) {
    throw ContractError(std::string(op) + ": " + std::to_string(targets.size()) +
                        " targets for " + std::to_string(rows) + " rows");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw IndexError(std::string(op) + ": target " +
                       std::to_string(targets[r]) + " at row " +
                       std::to_string(r) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
  }
}

// Row-wise log-softmax of a finite [rows, V] matrix with max subtraction.
Tensor log_softmax_values(const Tensor& x) {
  if (!x.all_finite()) {
    throw NumericError("log_softmax: non-finite logits");
  }
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * cols;
    double* o = out.data() + r * cols;
    const double m = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(in[c] - m);
    const double lse = m + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] - lse;
  }
  return out;
}

// Shared body of cross_entropy_rows and weighted_nll: loss = sum_r w_r nll_r.
Var weighted_nll_impl(Var logits, std::span<const int> targets,
                      std::vector<double> weights, const char* name) {
  const Tensor& x = logits.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  check_targets(targets, rows, cols, name);
  auto logp = std::make_shared<Tensor>(log_softmax_values(x));
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    loss -= weights[r] * logp->at(r, static_cast<std::size_t>(targets[r]));
  }
  const NodeId in = logits.id();
  std::vector<int> tgt(targets.begin(), targets.end());
  return logits.graph().record(
      name, {in}, Tensor::scalar(loss),
      [in, logp, tgt = std::move(tgt), weights = std::move(weights), cols](
          Graph& g, NodeId self) {
        const double up = g.grad(self)[0];
        Tensor& dx = g.accumulate(in);
        for (std::size_t r = 0; r < tgt.size(); ++r) {
          const double w = up * weights[r];
          if (w == 0.0) continue;
          double* d = dx.data() + r * cols;
          const double* lp = logp->data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) d[c] += w * std::exp(lp[c]);
          d[tgt[r]] -= w;
        }
      });
}

}  // namespace

Var add(Var a, Var b) { return arith(a, b, Arith::kAdd, "add"); }
Var sub(Var a, Var b) { return arith(a, b, Arith::kSub, "sub"); }
Var mul(Var a, Var b) { return arith(a, b, Arith::kMul, "mul"); }

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  const NodeId in = a.id();
  return a.graph().record("scale", {in}, std::move(out),
                          [in, factor](Graph& g, NodeId self) {
                            const Tensor& dy = g.grad(self);
                            Tensor& dx = g.accumulate(in);
                            for (std::size_t i = 0; i < dx.size(); ++i) {
                              dx[i] += factor * dy[i];
                            }
                          });
}

Var matmul(Var a, Var b) {
  check_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ContractError("matmul: inner extents differ " +
                        shape_string(av.shape()) + " x " +
                        shape_string(bv.shape()));
  }
  const auto n = static_cast<Eigen::Index>(av.rows());
  const auto k = static_cast<Eigen::Index>(av.cols());
  const auto m = static_cast<Eigen::Index>(bv.cols());
  // Row-at-a-time so each output row depends only on its input row; a
  // sequence scores identically whether batched or alone.
  Tensor out({av.rows(), bv.cols()});
  const double* bp = bv.data();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* ar = av.data() + i * k;
    double* orow = out.data() + i * m;
    for (Eigen::Index p = 0; p < k; ++p) {
      const double x = ar[p];
      const double* br = bp + p * m;
      for (Eigen::Index j = 0; j < m; ++j) orow[j] += x * br[j];
    }
  }
  const NodeId ia = a.id(), ib = b.id();
  return a.graph().record(
      "matmul", {ia, ib}, std::move(out), [ia, ib, n, k, m](Graph& g, NodeId self) {
        ConstMap dy(g.grad(self).data(), n, m);
        {
          Tensor& da = g.accumulate(ia);
          MutMap(da.data(), n, k).noalias() +=
              dy * ConstMap(g.value(ib).data(), k, m).transpose();
        }
        Tensor& db = g.accumulate(ib);
        MutMap(db.data(), k, m).noalias() +=
            ConstMap(g.value(ia).data(), n, k).transpose() * dy;
      });
}

Var linear(Var x, Var weight, Var bias) { return add(matmul(x, weight), bias); }

Var gelu(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) {
    v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  }
  const NodeId in = x.id();
  return x.graph().record(
      "gelu", {in}, std::move(out), [in](Graph& g, NodeId self) {
        const Tensor& xv = g.value(in);
        const Tensor& dy = g.grad(self);
        Tensor& dx = g.accumulate(in);
        constexpr double kInvSqrt2Pi = 0.3989422804014327;
        for (std::size_t i = 0; i < dx.size(); ++i) {
          const double v = xv[i];
          const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
          dx[i] += dy[i] * (cdf + v * pdf);
        }
      });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), d = xv.cols();
  if (gain.shape() != Shape{1, d} || bias.shape() != Shape{1, d}) {
    throw ContractError("layer_norm: gain/bias must be [1, " +
                        std::to_string(d) + "]");
  }
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out(xv.shape());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += in[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (in[c] - mu) * inv;
      xhat->at(r, c) = h;
      out.at(r, c) = h * gv[c] + bv[c];
    }
  }
  const NodeId ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.graph().record(
      "layer_norm", {ix, ig, ib}, std::move(out),
      [ix, ig, ib, xhat, inv_std, rows, d](Graph& g, NodeId self) {
        const Tensor& dy = g.grad(self);
        const Tensor& gv = g.value(ig);
        {
          Tensor& dgain = g.accumulate(ig);
          Tensor& dbias = g.accumulate(ib);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
              dgain[c] += dy.at(r, c) * xhat->at(r, c);
              dbias[c] += dy.at(r, c);
            }
          }
        }
        Tensor& dx = g.accumulate(ix);
        std::vector<double> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            dh[c] = dy.at(r, c) * gv[c];
            mean_dh += dh[c];
            mean_dh_h += dh[c] * xhat->at(r, c);
          }
          mean_dh /= static_cast<double>(d);
          mean_dh_h /= static_cast<double>(d);
          const double inv = (*inv_std)[r];
          for (std::size_t c = 0; c < d; ++c) {
            dx.at(r, c) +=
                inv * (dh[c] - mean_dh - xhat->at(r, c) * mean_dh_h);
          }
        }
      });
}

Var embedding(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  const std::size_t vocab = tv.rows(), d = tv.cols();
  if (ids.empty()) throw ContractError("embedding: empty id list");
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[r]) +
                       " outside [0, " + std::to_string(vocab) + ")");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * d, d,
                out.data() + r * d);
  }
  const NodeId in = table.id();
  std::vector<int> saved(ids.begin(), ids.end());
  return table.graph().record(
      "embedding", {in}, std::move(out),
      [in, saved = std::move(saved), d](Graph& g, NodeId self) {
        const Tensor& dy = g.grad(self);
        Tensor& dt = g.accumulate(in);
        for (std::size_t r = 0; r < saved.size(); ++r) {
          double* dst = dt.data() + static_cast<std::size_t>(saved[r]) * d;
          const double* src = dy.data() + r * d;
          for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        }
      });
}

Var dropout(Var x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ContractError("dropout rate must be in [0, 1)");
  }
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.value().size());
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] *= (*mask)[i];
  }
  const NodeId in = x.id();
  return x.graph().record("dropout", {in}, std::move(out),
                          [in, mask](Graph& g, NodeId self) {
                            const Tensor& dy = g.grad(self);
                            Tensor& dx = g.accumulate(in);
                            for (std::size_t i = 0; i < dx.size(); ++i) {
                              dx[i] += dy[i] * (*mask)[i];
                            }
                          });
}

Var log_softmax(Var logits) {
  Tensor out = log_softmax_values(logits.value());
  const NodeId in = logits.id();
  return logits.graph().record(
      "log_softmax", {in}, std::move(out), [in](Graph& g, NodeId self) {
        const Tensor& y = g.value(self);
        const Tensor& dy = g.grad(self);
        Tensor& dx = g.accumulate(in);
        const std::size_t rows = y.rows(), cols = y.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          double total = 0.0;
          for (std::size_t c = 0; c < cols; ++c) total += dy.at(r, c);
          for (std::size_t c = 0; c < cols; ++c) {
            dx.at(r, c) += dy.at(r, c) - std::exp(y.at(r, c)) * total;
          }
        }
      });
}

Var cross_entropy_rows(Var logits, std::span<const int> targets) {
  const std::size_t rows = logits.value().rows();
  return weighted_nll_impl(logits, targets,
                           std::vector<double>(rows, 1.0 / static_cast<double>(rows)),
                           "cross_entropy_rows");
}

Var weighted_nll(Var logits, std::span<const int> targets,
                 std::span<const double> weights) {
  if (weights.size() != logits.value().rows()) {
    throw ContractError("weighted_nll: weight count differs from row count");
  }
  return weighted_nll_impl(logits, targets,
                           std::vector<double>(weights.begin(), weights.end()),
                           "weighted_nll");
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  const NodeId in = x.id();
  return x.graph().record("sum", {in}, Tensor::scalar(total),
                          [in](Graph& g, NodeId self) {
                            const double up = g.grad(self)[0];
                            for (double& v : g.accumulate(in).values()) v += up;
                          });
}

Var mean(Var x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var dot(Var a, Var b) {
  check_same_graph(a, b);
  if (a.shape() != b.shape()) {
    throw ContractError("dot: shape mismatch " + shape_string(a.shape()) +
                        " vs " + shape_string(b.shape()));
  }
  return sum(mul(a, b));
}

Var attention(Var q, Var k, Var v, std::span<const AttentionSegment> segments,
              std::size_t heads, bool causal) {
  check_same_graph(q, k);
  check_same_graph(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const std::size_t d = qv.cols();
  if (kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows()) {
    throw ContractError("attention: q/k/v shapes disagree");
  }
  if (heads == 0 || d % heads != 0) {
    throw ContractError("attention: width " + std::to_string(d) +
                        " not divisible by " + std::to_string(heads) +
                        " heads");
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // Offsets of each (segment, head) probability block.
  std::vector<std::size_t> block_offset(segments.size());
  std::size_t prob_total = 0;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    if (seg.q_len == 0 || seg.k_len == 0 || seg.q_begin + seg.q_len > qv.rows() ||
        seg.k_begin + seg.k_len > kv.rows()) {
      throw ContractError("attention: segment out of range");
    }
    if (causal && seg.q_len != seg.k_len) {
      throw ContractError("attention: causal segment needs q_len == k_len");
    }
    block_offset[s] = prob_total;
    prob_total += heads * seg.q_len * seg.k_len;
  }
  auto probs = std::make_shared<std::vector<double>>(prob_total, 0.0);

  Tensor out({qv.rows(), d}, 0.0);
  std::vector<double> scores;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    for (std::size_t h = 0; h < heads; ++h) {
      double* p = probs->data() + block_offset[s] + h * seg.q_len * seg.k_len;
      for (std::size_t i = 0; i < seg.q_len; ++i) {
        const double* qi = qv.data() + (seg.q_begin + i) * d + h * dh;
        const std::size_t visible = causal ? i + 1 : seg.k_len;
        double m = -INFINITY;
        scores.assign(visible, 0.0);
        for (std::size_t j = 0; j < visible; ++j) {
          const double* kj = kv.data() + (seg.k_begin + j) * d + h * dh;
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
          scores[j] = acc * inv_sqrt;
          m = std::max(m, scores[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < visible; ++j) {
          scores[j] = std::exp(scores[j] - m);
          total += scores[j];
        }
        double* oi = out.data() + (seg.q_begin + i) * d + h * dh;
        for (std::size_t j = 0; j < visible; ++j) {
          const double pij = scores[j] / total;
          p[i * seg.k_len + j] = pij;
          const double* vj = vv.data() + (seg.k_begin + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += pij * vj[c];
        }
      }
    }
  }

  const NodeId iq = q.id(), ik = k.id(), iv = v.id();
  std::vector<AttentionSegment> segs(segments.begin(), segments.end());
  return q.graph().record(
      "attention", {iq, ik, iv}, std::move(out),
      [iq, ik, iv, segs = std::move(segs), block_offset = std::move(block_offset),
       probs, heads, dh, d, inv_sqrt, causal](Graph& g, NodeId self) {
        const Tensor& dy = g.grad(self);
        const Tensor& qv = g.value(iq);
        const Tensor& kv = g.value(ik);
        const Tensor& vv = g.value(iv);
        Tensor& dq = g.accumulate(iq);
        Tensor& dk = g.accumulate(ik);
        Tensor& dv = g.accumulate(iv);
        std::vector<double> dp;
        for (std::size_t s = 0; s < segs.size(); ++s) {
          const auto& seg = segs[s];
          for (std::size_t h = 0; h < heads; ++h) {
            const double* p =
                probs->data() + block_offset[s] + h * seg.q_len * seg.k_len;
            for (std::size_t i = 0; i < seg.q_len; ++i) {
              const std::size_t visible = causal ? i + 1 : seg.k_len;
              const double* dyi = dy.data() + (seg.q_begin + i) * d + h * dh;
              dp.assign(visible, 0.0);
              double weighted = 0.0;
              for (std::size_t j = 0; j < visible; ++j) {
                const double pij = p[i * seg.k_len + j];
                const double* vj = vv.data() + (seg.k_begin + j) * d + h * dh;
                double* dvj = dv.data() + (seg.k_begin + j) * d + h * dh;
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                  acc += dyi[c] * vj[c];
                  dvj[c] += pij * dyi[c];
                }
                dp[j] = acc;
                weighted += pij * acc;
              }
              const double* qi = qv.data() + (seg.q_begin + i) * d + h * dh;
              double* dqi = dq.data() + (seg.q_begin + i) * d + h * dh;
              for (std::size_t j = 0; j < visible; ++j) {
                const double ds =
                    p[i * seg.k_len + j] * (dp[j] - weighted) * inv_sqrt;
                if (ds == 0.0) continue;
                const double* kj = kv.data() + (seg.k_begin + j) * d + h * dh;
                double* dkj = dk.data() + (seg.k_begin + j) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) {
                  dqi[c] += ds * kj[c];
                  dkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

}  // namespace capzero
