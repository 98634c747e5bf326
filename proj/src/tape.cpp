#include "headlamp/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace headlamp {

namespace {

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }

void require(bool ok, const std::string& message) {
  if (!ok) throw ArgumentError(message);
}

// c += a * b for (m x k)(k x n).
void gemm_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* pa = a.raw().data();
  const double* pb = b.raw().data();
  double* pc = c.raw().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = pb + p * n;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c += a * b^T for a (m x k), b (n x k).
void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const double* pa = a.raw().data();
  const double* pb = b.raw().data();
  double* pc = c.raw().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += pa[i * k + p] * pb[j * k + p];
      pc[i * n + j] += acc;
    }
  }
}

// c += a^T * b for a (k x m), b (k x n).
void gemm_tn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  const double* pa = a.raw().data();
  const double* pb = b.raw().data();
  double* pc = c.raw().data();
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) {
      const double api = pa[p * m + i];
      if (api == 0.0) continue;
      const double* brow = pb + p * n;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

}  // namespace

Var Tape::append(Tensor value, Backward backward) {
  nodes_.push_back(Node{std::move(value), Tensor{}, record_ ? std::move(backward) : Backward{}});
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) { return append(std::move(value), {}); }

Var Tape::leaf(Tensor value) { return append(std::move(value), {}); }

Var Tape::push(Tensor value, Backward backward) { return append(std::move(value), std::move(backward)); }

Tensor& Tape::grad_mut(Var v) {
  auto& node = nodes_[v.id];
  if (node.grad.empty()) node.grad = zeros_like(node.value);
  return node.grad;
}

void Tape::backward(Var out) {
  if (!record_) throw ArgumentError("backward() on a non-recording tape");
  require(value(out).size() == 1, "backward() target must hold a single element");
  grad_mut(out)[0] = 1.0;
  for (std::size_t i = out.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.backward && !node.grad.empty()) node.backward(*this, node.grad);
  }
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require(va.cols() == vb.rows(), "matmul: inner dimensions " + shape_string(va.shape()) + " and " +
                                      shape_string(vb.shape()) + " differ");
  Tensor out({va.rows(), vb.cols()});
  gemm_acc(va, vb, out);
  return append(std::move(out), [a, b](Tape& t, const Tensor& g) {
    gemm_nt_acc(g, t.value(b), t.grad_mut(a));
    gemm_tn_acc(t.value(a), g, t.grad_mut(b));
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require(va.cols() == vb.cols(), "matmul_nt: inner dimensions " + shape_string(va.shape()) + " and " +
                                      shape_string(vb.shape()) + " differ");
  Tensor out({va.rows(), vb.rows()});
  gemm_nt_acc(va, vb, out);
  return append(std::move(out), [a, b](Tape& t, const Tensor& g) {
    gemm_acc(g, t.value(b), t.grad_mut(a));
    gemm_tn_acc(g, t.value(a), t.grad_mut(b));
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require(va.rows() == vb.rows() && va.cols() == vb.cols(),
          "add: shapes " + shape_string(va.shape()) + " and " + shape_string(vb.shape()) + " differ");
  Tensor out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  return append(std::move(out), [a, b](Tape& t, const Tensor& g) {
    auto& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    auto& gb = t.grad_mut(b);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

Var Tape::add_bias(Var a, Var bias) {
  const Tensor& va = value(a);
  const Tensor& vb = value(bias);
  require(vb.size() == va.cols(), "add_bias: bias length " + std::to_string(vb.size()) +
                                      " vs " + std::to_string(va.cols()) + " columns");
  Tensor out = va;
  const std::size_t n = va.cols();
  for (std::size_t r = 0; r < va.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) += vb[c];
  return append(std::move(out), [a, bias, n](Tape& t, const Tensor& g) {
    auto& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    auto& gb = t.grad_mut(bias);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
  });
}

Var Tape::scale(Var a, double factor) {
  Tensor out = value(a);
  for (auto& v : out.values()) v *= factor;
  return append(std::move(out), [a, factor](Tape& t, const Tensor& g) {
    auto& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

Var Tape::scale_by(Var a, Var factor) {
  require(value(factor).size() == 1, "scale_by: factor must hold a single element");
  const double f = value(factor)[0];
  Tensor out = value(a);
  for (auto& v : out.values()) v *= f;
  return append(std::move(out), [a, factor](Tape& t, const Tensor& g) {
    const double f = t.value(factor)[0];
    const Tensor& va = t.value(a);
    auto& ga = t.grad_mut(a);
    double df = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += f * g[i];
      df += va[i] * g[i];
    }
    t.grad_mut(factor)[0] += df;
  });
}

Var Tape::relu(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values()) v = std::max(v, 0.0);
  return append(std::move(out), [a](Tape& t, const Tensor& g) {
    const Tensor& va = t.value(a);
    auto& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (va[i] > 0.0) ga[i] += g[i];
  });
}

Var Tape::sigmoid(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  Var self{nodes_.size()};
  return append(std::move(out), [a, self](Tape& t, const Tensor& g) {
    const Tensor& s = t.value(self);
    auto& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s[i] * (1.0 - s[i]);
  });
}

Var Tape::softmax_rows(Var a) {
  const Tensor& va = value(a);
  Tensor out(va.shape());
  for (std::size_t r = 0; r < va.rows(); ++r) {
    auto p = softmax(va.row(r));
    std::copy(p.values.begin(), p.values.end(), out.row(r).begin());
  }
  Var self{nodes_.size()};
  return append(std::move(out), [a, self](Tape& t, const Tensor& g) {
    const Tensor& p = t.value(self);
    auto& ga = t.grad_mut(a);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      auto d = softmax_vjp(p.row(r), g.row(r));
      auto dst = ga.row(r);
      for (std::size_t c = 0; c < d.size(); ++c) dst[c] += d[c];
    }
  });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& vx = value(x);
  const Tensor& vg = value(gain);
  const Tensor& vb = value(bias);
  const std::size_t n = vx.cols();
  require(vg.size() == n && vb.size() == n, "layer_norm: gain/bias length mismatch");
  Tensor out(vx.shape());
  // Normalized rows and inverse std per row, kept for the backward pass.
  auto normalized = std::make_shared<Tensor>(vx.shape());
  auto inv_std = std::make_shared<std::vector<double>>(vx.rows());
  for (std::size_t r = 0; r < vx.rows(); ++r) {
    auto row = vx.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double xh = (row[c] - mean) * is;
      normalized->at(r, c) = xh;
      out.at(r, c) = vg[c] * xh + vb[c];
    }
  }
  return append(std::move(out), [x, gain, bias, normalized, inv_std, n](Tape& t, const Tensor& g) {
    const Tensor& vg = t.value(gain);
    auto& gx = t.grad_mut(x);
    auto& gg = t.grad_mut(gain);
    auto& gb = t.grad_mut(bias);
    std::vector<double> dxh(n);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        const double gi = g.at(r, c);
        gg[c] += gi * normalized->at(r, c);
        gb[c] += gi;
        dxh[c] = gi * vg[c];
        mean_d += dxh[c];
        mean_dx += dxh[c] * normalized->at(r, c);
      }
      mean_d /= static_cast<double>(n);
      mean_dx /= static_cast<double>(n);
      for (std::size_t c = 0; c < n; ++c) {
        gx.at(r, c) += (*inv_std)[r] * (dxh[c] - mean_d - normalized->at(r, c) * mean_dx);
      }
    }
  });
}

Var Tape::attention(Var scores, AttentionKind kind, bool causal) {
  const Tensor& vs = value(scores);
  const std::size_t keys = vs.cols();
  if (keys == 0) throw ArgumentError("attention: zero keys");
  if (causal) require(vs.rows() <= keys, "attention: causal mask needs queries <= keys");
  Tensor out(vs.shape(), 0.0);
  for (std::size_t r = 0; r < vs.rows(); ++r) {
    const std::size_t width = causal ? r + 1 : keys;
    auto row = vs.row(r).first(width);
    auto p = kind == AttentionKind::Softmax ? softmax(row) : sparsemax(row);
    std::copy(p.values.begin(), p.values.end(), out.row(r).begin());
  }
  Var self{nodes_.size()};
  return append(std::move(out), [scores, self, kind, causal, keys](Tape& t, const Tensor& g) {
    const Tensor& p = t.value(self);
    auto& gs = t.grad_mut(scores);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      const std::size_t width = causal ? r + 1 : keys;
      auto pr = p.row(r).first(width);
      auto gr = g.row(r).first(width);
      std::vector<double> d;
      if (kind == AttentionKind::Softmax) {
        d = softmax_vjp(pr, gr);
      } else {
        SimplexVector sv;
        sv.values.assign(pr.begin(), pr.end());
        for (std::size_t c = 0; c < width; ++c)
          if (pr[c] > 0.0) sv.support.push_back(c);
        d = sparsemax_vjp(sv, gr);
      }
      auto dst = gs.row(r);
      for (std::size_t c = 0; c < width; ++c) dst[c] += d[c];
    }
  });
}

Var Tape::slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& va = value(a);
  require(begin + count <= va.cols() && count > 0, "slice_cols: range out of bounds");
  Tensor out({va.rows(), count});
  for (std::size_t r = 0; r < va.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out.at(r, c) = va.at(r, begin + c);
  return append(std::move(out), [a, begin, count](Tape& t, const Tensor& g) {
    auto& ga = t.grad_mut(a);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) ga.at(r, begin + c) += g.at(r, c);
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no parts");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t total = 0;
  for (auto p : parts) {
    require(value(p).rows() == rows, "concat_cols: row count mismatch");
    total += value(p).cols();
  }
  Tensor out({rows, total});
  std::size_t offset = 0;
  for (auto p : parts) {
    const Tensor& vp = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < vp.cols(); ++c) out.at(r, offset + c) = vp.at(r, c);
    offset += vp.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return append(std::move(out), [inputs](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (auto p : inputs) {
      auto& gp = t.grad_mut(p);
      const std::size_t width = gp.cols();
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < width; ++c) gp.at(r, c) += g.at(r, offset + c);
      offset += width;
    }
  });
}

Var Tape::gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& vt = value(table);
  require(!ids.empty(), "gather_rows: no ids");
  Tensor out({ids.size(), vt.cols()});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    require(ids[r] < vt.rows(), "gather_rows: id " + std::to_string(ids[r]) + " out of range");
    auto src = vt.row(ids[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return append(std::move(out), [table, idx](Tape& t, const Tensor& g) {
    auto& gt = t.grad_mut(table);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto dst = gt.row(idx[r]);
      auto src = g.row(r);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

}  // namespace headlamp
