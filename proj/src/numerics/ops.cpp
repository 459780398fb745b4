#include "vqamask/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vqamask/error.hpp"
#include "vqamask/numerics/tape.hpp"

namespace vqamask::nn {

namespace {

template <class F>
void on_backward(Tensor& out, std::initializer_list<const Tensor*> inputs, F&& backward) {
  if (!should_record(inputs)) return;
  out.set_requires_grad(true);
  Tape::active()->record(std::forward<F>(backward));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    fail(ErrorCode::ShapeMismatch, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                       shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(ErrorCode::ShapeMismatch,
         std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    fail(ErrorCode::ShapeMismatch, "matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor out({m, n});
  {
    auto o = out.mutable_values();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
      double* orow = &o[i * n];
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        const double* brow = &bv[p * n];
        for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
      }
    }
  }
  on_backward(out, {&a, &b}, [a, b, out, m, k, n]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      auto bv = b.values();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      auto av = a.values();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          double* gbrow = &gb[p * n];
          const double* grow = &g[i * n];
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
    }
  });
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k)
    fail(ErrorCode::ShapeMismatch, "matmul_nt: " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  Tensor out({m, n});
  {
    auto o = out.mutable_values();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[j * k + p];
        o[i * n + j] = acc;
      }
  }
  on_backward(out, {&a, &b}, [a, b, out, m, k, n]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      auto bv = b.values();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv[j * k + p];
        }
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      auto av = a.values();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * av[i * k + p];
        }
    }
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool scalar = a.shape() == Shape{1};
  Tensor out = scalar ? Tensor::scalar_extended(a.item_extended() + b.item_extended()) : Tensor(a.shape());
  if (!scalar) {
    auto o = out.mutable_values();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  }
  on_backward(out, {&a, &b}, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_row_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n)
    fail(ErrorCode::ShapeMismatch, "add_row_bias: bias " + shape_string(bias.shape()) + " for " + shape_string(x.shape()));
  Tensor out(x.shape());
  {
    auto o = out.mutable_values();
    auto xv = x.values();
    auto bv = bias.values();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) o[i * n + j] = xv[i * n + j] + bv[j];
  }
  on_backward(out, {&x, &bias}, [x, bias, out, m, n]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 3, "add_channel_bias");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  if (bias.numel() != c)
    fail(ErrorCode::ShapeMismatch,
         "add_channel_bias: bias " + shape_string(bias.shape()) + " for " + shape_string(x.shape()));
  Tensor out(x.shape());
  {
    auto o = out.mutable_values();
    auto xv = x.values();
    auto bv = bias.values();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < plane; ++i) o[ch * plane + i] = xv[ch * plane + i] + bv[ch];
  }
  on_backward(out, {&x, &bias}, [x, bias, out, c, plane]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.mutable_grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += g[ch * plane + i];
        gb[ch] += acc;
      }
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  const bool scalar = x.shape() == Shape{1};
  Tensor out = scalar ? Tensor::scalar_extended(x.item_extended() * factor) : Tensor(x.shape());
  if (!scalar) {
    auto o = out.mutable_values();
    auto xv = x.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * factor;
  }
  on_backward(out, {&x}, [x, out, factor]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  {
    auto o = out.mutable_values();
    auto xv = x.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  }
  on_backward(out, {&x}, [x, out]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto gx = x.mutable_grad();
    auto xv = x.values();
    // Subgradient 0 at the kink.
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  {
    auto o = out.mutable_values();
    auto xv = x.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = stable_sigmoid(xv[i]);
  }
  on_backward(out, {&x}, [x, out]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto y = out.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
  return out;
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor out(x.shape());
  {
    auto o = out.mutable_values();
    auto xv = x.values();
    for (std::size_t i = 0; i < o.size(); ++i) {
      const double v = xv[i];
      o[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
    }
  }
  on_backward(out, {&x}, [x, out]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto xv = x.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double t = std::tanh(kC * (v + kA * v * v * v));
      const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) fail(ErrorCode::ShapeMismatch, "softmax: axis out of range for " + shape_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  Tensor out(x.shape());
  {
    auto o = out.mutable_values();
    auto xv = x.values();
    for (std::size_t a = 0; a < outer; ++a)
      for (std::size_t b = 0; b < inner; ++b) {
        const std::size_t base = a * len * inner + b;
        double mx = xv[base];
        for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, xv[base + i * inner]);
        double sum = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
          const double e = std::exp(xv[base + i * inner] - mx);
          o[base + i * inner] = e;
          sum += e;
        }
        for (std::size_t i = 0; i < len; ++i) o[base + i * inner] /= sum;
      }
  }
  on_backward(out, {&x}, [x, out, outer, inner, len]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto y = out.values();
    auto gx = x.mutable_grad();
    for (std::size_t a = 0; a < outer; ++a)
      for (std::size_t b = 0; b < inner; ++b) {
        const std::size_t base = a * len * inner + b;
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t idx = base + i * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
  });
  return out;
}

Tensor causal_softmax(const Tensor& x) {
  require_rank(x, 2, "causal_softmax");
  const std::size_t s = x.dim(0);
  if (x.dim(1) != s) fail(ErrorCode::ShapeMismatch, "causal_softmax needs a square matrix");
  Tensor out(x.shape());
  {
    auto o = out.mutable_values();
    auto xv = x.values();
    for (std::size_t i = 0; i < s; ++i) {
      const double* row = &xv[i * s];
      double mx = row[0];
      for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        const double e = std::exp(row[j] - mx);
        o[i * s + j] = e;
        sum += e;
      }
      for (std::size_t j = 0; j <= i; ++j) o[i * s + j] /= sum;
    }
  }
  on_backward(out, {&x}, [x, out, s]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto y = out.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < s; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j <= i; ++j) dot += g[i * s + j] * y[i * s + j];
      for (std::size_t j = 0; j <= i; ++j) gx[i * s + j] += y[i * s + j] * (g[i * s + j] - dot);
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.numel() != n || beta.numel() != n)
    fail(ErrorCode::ShapeMismatch, "layer_norm: affine parameters do not match width " + std::to_string(n));
  Tensor out(x.shape());
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  {
    auto o = out.mutable_values();
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    for (std::size_t i = 0; i < m; ++i) {
      double mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += xv[i * n + j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double d = xv[i * n + j] - mean;
        var += d * d;
      }
      var /= static_cast<double>(n);
      inv_std[i] = 1.0 / std::sqrt(var + eps);
      for (std::size_t j = 0; j < n; ++j) {
        const double h = (xv[i * n + j] - mean) * inv_std[i];
        xhat[i * n + j] = h;
        o[i * n + j] = h * gv[j] + bv[j];
      }
    }
  }
  on_backward(out, {&x, &gamma, &beta},
              [x, gamma, beta, out, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
                if (!out.has_grad()) return;
                auto g = out.grad();
                if (gamma.requires_grad()) {
                  auto gg = gamma.mutable_grad();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
                }
                if (beta.requires_grad()) {
                  auto gb = beta.mutable_grad();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                }
                if (x.requires_grad()) {
                  auto gx = x.mutable_grad();
                  auto gv = gamma.values();
                  for (std::size_t i = 0; i < m; ++i) {
                    double sum_dh = 0.0, sum_dh_h = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const double dh = g[i * n + j] * gv[j];
                      sum_dh += dh;
                      sum_dh_h += dh * xhat[i * n + j];
                    }
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                      const double dh = g[i * n + j] * gv[j];
                      gx[i * n + j] += inv_std[i] * (dh - inv_n * sum_dh - xhat[i * n + j] * inv_n * sum_dh_h);
                    }
                  }
                }
              });
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_rows");
  if (begin > end || end > x.dim(0)) fail(ErrorCode::ShapeMismatch, "slice_rows: range out of bounds");
  const std::size_t n = x.dim(1);
  Tensor out({end - begin, n});
  {
    auto o = out.mutable_values();
    auto xv = x.values();
    std::copy(xv.begin() + begin * n, xv.begin() + end * n, o.begin());
  }
  on_backward(out, {&x}, [x, out, begin, n]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
  });
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  if (begin > end || end > x.dim(1)) fail(ErrorCode::ShapeMismatch, "slice_cols: range out of bounds");
  const std::size_t m = x.dim(0), n = x.dim(1), w = end - begin;
  Tensor out({m, w});
  {
    auto o = out.mutable_values();
    auto xv = x.values();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) o[i * w + j] = xv[i * n + begin + j];
  }
  on_backward(out, {&x}, [x, out, begin, m, n, w]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * n + begin + j] += g[i * w + j];
  });
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat_rows: no inputs");
  const std::size_t n = parts[0].dim(1);
  std::size_t rows = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != n) fail(ErrorCode::ShapeMismatch, "concat_rows: column counts differ");
    rows += p.dim(0);
    any_grad |= p.requires_grad();
  }
  Tensor out({rows, n});
  {
    auto o = out.mutable_values();
    std::size_t offset = 0;
    for (const auto& p : parts) {
      std::copy(p.values().begin(), p.values().end(), o.begin() + offset);
      offset += p.numel();
    }
  }
  if (Tape::active() && any_grad) {
    out.set_requires_grad(true);
    Tape::active()->record([parts = std::vector<Tensor>(parts.begin(), parts.end()), out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto gp = p.mutable_grad();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
        }
        offset += p.numel();
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::size_t cols = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) fail(ErrorCode::ShapeMismatch, "concat_cols: row counts differ");
    cols += p.dim(1);
    any_grad |= p.requires_grad();
  }
  Tensor out({m, cols});
  {
    auto o = out.mutable_values();
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.dim(1);
      auto pv = p.values();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) o[i * cols + offset + j] = pv[i * w + j];
      offset += w;
    }
  }
  if (Tape::active() && any_grad) {
    out.set_requires_grad(true);
    Tape::active()->record([parts = std::vector<Tensor>(parts.begin(), parts.end()), out, m, cols]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        const std::size_t w = p.dim(1);
        if (p.requires_grad()) {
          auto gp = p.mutable_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * cols + offset + j];
        }
        offset += w;
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "gather_rows");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  for (int id : idx)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      fail(ErrorCode::IndexOutOfVocab, "id " + std::to_string(id) + " outside table of " + std::to_string(vocab));
  Tensor out({idx.size(), d});
  {
    auto o = out.mutable_values();
    auto tv = table.values();
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(tv.begin() + static_cast<std::size_t>(idx[i]) * d, d, o.begin() + i * d);
  }
  on_backward(out, {&table}, [table, out, idx = std::move(idx), d]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto gt = table.mutable_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(idx[i]) * d + j] += g[i * d + j];
  });
  return out;
}

Tensor permute(const Tensor& x, std::span<const std::size_t> source, Shape shape) {
  if (source.size() != shape_numel(shape))
    fail(ErrorCode::ShapeMismatch, "permute: index length does not match " + shape_string(shape));
  for (auto s : source)
    if (s >= x.numel()) fail(ErrorCode::ShapeMismatch, "permute: source index out of range");
  Tensor out(std::move(shape));
  {
    auto o = out.mutable_values();
    auto xv = x.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[source[i]];
  }
  on_backward(out, {&x}, [x, out, src = std::vector<std::size_t>(source.begin(), source.end())]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[src[i]] += g[i];
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    fail(ErrorCode::ShapeMismatch, "reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  Tensor out(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  on_backward(out, {&x}, [x, out]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

Tensor transposed_conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding) {
  require_rank(x, 3, "transposed_conv2d");
  require_rank(kernel, 4, "transposed_conv2d");
  if (stride < 1 || padding < 0) fail(ErrorCode::InvalidArgument, "transposed_conv2d: stride >= 1, padding >= 0");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = kernel.dim(1), k = kernel.dim(2);
  if (kernel.dim(0) != cin || kernel.dim(3) != k)
    fail(ErrorCode::ShapeMismatch,
         "transposed_conv2d: kernel " + shape_string(kernel.shape()) + " for input " + shape_string(x.shape()));
  const long full_h = static_cast<long>((h - 1) * stride + k);
  const long full_w = static_cast<long>((w - 1) * stride + k);
  const long oh = full_h - 2L * padding;
  const long ow = full_w - 2L * padding;
  if (oh <= 0 || ow <= 0) fail(ErrorCode::ShapeMismatch, "transposed_conv2d: padding removes the whole output");

  // Per kernel tap (ky, kx): y[co][pixel] = Σ_ci kernel[ci][co][ky][kx] · x[ci][pixel],
  // scattered to output (iy·s + ky − p, ix·s + kx − p) when inside the crop.
  const std::size_t hw = h * w;
  const std::size_t plane_out = static_cast<std::size_t>(oh * ow);
  const long s = stride;
  const long p = padding;
  // Input index range [lo, hi) whose tap lands inside [0, extent).
  auto valid = [s, p](std::size_t kk, std::size_t n, long extent) {
    long lo = 0, hi = static_cast<long>(n);
    while (lo < hi && lo * s + static_cast<long>(kk) - p < 0) ++lo;
    while (hi > lo && (hi - 1) * s + static_cast<long>(kk) - p >= extent) --hi;
    return std::pair<std::size_t, std::size_t>(static_cast<std::size_t>(lo), static_cast<std::size_t>(hi));
  };

  Tensor out({cout, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  {
    auto xv = x.values();
    auto kv = kernel.values();
    auto o = out.mutable_values();
    std::vector<double> y(hw);
    for (std::size_t ky = 0; ky < k; ++ky) {
      const auto [y_lo, y_hi] = valid(ky, h, oh);
      for (std::size_t kx = 0; kx < k; ++kx) {
        const auto [x_lo, x_hi] = valid(kx, w, ow);
        for (std::size_t co = 0; co < cout; ++co) {
          std::fill(y.begin(), y.end(), 0.0);
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double a = kv[((ci * cout + co) * k + ky) * k + kx];
            const double* xr = &xv[ci * hw];
            for (std::size_t px = 0; px < hw; ++px) y[px] += a * xr[px];
          }
          double* dst = &o[co * plane_out];
          for (std::size_t iy = y_lo; iy < y_hi; ++iy) {
            const long oy = static_cast<long>(iy) * s + static_cast<long>(ky) - p;
            for (std::size_t ix = x_lo; ix < x_hi; ++ix)
              dst[oy * ow + static_cast<long>(ix) * s + static_cast<long>(kx) - p] += y[iy * w + ix];
          }
        }
      }
    }
  }
  on_backward(out, {&x, &kernel}, [x, kernel, out, valid, cin, cout, k, h, w, oh, ow, s, p, hw, plane_out]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto xv = x.values();
    auto kv = kernel.values();
    const bool need_x = x.requires_grad(), need_k = kernel.requires_grad();
    std::span<double> gx = need_x ? x.mutable_grad() : std::span<double>();
    std::span<double> gk = need_k ? kernel.mutable_grad() : std::span<double>();
    std::vector<double> gy(hw);
    for (std::size_t ky = 0; ky < k; ++ky) {
      const auto [y_lo, y_hi] = valid(ky, h, oh);
      for (std::size_t kx = 0; kx < k; ++kx) {
        const auto [x_lo, x_hi] = valid(kx, w, ow);
        for (std::size_t co = 0; co < cout; ++co) {
          // gy[pixel] = gradient at the location this tap wrote to, 0 if cropped.
          std::fill(gy.begin(), gy.end(), 0.0);
          const double* src = &g[co * plane_out];
          for (std::size_t iy = y_lo; iy < y_hi; ++iy) {
            const long oy = static_cast<long>(iy) * s + static_cast<long>(ky) - p;
            for (std::size_t ix = x_lo; ix < x_hi; ++ix)
              gy[iy * w + ix] = src[oy * ow + static_cast<long>(ix) * s + static_cast<long>(kx) - p];
          }
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const std::size_t kidx = ((ci * cout + co) * k + ky) * k + kx;
            if (need_x) {
              const double a = kv[kidx];
              double* gxr = &gx[ci * hw];
              for (std::size_t px = 0; px < hw; ++px) gxr[px] += a * gy[px];
            }
            if (need_k) {
              const double* xr = &xv[ci * hw];
              double acc = 0.0;
              for (std::size_t px = 0; px < hw; ++px) acc += xr[px] * gy[px];
              gk[kidx] += acc;
            }
          }
        }
      }
    }
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t m = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != m) fail(ErrorCode::ShapeMismatch, "cross_entropy: one target per logit row");
  if (m == 0) fail(ErrorCode::ShapeMismatch, "cross_entropy: empty target span");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= vocab)
      fail(ErrorCode::IndexOutOfVocab, "target " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab));
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> probs(m * vocab);
  long double total = 0.0L;  // extended accumulators keep finite-difference noise near one ulp
  auto lv = logits.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = &lv[i * vocab];
    double mx = row[0];
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    long double sum = 0.0L;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[i * vocab + j] = std::exp(row[j] - mx);
      sum += probs[i * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[i * vocab + j] /= static_cast<double>(sum);
    total += (static_cast<long double>(mx) - row[tgt[i]]) + std::log(sum);
  }
  Tensor out = Tensor::scalar_extended(total / static_cast<long double>(m));
  on_backward(out, {&logits}, [logits, out, probs = std::move(probs), tgt = std::move(tgt), m, vocab]() mutable {
    if (!out.has_grad()) return;
    const double g = out.grad()[0] / static_cast<double>(m);
    auto gl = logits.mutable_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < vocab; ++j) {
        const double onehot = static_cast<int>(j) == tgt[i] ? 1.0 : 0.0;
        gl[i * vocab + j] += g * (probs[i * vocab + j] - onehot);
      }
  });
  return out;
}

Tensor dice_loss(const Tensor& probs, std::span<const double> target, double eps) {
  if (target.size() != probs.numel()) fail(ErrorCode::ShapeMismatch, "dice_loss: target size differs from prediction");
  auto pv = probs.values();
  long double inter = 0.0L, pp = 0.0L, gg = 0.0L;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    inter += static_cast<long double>(pv[i]) * target[i];
    pp += static_cast<long double>(pv[i]) * pv[i];
    gg += static_cast<long double>(target[i]) * target[i];
  }
  const long double num_ext = 2.0L * inter + eps;
  const long double den_ext = pp + gg + eps;
  const double num = static_cast<double>(num_ext);
  const double den = static_cast<double>(den_ext);
  Tensor out = Tensor::scalar_extended(1.0L - num_ext / den_ext);
  on_backward(out, {&probs},
              [probs, out, tgt = std::vector<double>(target.begin(), target.end()), num, den]() mutable {
                if (!out.has_grad()) return;
                const double g = out.grad()[0];
                auto pv = probs.values();
                auto gp = probs.mutable_grad();
                // d/dp [1 - num/den] = -(2 g_i den - num 2 p_i) / den^2
                for (std::size_t i = 0; i < pv.size(); ++i)
                  gp[i] += g * (-(2.0 * tgt[i] * den - num * 2.0 * pv[i]) / (den * den));
              });
  return out;
}

Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> target, double clamp) {
  if (target.size() != probs.numel())
    fail(ErrorCode::ShapeMismatch, "binary_cross_entropy: target size differs from prediction");
  auto pv = probs.values();
  const double floor_log = std::log(clamp);
  long double total = 0.0L;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double lp = pv[i] > clamp ? std::log(pv[i]) : floor_log;
    const double q = 1.0 - pv[i];
    const double lq = q > clamp ? std::log(q) : floor_log;
    total -= static_cast<long double>(target[i]) * lp + static_cast<long double>(1.0 - target[i]) * lq;
  }
  const double n = static_cast<double>(pv.size());
  Tensor out = Tensor::scalar_extended(total / static_cast<long double>(pv.size()));
  on_backward(out, {&probs},
              [probs, out, tgt = std::vector<double>(target.begin(), target.end()), clamp, n]() mutable {
                if (!out.has_grad()) return;
                const double g = out.grad()[0] / n;
                auto pv = probs.values();
                auto gp = probs.mutable_grad();
                for (std::size_t i = 0; i < pv.size(); ++i) {
                  const double p = pv[i];
                  const double q = 1.0 - p;
                  double d = 0.0;
                  if (p > clamp) d -= tgt[i] / p;
                  if (q > clamp) d += (1.0 - tgt[i]) / q;
                  gp[i] += g * d;
                }
              });
  return out;
}

Tensor binary_cross_entropy_with_logits(const Tensor& logits, std::span<const double> target, double clamp) {
  if (target.size() != logits.numel())
    fail(ErrorCode::ShapeMismatch, "binary_cross_entropy_with_logits: target size differs from prediction");
  auto zv = logits.values();
  const double floor_log = std::log(clamp);
  // log p = −softplus(−z), log(1−p) = −softplus(z): no cancellation in 1 − p.
  auto softplus = [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); };
  long double total = 0.0L;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    const double lp = std::max(-softplus(-zv[i]), floor_log);
    const double lq = std::max(-softplus(zv[i]), floor_log);
    total -= static_cast<long double>(target[i]) * lp + static_cast<long double>(1.0 - target[i]) * lq;
  }
  const double n = static_cast<double>(zv.size());
  Tensor out = Tensor::scalar_extended(total / static_cast<long double>(zv.size()));
  on_backward(out, {&logits},
              [logits, out, tgt = std::vector<double>(target.begin(), target.end()), floor_log, softplus, n]() mutable {
                if (!out.has_grad()) return;
                const double g = out.grad()[0] / n;
                auto zv = logits.values();
                auto gz = logits.mutable_grad();
                for (std::size_t i = 0; i < zv.size(); ++i) {
                  const double z = zv[i];
                  double d = 0.0;
                  if (-softplus(-z) > floor_log) d -= tgt[i] * stable_sigmoid(-z);
                  if (-softplus(z) > floor_log) d += (1.0 - tgt[i]) * stable_sigmoid(z);
                  gz[i] += g * d;
                }
              });
  return out;
}

}  // namespace vqamask::nn
