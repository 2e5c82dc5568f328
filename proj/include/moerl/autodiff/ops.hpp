#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "moerl/autodiff/tape.hpp"

// Differentiable primitives. Every op reads its operands from the tape,
// records the result, and registers the local vector-Jacobian product.
namespace moerl::ops {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

inline bool is_scalar(const Tensor& t) { return t.size() == 1 && t.rank() <= 1; }

// c[0..n) += a · b[0..n)
inline void axpy(double a, const double* __restrict b, double* __restrict c, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
}

}  // namespace detail

// C[m×n] = A[m×k] · B[k×n]
inline Var matmul(Tape& tape, Var a, Var b) {
  const Tensor& A = tape.value(a);
  const Tensor& B = tape.value(b);
  detail::require_rank(A, 2, "matmul");
  detail::require_rank(B, 2, "matmul");
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k) {
    throw DimensionError("matmul: inner dims disagree " + shape_str(A.shape()) + " · " + shape_str(B.shape()));
  }
  Tensor C(Shape{m, n});
  const double* pa = A.data().data();
  const double* pb = B.data().data();
  double* pc = C.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av != 0.0) detail::axpy(av, pb + p * n, pc + i * n, n);
    }
  }
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(C), rg, [a, b, m, k, n](Tape& t, const Tape::Node& out) {
    const double* g = out.grad.data();
    const double* pa = t.value(a).data().data();
    const double* pb = t.value(b).data().data();
    if (auto ga = t.grad_buffer(a); !ga.empty()) {
      // dA = dC · Bᵀ, via Bᵀ so the inner loop is contiguous
      std::vector<double> bt(n * k);
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = pb[p * n + j];
      }
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = g[i * n + j];
          if (gv != 0.0) detail::axpy(gv, bt.data() + j * k, ga.data() + i * k, k);
        }
      }
    }
    if (auto gb = t.grad_buffer(b); !gb.empty()) {
      // dB = Aᵀ · dC
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa[i * k + p];
          if (av != 0.0) detail::axpy(av, g + i * n, gb.data() + p * n, n);
        }
      }
    }
  });
}

namespace detail {

// Shared driver for binary pointwise ops with equal-shape or scalar broadcast.
// fwd(x, y) -> z; dx(x, y) and dy(x, y) are the local partials.
template <class F, class DX, class DY>
Var binary(Tape& tape, Var a, Var b, const char* name, F fwd, DX dx, DY dy) {
  const Tensor& A = tape.value(a);
  const Tensor& B = tape.value(b);
  const bool a_scalar = A.shape() != B.shape() && is_scalar(A);
  const bool b_scalar = A.shape() != B.shape() && is_scalar(B);
  if (A.shape() != B.shape() && !a_scalar && !b_scalar) {
    throw DimensionError(std::string(name) + ": unsupported broadcast " + shape_str(A.shape()) + " vs " +
                         shape_str(B.shape()));
  }
  const Tensor& big = a_scalar ? B : A;
  Tensor out(big.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = fwd(A[a_scalar ? 0 : i], B[b_scalar ? 0 : i]);
  }
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [=](Tape& t, const Tape::Node& node) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    auto ga = t.grad_buffer(a);
    auto gb = t.grad_buffer(b);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = A[a_scalar ? 0 : i];
      const double y = B[b_scalar ? 0 : i];
      const double g = node.grad[i];
      if (!ga.empty()) ga[a_scalar ? 0 : i] += g * dx(x, y);
      if (!gb.empty()) gb[b_scalar ? 0 : i] += g * dy(x, y);
    }
  });
}

template <class F, class D>
Var unary(Tape& tape, Var a, F fwd, D deriv) {
  const Tensor& A = tape.value(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = fwd(A[i]);
  return tape.record(std::move(out), tape.requires_grad(a), [=](Tape& t, const Tape::Node& node) {
    const Tensor& A = t.value(a);
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < A.size(); ++i) ga[i] += node.grad[i] * deriv(A[i], node.value[i]);
  });
}

}  // namespace detail

inline Var add(Tape& tape, Var a, Var b) {
  return detail::binary(
      tape, a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(Tape& tape, Var a, Var b) {
  return detail::binary(
      tape, a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Var mul(Tape& tape, Var a, Var b) {
  return detail::binary(
      tape, a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var scale(Tape& tape, Var a, double c) {
  return detail::unary(
      tape, a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(Tape& tape, Var a, double c) {
  return detail::unary(
      tape, a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

// relu'(0) is taken as 0.
inline Var relu(Tape& tape, Var a) {
  return detail::unary(
      tape, a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(Tape& tape, Var a) {
  return detail::unary(
      tape, a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var square(Tape& tape, Var a) {
  return detail::unary(
      tape, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sum(Tape& tape, Var a) {
  const Tensor& A = tape.value(a);
  double s = 0.0;
  for (double v : A.data()) s += v;
  return tape.record(Tensor::scalar(s), tape.requires_grad(a), [a](Tape& t, const Tape::Node& node) {
    auto ga = t.grad_buffer(a);
    for (double& g : ga) g += node.grad[0];
  });
}

inline Var mean(Tape& tape, Var a) {
  const std::size_t n = tape.value(a).size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(n));
}

// y[b, j] = x[b, j] + bias[j]
inline Var add_bias(Tape& tape, Var x, Var bias) {
  const Tensor& X = tape.value(x);
  const Tensor& Bv = tape.value(bias);
  detail::require_rank(X, 2, "add_bias");
  const std::size_t rows = X.rows(), cols = X.cols();
  if (Bv.size() != cols) {
    throw DimensionError("add_bias: bias " + shape_str(Bv.shape()) + " vs input " + shape_str(X.shape()));
  }
  Tensor out = X;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out(r, c) += Bv[c];
  }
  const bool rg = tape.requires_grad(x) || tape.requires_grad(bias);
  return tape.record(std::move(out), rg, [x, bias, rows, cols](Tape& t, const Tape::Node& node) {
    if (auto gx = t.grad_buffer(x); !gx.empty()) {
      for (std::size_t i = 0; i < rows * cols; ++i) gx[i] += node.grad[i];
    }
    if (auto gb = t.grad_buffer(bias); !gb.empty()) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gb[c] += node.grad[r * cols + c];
      }
    }
  });
}

// y[b, :] = x[b, :] * s[b, col]
inline Var scale_rows(Tape& tape, Var x, Var s, std::size_t col) {
  const Tensor& X = tape.value(x);
  const Tensor& S = tape.value(s);
  detail::require_rank(X, 2, "scale_rows");
  detail::require_rank(S, 2, "scale_rows");
  if (S.rows() != X.rows() || col >= S.cols()) {
    throw DimensionError("scale_rows: " + shape_str(X.shape()) + " vs " + shape_str(S.shape()));
  }
  const std::size_t rows = X.rows(), cols = X.cols(), scols = S.cols();
  Tensor out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double w = S(r, col);
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = w * X(r, c);
  }
  const bool rg = tape.requires_grad(x) || tape.requires_grad(s);
  return tape.record(std::move(out), rg, [=](Tape& t, const Tape::Node& node) {
    const Tensor& X = t.value(x);
    const Tensor& S = t.value(s);
    auto gx = t.grad_buffer(x);
    auto gs = t.grad_buffer(s);
    for (std::size_t r = 0; r < rows; ++r) {
      const double w = S(r, col);
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double g = node.grad[r * cols + c];
        if (!gx.empty()) gx[r * cols + c] += g * w;
        acc += g * X(r, c);
      }
      if (!gs.empty()) gs[r * scols + col] += acc;
    }
  });
}

// [B×m] ++ [B×n] -> [B×(m+n)]
inline Var concat_cols(Tape& tape, Var a, Var b) {
  const Tensor& A = tape.value(a);
  const Tensor& B = tape.value(b);
  detail::require_rank(A, 2, "concat_cols");
  detail::require_rank(B, 2, "concat_cols");
  if (A.rows() != B.rows()) throw DimensionError("concat_cols: row counts differ");
  const std::size_t rows = A.rows(), ma = A.cols(), mb = B.cols();
  Tensor out(Shape{rows, ma + mb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(A.row(r).begin(), ma, out.row(r).begin());
    std::copy_n(B.row(r).begin(), mb, out.row(r).begin() + ma);
  }
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [=](Tape& t, const Tape::Node& node) {
    auto ga = t.grad_buffer(a);
    auto gb = t.grad_buffer(b);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = node.grad.data() + r * (ma + mb);
      if (!ga.empty()) {
        for (std::size_t c = 0; c < ma; ++c) ga[r * ma + c] += g[c];
      }
      if (!gb.empty()) {
        for (std::size_t c = 0; c < mb; ++c) gb[r * mb + c] += g[ma + c];
      }
    }
  });
}

inline Var reshape(Tape& tape, Var a, Shape shape) {
  Tensor out = tape.value(a).reshaped(std::move(shape));
  return tape.record(std::move(out), tape.requires_grad(a), [a](Tape& t, const Tape::Node& node) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += node.grad[i];
  });
}

// Column means of a [B×n] matrix -> [n].
inline Var mean_rows(Tape& tape, Var a) {
  const Tensor& A = tape.value(a);
  detail::require_rank(A, 2, "mean_rows");
  const std::size_t rows = A.rows(), cols = A.cols();
  if (rows == 0) throw DimensionError("mean_rows: empty batch");
  Tensor out(Shape{cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += A(r, c);
  }
  const double inv = 1.0 / static_cast<double>(rows);
  for (std::size_t c = 0; c < cols; ++c) out[c] *= inv;
  return tape.record(std::move(out), tape.requires_grad(a), [=](Tape& t, const Tape::Node& node) {
    auto ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += node.grad[c] * inv;
    }
  });
}

// Numerically stable softmax along `axis` (negative counts from the back).
inline Var softmax(Tape& tape, Var a, int axis = -1) {
  const Tensor& A = tape.value(a);
  if (A.rank() == 0) throw DimensionError("softmax: scalar input");
  const int rank = static_cast<int>(A.rank());
  const int ax = axis < 0 ? rank + axis : axis;
  if (ax < 0 || ax >= rank) throw DimensionError("softmax: axis out of range");
  const std::size_t n = A.dim(static_cast<std::size_t>(ax));
  if (n == 0) throw DimensionError("softmax: empty axis");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= A.dim(static_cast<std::size_t>(i));
  for (int i = ax + 1; i < rank; ++i) inner *= A.dim(static_cast<std::size_t>(i));
  Tensor out(A.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, A[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(A[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  return tape.record(std::move(out), tape.requires_grad(a), [=](Tape& t, const Tape::Node& node) {
    auto ga = t.grad_buffer(a);
    const Tensor& y = node.value;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += node.grad[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          ga[idx] += y[idx] * (node.grad[idx] - dot);
        }
      }
    }
  });
}

// Σ p log p over all entries, with 0·log 0 := 0.
inline Var sum_plogp(Tape& tape, Var p) {
  const Tensor& P = tape.value(p);
  double s = 0.0;
  for (double v : P.data()) {
    if (v < 0.0) throw ContractError("sum_plogp: negative probability");
    if (v > 0.0) s += v * std::log(v);
  }
  return tape.record(Tensor::scalar(s), tape.requires_grad(p), [p](Tape& t, const Tape::Node& node) {
    const Tensor& P = t.value(p);
    auto gp = t.grad_buffer(p);
    for (std::size_t i = 0; i < P.size(); ++i) {
      // The derivative diverges at 0; softmax outputs never reach it.
      if (P[i] > 0.0) gp[i] += node.grad[0] * (std::log(P[i]) + 1.0);
    }
  });
}

// Valid (unpadded) 2-D convolution, NCHW input and FCkk weights.
inline Var conv2d(Tape& tape, Var x, Var w, std::size_t stride) {
  const Tensor& X = tape.value(x);
  const Tensor& W = tape.value(w);
  detail::require_rank(X, 4, "conv2d");
  detail::require_rank(W, 4, "conv2d");
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  const std::size_t F = W.dim(0), kh = W.dim(2), kw = W.dim(3);
  if (W.dim(1) != C) throw DimensionError("conv2d: channel mismatch " + shape_str(X.shape()) + " vs " + shape_str(W.shape()));
  if (kh > H || kw > Wd) throw DimensionError("conv2d: kernel larger than input");
  const std::size_t Ho = (H - kh) / stride + 1, Wo = (Wd - kw) / stride + 1;
  Tensor out(Shape{B, F, Ho, Wo});
  const double* px = X.data().data();
  const double* pw = W.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t f = 0; f < F; ++f) {
      double* po = out.data().data() + ((b * F + f) * Ho) * Wo;
      for (std::size_t c = 0; c < C; ++c) {
        const double* xc = px + ((b * C + c) * H) * Wd;
        const double* wc = pw + ((f * C + c) * kh) * kw;
        for (std::size_t i = 0; i < kh; ++i) {
          for (std::size_t j = 0; j < kw; ++j) {
            const double wv = wc[i * kw + j];
            for (std::size_t oy = 0; oy < Ho; ++oy) {
              const double* xrow = xc + (oy * stride + i) * Wd + j;
              double* orow = po + oy * Wo;
              for (std::size_t ox = 0; ox < Wo; ++ox) orow[ox] += wv * xrow[ox * stride];
            }
          }
        }
      }
    }
  }
  const bool rg = tape.requires_grad(x) || tape.requires_grad(w);
  return tape.record(std::move(out), rg, [=](Tape& t, const Tape::Node& node) {
    const double* px = t.value(x).data().data();
    const double* pw = t.value(w).data().data();
    auto gx = t.grad_buffer(x);
    auto gw = t.grad_buffer(w);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t f = 0; f < F; ++f) {
        const double* go = node.grad.data() + ((b * F + f) * Ho) * Wo;
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t xoff = ((b * C + c) * H) * Wd;
          const std::size_t woff = ((f * C + c) * kh) * kw;
          for (std::size_t i = 0; i < kh; ++i) {
            for (std::size_t j = 0; j < kw; ++j) {
              const double wv = pw[woff + i * kw + j];
              double acc = 0.0;
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                const std::size_t xr = xoff + (oy * stride + i) * Wd + j;
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                  const double g = go[oy * Wo + ox];
                  acc += g * px[xr + ox * stride];
                  if (!gx.empty()) gx[xr + ox * stride] += g * wv;
                }
              }
              if (!gw.empty()) gw[woff + i * kw + j] += acc;
            }
          }
        }
      }
    }
  });
}

// y[b, f, :, :] = x[b, f, :, :] + bias[f]
inline Var add_channel_bias(Tape& tape, Var x, Var bias) {
  const Tensor& X = tape.value(x);
  const Tensor& Bv = tape.value(bias);
  detail::require_rank(X, 4, "add_channel_bias");
  const std::size_t B = X.dim(0), F = X.dim(1), plane = X.dim(2) * X.dim(3);
  if (Bv.size() != F) throw DimensionError("add_channel_bias: bias size mismatch");
  Tensor out = X;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t f = 0; f < F; ++f) {
      double* p = out.data().data() + (b * F + f) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += Bv[f];
    }
  }
  const bool rg = tape.requires_grad(x) || tape.requires_grad(bias);
  return tape.record(std::move(out), rg, [=](Tape& t, const Tape::Node& node) {
    auto gx = t.grad_buffer(x);
    auto gb = t.grad_buffer(bias);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t f = 0; f < F; ++f) {
        const double* g = node.grad.data() + (b * F + f) * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          if (!gx.empty()) gx[(b * F + f) * plane + i] += g[i];
          acc += g[i];
        }
        if (!gb.empty()) gb[f] += acc;
      }
    }
  });
}

// Copy of a node's value with no gradient path.
inline Var detach(Tape& tape, Var a) { return tape.constant(tape.value(a)); }

}  // namespace moerl::ops
