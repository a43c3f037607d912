#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "lmfb/tape.hpp"
#include "lmfb/tensor.hpp"

// Forward ops with hand-derived adjoints. Every op takes the tape first;
// passing nullptr (or feeding only non-grad inputs) runs the plain forward
// path, which is what decoding and frozen-model scoring use.
namespace lmfb::ops {

namespace detail {

inline bool want_grad(const Tape* t, std::initializer_list<const Tensor*> ins) {
  if (t == nullptr) return false;
  for (const Tensor* x : ins)
    if ((*x).requires_grad()) return true;
  return false;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw UsageError(std::string(op) + ": shape mismatch");
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace detail

// -------------------------------------------------------------------------
// Plain log-domain kernels (also exposed un-taped; these are the primitives
// every log-probability in the system goes through).
// -------------------------------------------------------------------------

// log(sum(exp(x))) with max-shift. -inf entries are allowed as masks.
inline double logsumexp(std::span<const double> x) {
  if (x.empty()) throw std::domain_error("logsumexp: empty input");
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw std::domain_error("logsumexp: entries must be finite or -inf");
    m = std::max(m, v);
  }
  if (m == -std::numeric_limits<double>::infinity())
    throw std::domain_error("logsumexp: all entries are -inf");
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
  for (double v : logits)
    if (!std::isfinite(v)) throw std::domain_error("log_softmax: non-finite input");
  const double lse = logsumexp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

// -------------------------------------------------------------------------
// Elementwise
// -------------------------------------------------------------------------

inline Tensor add(Tape* t, Tensor a, Tensor b) {
  detail::check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(t, {&a, &b}));
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) + b.at(i);
  if (out.requires_grad())
    t->record(
        [a, b, out]() mutable {
          auto g = out.grad();
          if (a.requires_grad())
            for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
          if (b.requires_grad())
            for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i] += g[i];
        },
        out);
  return out;
}

inline Tensor sub(Tape* t, Tensor a, Tensor b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(t, {&a, &b}));
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) - b.at(i);
  if (out.requires_grad())
    t->record(
        [a, b, out]() mutable {
          auto g = out.grad();
          if (a.requires_grad())
            for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
          if (b.requires_grad())
            for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i] -= g[i];
        },
        out);
  return out;
}

inline Tensor mul(Tape* t, Tensor a, Tensor b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(t, {&a, &b}));
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * b.at(i);
  if (out.requires_grad())
    t->record(
        [a, b, out]() mutable {
          auto g = out.grad();
          if (a.requires_grad())
            for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * b.at(i);
          if (b.requires_grad())
            for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i] += g[i] * a.at(i);
        },
        out);
  return out;
}

inline Tensor scale(Tape* t, Tensor a, double c) {
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(t, {&a}));
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * c;
  if (out.requires_grad())
    t->record(
        [a, out, c]() mutable {
          auto g = out.grad();
          for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * c;
        },
        out);
  return out;
}

inline Tensor add_const(Tape* t, Tensor a, double c) {
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(t, {&a}));
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) + c;
  if (out.requires_grad())
    t->record(
        [a, out]() mutable {
          auto g = out.grad();
          for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
        },
        out);
  return out;
}

inline Tensor neg(Tape* t, Tensor a) { return scale(t, std::move(a), -1.0); }

inline Tensor exp(Tape* t, Tensor a) {
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(t, {&a}));
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.at(i) = std::exp(a.at(i));
    if (!std::isfinite(out.at(i))) throw std::domain_error("exp: overflow to non-finite");
  }
  if (out.requires_grad())
    t->record(
        [a, out]() mutable {
          auto g = out.grad();
          for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * out.at(i);
        },
        out);
  return out;
}

inline Tensor tanh(Tape* t, Tensor a) {
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(t, {&a}));
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = std::tanh(a.at(i));
  if (out.requires_grad())
    t->record(
        [a, out]() mutable {
          auto g = out.grad();
          for (std::size_t i = 0; i < g.size(); ++i)
            a.grad()[i] += g[i] * (1.0 - out.at(i) * out.at(i));
        },
        out);
  return out;
}

// log(1 + exp(x)), stable; adjoint is sigmoid(x).
inline Tensor softplus(Tape* t, Tensor a) {
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(t, {&a}));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.at(i);
    out.at(i) = x > 30.0 ? x : (x < -30.0 ? std::exp(x) : std::log1p(std::exp(x)));
  }
  if (out.requires_grad())
    t->record(
        [a, out]() mutable {
          auto g = out.grad();
          for (std::size_t i = 0; i < g.size(); ++i)
            a.grad()[i] += g[i] * detail::sigmoid(a.at(i));
        },
        out);
  return out;
}

// clamp to [lo, hi]; gradient passes only where the input was not clamped.
inline Tensor clip_const(Tape* t, Tensor a, double lo, double hi) {
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(t, {&a}));
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = std::clamp(a.at(i), lo, hi);
  if (out.requires_grad())
    t->record(
        [a, out, lo, hi]() mutable {
          auto g = out.grad();
          for (std::size_t i = 0; i < g.size(); ++i)
            if (a.at(i) >= lo && a.at(i) <= hi) a.grad()[i] += g[i];
        },
        out);
  return out;
}

// elementwise min; ties route the gradient to a.
inline Tensor minimum(Tape* t, Tensor a, Tensor b) {
  detail::check_same_shape(a, b, "minimum");
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(t, {&a, &b}));
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = std::min(a.at(i), b.at(i));
  if (out.requires_grad())
    t->record(
        [a, b, out]() mutable {
          auto g = out.grad();
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (a.at(i) <= b.at(i)) {
              if (a.requires_grad()) a.grad()[i] += g[i];
            } else if (b.requires_grad()) {
              b.grad()[i] += g[i];
            }
          }
        },
        out);
  return out;
}

// -------------------------------------------------------------------------
// Linear algebra
// -------------------------------------------------------------------------

inline Tensor matmul(Tape* t, Tensor a, Tensor b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw UsageError("matmul: inner dimensions disagree");
  Tensor out = Tensor::zeros({m, n}, detail::want_grad(t, {&a, &b}));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
    }
  if (out.requires_grad())
    t->record(
        [a, b, out, m, k, n]() mutable {
          if (a.requires_grad())
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j) {
                const double g = out.grad()[i * n + j];
                for (std::size_t p = 0; p < k; ++p) a.grad()[i * k + p] += g * b.at(p, j);
              }
          if (b.requires_grad())
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t p = 0; p < k; ++p) {
                const double av = a.at(i, p);
                for (std::size_t j = 0; j < n; ++j) b.grad()[p * n + j] += out.grad()[i * n + j] * av;
              }
        },
        out);
  return out;
}

// a [m x k] times b^T where b is [n x k]; returns [m x n].
inline Tensor matmul_nt(Tape* t, Tensor a, Tensor b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) throw UsageError("matmul_nt: inner dimensions disagree");
  Tensor out = Tensor::zeros({m, n}, detail::want_grad(t, {&a, &b}));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(j, p);
      out.at(i, j) = s;
    }
  if (out.requires_grad())
    t->record(
        [a, b, out, m, k, n]() mutable {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const double g = out.grad()[i * n + j];
              if (g == 0.0) continue;
              if (a.requires_grad())
                for (std::size_t p = 0; p < k; ++p) a.grad()[i * k + p] += g * b.at(j, p);
              if (b.requires_grad())
                for (std::size_t p = 0; p < k; ++p) b.grad()[j * k + p] += g * a.at(i, p);
            }
        },
        out);
  return out;
}

// Broadcast-add a row vector to every row of a matrix.
inline Tensor add_rowvec(Tape* t, Tensor a, Tensor b) {
  const std::size_t m = a.rows(), n = a.cols();
  if (b.size() != n) throw UsageError("add_rowvec: width mismatch");
  Tensor out = Tensor::zeros({m, n}, detail::want_grad(t, {&a, &b}));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + b.at(j);
  if (out.requires_grad())
    t->record(
        [a, b, out, m, n]() mutable {
          if (a.requires_grad())
            for (std::size_t i = 0; i < m * n; ++i) a.grad()[i] += out.grad()[i];
          if (b.requires_grad())
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j) b.grad()[j] += out.grad()[i * n + j];
        },
        out);
  return out;
}

// -------------------------------------------------------------------------
// Structure: rows, slices, gathers, stacking
// -------------------------------------------------------------------------

inline Tensor row(Tape* t, Tensor e, std::size_t i) {
  const std::size_t n = e.cols();
  if (i >= e.rows()) throw UsageError("row: index out of range");
  Tensor out = Tensor::zeros({1, n}, detail::want_grad(t, {&e}));
  for (std::size_t j = 0; j < n; ++j) out.at(j) = e.at(i, j);
  if (out.requires_grad())
    t->record(
        [e, out, i, n]() mutable {
          for (std::size_t j = 0; j < n; ++j) e.grad()[i * n + j] += out.grad()[j];
        },
        out);
  return out;
}

inline Tensor gather_rows(Tape* t, Tensor e, std::vector<std::size_t> idx) {
  const std::size_t n = e.cols();
  for (std::size_t i : idx)
    if (i >= e.rows()) throw UsageError("gather_rows: index out of range");
  Tensor out = Tensor::zeros({idx.size(), n}, detail::want_grad(t, {&e}));
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t j = 0; j < n; ++j) out.at(r, j) = e.at(idx[r], j);
  if (out.requires_grad())
    t->record(
        [e, out, idx, n]() mutable {
          for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < n; ++j) e.grad()[idx[r] * n + j] += out.grad()[r * n + j];
        },
        out);
  return out;
}

inline Tensor slice_rows(Tape* t, Tensor a, std::size_t begin, std::size_t count) {
  const std::size_t n = a.cols();
  if (begin + count > a.rows()) throw UsageError("slice_rows: range out of bounds");
  Tensor out = Tensor::zeros({count, n}, detail::want_grad(t, {&a}));
  for (std::size_t r = 0; r < count; ++r)
    for (std::size_t j = 0; j < n; ++j) out.at(r, j) = a.at(begin + r, j);
  if (out.requires_grad())
    t->record(
        [a, out, begin, count, n]() mutable {
          for (std::size_t r = 0; r < count; ++r)
            for (std::size_t j = 0; j < n; ++j)
              a.grad()[(begin + r) * n + j] += out.grad()[r * n + j];
        },
        out);
  return out;
}

inline Tensor concat_rows(Tape* t, Tensor a, Tensor b) {
  const std::size_t n = a.cols();
  if (b.cols() != n) throw UsageError("concat_rows: width mismatch");
  const std::size_t m = a.rows(), k = b.rows();
  Tensor out = Tensor::zeros({m + k, n}, detail::want_grad(t, {&a, &b}));
  for (std::size_t i = 0; i < m * n; ++i) out.at(i) = a.at(i);
  for (std::size_t i = 0; i < k * n; ++i) out.at(m * n + i) = b.at(i);
  if (out.requires_grad())
    t->record(
        [a, b, out, m, k, n]() mutable {
          if (a.requires_grad())
            for (std::size_t i = 0; i < m * n; ++i) a.grad()[i] += out.grad()[i];
          if (b.requires_grad())
            for (std::size_t i = 0; i < k * n; ++i) b.grad()[i] += out.grad()[m * n + i];
        },
        out);
  return out;
}

// Stack scalar tensors into a vector.
inline Tensor stack(Tape* t, std::vector<Tensor> parts) {
  bool rg = false;
  for (auto& p : parts) {
    if (p.size() != 1) throw UsageError("stack: parts must be scalars");
    rg = rg || (t != nullptr && p.requires_grad());
  }
  Tensor out = Tensor::zeros({parts.size()}, rg);
  for (std::size_t i = 0; i < parts.size(); ++i) out.at(i) = parts[i].item();
  if (out.requires_grad())
    t->record(
        [parts, out]() mutable {
          for (std::size_t i = 0; i < parts.size(); ++i)
            if (parts[i].requires_grad()) parts[i].grad()[0] += out.grad()[i];
        },
        out);
  return out;
}

inline Tensor pick(Tape* t, Tensor a, std::size_t i) {
  if (i >= a.size()) throw UsageError("pick: index out of range");
  Tensor out = Tensor::zeros({1}, detail::want_grad(t, {&a}));
  out.at(0) = a.at(i);
  if (out.requires_grad())
    t->record([a, out, i]() mutable { a.grad()[i] += out.grad()[0]; }, out);
  return out;
}

// -------------------------------------------------------------------------
// Reductions
// -------------------------------------------------------------------------

inline Tensor sum(Tape* t, Tensor a) {
  Tensor out = Tensor::zeros({1}, detail::want_grad(t, {&a}));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i);
  out.at(0) = s;
  if (out.requires_grad())
    t->record(
        [a, out]() mutable {
          const double g = out.grad()[0];
          for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += g;
        },
        out);
  return out;
}

inline Tensor mean(Tape* t, Tensor a) {
  if (a.size() == 0) throw UsageError("mean: empty tensor");
  Tensor out = sum(t, a);
  return scale(t, out, 1.0 / static_cast<double>(a.size()));
}

// -------------------------------------------------------------------------
// Softmax family (row-wise)
// -------------------------------------------------------------------------

inline Tensor log_softmax_rows(Tape* t, Tensor a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({m, n}, detail::want_grad(t, {&a}));
  for (std::size_t i = 0; i < m; ++i) {
    auto lsm = log_softmax(std::span<const double>(a.values().data() + i * n, n));
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = lsm[j];
  }
  if (out.requires_grad())
    t->record(
        [a, out, m, n]() mutable {
          // dx_j = g_j - exp(y_j) * sum_i g_i, per row
          for (std::size_t i = 0; i < m; ++i) {
            double gs = 0.0;
            for (std::size_t j = 0; j < n; ++j) gs += out.grad()[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
              a.grad()[i * n + j] += out.grad()[i * n + j] - std::exp(out.at(i, j)) * gs;
          }
        },
        out);
  return out;
}

inline Tensor softmax_rows(Tape* t, Tensor a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({m, n}, detail::want_grad(t, {&a}));
  for (std::size_t i = 0; i < m; ++i) {
    auto lsm = log_softmax(std::span<const double>(a.values().data() + i * n, n));
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = std::exp(lsm[j]);
  }
  if (out.requires_grad())
    t->record(
        [a, out, m, n]() mutable {
          // dx_j = y_j * (g_j - sum_i g_i y_i), per row
          for (std::size_t i = 0; i < m; ++i) {
            double gy = 0.0;
            for (std::size_t j = 0; j < n; ++j) gy += out.grad()[i * n + j] * out.at(i, j);
            for (std::size_t j = 0; j < n; ++j)
              a.grad()[i * n + j] += out.at(i, j) * (out.grad()[i * n + j] - gy);
          }
        },
        out);
  return out;
}

}  // namespace lmfb::ops
