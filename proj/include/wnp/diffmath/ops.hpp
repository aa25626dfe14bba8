#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "wnp/diffmath/tensor.hpp"

namespace wnp {

namespace detail {

using Values = std::shared_ptr<const std::vector<double>>;

inline Values make_values(std::vector<double> v) {
  return std::make_shared<const std::vector<double>>(std::move(v));
}

/// Tape shared by the tracked inputs, or nullptr when none is tracked.
inline Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->tracked()) continue;
    if (tape && tape != t->tape()) {
      throw ContractError("operation mixes tensors from different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

inline std::vector<std::size_t> tracked_parents(std::initializer_list<const Tensor*> inputs) {
  std::vector<std::size_t> ids;
  for (const Tensor* t : inputs) {
    if (t->tracked()) ids.push_back(t->node());
  }
  return ids;
}

inline std::optional<std::size_t> node_of(const Tensor& t) {
  if (!t.tracked()) return std::nullopt;
  return t.node();
}

template <class Fn>
Tensor emit(std::initializer_list<const Tensor*> inputs, Shape shape, Values values, Fn&& fn) {
  Tape* tape = common_tape(inputs);
  if (!tape) return Tensor(std::move(shape), std::move(values));
  return tape->record(std::move(shape), std::move(values), tracked_parents(inputs),
                      std::forward<Fn>(fn));
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + to_string(t.shape()));
  }
}

// Row-vector bias broadcast: b is [n] or [1 x n] against a [m x n].
inline bool is_row_broadcast(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2) return false;
  const std::size_t n = a.shape()[1];
  if (b.rank() == 1) return b.shape()[0] == n;
  if (b.rank() == 2) return b.shape()[0] == 1 && b.shape()[1] == n && a.shape()[0] != 1;
  return false;
}

enum class BinaryKind { add, sub, mul, div };

inline Tensor binary(BinaryKind kind, const Tensor& a, const Tensor& b, const char* name) {
  const bool same = a.shape() == b.shape();
  const bool bcast = !same && is_row_broadcast(a, b);
  if (!same && !bcast) {
    throw ShapeError(std::string(name) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " are not compatible");
  }
  const std::size_t n = a.size();
  const std::size_t bn = b.size();
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i];
    const double y = bv[bcast ? i % bn : i];
    switch (kind) {
      case BinaryKind::add: out[i] = x + y; break;
      case BinaryKind::sub: out[i] = x - y; break;
      case BinaryKind::mul: out[i] = x * y; break;
      case BinaryKind::div: out[i] = x / y; break;
    }
  }
  auto ai = node_of(a);
  auto bi = node_of(b);
  auto as = a.shared_values();
  auto bs = b.shared_values();
  return emit({&a, &b}, a.shape(), make_values(std::move(out)),
              [=](std::span<const double> g, GradBuffers& buf) {
                if (ai) {
                  auto ga = buf.at(*ai);
                  for (std::size_t i = 0; i < n; ++i) {
                    const double y = (*bs)[bcast ? i % bn : i];
                    switch (kind) {
                      case BinaryKind::add:
                      case BinaryKind::sub: ga[i] += g[i]; break;
                      case BinaryKind::mul: ga[i] += g[i] * y; break;
                      case BinaryKind::div: ga[i] += g[i] / y; break;
                    }
                  }
                }
                if (bi) {
                  auto gb = buf.at(*bi);
                  for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t j = bcast ? i % bn : i;
                    const double x = (*as)[i];
                    const double y = (*bs)[j];
                    switch (kind) {
                      case BinaryKind::add: gb[j] += g[i]; break;
                      case BinaryKind::sub: gb[j] -= g[i]; break;
                      case BinaryKind::mul: gb[j] += g[i] * x; break;
                      case BinaryKind::div: gb[j] -= g[i] * x / (y * y); break;
                    }
                  }
                }
              });
}

// f computes the output from x; df computes d(out)/dx from (x, out).
template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  const std::size_t n = a.size();
  const auto av = a.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i]);
  auto result = make_values(std::move(out));
  auto ai = node_of(a);
  auto as = a.shared_values();
  return emit({&a}, a.shape(), result,
              [=](std::span<const double> g, GradBuffers& buf) {
                auto ga = buf.at(*ai);
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * df((*as)[i], (*result)[i]);
              });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product of a [m x k] and b [k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                     to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double s = av[i * k + kk];
      if (s == 0.0) continue;
      const double* brow = bv.data() + kk * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  auto ai = detail::node_of(a);
  auto bi = detail::node_of(b);
  auto as = a.shared_values();
  auto bs = b.shared_values();
  return detail::emit({&a, &b}, Shape{m, n}, detail::make_values(std::move(out)),
                      [=](std::span<const double> g, GradBuffers& buf) {
                        if (ai) {
                          // dA = G * B^T
                          auto ga = buf.at(*ai);
                          for (std::size_t i = 0; i < m; ++i) {
                            const double* grow = g.data() + i * n;
                            for (std::size_t kk = 0; kk < k; ++kk) {
                              const double* brow = bs->data() + kk * n;
                              double acc = 0.0;
                              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                              ga[i * k + kk] += acc;
                            }
                          }
                        }
                        if (bi) {
                          // dB = A^T * G
                          auto gb = buf.at(*bi);
                          for (std::size_t i = 0; i < m; ++i) {
                            const double* grow = g.data() + i * n;
                            for (std::size_t kk = 0; kk < k; ++kk) {
                              const double s = (*as)[i * k + kk];
                              if (s == 0.0) continue;
                              double* gbrow = gb.data() + kk * n;
                              for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
                            }
                          }
                        }
                      });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto av = a.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  auto ai = detail::node_of(a);
  return detail::emit({&a}, Shape{n, m}, detail::make_values(std::move(out)),
                      [=](std::span<const double> g, GradBuffers& buf) {
                        auto ga = buf.at(*ai);
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                      });
}

// ---------------------------------------------------------------------------
// Elementwise

/// a + b; b may also be a row vector broadcast over the rows of a.
inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(detail::BinaryKind::add, a, b, "add");
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(detail::BinaryKind::sub, a, b, "sub");
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(detail::BinaryKind::mul, a, b, "mul");
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(detail::BinaryKind::div, a, b, "div");
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor shift(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

/// log(1 + e^x), evaluated without overflow.
inline Tensor softplus(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
}

inline Tensor log(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) throw ContractError("log: argument must be positive");
  }
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// |x|^p elementwise. The derivative at x = 0 is taken to be 0.
inline Tensor abs_pow(const Tensor& a, double p) {
  if (p == 2.0) {
    return detail::unary(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
  }
  if (p == 1.0) {
    return detail::unary(
        a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
  }
  return detail::unary(
      a, [p](double x) { return std::pow(std::abs(x), p); },
      [p](double x, double) {
        if (x == 0.0) return 0.0;
        const double d = p * std::pow(std::abs(x), p - 1.0);
        return x > 0.0 ? d : -d;
      });
}

// ---------------------------------------------------------------------------
// Sorting

struct SortedRows {
  Tensor values;
  /// permutation[r][j] is the original column of the j-th smallest entry of row r.
  std::vector<std::vector<std::size_t>> permutation;
};

/// Sorts every row ascending (stable, so ties keep their original order).
/// The backward pass routes each output gradient to the input position it
/// was sorted from.
inline SortedRows sort_rows(const Tensor& a) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw ShapeError("sort_rows: expected a vector or matrix, got " + to_string(a.shape()));
  }
  const std::size_t rows = a.rank() == 2 ? a.shape()[0] : 1;
  const std::size_t cols = a.rank() == 2 ? a.shape()[1] : a.shape()[0];
  const auto av = a.values();
  std::vector<std::vector<std::size_t>> perm(rows, std::vector<std::size_t>(cols));
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    auto& p = perm[r];
    std::iota(p.begin(), p.end(), std::size_t{0});
    const double* row = av.data() + r * cols;
    std::stable_sort(p.begin(), p.end(),
                     [row](std::size_t i, std::size_t j) { return row[i] < row[j]; });
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = row[p[j]];
  }
  auto shared_perm = std::make_shared<const std::vector<std::vector<std::size_t>>>(perm);
  auto ai = detail::node_of(a);
  Tensor values = detail::emit(
      {&a}, a.shape(), detail::make_values(std::move(out)),
      [=](std::span<const double> g, GradBuffers& buf) {
        auto ga = buf.at(*ai);
        for (std::size_t r = 0; r < rows; ++r) {
          const auto& p = (*shared_perm)[r];
          for (std::size_t j = 0; j < cols; ++j) ga[r * cols + p[j]] += g[r * cols + j];
        }
      });
  return SortedRows{std::move(values), std::move(perm)};
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("sum: empty tensor " + to_string(a.shape()));
  const auto av = a.values();
  double s = 0.0;
  for (double v : av) s += v;
  auto ai = detail::node_of(a);
  const std::size_t n = a.size();
  return detail::emit({&a}, Shape{}, detail::make_values({s}),
                      [=](std::span<const double> g, GradBuffers& buf) {
                        auto ga = buf.at(*ai);
                        for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
                      });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor " + to_string(a.shape()));
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// Sum along `axis`, dropping that dimension.
inline Tensor sum(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw ShapeError("sum: axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(a.shape()));
  }
  if (a.shape()[axis] == 0) {
    throw ShapeError("sum: axis " + std::to_string(axis) + " of shape " +
                     to_string(a.shape()) + " is empty");
  }
  if (a.rank() == 1) return sum(a);
  if (a.rank() != 2) throw ShapeError("sum: axis reductions support rank <= 2");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto av = a.values();
  const std::size_t out_n = axis == 0 ? n : m;
  std::vector<double> out(out_n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += av[i * n + j];
  auto ai = detail::node_of(a);
  return detail::emit({&a}, Shape{out_n}, detail::make_values(std::move(out)),
                      [=](std::span<const double> g, GradBuffers& buf) {
                        auto ga = buf.at(*ai);
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < n; ++j)
                            ga[i * n + j] += g[axis == 0 ? j : i];
                      });
}

inline Tensor mean(const Tensor& a, std::size_t axis) {
  Tensor s = sum(a, axis);
  return scale(s, 1.0 / static_cast<double>(a.shape()[axis]));
}

// ---------------------------------------------------------------------------
// Structural

/// [a | b] for matrices with equal row counts.
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "concat_cols");
  detail::require_matrix(b, "concat_cols");
  if (a.shape()[0] != b.shape()[0]) {
    throw ShapeError("concat_cols: row counts differ, " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], p = a.shape()[1], q = b.shape()[1];
  const std::size_t w = p + q;
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.data() + i * p, p, out.data() + i * w);
    std::copy_n(bv.data() + i * q, q, out.data() + i * w + p);
  }
  auto ai = detail::node_of(a);
  auto bi = detail::node_of(b);
  return detail::emit({&a, &b}, Shape{m, w}, detail::make_values(std::move(out)),
                      [=](std::span<const double> g, GradBuffers& buf) {
                        if (ai) {
                          auto ga = buf.at(*ai);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * w + j];
                        }
                        if (bi && q > 0) {
                          auto gb = buf.at(*bi);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < q; ++j)
                              gb[i * q + j] += g[i * w + p + j];
                        }
                      });
}

/// Columns [begin, end) of a matrix.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require_matrix(a, "slice_cols");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (begin > end || end > n) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + to_string(a.shape()));
  }
  const std::size_t w = end - begin;
  const auto av = a.values();
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(av.data() + i * n + begin, w, out.data() + i * w);
  auto ai = detail::node_of(a);
  return detail::emit({&a}, Shape{m, w}, detail::make_values(std::move(out)),
                      [=](std::span<const double> g, GradBuffers& buf) {
                        auto ga = buf.at(*ai);
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
                      });
}

/// Stacks `n` copies of a vector (or 1-row matrix) into an [n x k] matrix.
inline Tensor repeat_rows(const Tensor& row, std::size_t n) {
  const bool ok = row.rank() == 1 || (row.rank() == 2 && row.shape()[0] == 1);
  if (!ok) throw ShapeError("repeat_rows: expected a row vector, got " + to_string(row.shape()));
  const std::size_t k = row.size();
  const auto rv = row.values();
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(rv.data(), k, out.data() + i * k);
  auto ri = detail::node_of(row);
  return detail::emit({&row}, Shape{n, k}, detail::make_values(std::move(out)),
                      [=](std::span<const double> g, GradBuffers& buf) {
                        auto gr = buf.at(*ri);
                        for (std::size_t i = 0; i < n; ++i)
                          for (std::size_t j = 0; j < k; ++j) gr[j] += g[i * k + j];
                      });
}

/// Rows `index` of a matrix, in the given order (repeats allowed).
inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  detail::require_matrix(a, "gather_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto av = a.values();
  std::vector<double> out(index.size() * n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= m) {
      throw ShapeError("gather_rows: row " + std::to_string(index[r]) + " out of range for " +
                       to_string(a.shape()));
    }
    std::copy_n(av.data() + index[r] * n, n, out.data() + r * n);
  }
  auto ai = detail::node_of(a);
  std::vector<std::size_t> idx(index.begin(), index.end());
  return detail::emit({&a}, Shape{idx.size(), n}, detail::make_values(std::move(out)),
                      [=](std::span<const double> g, GradBuffers& buf) {
                        auto ga = buf.at(*ai);
                        for (std::size_t r = 0; r < idx.size(); ++r)
                          for (std::size_t j = 0; j < n; ++j) ga[idx[r] * n + j] += g[r * n + j];
                      });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (Tensor::element_count(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  auto ai = detail::node_of(a);
  const std::size_t n = a.size();
  return detail::emit({&a}, std::move(shape), a.shared_values(),
                      [=](std::span<const double> g, GradBuffers& buf) {
                        auto ga = buf.at(*ai);
                        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                      });
}

}  // namespace wnp
