#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "slt/random.hpp"
#include "slt/tensor.hpp"

// Differentiable operations on row-major tensors. Matrices are rank 2; a
// rank-1 tensor of length n is treated as a single row where that matters.

namespace slt {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

// out[m,n] += op(a) * op(b), with op selected by the transpose flags and
// a, b given in their stored (untransposed) shapes.
template <typename T>
void gemm_acc(bool trans_a, bool trans_b, const T* a, std::size_t a_rows, std::size_t a_cols, const T* b,
              std::size_t b_rows, std::size_t b_cols, T* out, std::size_t m, std::size_t n) {
  ConstMap<T> A(a, static_cast<Eigen::Index>(a_rows), static_cast<Eigen::Index>(a_cols));
  ConstMap<T> B(b, static_cast<Eigen::Index>(b_rows), static_cast<Eigen::Index>(b_cols));
  MutMap<T> C(out, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (!trans_a && !trans_b) {
    C.noalias() += A * B;
  } else if (!trans_a && trans_b) {
    C.noalias() += A * B.transpose();
  } else if (trans_a && !trans_b) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() += A.transpose() * B.transpose();
  }
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <typename T>
void accumulate(Node<T>& parent, std::span<const T> delta) {
  if (!parent.requires_grad) return;
  auto& g = parent.ensure_grad();
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

// [m,k] x [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  detail::gemm_acc(false, false, a.data().data(), m, k, b.data().data(), k, n, out.data(), m, n);
  return make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      detail::gemm_acc(false, true, self.grad.data(), m, n, pb.value.data(), k, n, pa.ensure_grad().data(), m, k);
    }
    if (pb.requires_grad) {
      detail::gemm_acc(true, false, pa.value.data(), m, k, self.grad.data(), m, n, pb.ensure_grad().data(), k, n);
    }
  });
}

// [m,k] x [n,k]^T -> [m,n]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<T> out(m * n, T(0));
  detail::gemm_acc(false, true, a.data().data(), m, k, b.data().data(), n, k, out.data(), m, n);
  return make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      detail::gemm_acc(false, false, self.grad.data(), m, n, pb.value.data(), n, k, pa.ensure_grad().data(), m, k);
    }
    if (pb.requires_grad) {
      detail::gemm_acc(true, false, self.grad.data(), m, n, pa.value.data(), m, k, pb.ensure_grad().data(), n, k);
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    detail::accumulate<T>(*self.parents[0], self.grad);
    detail::accumulate<T>(*self.parents[1], self.grad);
  });
}

// Adds a length-n vector to every row of an [m,n] matrix.
template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias) {
  detail::require_matrix(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.size() != n) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " does not fit " + shape_str(a.shape()));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
  return make_result<T>(a.shape(), std::move(out), {a, bias}, [m, n](Node<T>& self) {
    detail::accumulate<T>(*self.parents[0], self.grad);
    auto& pb = *self.parents[1];
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_result<T>(a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
  return make_result<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.value[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  return make_result<T>(Shape{}, {total}, {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

namespace detail {

struct AxisLayout {
  std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisLayout axis_layout(const Shape& shape, int axis) {
  const int rank = static_cast<int>(shape.size());
  if (rank == 0) return {};
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("axis out of range for shape " + shape_str(shape));
  AxisLayout l;
  for (int i = 0; i < axis; ++i) l.outer *= shape[static_cast<std::size_t>(i)];
  l.len = shape[static_cast<std::size_t>(axis)];
  for (int i = axis + 1; i < rank; ++i) l.inner *= shape[static_cast<std::size_t>(i)];
  return l;
}

}  // namespace detail

// Max-subtracted softmax along `axis` (default: last).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1) {
  const auto l = detail::axis_layout(x.shape(), axis);
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      auto idx = [&](std::size_t k) { return (o * l.len + k) * l.inner + i; };
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < l.len; ++k) mx = std::max(mx, x[idx(k)]);
      T total = T(0);
      for (std::size_t k = 0; k < l.len; ++k) total += (out[idx(k)] = std::exp(x[idx(k)] - mx));
      for (std::size_t k = 0; k < l.len; ++k) out[idx(k)] /= total;
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [l](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t i = 0; i < l.inner; ++i) {
        auto idx = [&](std::size_t k) { return (o * l.len + k) * l.inner + i; };
        T dot = T(0);
        for (std::size_t k = 0; k < l.len; ++k) dot += self.grad[idx(k)] * self.value[idx(k)];
        for (std::size_t k = 0; k < l.len; ++k) g[idx(k)] += self.value[idx(k)] * (self.grad[idx(k)] - dot);
      }
    }
  });
}

// Boolean [rows, cols] matrix; true marks positions that may be attended to.
struct Mask {
  std::size_t rows = 0, cols = 0;
  std::vector<unsigned char> allowed;

  bool operator()(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }

  static Mask causal(std::size_t n) {
    Mask m{n, n, std::vector<unsigned char>(n * n, 0)};
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c <= r; ++c) m.allowed[r * n + c] = 1;
    return m;
  }

  static Mask all(std::size_t rows, std::size_t cols) { return {rows, cols, std::vector<unsigned char>(rows * cols, 1)}; }
};

// Row-wise softmax where masked entries get exactly zero weight. A row with
// nothing left to attend to is a contract violation.
template <typename T>
Tensor<T> masked_softmax_rows(const Tensor<T>& x, const Mask& mask) {
  detail::require_matrix(x, "masked_softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (mask.rows != m || mask.cols != n) {
    throw DimensionError("mask [" + std::to_string(mask.rows) + "," + std::to_string(mask.cols) +
                         "] does not match scores " + shape_str(x.shape()));
  }
  std::vector<T> out(m * n, T(0));
  for (std::size_t r = 0; r < m; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < n; ++c) {
      if (!mask(r, c)) continue;
      any = true;
      if (!std::isfinite(x[r * n + c])) throw NumericError("non-finite attention score in row " + std::to_string(r));
      mx = std::max(mx, x[r * n + c]);
    }
    if (!any) throw ContractError("attention row " + std::to_string(r) + " has no unmasked position");
    T total = T(0);
    for (std::size_t c = 0; c < n; ++c)
      if (mask(r, c)) total += (out[r * n + c] = std::exp(x[r * n + c] - mx));
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= total;
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [m, n](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < m; ++r) {
      T dot = T(0);
      for (std::size_t c = 0; c < n; ++c) dot += self.grad[r * n + c] * self.value[r * n + c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.value[r * n + c] * (self.grad[r * n + c] - dot);
    }
  });
}

// Normalizes each row over the last axis, then applies gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-6)) {
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  const std::size_t n = x.rank() == 0 ? 1 : x.shape().back();
  const std::size_t m = x.size() / n;
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layer_norm: gain/bias length must be " + std::to_string(n));
  }
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = x.data().data() + r * n;
    T mean = T(0);
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= T(n);
    T var = T(0);
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= T(n);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (row[c] - mean) * inv_std[r];
      out[r * n + c] = gain[c] * xhat[r * n + c] + bias[c];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gain, bias},
                        [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pg = *self.parents[1];
                          auto& pb = *self.parents[2];
                          for (std::size_t r = 0; r < m; ++r) {
                            const T* dy = self.grad.data() + r * n;
                            const T* xh = xhat.data() + r * n;
                            if (pg.requires_grad) {
                              auto& gg = pg.ensure_grad();
                              for (std::size_t c = 0; c < n; ++c) gg[c] += dy[c] * xh[c];
                            }
                            if (pb.requires_grad) {
                              auto& gb = pb.ensure_grad();
                              for (std::size_t c = 0; c < n; ++c) gb[c] += dy[c];
                            }
                            if (px.requires_grad) {
                              auto& gx = px.ensure_grad();
                              T mean_d = T(0), mean_dx = T(0);
                              for (std::size_t c = 0; c < n; ++c) {
                                const T d = dy[c] * pg.value[c];
                                mean_d += d;
                                mean_dx += d * xh[c];
                              }
                              mean_d /= T(n);
                              mean_dx /= T(n);
                              for (std::size_t c = 0; c < n; ++c) {
                                const T d = dy[c] * pg.value[c];
                                gx[r * n + c] += inv_std[r] * (d - mean_d - xh[c] * mean_dx);
                              }
                            }
                          }
                        });
}

// Inverted dropout: survivors are scaled by 1/(1-rate) so expectations match.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, CounterRng* rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  if (rng == nullptr) throw ContractError("dropout in training mode needs a random source");
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::vector<T> factor(x.size());
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    factor[i] = rng->uniform() < rate ? T(0) : keep_scale;
    out[i] = x[i] * factor[i];
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [factor = std::move(factor)](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor[i];
  });
}

// Gathers rows of a [V,d] table.
template <typename T, typename Id>
Tensor<T> embedding(const Tensor<T>& table, std::span<const Id> ids) {
  detail::require_matrix(table, "embedding");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<T> out(ids.size() * d);
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw IndexError("embedding id " + std::to_string(ids[i]) + " out of range [0," + std::to_string(v) + ")");
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
    std::copy_n(table.data().data() + rows[i] * d, d, out.data() + i * d);
  }
  return make_result<T>({ids.size(), d}, std::move(out), {table}, [d, rows = std::move(rows)](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) g[rows[i] * d + c] += self.grad[i * d + c];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t len) {
  detail::require_matrix(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (start + len > n) throw DimensionError("slice_cols: range exceeds " + shape_str(a.shape()));
  std::vector<T> out(m * len);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(a.data().data() + r * n + start, len, out.data() + r * len);
  return make_result<T>({m, len}, std::move(out), {a}, [m, n, start, len](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < len; ++c) g[r * n + start + c] += self.grad[r * len + c];
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t start, std::size_t len) {
  detail::require_matrix(a, "slice_rows");
  const std::size_t n = a.cols();
  if (start + len > a.rows()) throw DimensionError("slice_rows: range exceeds " + shape_str(a.shape()));
  std::vector<T> out(a.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                     a.data().begin() + static_cast<std::ptrdiff_t>((start + len) * n));
  return make_result<T>({len, n}, std::move(out), {a}, [start, n](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * n + i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    n += p.cols();
  }
  std::vector<T> out(m * n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < m; ++r) std::copy_n(p.data().data() + r * w, w, out.data() + r * n + offset);
    offset += w;
  }
  return make_result<T>({m, n}, std::move(out), parts, [m, n, widths = std::move(widths)](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& p = *self.parents[k];
      const std::size_t w = widths[k];
      if (p.requires_grad) {
        auto& g = p.ensure_grad();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < w; ++c) g[r * w + c] += self.grad[r * n + off + c];
      }
      off += w;
    }
  });
}

// Cross-entropy against a smoothed target: 1-eps on the gold id and
// eps/(V-1) on every other id. Positions whose target is pad_id contribute
// nothing. The summed loss is divided by `denominator`, or by the number of
// non-pad positions when denominator is 0.
template <typename T, typename Id>
Tensor<T> cross_entropy_label_smoothed(const Tensor<T>& logits, std::span<const Id> targets, double epsilon, Id pad_id,
                                       double denominator = 0.0) {
  detail::require_matrix(logits, "cross_entropy");
  const std::size_t rows = logits.rows(), v = logits.cols();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) +
                         " positions");
  }
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ContractError("label smoothing must be in [0,1)");
  if (v < 2 && epsilon > 0.0) throw ContractError("label smoothing needs at least two classes");
  std::size_t active = 0;
  for (auto t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw IndexError("target id " + std::to_string(t) + " out of range [0," + std::to_string(v) + ")");
    }
    if (t != pad_id) ++active;
  }
  const double denom = denominator > 0.0 ? denominator : static_cast<double>(std::max<std::size_t>(active, 1));
  const T on = T(1.0 - epsilon);
  const T off = v > 1 ? T(epsilon / static_cast<double>(v - 1)) : T(0);
  std::vector<T> probs(rows * v, T(0));
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == pad_id) continue;
    const T* row = logits.data().data() + r * v;
    T mx = *std::max_element(row, row + v);
    T z = T(0);
    for (std::size_t c = 0; c < v; ++c) z += (probs[r * v + c] = std::exp(row[c] - mx));
    const T log_z = std::log(z) + mx;
    const auto gold = static_cast<std::size_t>(targets[r]);
    for (std::size_t c = 0; c < v; ++c) {
      probs[r * v + c] /= z;
      const T q = c == gold ? on : off;
      if (q != T(0)) total -= static_cast<double>(q * (row[c] - log_z));
    }
  }
  std::vector<Id> tgt(targets.begin(), targets.end());
  return make_result<T>(Shape{}, {T(total / denom)}, {logits},
                        [rows, v, on, off, pad_id, denom, tgt = std::move(tgt), probs = std::move(probs)](Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          const T scale = self.grad[0] / T(denom);
                          for (std::size_t r = 0; r < rows; ++r) {
                            if (tgt[r] == pad_id) continue;
                            const auto gold = static_cast<std::size_t>(tgt[r]);
                            for (std::size_t c = 0; c < v; ++c) {
                              const T q = c == gold ? on : off;
                              g[r * v + c] += scale * (probs[r * v + c] - q);
                            }
                          }
                        });
}

}  // namespace slt
