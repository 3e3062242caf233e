#pragma once

// Reverse-mode differentiation over an explicit tape.
//
// Every primitive takes the Tape first. When the tape is recording and at
// least one input needs a gradient, the primitive appends a node holding its
// inputs, output and a closure that pushes the output gradient back into the
// inputs. Nodes are appended after their inputs exist, so the tape is in
// topological order by construction and backward() is a single reverse sweep.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace bangacmm {

class Tape {
 public:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  explicit Tape(bool recording = true, std::uint64_t rng_seed = 0)
      : recording_(recording), rng_seed_(rng_seed), rng_(rng_seed) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::uint64_t rng_seed() const { return rng_seed_; }
  std::mt19937_64& rng() { return rng_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t backward_visits() const { return visits_; }

  template <class Backward>
  void record(std::vector<Tensor> inputs, Tensor& output, Backward&& fn) {
    if (!recording_) return;
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.needs_grad(); });
    if (!any) return;
    output.mark_needs_grad();
    nodes_.push_back(Node{std::move(inputs), output, std::forward<Backward>(fn)});
  }

  friend void backward(const Tensor& loss, Tape& tape);

 private:
  bool recording_;
  std::uint64_t rng_seed_;
  std::mt19937_64 rng_;
  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
  bool consumed_ = false;
};

// Accumulates dLoss/dx into every tensor on the tape that needs a gradient.
// Parameter gradients accumulate across calls; clear them with zero_grad().
inline void backward(const Tensor& loss, Tape& tape) {
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (tape.consumed_) throw ContractError("tape has already been differentiated");
  tape.consumed_ = true;
  if (!loss.needs_grad()) return;
  Tensor seed = loss;
  seed.grad()[0] += 1.0;
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    ++tape.visits_;
    if (it->output.has_grad()) it->backward();
  }
}

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
  }
}

inline std::size_t rows_of(const Tensor& t) { return t.numel() / t.last_dim(); }

enum class Broadcast { same, scalar, row };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.numel() == 1) return Broadcast::scalar;
  if (b.rank() == 1 && b.dim(0) == a.last_dim()) return Broadcast::row;
  throw DimensionError(std::string(op) + ": cannot combine " + shape_str(a.shape()) + " with " +
                       shape_str(b.shape()));
}

inline constexpr double kInvSqrt2 = std::numbers::sqrt2 / 2.0;

inline double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi * kInvSqrt2);
  return cdf + x * pdf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

// a + b, where b has a's shape, is a single value, or is a row vector
// broadcast over a's last dimension.
inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  const auto kind = detail::broadcast_kind(a, b, "add");
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  const std::size_t n = a.numel();
  const std::size_t d = a.last_dim();
  for (std::size_t i = 0; i < n; ++i) {
    o[i] = x[i] + (kind == detail::Broadcast::same ? y[i]
                   : kind == detail::Broadcast::scalar ? y[0]
                                                       : y[i % d]);
  }
  tape.record({a, b}, out, [a, b, out, kind, n, d]() mutable {
    auto g = std::as_const(out).grad();
    if (a.needs_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (b.needs_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < n; ++i) {
        gb[kind == detail::Broadcast::same ? i : kind == detail::Broadcast::scalar ? 0 : i % d] += g[i];
      }
    }
  });
  return out;
}

// Elementwise product with the same broadcasting rules as add().
inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  const auto kind = detail::broadcast_kind(a, b, "mul");
  const std::size_t n = a.numel();
  const std::size_t d = a.last_dim();
  auto bidx = [kind, d](std::size_t i) {
    return kind == detail::Broadcast::same ? i : kind == detail::Broadcast::scalar ? 0 : i % d;
  };
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < n; ++i) o[i] = x[i] * y[bidx(i)];
  tape.record({a, b}, out, [a, b, out, n, bidx]() mutable {
    auto g = std::as_const(out).grad();
    auto x = a.data();
    auto y = b.data();
    if (a.needs_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[bidx(i)];
    }
    if (b.needs_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < n; ++i) gb[bidx(i)] += g[i] * x[i];
    }
  });
  return out;
}

inline Tensor scale(Tape& tape, const Tensor& a, double s) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = x[i] * s;
  tape.record({a}, out, [a, out, s]() mutable {
    auto g = std::as_const(out).grad();
    auto ga = a.grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * s;
  });
  return out;
}

inline Tensor gelu(Tape& tape, const Tensor& a) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = detail::gelu_value(x[i]);
  tape.record({a}, out, [a, out]() mutable {
    auto g = std::as_const(out).grad();
    auto x = a.data();
    auto ga = a.grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * detail::gelu_derivative(x[i]);
  });
  return out;
}

enum class Activation { gelu, identity };

inline Tensor activate(Tape& tape, const Tensor& a, Activation f) {
  return f == Activation::gelu ? gelu(tape, a) : a;
}

inline Tensor sum(Tape& tape, const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  tape.record({a}, out, [a, out]() mutable {
    const double g = std::as_const(out).grad()[0];
    for (double& ga : a.grad()) ga += g;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

// a[m x k] * b[k x n]
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  Tensor out({m, n});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      for (std::size_t j = 0; j < n; ++j) o[i * n + j] += xv * y[p * n + j];
    }
  }
  tape.record({a, b}, out, [a, b, out, m, k, n]() mutable {
    auto g = std::as_const(out).grad();
    auto x = a.data();
    auto y = b.data();
    if (a.needs_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * y[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (b.needs_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = x[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += xv * g[i * n + j];
        }
    }
  });
  return out;
}

// x W^T + bias for x of shape [in] or [rows x in], W of shape [out x in].
// bias may be an undefined Tensor.
inline Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias = {}) {
  detail::require_rank(w, 2, "linear");
  const std::size_t out_dim = w.dim(0), in_dim = w.dim(1);
  if (x.last_dim() != in_dim || x.rank() > 2) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  }
  const std::size_t rows = detail::rows_of(x);
  Tensor out(x.rank() == 1 ? Shape{out_dim} : Shape{rows, out_dim});
  auto o = out.data();
  auto xv = x.data();
  auto wv = w.data();
  if (rows == 1) {
    for (std::size_t j = 0; j < out_dim; ++j) {
      double s = bias.defined() ? bias[j] : 0.0;
      for (std::size_t p = 0; p < in_dim; ++p) s += xv[p] * wv[j * in_dim + p];
      o[j] = s;
    }
  } else {
    // Row-times-transpose as axpy updates so the inner loop is contiguous.
    std::vector<double> wt(in_dim * out_dim);
    for (std::size_t j = 0; j < out_dim; ++j)
      for (std::size_t p = 0; p < in_dim; ++p) wt[p * out_dim + j] = wv[j * in_dim + p];
    for (std::size_t r = 0; r < rows; ++r) {
      double* orow = &o[r * out_dim];
      if (bias.defined()) std::copy(bias.data().begin(), bias.data().end(), orow);
      for (std::size_t p = 0; p < in_dim; ++p) {
        const double xp = xv[r * in_dim + p];
        const double* wrow = &wt[p * out_dim];
        for (std::size_t j = 0; j < out_dim; ++j) orow[j] += xp * wrow[j];
      }
    }
  }
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  tape.record(std::move(inputs), out, [x, w, bias, out, rows, in_dim, out_dim]() mutable {
    auto g = std::as_const(out).grad();
    auto xv = x.data();
    auto wv = w.data();
    if (x.needs_grad()) {
      auto gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_dim; ++j) {
          const double gj = g[r * out_dim + j];
          if (gj == 0.0) continue;
          for (std::size_t p = 0; p < in_dim; ++p) gx[r * in_dim + p] += gj * wv[j * in_dim + p];
        }
    }
    if (w.needs_grad()) {
      auto gw = w.grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_dim; ++j) {
          const double gj = g[r * out_dim + j];
          if (gj == 0.0) continue;
          for (std::size_t p = 0; p < in_dim; ++p) gw[j * in_dim + p] += gj * xv[r * in_dim + p];
        }
    }
    if (bias.defined() && bias.needs_grad()) {
      auto gb = bias.grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and probability

// Softmax over the last dimension, max-subtracted.
inline Tensor softmax(Tape& tape, const Tensor& x) {
  const std::size_t c = x.last_dim();
  const std::size_t rows = detail::rows_of(x);
  Tensor out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &xv[r * c];
    double* y = &o[r * c];
    const double mx = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (y[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < c; ++j) y[j] /= z;
  }
  tape.record({x}, out, [x, out, rows, c]() mutable {
    auto g = std::as_const(out).grad();
    auto y = std::as_const(out).data();
    auto gx = x.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
    }
  });
  return out;
}

inline Tensor layernorm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                        double eps = 1e-5) {
  const std::size_t d = x.last_dim();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layernorm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  }
  if (!(eps > 0.0)) throw ParameterError("layernorm: eps must be positive");
  const std::size_t rows = detail::rows_of(x);
  Tensor out(x.shape());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xv[r * d + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv[r * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xv[r * d + j] - mean) * rstd[r];
      o[r * d + j] = xhat[r * d + j] * gain[j] + bias[j];
    }
  }
  tape.record({x, gain, bias}, out,
              [x, gain, bias, out, xhat = std::move(xhat), rstd = std::move(rstd), rows, d]() mutable {
                auto g = std::as_const(out).grad();
                if (gain.needs_grad()) {
                  auto gg = gain.grad();
                  for (std::size_t i = 0; i < rows * d; ++i) gg[i % d] += g[i] * xhat[i];
                }
                if (bias.needs_grad()) {
                  auto gb = bias.grad();
                  for (std::size_t i = 0; i < rows * d; ++i) gb[i % d] += g[i];
                }
                if (x.needs_grad()) {
                  auto gx = x.grad();
                  const double inv_d = 1.0 / static_cast<double>(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double mean_g = 0.0, mean_gx = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double gh = g[r * d + j] * gain[j];
                      mean_g += gh;
                      mean_gx += gh * xhat[r * d + j];
                    }
                    mean_g *= inv_d;
                    mean_gx *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double gh = g[r * d + j] * gain[j];
                      gx[r * d + j] += rstd[r] * (gh - mean_g - xhat[r * d + j] * mean_gx);
                    }
                  }
                }
              });
  return out;
}

// Inverted dropout: survivors are scaled by 1/(1-p) so inference is identity.
inline Tensor dropout(Tape& tape, const Tensor& x, double p, bool training, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ParameterError("dropout probability must be in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = u(rng) < p ? 0.0 : keep_scale;
  Tensor out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < mask.size(); ++i) o[i] = xv[i] * mask[i];
  tape.record({x}, out, [x, out, mask = std::move(mask)]() mutable {
    auto g = std::as_const(out).grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += g[i] * mask[i];
  });
  return out;
}

inline Tensor dropout(Tape& tape, const Tensor& x, double p, bool training) {
  return dropout(tape, x, p, training, tape.rng());
}

// ---------------------------------------------------------------------------
// Shape manipulation and pooling

// Concatenation along the last dimension; leading dimensions must agree.
inline Tensor concat(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || detail::rows_of(a) != detail::rows_of(b)) {
    throw DimensionError("concat: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t da = a.last_dim(), db = b.last_dim(), rows = detail::rows_of(a);
  Shape shape = a.shape();
  shape.back() = da + db;
  Tensor out(shape);
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().begin() + r * da, da, o.begin() + r * (da + db));
    std::copy_n(b.data().begin() + r * db, db, o.begin() + r * (da + db) + da);
  }
  tape.record({a, b}, out, [a, b, out, da, db, rows]() mutable {
    auto g = std::as_const(out).grad();
    if (a.needs_grad()) {
      auto ga = a.grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < da; ++j) ga[r * da + j] += g[r * (da + db) + j];
    }
    if (b.needs_grad()) {
      auto gb = b.grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < db; ++j) gb[r * db + j] += g[r * (da + db) + da + j];
    }
  });
  return out;
}

// Weighted mean over the rows of x[n x d]. An empty weight vector means all
// rows count equally; a zero weight removes the row from the mean entirely.
inline Tensor mean_rows(Tape& tape, const Tensor& x, std::span<const double> weights = {}) {
  detail::require_rank(x, 2, "mean_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> w(weights.begin(), weights.end());
  if (w.empty()) w.assign(n, 1.0);
  if (w.size() != n) throw DimensionError("mean_rows: weight count does not match rows");
  double total = 0.0;
  for (double v : w) total += v;
  if (!(total > 0.0)) throw ContractError("mean_rows: no rows selected");
  for (double& v : w) v /= total;
  Tensor out({d});
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (w[i] == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) o[j] += w[i] * xv[i * d + j];
  }
  tape.record({x}, out, [x, out, w = std::move(w), n, d]() mutable {
    auto g = std::as_const(out).grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < n; ++i) {
      if (w[i] == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += w[i] * g[j];
    }
  });
  return out;
}

inline Tensor select_row(Tape& tape, const Tensor& x, std::size_t row) {
  detail::require_rank(x, 2, "select_row");
  if (row >= x.dim(0)) throw DimensionError("select_row: row out of range");
  const std::size_t d = x.dim(1);
  Tensor out({d});
  std::copy_n(x.data().begin() + row * d, d, out.data().begin());
  tape.record({x}, out, [x, out, row, d]() mutable {
    auto g = std::as_const(out).grad();
    auto gx = x.grad();
    for (std::size_t j = 0; j < d; ++j) gx[row * d + j] += g[j];
  });
  return out;
}

// Stacks row blocks vertically. Each block is a vector [d] (one row) or a
// matrix [n x d]; all share d.
inline Tensor stack_rows(Tape& tape, const std::vector<Tensor>& blocks) {
  if (blocks.empty()) throw ContractError("stack_rows: no rows");
  const std::size_t d = blocks.front().last_dim();
  std::size_t total = 0;
  for (const auto& b : blocks) {
    if (b.last_dim() != d || b.rank() > 2) {
      throw DimensionError("stack_rows: block " + shape_str(b.shape()) + " does not have width " +
                           std::to_string(d));
    }
    total += b.numel();
  }
  Tensor out({total / d, d});
  std::size_t offset = 0;
  for (const auto& b : blocks) {
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + offset);
    offset += b.numel();
  }
  tape.record(blocks, out, [blocks, out]() mutable {
    auto g = std::as_const(out).grad();
    std::size_t offset = 0;
    for (auto& b : blocks) {
      if (b.needs_grad()) {
        auto gb = b.grad();
        for (std::size_t j = 0; j < gb.size(); ++j) gb[j] += g[offset + j];
      }
      offset += b.numel();
    }
  });
  return out;
}

// Rows of table[V x d] gathered by id.
inline Tensor embedding(Tape& tape, const Tensor& table, std::span<const int> ids) {
  detail::require_rank(table, 2, "embedding");
  if (ids.empty()) throw ContractError("embedding: empty id sequence");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<int> idv(ids.begin(), ids.end());
  Tensor out({idv.size(), d});
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= vocab) {
      throw ContractError("embedding: id " + std::to_string(idv[i]) + " outside table of size " +
                          std::to_string(vocab));
    }
    std::copy_n(table.data().begin() + idv[i] * d, d, out.data().begin() + i * d);
  }
  tape.record({table}, out, [table, out, idv = std::move(idv), d]() mutable {
    auto g = std::as_const(out).grad();
    auto gt = table.grad();
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[idv[i] * d + j] += g[i * d + j];
  });
  return out;
}

// Multi-head scaled dot-product attention over q, k, v of shape [L x d].
// Keys whose mask entry is false receive zero attention weight. An empty
// mask keeps every key.
inline Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t n_heads, const std::vector<bool>& key_mask = {}) {
  detail::require_rank(q, 2, "attention");
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("attention: q/k/v shapes differ");
  }
  const std::size_t len = q.dim(0), d = q.dim(1);
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(n_heads) + " heads");
  }
  if (!key_mask.empty() && key_mask.size() != len) throw DimensionError("attention: mask length");
  const std::size_t dh = d / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto keep = [&key_mask](std::size_t j) { return key_mask.empty() || key_mask[j]; };
  std::vector<double> probs(n_heads * len * len, 0.0);
  Tensor out({len, d});
  auto qv = q.data();
  auto kv = k.data();
  auto vv = v.data();
  auto o = out.data();
  std::vector<double> row(len);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < len; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) {
        if (!keep(j)) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qv[i * d + off + c] * kv[j * d + off + c];
        row[j] = s * inv_scale;
        mx = std::max(mx, row[j]);
      }
      double z = 0.0;
      double* p = &probs[(h * len + i) * len];
      for (std::size_t j = 0; j < len; ++j) {
        if (!keep(j)) continue;
        z += (p[j] = std::exp(row[j] - mx));
      }
      for (std::size_t j = 0; j < len; ++j) {
        if (!keep(j)) continue;
        p[j] /= z;
        for (std::size_t c = 0; c < dh; ++c) o[i * d + off + c] += p[j] * vv[j * d + off + c];
      }
    }
  }
  tape.record({q, k, v}, out,
              [q, k, v, out, probs = std::move(probs), n_heads, len, d, dh, inv_scale]() mutable {
                auto g = std::as_const(out).grad();
                auto qv = q.data();
                auto kv = k.data();
                auto vv = v.data();
                std::span<double> gq, gk, gv;
                if (q.needs_grad()) gq = q.grad();
                if (k.needs_grad()) gk = k.grad();
                if (v.needs_grad()) gv = v.grad();
                std::vector<double> dp(len);
                for (std::size_t h = 0; h < n_heads; ++h) {
                  const std::size_t off = h * dh;
                  for (std::size_t i = 0; i < len; ++i) {
                    const double* p = &probs[(h * len + i) * len];
                    double dot = 0.0;
                    for (std::size_t j = 0; j < len; ++j) {
                      if (p[j] == 0.0) {
                        dp[j] = 0.0;
                        continue;
                      }
                      double s = 0.0;
                      for (std::size_t c = 0; c < dh; ++c) s += g[i * d + off + c] * vv[j * d + off + c];
                      dp[j] = s;
                      dot += s * p[j];
                      if (!gv.empty())
                        for (std::size_t c = 0; c < dh; ++c) gv[j * d + off + c] += p[j] * g[i * d + off + c];
                    }
                    for (std::size_t j = 0; j < len; ++j) {
                      if (p[j] == 0.0) continue;
                      const double ds = p[j] * (dp[j] - dot) * inv_scale;
                      if (!gq.empty())
                        for (std::size_t c = 0; c < dh; ++c) gq[i * d + off + c] += ds * kv[j * d + off + c];
                      if (!gk.empty())
                        for (std::size_t c = 0; c < dh; ++c) gk[j * d + off + c] += ds * qv[i * d + off + c];
                    }
                  }
                }
              });
  return out;
}

// ---------------------------------------------------------------------------
// Loss

// Mean negative log-likelihood of the labels under softmax(logits), computed
// with log-sum-exp. logits has shape [B x C].
inline Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  if (labels.empty()) throw ContractError("cross_entropy: empty batch");
  detail::require_rank(logits, 2, "cross_entropy");
  const std::size_t batch = logits.dim(0), c = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(batch) + " rows");
  }
  std::vector<double> probs(batch * c);
  std::vector<int> y(labels.begin(), labels.end());
  double loss = 0.0;
  auto z = logits.data();
  for (std::size_t b = 0; b < batch; ++b) {
    if (y[b] < 0 || static_cast<std::size_t>(y[b]) >= c) {
      throw ContractError("cross_entropy: label " + std::to_string(y[b]) + " out of range");
    }
    const double* zr = &z[b * c];
    const double mx = *std::max_element(zr, zr + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (probs[b * c + j] = std::exp(zr[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[b * c + j] /= s;
    loss += (mx + std::log(s)) - zr[y[b]];
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(batch));
  tape.record({logits}, out, [logits, out, probs = std::move(probs), y = std::move(y), batch, c]() mutable {
    const double g = std::as_const(out).grad()[0] / static_cast<double>(batch);
    auto gz = logits.grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < c; ++j)
        gz[b * c + j] += g * (probs[b * c + j] - (static_cast<int>(j) == y[b] ? 1.0 : 0.0));
  });
  return out;
}

}  // namespace bangacmm
