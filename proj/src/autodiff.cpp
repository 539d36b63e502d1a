#include "evg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace evg::ad {

namespace {

std::string dims(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(Errc::ShapeMismatch, std::string(op) + ": " + dims(a) + " vs " + dims(b));
  }
}

template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  const auto ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, deriv](Tape& t, std::uint32_t self) {
    const auto& x = t.value(Var{&t, ia});
    const auto& y = t.value(Var{&t, self});
    const auto& g = t.node_grad(self);
    if (double* ga = t.grad_buffer(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
    }
  });
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(Errc::ShapeMismatch, "data length " + std::to_string(data_.size()) + " for shape " +
                                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Tensor Tensor::uniform(std::size_t rows, std::size_t cols, double lo, double hi, std::mt19937_64& rng) {
  Tensor t(rows, cols);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

Tensor& Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  return *this;
}

void Tensor::zero_grad() { grad_.assign(data_.size(), 0.0); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------- Tape

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::param(Tensor& t) {
  Node n;
  n.ref = &t;
  n.bound = t.requires_grad() ? &t : nullptr;
  n.needs_grad = t.requires_grad();
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::input(const Tensor& t) {
  Node n;
  n.ref = &t;
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor t) {
  Node n;
  n.owned = std::move(t);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.ref ? *n.ref : n.owned;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  for (const Var& v : inputs) {
    if (v.tape != this) throw Error(Errc::Precondition, "operands recorded on different tapes");
    n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

double* Tape::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(value(Var{this, id}).size(), 0.0);
  return n.grad.data();
}

void Tape::backward(Var loss) {
  const Tensor& l = value(loss);
  if (l.size() != 1) throw Error(Errc::NonScalarLoss, "loss has shape " + dims(l));
  for (auto& n : nodes_) n.grad.clear();
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].grad.assign(1, 1.0);
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.grad.empty() && n.backward) n.backward(*this, id);
  }
  for (auto& n : nodes_) {
    if (!n.bound || n.grad.empty()) continue;
    auto& g = n.bound->grad();
    if (g.size() != n.grad.size()) g.assign(n.grad.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  }
}

// ---------------------------------------------------------------- linear algebra

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) throw Error(Errc::ShapeMismatch, "matmul: " + dims(A) + " by " + dims(B));
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) C(i, j) += av * B(p, j);
    }
  }
  const auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(C), {a, b}, [ia, ib, m, k, n](Tape& t, std::uint32_t self) {
    const auto& A = t.value(Var{&t, ia});
    const auto& B = t.value(Var{&t, ib});
    const auto& g = t.node_grad(self);
    if (double* ga = t.grad_buffer(ia)) {  // dA = G B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B(p, j);
          ga[i * k + p] += acc;
        }
    }
    if (double* gb = t.grad_buffer(ib)) {  // dB = A^T G
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A(i, p);
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
    }
  });
}

Var linear(Var x, Var w) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  if (X.cols() != W.cols()) throw Error(Errc::ShapeMismatch, "linear: input " + dims(X) + " vs weight " + dims(W));
  const std::size_t m = X.rows(), in = X.cols(), out = W.rows();
  Tensor Y(m, out);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = &X.data()[i * in];
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = &W.data()[o * in];
      double acc = 0.0;
      for (std::size_t p = 0; p < in; ++p) acc += xr[p] * wr[p];
      Y(i, o) = acc;
    }
  }
  const auto ix = x.id, iw = w.id;
  return x.tape->record(std::move(Y), {x, w}, [ix, iw, m, in, out](Tape& t, std::uint32_t self) {
    const auto& X = t.value(Var{&t, ix});
    const auto& W = t.value(Var{&t, iw});
    const auto& g = t.node_grad(self);
    double* gx = t.grad_buffer(ix);
    double* gw = t.grad_buffer(iw);
    for (std::size_t i = 0; i < m; ++i) {
      const double* xr = &X.data()[i * in];
      for (std::size_t o = 0; o < out; ++o) {
        const double go = g[i * out + o];
        if (go == 0.0) continue;
        const double* wr = &W.data()[o * in];
        if (gx)
          for (std::size_t p = 0; p < in; ++p) gx[i * in + p] += go * wr[p];
        if (gw)
          for (std::size_t p = 0; p < in; ++p) gw[o * in + p] += go * xr[p];
      }
    }
  });
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  const std::size_t r = A.rows(), c = A.cols();
  Tensor T(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) T(j, i) = A(i, j);
  const auto ia = a.id;
  return a.tape->record(std::move(T), {a}, [ia, r, c](Tape& t, std::uint32_t self) {
    const auto& g = t.node_grad(self);
    if (double* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  const auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const auto& g = t.node_grad(self);
    if (double* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (double* gb = t.grad_buffer(ib))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

Var add_row(Var a, Var row) {
  const Tensor& A = a.value();
  const Tensor& R = row.value();
  if (R.rows() != 1 || R.cols() != A.cols()) throw Error(Errc::ShapeMismatch, "add_row: " + dims(A) + " + " + dims(R));
  Tensor out = A;
  const std::size_t c = A.cols();
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) += R[j];
  const auto ia = a.id, ir = row.id;
  return a.tape->record(std::move(out), {a, row}, [ia, ir, c](Tape& t, std::uint32_t self) {
    const auto& g = t.node_grad(self);
    if (double* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (double* gr = t.grad_buffer(ir))
      for (std::size_t i = 0; i < g.size(); ++i) gr[i % c] += g[i];
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "hadamard");
  Tensor out = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  const auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const auto& A = t.value(Var{&t, ia});
    const auto& B = t.value(Var{&t, ib});
    const auto& g = t.node_grad(self);
    if (double* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    if (double* gb = t.grad_buffer(ib))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
  });
}

Var scale_rows(Var a, Var col) {
  const Tensor& A = a.value();
  const Tensor& S = col.value();
  if (S.cols() != 1 || S.rows() != A.rows()) throw Error(Errc::ShapeMismatch, "scale_rows: " + dims(A) + " by " + dims(S));
  Tensor out = A;
  const std::size_t c = A.cols();
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) *= S[i];
  const auto ia = a.id, is = col.id;
  return a.tape->record(std::move(out), {a, col}, [ia, is, c](Tape& t, std::uint32_t self) {
    const auto& A = t.value(Var{&t, ia});
    const auto& S = t.value(Var{&t, is});
    const auto& g = t.node_grad(self);
    double* ga = t.grad_buffer(ia);
    double* gs = t.grad_buffer(is);
    for (std::size_t i = 0; i < S.rows(); ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        if (ga) ga[i * c + j] += g[i * c + j] * S[i];
        acc += g[i * c + j] * A(i, j);
      }
      if (gs) gs[i] += acc;
    }
  });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var elu(Var a) {
  return unary(
      a, [](double x) { return x > 0 ? x : std::expm1(x); }, [](double x, double y) { return x > 0 ? 1.0 : y + 1.0; });
}

// ---------------------------------------------------------------- reductions

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const auto ia = a.id;
  return a.tape->record(Tensor(1, 1, s), {a}, [ia](Tape& t, std::uint32_t self) {
    const double g = t.node_grad(self)[0];
    const std::size_t n = t.value(Var{&t, ia}).size();
    if (double* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
  });
}

Var sum_rows(Var a) {
  const Tensor& A = a.value();
  const std::size_t c = A.cols();
  Tensor out(A.rows(), 1);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += A(i, j);
  const auto ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, c](Tape& t, std::uint32_t self) {
    const auto& g = t.node_grad(self);
    if (double* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i];
  });
}

Var gather_rows(Var a, const Index& rows) {
  const Tensor& A = a.value();
  const std::size_t c = A.cols();
  Tensor out(rows.size(), c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= A.rows()) throw Error(Errc::ShapeMismatch, "gather_rows: index " + std::to_string(rows[i]) + " of " + dims(A));
    std::copy_n(&A.data()[rows[i] * c], c, &out.data()[i * c]);
  }
  const auto ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, rows, c](Tape& t, std::uint32_t self) {
    const auto& g = t.node_grad(self);
    if (double* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) ga[rows[i] * c + j] += g[i * c + j];
  });
}

Var concat_cols(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rows() != B.rows()) throw Error(Errc::ShapeMismatch, "concat_cols: " + dims(A) + " with " + dims(B));
  const std::size_t ca = A.cols(), cb = B.cols(), c = ca + cb;
  Tensor out(A.rows(), c);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    for (std::size_t j = 0; j < ca; ++j) out(i, j) = A(i, j);
    for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = B(i, j);
  }
  const auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib, ca, cb, c](Tape& t, std::uint32_t self) {
    const auto& g = t.node_grad(self);
    const std::size_t rows = g.size() / c;
    double* ga = t.grad_buffer(ia);
    double* gb = t.grad_buffer(ib);
    for (std::size_t i = 0; i < rows; ++i) {
      if (ga)
        for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * c + j];
      if (gb)
        for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * c + ca + j];
    }
  });
}

Var segment_softmax(Var scores, const Index& segments) {
  const Tensor& S = scores.value();
  if (S.cols() != 1 || S.rows() != segments.size()) {
    throw Error(Errc::ShapeMismatch, "segment_softmax: scores " + dims(S) + " with " + std::to_string(segments.size()) + " ids");
  }
  if (!std::is_sorted(segments.begin(), segments.end())) throw Error(Errc::UnsortedSegments, "segment ids must be non-decreasing");
  const std::size_t n = segments.size();
  Tensor out(n, 1);
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo;
    double mx = -std::numeric_limits<double>::infinity();
    while (hi < n && segments[hi] == segments[lo]) mx = std::max(mx, S[hi++]);
    double total = 0.0;
    for (std::size_t i = lo; i < hi; ++i) total += (out[i] = std::exp(S[i] - mx));
    for (std::size_t i = lo; i < hi; ++i) out[i] /= total;
    lo = hi;
  }
  const auto is = scores.id;
  return scores.tape->record(std::move(out), {scores}, [is, segments](Tape& t, std::uint32_t self) {
    const auto& y = t.value(Var{&t, self});
    const auto& g = t.node_grad(self);
    double* gs = t.grad_buffer(is);
    if (!gs) return;
    const std::size_t n = segments.size();
    for (std::size_t lo = 0; lo < n;) {
      std::size_t hi = lo;
      double dot = 0.0;
      while (hi < n && segments[hi] == segments[lo]) {
        dot += y[hi] * g[hi];
        ++hi;
      }
      for (std::size_t i = lo; i < hi; ++i) gs[i] += y[i] * (g[i] - dot);
      lo = hi;
    }
  });
}

Var segment_sum(Var values, const Index& segments, std::size_t num_segments) {
  const Tensor& V = values.value();
  if (V.rows() != segments.size()) {
    throw Error(Errc::ShapeMismatch, "segment_sum: values " + dims(V) + " with " + std::to_string(segments.size()) + " ids");
  }
  const std::size_t c = V.cols();
  Tensor out(num_segments, c);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i] >= num_segments) throw Error(Errc::ShapeMismatch, "segment_sum: id out of range");
    for (std::size_t j = 0; j < c; ++j) out(segments[i], j) += V(i, j);
  }
  const auto iv = values.id;
  return values.tape->record(std::move(out), {values}, [iv, segments, c](Tape& t, std::uint32_t self) {
    const auto& g = t.node_grad(self);
    if (double* gv = t.grad_buffer(iv))
      for (std::size_t i = 0; i < segments.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) gv[i * c + j] += g[segments[i] * c + j];
  });
}

Var batch_norm(Var x, Var gamma, Var beta, double eps, BatchMoments* moments) {
  const Tensor& X = x.value();
  const std::size_t n = X.rows(), c = X.cols();
  if (gamma.value().rows() != 1 || gamma.value().cols() != c || beta.value().rows() != 1 || beta.value().cols() != c) {
    throw Error(Errc::ShapeMismatch, "batch_norm: scale/shift must be 1x" + std::to_string(c));
  }
  if (n < 2) throw Error(Errc::SingleRowTrainBatch, "batch statistics need at least two rows");
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) mean[j] += X(i, j);
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) var[j] += (X(i, j) - mean[j]) * (X(i, j) - mean[j]);
  for (auto& v : var) v /= static_cast<double>(n);

  std::vector<double> inv_std(c);
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  Tensor xhat(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) xhat(i, j) = (X(i, j) - mean[j]) * inv_std[j];
  const Tensor& G = gamma.value();
  const Tensor& B = beta.value();
  Tensor out(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = xhat(i, j) * G[j] + B[j];
  if (moments) *moments = {mean, var};

  const auto ix = x.id, ig = gamma.id, ib = beta.id;
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [ix, ig, ib, n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::uint32_t self) {
                          const auto& G = t.value(Var{&t, ig});
                          const auto& g = t.node_grad(self);
                          std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < c; ++j) {
                              sum_g[j] += g[i * c + j];
                              sum_gx[j] += g[i * c + j] * xhat(i, j);
                            }
                          if (double* gg = t.grad_buffer(ig))
                            for (std::size_t j = 0; j < c; ++j) gg[j] += sum_gx[j];
                          if (double* gb = t.grad_buffer(ib))
                            for (std::size_t j = 0; j < c; ++j) gb[j] += sum_g[j];
                          if (double* gx = t.grad_buffer(ix)) {
                            const double inv_n = 1.0 / static_cast<double>(n);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < c; ++j) {
                                gx[i * c + j] += G[j] * inv_std[j] * inv_n *
                                                 (static_cast<double>(n) * g[i * c + j] - sum_g[j] - xhat(i, j) * sum_gx[j]);
                              }
                          }
                        });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& L = logits.value();
  const std::size_t b = L.rows(), c = L.cols();
  if (labels.size() != b) throw Error(Errc::ShapeMismatch, "cross entropy: " + std::to_string(labels.size()) + " labels for " + dims(L));
  Tensor probs(b, c);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw Error(Errc::BadLabel, "label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, L(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += (probs(i, j) = std::exp(L(i, j) - mx));
    for (std::size_t j = 0; j < c; ++j) probs(i, j) /= total;
    loss += -(L(i, labels[i]) - mx - std::log(total));
  }
  loss /= static_cast<double>(b);
  std::vector<int> owned(labels.begin(), labels.end());
  const auto il = logits.id;
  return logits.tape->record(Tensor(1, 1, loss), {logits},
                             [il, b, c, probs = std::move(probs), owned = std::move(owned)](Tape& t, std::uint32_t self) {
                               const double g = t.node_grad(self)[0] / static_cast<double>(b);
                               if (double* gl = t.grad_buffer(il))
                                 for (std::size_t i = 0; i < b; ++i)
                                   for (std::size_t j = 0; j < c; ++j) {
                                     const double target = static_cast<int>(j) == owned[i] ? 1.0 : 0.0;
                                     gl[i * c + j] += g * (probs(i, j) - target);
                                   }
                             });
}

// ---------------------------------------------------------------- gradient check

double finite_diff_check(const std::function<Var(Tape&)>& program, std::span<Tensor* const> inputs, double eps) {
  std::vector<std::vector<double>> saved_grads;
  std::vector<bool> saved_flags;
  for (Tensor* in : inputs) {
    saved_grads.push_back(in->grad());
    saved_flags.push_back(in->requires_grad());
    in->set_requires_grad(true);
    in->zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Var out = program(tape);
    tape.backward(out);
    for (Tensor* in : inputs) {
      analytic.push_back(in->grad());
      if (analytic.back().empty()) analytic.back().assign(in->size(), 0.0);
    }
  }

  auto evaluate = [&] {
    Tape tape;
    const Tensor& v = program(tape).value();
    if (v.size() != 1) throw Error(Errc::NonScalarLoss, "finite_diff_check needs a scalar program");
    return v[0];
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& in = *inputs[k];
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double orig = in[i];
      in[i] = orig + eps;
      const double up = evaluate();
      in[i] = orig - eps;
      const double down = evaluate();
      in[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    inputs[k]->grad() = std::move(saved_grads[k]);
    inputs[k]->set_requires_grad(saved_flags[k]);
  }
  return worst;
}

}  // namespace evg::ad
