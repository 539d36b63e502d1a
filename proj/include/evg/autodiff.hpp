#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "evg/errors.hpp"

namespace evg::ad {

/// Dense row-major matrix of doubles with an optional gradient buffer.
/// Vectors are 1 x n (row) or n x 1 (column) matrices.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  /// Uniform in [lo, hi).
  static Tensor uniform(std::size_t rows, std::size_t cols, double lo, double hi, std::mt19937_64& rng);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool on = true);

  /// Empty until a backward pass reaches this tensor (or zero_grad).
  std::vector<double>& grad() { return grad_; }
  const std::vector<double>& grad() const { return grad_; }
  void zero_grad();

  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Records executed operations in order so that backward() can replay them
/// in reverse. A tape and the tensors bound to it belong to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf bound to `t`; when t.requires_grad() the gradient is accumulated
  /// into t.grad() by backward(). `t` must outlive the tape.
  Var param(Tensor& t);
  /// Read-only leaf referring to `t` without copying; never differentiated.
  Var input(const Tensor& t);
  /// Leaf owning a copy; never differentiated.
  Var constant(Tensor t);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() with respect to v; empty if v did not
  /// receive one.
  const std::vector<double>& grad(Var v) const { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Seeds d loss / d loss = 1 and propagates. Gradients are added to bound
  /// parameters, so repeated calls accumulate.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Operation plumbing.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  /// Lazily zero-initialized gradient accumulator of an input node, or
  /// nullptr when that node does not need a gradient.
  double* grad_buffer(std::uint32_t id);
  const std::vector<double>& node_grad(std::uint32_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor* bound = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

using Index = std::vector<std::uint32_t>;

// Linear algebra.
Var matmul(Var a, Var b);
/// x * w^T for w stored (out x in), the layout of every weight matrix.
Var linear(Var x, Var w);
Var transpose(Var a);

// Elementwise.
Var add(Var a, Var b);
/// Adds a 1 x cols row vector to every row.
Var add_row(Var a, Var row);
Var hadamard(Var a, Var b);
/// Multiplies row r of `a` by col(r, 0); `col` is rows x 1.
Var scale_rows(Var a, Var col);
Var scale(Var a, double factor);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var relu(Var a);
Var elu(Var a);

// Reductions and indexing.
/// Sum of all elements, 1 x 1.
Var sum(Var a);
/// Per-row sums, rows x 1.
Var sum_rows(Var a);
Var gather_rows(Var a, const Index& rows);
Var concat_cols(Var a, Var b);
/// Softmax of a column of scores within runs of equal (sorted) segment ids.
Var segment_softmax(Var scores, const Index& segments);
/// Row sums per segment into a (num_segments x cols) result; empty segments
/// give zero rows. Segment ids need not be sorted.
Var segment_sum(Var values, const Index& segments, std::size_t num_segments);

struct BatchMoments {
  std::vector<double> mean;
  std::vector<double> var;  // biased
};

/// Per-column normalization with learnable scale and shift (1 x cols
/// each), using the statistics of this batch.
Var batch_norm(Var x, Var gamma, Var beta, double eps, BatchMoments* moments = nullptr);

/// Mean over rows of -log softmax(logits)[label]; 1 x 1.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

/// Central-difference check of a scalar program against backward(). Returns
/// the largest |analytic - numeric| / max(1, |numeric|) over every
/// coordinate of every input. Inputs are restored afterwards, including any
/// gradient they held.
double finite_diff_check(const std::function<Var(Tape&)>& program, std::span<Tensor* const> inputs, double eps);

}  // namespace evg::ad
