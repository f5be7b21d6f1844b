#pragma once

// Minimal define-by-run reverse-mode differentiation over Tensor values.
// Each op records a closure that pushes its output gradient into its inputs;
// `backward` replays those closures in reverse topological order.

#include <functional>
#include <memory>
#include <vector>

#include "segdiff/tensor.hpp"

namespace segdiff::ag {

class Node;
using Var = std::shared_ptr<Node>;

class Node {
 public:
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void()> backward_fn;

  /// Gradient buffer, allocated as zeros on first use.
  Tensor& grad_buffer();
  void zero_grad();
};

Var constant(Tensor t);
Var parameter(Tensor t);

/// Seed d(root)/d(root) = 1 (root must hold one element) and propagate.
void backward(const Var& root);

// Shape-generic elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var tanh(const Var& a);
Var gelu(const Var& a);
Var reshape(const Var& a, Shape shape);

// Reductions to a single element
Var sum(const Var& a);
Var dot(const Var& a, const Var& b);
/// Sum of squared differences against a constant target.
Var squared_error(const Var& a, const Tensor& target);
Var logsumexp(const Var& a);
Var pick(const Var& a, std::size_t index);
/// Gather single-element vars into a rank-1 vector.
Var stack(const std::vector<Var>& scalars);

// Matrices [rows, cols]
Var matmul(const Var& a, const Var& b);
/// x[S, in] * w[in, out] + b[out]
Var linear(const Var& x, const Var& w, const Var& b);
/// x[S, D] + r[D] broadcast over rows.
Var add_row(const Var& x, const Var& r);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var attention(const Var& q, const Var& k, const Var& v, int heads);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& a, std::size_t start, std::size_t count);
/// Columns [col0, col0+cols) of every row.
Var slice_cols(const Var& a, std::size_t col0, std::size_t cols);

// Convolutions
/// x[N] -> [F, T]; w[F, K]; b[F]; T = (N - K) / stride + 1.
Var conv1d(const Var& x, const Var& w, const Var& b, int stride);
/// z[F, T] -> [(T-1)*stride + K]; w[F, K]; b[1].
Var conv_transpose1d(const Var& z, const Var& w, const Var& b, int stride);
/// x[C, H, W] -> [O, H', W']; w[O, C, k, k]; b[O].
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
/// x[C, H, W] -> [C]; subgradient routed to the first argmax.
Var global_max_pool(const Var& x);

}  // namespace segdiff::ag
