#include "segdiff/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "segdiff/kernels.hpp"

namespace segdiff::ag {

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Tensor(value.shape());
  return grad;
}

void Node::zero_grad() {
  if (!grad.empty()) grad.fill(0.0);
}

Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return n;
}

Var parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return n;
}

namespace {

// Output node; the backward closure is attached only when some input needs a gradient.
Var make(Tensor value, std::vector<Var> parents) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p->requires_grad; });
  if (n->requires_grad) n->parents = std::move(parents);
  return n;
}

void check(bool ok, const std::string& what) {
  if (!ok) throw Error(what);
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  check(a->value.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                     shape_str(a->value.shape()));
}

int to_int(std::size_t v) { return static_cast<int>(v); }

}  // namespace

void backward(const Var& root) {
  check(root->value.size() == 1, "backward: root must hold one element");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn();
}

Var add(const Var& a, const Var& b) {
  check(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  auto r = make(std::move(out), {a, b});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get(), b = b.get()] {
      for (Node* p : {a, b})
        if (p->requires_grad) {
          auto& g = p->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
        }
    };
  }
  return r;
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
  check(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  auto r = make(std::move(out), {a, b});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get(), b = b.get()] {
      if (a->requires_grad) {
        auto& g = a->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * b->value[i];
      }
      if (b->requires_grad) {
        auto& g = b->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * a->value[i];
      }
    };
  }
  return r;
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v *= s;
  auto r = make(std::move(out), {a});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get(), s] {
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self->grad[i];
    };
  }
  return r;
}

Var relu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v = v > 0.0 ? v : 0.0;
  auto r = make(std::move(out), {a});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get()] {
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (a->value[i] > 0.0) g[i] += self->grad[i];
    };
  }
  return r;
}

Var tanh(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v = std::tanh(v);
  auto r = make(std::move(out), {a});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get()] {
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = self->value[i];
        g[i] += self->grad[i] * (1.0 - y * y);
      }
    };
  }
  return r;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}

Var gelu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v)));
  auto r = make(std::move(out), {a});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get()] {
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = a->value[i];
        const double u = kGeluC * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
        g[i] += self->grad[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
      }
    };
  }
  return r;
}

Var reshape(const Var& a, Shape shape) {
  auto r = make(a->value.reshaped(std::move(shape)), {a});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get()] {
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
    };
  }
  return r;
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a->value.data()) s += v;
  auto r = make(Tensor::scalar(s), {a});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get()] {
      auto& g = a->grad_buffer();
      const double d = self->grad[0];
      for (auto& v : g.vec()) v += d;
    };
  }
  return r;
}

Var dot(const Var& a, const Var& b) {
  check(a->value.size() == b->value.size(), "dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value[i] * b->value[i];
  auto r = make(Tensor::scalar(s), {a, b});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get(), b = b.get()] {
      const double d = self->grad[0];
      if (a->requires_grad) {
        auto& g = a->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * b->value[i];
      }
      if (b->requires_grad) {
        auto& g = b->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * a->value[i];
      }
    };
  }
  return r;
}

Var squared_error(const Var& a, const Tensor& target) {
  check(a->value.size() == target.size(), "squared_error: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = a->value[i] - target[i];
    s += d * d;
  }
  auto r = make(Tensor::scalar(s), {a});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get(), target] {
      auto& g = a->grad_buffer();
      const double d = self->grad[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * d * (a->value[i] - target[i]);
    };
  }
  return r;
}

Var logsumexp(const Var& a) {
  check(a->value.size() > 0, "logsumexp: empty input");
  const double mx = *std::max_element(a->value.vec().begin(), a->value.vec().end());
  double s = 0.0;
  for (double v : a->value.data()) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  auto r = make(Tensor::scalar(lse), {a});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get(), lse] {
      auto& g = a->grad_buffer();
      const double d = self->grad[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * std::exp(a->value[i] - lse);
    };
  }
  return r;
}

Var pick(const Var& a, std::size_t index) {
  check(index < a->value.size(), "pick: index out of range");
  auto r = make(Tensor::scalar(a->value[index]), {a});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get(), index] { a->grad_buffer()[index] += self->grad[0]; };
  }
  return r;
}

Var stack(const std::vector<Var>& scalars) {
  Tensor out({scalars.size()});
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    check(scalars[i]->value.size() == 1, "stack: inputs must hold one element");
    out[i] = scalars[i]->value[0];
  }
  auto r = make(std::move(out), scalars);
  if (r->requires_grad) {
    Node* self = r.get();
    std::vector<Node*> raw;
    for (const auto& s : scalars) raw.push_back(s.get());
    r->backward_fn = [self, raw] {
      for (std::size_t i = 0; i < raw.size(); ++i)
        if (raw[i]->requires_grad) raw[i]->grad_buffer()[0] += self->grad[i];
    };
  }
  return r;
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = to_int(a->value.dim(0)), k = to_int(a->value.dim(1)), n = to_int(b->value.dim(1));
  check(to_int(b->value.dim(0)) == k, "matmul: inner dimensions differ");
  Tensor out({a->value.dim(0), b->value.dim(1)});
  kernels::gemm(false, false, m, n, k, 1.0, a->value.ptr(), k, b->value.ptr(), n, 0.0, out.ptr(), n);
  auto r = make(std::move(out), {a, b});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get(), b = b.get(), m, n, k] {
      if (a->requires_grad)
        kernels::gemm(false, true, m, k, n, 1.0, self->grad.ptr(), n, b->value.ptr(), n, 1.0,
                      a->grad_buffer().ptr(), k);
      if (b->requires_grad)
        kernels::gemm(true, false, k, n, m, 1.0, a->value.ptr(), k, self->grad.ptr(), n, 1.0,
                      b->grad_buffer().ptr(), n);
    };
  }
  return r;
}

Var add_row(const Var& x, const Var& row) {
  require_rank(x, 2, "add_row");
  const std::size_t s = x->value.dim(0), d = x->value.dim(1);
  check(row->value.size() == d, "add_row: row length mismatch");
  Tensor out = x->value;
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += row->value[j];
  auto r = make(std::move(out), {x, row});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, x = x.get(), row = row.get(), s, d] {
      if (x->requires_grad) {
        auto& g = x->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
      }
      if (row->requires_grad) {
        auto& g = row->grad_buffer();
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t j = 0; j < d; ++j) g[j] += self->grad[i * d + j];
      }
    };
  }
  return r;
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t s = x->value.dim(0), d = x->value.dim(1);
  check(gamma->value.size() == d && beta->value.size() == d, "layer_norm: parameter size mismatch");
  Tensor xhat({s, d});
  std::vector<double> rstd(s);
  Tensor out({s, d});
  for (std::size_t i = 0; i < s; ++i) {
    const double* row = x->value.ptr() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mean) * rstd[i];
      out[i * d + j] = xhat[i * d + j] * gamma->value[j] + beta->value[j];
    }
  }
  auto r = make(std::move(out), {x, gamma, beta});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, x = x.get(), gamma = gamma.get(), beta = beta.get(), xhat = std::move(xhat),
                      rstd = std::move(rstd), s, d] {
      const Tensor& gy = self->grad;
      if (gamma->requires_grad) {
        auto& g = gamma->grad_buffer();
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t j = 0; j < d; ++j) g[j] += gy[i * d + j] * xhat[i * d + j];
      }
      if (beta->requires_grad) {
        auto& g = beta->grad_buffer();
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t j = 0; j < d; ++j) g[j] += gy[i * d + j];
      }
      if (x->requires_grad) {
        auto& g = x->grad_buffer();
        for (std::size_t i = 0; i < s; ++i) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = gy[i * d + j] * gamma->value[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xhat[i * d + j];
          }
          mean_dxh /= static_cast<double>(d);
          mean_dxh_xh /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = gy[i * d + j] * gamma->value[j];
            g[i * d + j] += rstd[i] * (dxh - mean_dxh - xhat[i * d + j] * mean_dxh_xh);
          }
        }
      }
    };
  }
  return r;
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
  require_rank(q, 2, "attention");
  check(q->value.same_shape(k->value) && q->value.same_shape(v->value), "attention: q/k/v shapes differ");
  const int seq = to_int(q->value.dim(0)), d = to_int(q->value.dim(1));
  check(heads > 0 && d % heads == 0, "attention: width not divisible by head count");
  const int hd = d / heads;
  Tensor probs({static_cast<std::size_t>(heads), q->value.dim(0), q->value.dim(0)});
  Tensor out(q->value.shape());
  kernels::attention_forward(q->value.ptr(), k->value.ptr(), v->value.ptr(), seq, heads, hd, probs.ptr(),
                             out.ptr());
  auto r = make(std::move(out), {q, k, v});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, q = q.get(), k = k.get(), v = v.get(), probs = std::move(probs), seq, heads, hd] {
      Tensor dq(q->value.shape()), dk(q->value.shape()), dv(q->value.shape());
      kernels::attention_backward(q->value.ptr(), k->value.ptr(), v->value.ptr(), probs.ptr(), self->grad.ptr(),
                                  seq, heads, hd, dq.ptr(), dk.ptr(), dv.ptr());
      const std::pair<Node*, const Tensor*> parts[] = {{q, &dq}, {k, &dk}, {v, &dv}};
      for (auto [p, g] : parts)
        if (p->requires_grad) {
          auto& buf = p->grad_buffer();
          for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += (*g)[i];
        }
    };
  }
  return r;
}

Var concat_rows(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_rows: no inputs");
  const std::size_t d = parts.front()->value.dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    check(p->value.dim(1) == d, "concat_rows: column count mismatch");
    rows += p->value.dim(0);
  }
  Tensor out({rows, d});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->value.vec().begin(), p->value.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(off));
    off += p->value.size();
  }
  auto r = make(std::move(out), parts);
  if (r->requires_grad) {
    Node* self = r.get();
    std::vector<Node*> raw;
    for (const auto& p : parts) raw.push_back(p.get());
    r->backward_fn = [self, raw] {
      std::size_t o = 0;
      for (Node* p : raw) {
        if (p->requires_grad) {
          auto& g = p->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[o + i];
        }
        o += p->value.size();
      }
    };
  }
  return r;
}

Var slice_rows(const Var& a, std::size_t start, std::size_t count) {
  require_rank(a, 2, "slice_rows");
  check(start + count <= a->value.dim(0), "slice_rows: out of range");
  const std::size_t d = a->value.dim(1);
  Tensor out({count, d});
  std::copy_n(a->value.ptr() + start * d, count * d, out.ptr());
  auto r = make(std::move(out), {a});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get(), start, d] {
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < self->grad.size(); ++i) g[start * d + i] += self->grad[i];
    };
  }
  return r;
}

Var slice_cols(const Var& a, std::size_t col0, std::size_t cols) {
  require_rank(a, 2, "slice_cols");
  const std::size_t s = a->value.dim(0), d = a->value.dim(1);
  check(col0 + cols <= d, "slice_cols: out of range");
  Tensor out({s, cols});
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = a->value[i * d + col0 + j];
  auto r = make(std::move(out), {a});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, a = a.get(), col0, cols, s, d] {
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < cols; ++j) g[i * d + col0 + j] += self->grad[i * cols + j];
    };
  }
  return r;
}

Var conv1d(const Var& x, const Var& w, const Var& b, int stride) {
  require_rank(w, 2, "conv1d");
  const int n = to_int(x->value.size());
  const int f = to_int(w->value.dim(0)), k = to_int(w->value.dim(1));
  check(b->value.size() == static_cast<std::size_t>(f), "conv1d: bias size mismatch");
  check(n >= k, "conv1d: input shorter than kernel");
  const int t = (n - k) / stride + 1;
  Tensor frames({static_cast<std::size_t>(k), static_cast<std::size_t>(t)});
  kernels::frames1d(x->value.ptr(), t, k, stride, frames.ptr());
  Tensor out({static_cast<std::size_t>(f), static_cast<std::size_t>(t)});
  for (int i = 0; i < f; ++i) std::fill_n(out.ptr() + static_cast<std::ptrdiff_t>(i) * t, t, b->value[i]);
  kernels::gemm(false, false, f, t, k, 1.0, w->value.ptr(), k, frames.ptr(), t, 1.0, out.ptr(), t);
  auto r = make(std::move(out), {x, w, b});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, x = x.get(), w = w.get(), b = b.get(), frames = std::move(frames), n, f, k, t, stride] {
      const double* gy = self->grad.ptr();
      if (w->requires_grad)
        kernels::gemm(false, true, f, k, t, 1.0, gy, t, frames.ptr(), t, 1.0, w->grad_buffer().ptr(), k);
      if (b->requires_grad) {
        auto& g = b->grad_buffer();
        for (int i = 0; i < f; ++i)
          for (int j = 0; j < t; ++j) g[i] += gy[i * t + j];
      }
      if (x->requires_grad) {
        Tensor dframes({static_cast<std::size_t>(k), static_cast<std::size_t>(t)});
        kernels::gemm(true, false, k, t, f, 1.0, w->value.ptr(), k, gy, t, 0.0, dframes.ptr(), t);
        kernels::overlap_add1d(dframes.ptr(), t, k, stride, n, x->grad_buffer().ptr());
      }
    };
  }
  return r;
}

Var conv_transpose1d(const Var& z, const Var& w, const Var& b, int stride) {
  require_rank(z, 2, "conv_transpose1d");
  require_rank(w, 2, "conv_transpose1d");
  const int f = to_int(z->value.dim(0)), t = to_int(z->value.dim(1)), k = to_int(w->value.dim(1));
  check(to_int(w->value.dim(0)) == f, "conv_transpose1d: filter count mismatch");
  check(b->value.size() == 1, "conv_transpose1d: bias must be a single value");
  const int n = (t - 1) * stride + k;
  Tensor frames({static_cast<std::size_t>(k), static_cast<std::size_t>(t)});
  kernels::gemm(true, false, k, t, f, 1.0, w->value.ptr(), k, z->value.ptr(), t, 0.0, frames.ptr(), t);
  Tensor out({static_cast<std::size_t>(n)}, b->value[0]);
  kernels::overlap_add1d(frames.ptr(), t, k, stride, n, out.ptr());
  auto r = make(std::move(out), {z, w, b});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, z = z.get(), w = w.get(), b = b.get(), f, k, t, stride] {
      Tensor dframes({static_cast<std::size_t>(k), static_cast<std::size_t>(t)});
      kernels::frames1d(self->grad.ptr(), t, k, stride, dframes.ptr());
      if (w->requires_grad)
        kernels::gemm(false, true, f, k, t, 1.0, z->value.ptr(), t, dframes.ptr(), t, 1.0, w->grad_buffer().ptr(),
                      k);
      if (z->requires_grad)
        kernels::gemm(false, false, f, t, k, 1.0, w->value.ptr(), k, dframes.ptr(), t, 1.0, z->grad_buffer().ptr(),
                      t);
      if (b->requires_grad) {
        double s = 0.0;
        for (double v : self->grad.data()) s += v;
        b->grad_buffer()[0] += s;
      }
    };
  }
  return r;
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  const int c = to_int(x->value.dim(0)), h = to_int(x->value.dim(1)), wd = to_int(x->value.dim(2));
  const int o = to_int(w->value.dim(0)), kk = to_int(w->value.dim(2));
  check(to_int(w->value.dim(1)) == c && to_int(w->value.dim(3)) == kk, "conv2d: weight shape mismatch");
  check(b->value.size() == static_cast<std::size_t>(o), "conv2d: bias size mismatch");
  const int oh = kernels::conv_out(h, kk, stride, pad), ow = kernels::conv_out(wd, kk, stride, pad);
  check(oh > 0 && ow > 0, "conv2d: input smaller than kernel");
  const int rows = c * kk * kk, cols_n = oh * ow;
  Tensor cols({static_cast<std::size_t>(rows), static_cast<std::size_t>(cols_n)});
  kernels::im2col2d(x->value.ptr(), c, h, wd, kk, stride, pad, cols.ptr());
  Tensor out({static_cast<std::size_t>(o), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  for (int i = 0; i < o; ++i) std::fill_n(out.ptr() + static_cast<std::ptrdiff_t>(i) * cols_n, cols_n, b->value[i]);
  kernels::gemm(false, false, o, cols_n, rows, 1.0, w->value.ptr(), rows, cols.ptr(), cols_n, 1.0, out.ptr(), cols_n);
  auto r = make(std::move(out), {x, w, b});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, x = x.get(), w = w.get(), b = b.get(), cols = std::move(cols), c, h, wd, o, kk, stride, pad,
                      rows, cols_n] {
      const double* gy = self->grad.ptr();
      if (w->requires_grad)
        kernels::gemm(false, true, o, rows, cols_n, 1.0, gy, cols_n, cols.ptr(), cols_n, 1.0, w->grad_buffer().ptr(),
                      rows);
      if (b->requires_grad) {
        auto& g = b->grad_buffer();
        for (int i = 0; i < o; ++i)
          for (int j = 0; j < cols_n; ++j) g[i] += gy[static_cast<std::ptrdiff_t>(i) * cols_n + j];
      }
      if (x->requires_grad) {
        Tensor dcols({static_cast<std::size_t>(rows), static_cast<std::size_t>(cols_n)});
        kernels::gemm(true, false, rows, cols_n, o, 1.0, w->value.ptr(), rows, gy, cols_n, 0.0, dcols.ptr(), cols_n);
        kernels::col2im2d(dcols.ptr(), c, h, wd, kk, stride, pad, x->grad_buffer().ptr());
      }
    };
  }
  return r;
}

Var global_max_pool(const Var& x) {
  require_rank(x, 3, "global_max_pool");
  const std::size_t c = x->value.dim(0), plane = x->value.dim(1) * x->value.dim(2);
  Tensor out({c});
  std::vector<std::size_t> arg(c);
  for (std::size_t i = 0; i < c; ++i) {
    const double* p = x->value.ptr() + i * plane;
    arg[i] = static_cast<std::size_t>(std::max_element(p, p + plane) - p);
    out[i] = p[arg[i]];
  }
  auto r = make(std::move(out), {x});
  if (r->requires_grad) {
    Node* self = r.get();
    r->backward_fn = [self, x = x.get(), arg = std::move(arg), plane] {
      auto& g = x->grad_buffer();
      for (std::size_t i = 0; i < arg.size(); ++i) g[i * plane + arg[i]] += self->grad[i];
    };
  }
  return r;
}

}  // namespace segdiff::ag
