#include "somnus/nn/graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "somnus/common.hpp"

namespace somnus::nn {
namespace {

std::atomic<uint64_t> g_next_id{1};

std::shared_ptr<Node> new_node(Mat value,
                               std::vector<std::shared_ptr<Node>> parents,
                               std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw_invalid(std::string(op) + ": shape mismatch");
}

}  // namespace

Var::Var(Mat value, bool requires_grad) {
  n_ = std::make_shared<Node>();
  n_->value = std::move(value);
  n_->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  n_->requires_grad = requires_grad;
}

const Mat& Var::grad() const {
  if (!n_ || !n_->grad_set) throw_internal("gradient not set");
  return n_->grad;
}

Var Var::from_node(std::shared_ptr<Node> n) {
  Var v;
  v.n_ = std::move(n);
  return v;
}

void backward(const Var& root) {
  if (!root.defined()) throw_invalid("backward: undefined variable");
  if (root.value().size() != 1) throw_invalid("backward: root must be 1x1");
  Node* rn = root.node().get();
  rn->grad = Mat::Ones(1, 1);
  rn->grad_set = true;
  if (!rn->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{rn};
  seen.insert(rn);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](Node* a, Node* b) { return a->id > b->id; });
  for (Node* n : order)
    if (n->grad_set && n->backward_fn) n->backward_fn(*n);
}

Var constant(Mat value) { return Var(std::move(value), false); }

Var detach(const Var& x) { return Var(x.value(), false); }

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return Var::from_node(new_node(a.value() + b.value(), {a.node(), b.node()},
                                 [pa, pb](Node& self) {
                                   pa->accumulate(self.grad);
                                   pb->accumulate(self.grad);
                                 }));
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return Var::from_node(new_node(a.value() - b.value(), {a.node(), b.node()},
                                 [pa, pb](Node& self) {
                                   pa->accumulate(self.grad);
                                   pb->accumulate(Mat(-self.grad));
                                 }));
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return Var::from_node(new_node(
      (a.value().array() * b.value().array()).matrix(), {a.node(), b.node()},
      [pa, pb](Node& self) {
        pa->accumulate((self.grad.array() * pb->value.array()).matrix());
        pb->accumulate((self.grad.array() * pa->value.array()).matrix());
      }));
}

Var neg(const Var& a) {
  Node* pa = a.node().get();
  return Var::from_node(new_node(Mat(-a.value()), {a.node()}, [pa](Node& self) {
    pa->accumulate(Mat(-self.grad));
  }));
}

Var scale(const Var& a, double s) {
  Node* pa = a.node().get();
  return Var::from_node(
      new_node(Mat(a.value() * s), {a.node()},
               [pa, s](Node& self) { pa->accumulate(Mat(self.grad * s)); }));
}

Var add_scalar(const Var& a, double c) {
  Node* pa = a.node().get();
  return Var::from_node(new_node(
      Mat(a.value().array() + c), {a.node()},
      [pa](Node& self) { pa->accumulate(self.grad); }));
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw_invalid("matmul: inner dims differ");
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return Var::from_node(
      new_node(a.value() * b.value(), {a.node(), b.node()}, [pa, pb](Node& self) {
        pa->accumulate(self.grad * pb->value.transpose());
        pb->accumulate(pa->value.transpose() * self.grad);
      }));
}

Var transpose(const Var& a) {
  Node* pa = a.node().get();
  return Var::from_node(
      new_node(a.value().transpose(), {a.node()}, [pa](Node& self) {
        pa->accumulate(self.grad.transpose());
      }));
}

Var add_rowvec(const Var& a, const Var& r) {
  if (r.rows() != 1 || r.cols() != a.cols())
    throw_invalid("add_rowvec: expected 1 x cols(a)");
  Node* pa = a.node().get();
  Node* pr = r.node().get();
  return Var::from_node(new_node(
      Mat(a.value() + r.value().replicate(a.rows(), 1)), {a.node(), r.node()},
      [pa, pr](Node& self) {
        pa->accumulate(self.grad);
        pr->accumulate(Mat(self.grad.colwise().sum()));
      }));
}

Var add_colvec(const Var& a, const Var& c) {
  if (c.cols() != 1 || c.rows() != a.rows())
    throw_invalid("add_colvec: expected rows(a) x 1");
  Node* pa = a.node().get();
  Node* pc = c.node().get();
  return Var::from_node(new_node(
      Mat(a.value() + c.value().replicate(1, a.cols())), {a.node(), c.node()},
      [pa, pc](Node& self) {
        pa->accumulate(self.grad);
        pc->accumulate(Mat(self.grad.rowwise().sum()));
      }));
}

Var mul_rowvec(const Var& a, const Var& r) {
  if (r.rows() != 1 || r.cols() != a.cols())
    throw_invalid("mul_rowvec: expected 1 x cols(a)");
  Node* pa = a.node().get();
  Node* pr = r.node().get();
  return Var::from_node(new_node(
      Mat((a.value().array() * r.value().replicate(a.rows(), 1).array())),
      {a.node(), r.node()}, [pa, pr](Node& self) {
        const long m = self.value.rows();
        pa->accumulate(
            Mat(self.grad.array() * pr->value.replicate(m, 1).array()));
        pr->accumulate(
            Mat((self.grad.array() * pa->value.array()).colwise().sum()));
      }));
}

Var mul_colvec(const Var& a, const Var& c) {
  if (c.cols() != 1 || c.rows() != a.rows())
    throw_invalid("mul_colvec: expected rows(a) x 1");
  Node* pa = a.node().get();
  Node* pc = c.node().get();
  return Var::from_node(new_node(
      Mat((a.value().array() * c.value().replicate(1, a.cols()).array())),
      {a.node(), c.node()}, [pa, pc](Node& self) {
        const long n = self.value.cols();
        pa->accumulate(
            Mat(self.grad.array() * pc->value.replicate(1, n).array()));
        pc->accumulate(
            Mat((self.grad.array() * pa->value.array()).rowwise().sum()));
      }));
}

Var expand_rows(const Var& r, long m) {
  if (r.rows() != 1) throw_invalid("expand_rows: expected a 1 x n input");
  if (m < 1) throw_invalid("expand_rows: m must be >= 1");
  Node* pr = r.node().get();
  return Var::from_node(
      new_node(Mat(r.value().replicate(m, 1)), {r.node()}, [pr](Node& self) {
        pr->accumulate(Mat(self.grad.colwise().sum()));
      }));
}

Var rowwise_sum(const Var& a) {
  Node* pa = a.node().get();
  const long n = a.cols();
  return Var::from_node(
      new_node(Mat(a.value().rowwise().sum()), {a.node()}, [pa, n](Node& self) {
        pa->accumulate(Mat(self.grad.replicate(1, n)));
      }));
}

Var colwise_sum(const Var& a) {
  Node* pa = a.node().get();
  const long m = a.rows();
  return Var::from_node(
      new_node(Mat(a.value().colwise().sum()), {a.node()}, [pa, m](Node& self) {
        pa->accumulate(Mat(self.grad.replicate(m, 1)));
      }));
}

Var rowwise_mean(const Var& a) {
  Node* pa = a.node().get();
  const long n = a.cols();
  return Var::from_node(new_node(Mat(a.value().rowwise().mean()), {a.node()},
                                 [pa, n](Node& self) {
                                   pa->accumulate(Mat(
                                       self.grad.replicate(1, n) /
                                       static_cast<double>(n)));
                                 }));
}

Var sum(const Var& a) {
  Node* pa = a.node().get();
  const long m = a.rows(), n = a.cols();
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return Var::from_node(
      new_node(std::move(v), {a.node()}, [pa, m, n](Node& self) {
        pa->accumulate(Mat(Mat::Constant(m, n, self.grad(0, 0))));
      }));
}

Var mean(const Var& a) {
  Node* pa = a.node().get();
  const long m = a.rows(), n = a.cols();
  Mat v(1, 1);
  v(0, 0) = a.value().mean();
  return Var::from_node(
      new_node(std::move(v), {a.node()}, [pa, m, n](Node& self) {
        pa->accumulate(Mat(Mat::Constant(
            m, n, self.grad(0, 0) / static_cast<double>(m * n))));
      }));
}

Var slice_rows(const Var& a, long r0, long nr) {
  if (r0 < 0 || nr < 0 || r0 + nr > a.rows())
    throw_invalid("slice_rows: range out of bounds");
  Node* pa = a.node().get();
  const long m = a.rows(), n = a.cols();
  return Var::from_node(new_node(Mat(a.value().middleRows(r0, nr)), {a.node()},
                                 [pa, m, n, r0, nr](Node& self) {
                                   Mat z = Mat::Zero(m, n);
                                   z.middleRows(r0, nr) = self.grad;
                                   pa->accumulate(z);
                                 }));
}

Var slice_cols(const Var& a, long c0, long nc) {
  if (c0 < 0 || nc < 0 || c0 + nc > a.cols())
    throw_invalid("slice_cols: range out of bounds");
  Node* pa = a.node().get();
  const long m = a.rows(), n = a.cols();
  return Var::from_node(new_node(Mat(a.value().middleCols(c0, nc)), {a.node()},
                                 [pa, m, n, c0, nc](Node& self) {
                                   Mat z = Mat::Zero(m, n);
                                   z.middleCols(c0, nc) = self.grad;
                                   pa->accumulate(z);
                                 }));
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw_invalid("concat_rows: no inputs");
  const long n = parts[0].cols();
  long m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw_invalid("concat_rows: column mismatch");
    m += p.rows();
  }
  Mat v(m, n);
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<std::pair<Node*, std::pair<long, long>>> spans;
  long off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    parents.push_back(p.node());
    spans.push_back({p.node().get(), {off, p.rows()}});
    off += p.rows();
  }
  return Var::from_node(
      new_node(std::move(v), std::move(parents), [spans](Node& self) {
        for (const auto& [pn, sp] : spans)
          pn->accumulate(Mat(self.grad.middleRows(sp.first, sp.second)));
      }));
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw_invalid("concat_cols: no inputs");
  const long m = parts[0].rows();
  long n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw_invalid("concat_cols: row mismatch");
    n += p.cols();
  }
  Mat v(m, n);
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<std::pair<Node*, std::pair<long, long>>> spans;
  long off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    parents.push_back(p.node());
    spans.push_back({p.node().get(), {off, p.cols()}});
    off += p.cols();
  }
  return Var::from_node(
      new_node(std::move(v), std::move(parents), [spans](Node& self) {
        for (const auto& [pn, sp] : spans)
          pn->accumulate(Mat(self.grad.middleCols(sp.first, sp.second)));
      }));
}

Var gather_rows(const Var& a, const std::vector<int>& idx) {
  const long m = a.rows(), n = a.cols();
  for (int i : idx)
    if (i < 0 || i >= m) throw_invalid("gather_rows: index out of range");
  Mat v(static_cast<long>(idx.size()), n);
  for (size_t k = 0; k < idx.size(); ++k) v.row(k) = a.value().row(idx[k]);
  Node* pa = a.node().get();
  return Var::from_node(
      new_node(std::move(v), {a.node()}, [pa, idx, m, n](Node& self) {
        Mat z = Mat::Zero(m, n);
        for (size_t k = 0; k < idx.size(); ++k)
          z.row(idx[k]) += self.grad.row(k);
        pa->accumulate(z);
      }));
}

Var square(const Var& a) {
  Node* pa = a.node().get();
  return Var::from_node(new_node(Mat(a.value().array().square()), {a.node()},
                                 [pa](Node& self) {
                                   pa->accumulate(Mat(2.0 * self.grad.array() *
                                                      pa->value.array()));
                                 }));
}

Var power(const Var& a, double p) {
  Node* pa = a.node().get();
  return Var::from_node(new_node(Mat(a.value().array().pow(p)), {a.node()},
                                 [pa, p](Node& self) {
                                   pa->accumulate(
                                       Mat(p * self.grad.array() *
                                           pa->value.array().pow(p - 1.0)));
                                 }));
}

Var exp_op(const Var& a) {
  Node* pa = a.node().get();
  return Var::from_node(
      new_node(Mat(a.value().array().exp()), {a.node()}, [pa](Node& self) {
        pa->accumulate(Mat(self.grad.array() * self.value.array()));
      }));
}

Var log_op(const Var& a) {
  Node* pa = a.node().get();
  return Var::from_node(
      new_node(Mat(a.value().array().log()), {a.node()}, [pa](Node& self) {
        pa->accumulate(Mat(self.grad.array() / pa->value.array()));
      }));
}

Var tanh_op(const Var& a) {
  Node* pa = a.node().get();
  return Var::from_node(
      new_node(Mat(a.value().array().tanh()), {a.node()}, [pa](Node& self) {
        pa->accumulate(
            Mat(self.grad.array() * (1.0 - self.value.array().square())));
      }));
}

Var sigmoid(const Var& a) {
  Node* pa = a.node().get();
  Mat v = (0.5 * (0.5 * a.value().array()).tanh() + 0.5).matrix();
  return Var::from_node(new_node(std::move(v), {a.node()}, [pa](Node& self) {
    pa->accumulate(Mat(self.grad.array() * self.value.array() *
                       (1.0 - self.value.array())));
  }));
}

Var softplus(const Var& a) {
  Node* pa = a.node().get();
  Mat v = a.value();
  for (long j = 0; j < v.cols(); ++j)
    for (long i = 0; i < v.rows(); ++i) {
      const double x = v(i, j);
      v(i, j) = x > 30.0 ? x : (x < -30.0 ? std::exp(x) : std::log1p(std::exp(x)));
    }
  return Var::from_node(new_node(std::move(v), {a.node()}, [pa](Node& self) {
    const auto x = pa->value.array();
    pa->accumulate(
        Mat(self.grad.array() * (0.5 * (0.5 * x).tanh() + 0.5)));
  }));
}

Var gelu(const Var& a) {
  Node* pa = a.node().get();
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Mat v = a.value();
  for (long j = 0; j < v.cols(); ++j)
    for (long i = 0; i < v.rows(); ++i) {
      const double x = v(i, j);
      v(i, j) = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
  return Var::from_node(new_node(std::move(v), {a.node()}, [pa](Node& self) {
    Mat g = self.grad;
    for (long j = 0; j < g.cols(); ++j)
      for (long i = 0; i < g.rows(); ++i) {
        const double x = pa->value(i, j);
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        g(i, j) *= cdf + x * pdf;
      }
    pa->accumulate(g);
  }));
}

Var silu(const Var& a) {
  Node* pa = a.node().get();
  Mat s = (0.5 * (0.5 * a.value().array()).tanh() + 0.5).matrix();
  Mat v = (a.value().array() * s.array()).matrix();
  return Var::from_node(
      new_node(std::move(v), {a.node()}, [pa, s](Node& self) {
        const auto sa = s.array();
        pa->accumulate(Mat(self.grad.array() * sa *
                           (1.0 + pa->value.array() * (1.0 - sa))));
      }));
}

Var softmax_rows(const Var& a) {
  Node* pa = a.node().get();
  Mat v = a.value();
  for (long i = 0; i < v.rows(); ++i) {
    const double mx = v.row(i).maxCoeff();
    v.row(i) = (v.row(i).array() - mx).exp();
    v.row(i) /= v.row(i).sum();
  }
  return Var::from_node(new_node(std::move(v), {a.node()}, [pa](Node& self) {
    Mat g(self.value.rows(), self.value.cols());
    for (long i = 0; i < g.rows(); ++i) {
      const double dot = self.grad.row(i).dot(self.value.row(i));
      g.row(i) = self.value.row(i).array() *
                 (self.grad.row(i).array() - dot);
    }
    pa->accumulate(g);
  }));
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const long m = logits.rows(), n = logits.cols();
  if (static_cast<long>(labels.size()) != m)
    throw_invalid("softmax_cross_entropy: one label per row required");
  for (int y : labels)
    if (y < 0 || y >= n) throw_invalid("softmax_cross_entropy: label range");
  Mat probs = logits.value();
  double loss = 0.0;
  for (long i = 0; i < m; ++i) {
    const double mx = probs.row(i).maxCoeff();
    probs.row(i) = (probs.row(i).array() - mx).exp();
    const double z = probs.row(i).sum();
    probs.row(i) /= z;
    loss -= std::log(std::max(probs(i, labels[i]), 1e-300));
  }
  Mat v(1, 1);
  v(0, 0) = loss / static_cast<double>(m);
  Node* pl = logits.node().get();
  return Var::from_node(new_node(
      std::move(v), {logits.node()}, [pl, probs, labels, m](Node& self) {
        Mat g = probs;
        for (long i = 0; i < m; ++i) g(i, labels[i]) -= 1.0;
        pl->accumulate(Mat(g * (self.grad(0, 0) / static_cast<double>(m))));
      }));
}

Var dropout(const Var& a, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw_invalid("dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return a;
  Mat mask(a.rows(), a.cols());
  const double keep = 1.0 - p;
  for (long j = 0; j < mask.cols(); ++j)
    for (long i = 0; i < mask.rows(); ++i)
      mask(i, j) = rng.uniform() < p ? 0.0 : 1.0 / keep;
  Node* pa = a.node().get();
  return Var::from_node(new_node(
      Mat((a.value().array() * mask.array()).matrix()), {a.node()},
      [pa, mask](Node& self) {
        pa->accumulate(Mat((self.grad.array() * mask.array()).matrix()));
      }));
}

Var causal_conv1d(const Var& x, const Var& w, const Var& b) {
  const long T = x.rows(), C = x.cols(), K = w.rows();
  if (w.cols() != C) throw_invalid("causal_conv1d: w must be K x C");
  if (b.rows() != 1 || b.cols() != C)
    throw_invalid("causal_conv1d: b must be 1 x C");
  Mat v(T, C);
  for (long c = 0; c < C; ++c)
    for (long t = 0; t < T; ++t) {
      double acc = b.value()(0, c);
      for (long k = 0; k < K; ++k) {
        const long s = t - (K - 1) + k;
        if (s >= 0) acc += w.value()(k, c) * x.value()(s, c);
      }
      v(t, c) = acc;
    }
  Node* px = x.node().get();
  Node* pw = w.node().get();
  Node* pb = b.node().get();
  return Var::from_node(new_node(
      std::move(v), {x.node(), w.node(), b.node()},
      [px, pw, pb, T, C, K](Node& self) {
        pb->accumulate(Mat(self.grad.colwise().sum()));
        Mat gw = Mat::Zero(K, C);
        Mat gx = Mat::Zero(T, C);
        for (long c = 0; c < C; ++c)
          for (long t = 0; t < T; ++t) {
            const double g = self.grad(t, c);
            for (long k = 0; k < K; ++k) {
              const long s = t - (K - 1) + k;
              if (s >= 0) {
                gw(k, c) += g * px->value(s, c);
                gx(s, c) += g * pw->value(k, c);
              }
            }
          }
        pw->accumulate(gw);
        px->accumulate(gx);
      }));
}

Var ssm_scan(const Var& a, const Var& bx) {
  check_same_shape(a, bx, "ssm_scan");
  const long T = a.rows(), D = a.cols();
  Mat h(T, D);
  h.row(0) = bx.value().row(0);
  for (long t = 1; t < T; ++t)
    h.row(t) = (a.value().row(t).array() * h.row(t - 1).array()).matrix() +
               bx.value().row(t);
  Node* pa = a.node().get();
  Node* pb = bx.node().get();
  return Var::from_node(
      new_node(std::move(h), {a.node(), bx.node()}, [pa, pb, T, D](Node& self) {
        Mat ga = Mat::Zero(T, D);
        Mat gbx(T, D);
        Eigen::RowVectorXd carry = self.grad.row(T - 1);
        for (long t = T - 1;; --t) {
          gbx.row(t) = carry;
          if (t > 0)
            ga.row(t) =
                (carry.array() * self.value.row(t - 1).array()).matrix();
          if (t == 0) break;
          carry = self.grad.row(t - 1) +
                  (pa->value.row(t).array() * carry.array()).matrix();
        }
        pa->accumulate(ga);
        pb->accumulate(gbx);
      }));
}

Var rowwise_kron(const Var& u, const Var& v) {
  if (u.rows() != v.rows()) throw_invalid("rowwise_kron: row mismatch");
  const long T = u.rows(), m = u.cols(), n = v.cols();
  Mat out(T, m * n);
  for (long t = 0; t < T; ++t)
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < n; ++j)
        out(t, i * n + j) = u.value()(t, i) * v.value()(t, j);
  Node* pu = u.node().get();
  Node* pv = v.node().get();
  return Var::from_node(new_node(
      std::move(out), {u.node(), v.node()}, [pu, pv, T, m, n](Node& self) {
        Mat gu = Mat::Zero(T, m);
        Mat gv = Mat::Zero(T, n);
        for (long t = 0; t < T; ++t)
          for (long i = 0; i < m; ++i)
            for (long j = 0; j < n; ++j) {
              const double g = self.grad(t, i * n + j);
              gu(t, i) += g * pv->value(t, j);
              gv(t, j) += g * pu->value(t, i);
            }
        pu->accumulate(gu);
        pv->accumulate(gv);
      }));
}

Var contract_state(const Var& h, const Var& c) {
  if (h.rows() != c.rows()) throw_invalid("contract_state: row mismatch");
  const long T = h.rows(), n = c.cols();
  if (n == 0 || h.cols() % n != 0)
    throw_invalid("contract_state: cols(h) must be a multiple of cols(c)");
  const long m = h.cols() / n;
  Mat out = Mat::Zero(T, m);
  for (long t = 0; t < T; ++t)
    for (long i = 0; i < m; ++i) {
      double acc = 0.0;
      for (long j = 0; j < n; ++j) acc += h.value()(t, i * n + j) * c.value()(t, j);
      out(t, i) = acc;
    }
  Node* ph = h.node().get();
  Node* pc = c.node().get();
  return Var::from_node(new_node(
      std::move(out), {h.node(), c.node()}, [ph, pc, T, m, n](Node& self) {
        Mat gh = Mat::Zero(T, m * n);
        Mat gc = Mat::Zero(T, n);
        for (long t = 0; t < T; ++t)
          for (long i = 0; i < m; ++i) {
            const double g = self.grad(t, i);
            for (long j = 0; j < n; ++j) {
              gh(t, i * n + j) += g * pc->value(t, j);
              gc(t, j) += g * ph->value(t, i * n + j);
            }
          }
        ph->accumulate(gh);
        pc->accumulate(gc);
      }));
}

}  // namespace somnus::nn
