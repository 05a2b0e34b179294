#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "somnus/rng.hpp"

namespace somnus::nn {

using Mat = Eigen::MatrixXd;

// Reverse-mode autodiff over dense double matrices. Nodes form a DAG; ids
// increase in creation order, which is a valid topological order because every
// op's inputs exist before its output.
struct Node {
  Mat value;
  Mat grad;
  bool grad_set = false;
  bool requires_grad = false;
  uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Mat& g) {
    if (!requires_grad) return;
    if (!grad_set) {
      grad = g;
      grad_set = true;
    } else {
      grad += g;
    }
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Mat value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(n_); }
  const Mat& value() const { return n_->value; }
  Mat& value() { return n_->value; }
  bool has_grad() const { return n_ && n_->grad_set; }
  const Mat& grad() const;
  bool requires_grad() const { return n_ && n_->requires_grad; }
  void zero_grad() {
    if (n_) n_->grad_set = false;
  }
  long rows() const { return n_->value.rows(); }
  long cols() const { return n_->value.cols(); }
  const std::shared_ptr<Node>& node() const { return n_; }

  static Var from_node(std::shared_ptr<Node> n);

 private:
  std::shared_ptr<Node> n_;
};

// Seeds the root gradient with ones (root must be 1x1) and runs the tape in
// reverse creation order over the reachable subgraph.
void backward(const Var& root);

Var constant(Mat value);
Var detach(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double c);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var add_rowvec(const Var& a, const Var& r);  // r: 1 x n
Var add_colvec(const Var& a, const Var& c);  // c: m x 1
Var mul_rowvec(const Var& a, const Var& r);
Var mul_colvec(const Var& a, const Var& c);
Var expand_rows(const Var& r, long m);  // replicate 1 x n into m x n

Var rowwise_sum(const Var& a);   // m x 1
Var colwise_sum(const Var& a);   // 1 x n
Var rowwise_mean(const Var& a);  // m x 1
Var sum(const Var& a);           // 1 x 1
Var mean(const Var& a);          // 1 x 1

Var slice_rows(const Var& a, long r0, long nr);
Var slice_cols(const Var& a, long c0, long nc);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(const Var& a, const std::vector<int>& idx);

Var square(const Var& a);
Var power(const Var& a, double p);  // elementwise; inputs must stay positive
Var exp_op(const Var& a);
Var log_op(const Var& a);
Var tanh_op(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var gelu(const Var& a);  // exact erf form
Var silu(const Var& a);

Var softmax_rows(const Var& a);
// Mean negative log-likelihood over rows; labels index columns.
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);

// Inverted dropout; identity when not training or p == 0.
Var dropout(const Var& a, double p, Rng& rng, bool training);

// Depthwise causal 1-D convolution over time (rows): w is K x C, b is 1 x C.
Var causal_conv1d(const Var& x, const Var& w, const Var& b);

// h_t = a_t .* h_{t-1} + bx_t  (h_{-1} = 0), rows are time steps.
Var ssm_scan(const Var& a, const Var& bx);

// out[t, i*n + j] = u[t, i] * v[t, j]
Var rowwise_kron(const Var& u, const Var& v);

// y[t, i] = sum_j h[t, i*n + j] * c[t, j]
Var contract_state(const Var& h, const Var& c);

}  // namespace somnus::nn
