#include "somnus/nn/ssm.hpp"

#include <cmath>

#include "somnus/common.hpp"

namespace somnus::nn {

Mat scan_sequential(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw_invalid("scan_sequential: shape mismatch");
  Mat h(a.rows(), a.cols());
  if (a.rows() == 0) return h;
  h.row(0) = b.row(0);
  for (long t = 1; t < a.rows(); ++t)
    h.row(t) = (a.row(t).array() * h.row(t - 1).array()).matrix() + b.row(t);
  return h;
}

Mat scan_blelloch(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw_invalid("scan_blelloch: shape mismatch");
  const long t_len = a.rows(), d = a.cols();
  if (t_len == 0) return Mat(0, d);
  long n = 1;
  while (n < t_len) n <<= 1;

  // Identity affine map is (a=1, b=0).
  Mat wa = Mat::Ones(n, d), wb = Mat::Zero(n, d);
  wa.topRows(t_len) = a;
  wb.topRows(t_len) = b;

  for (long stride = 1; stride < n; stride <<= 1)
    for (long i = 2 * stride - 1; i < n; i += 2 * stride) {
      const long l = i - stride;
      // compose right after left: (wa_i, wb_i) := (wa_i, wb_i) o (wa_l, wb_l)
      wb.row(i) = (wa.row(i).array() * wb.row(l).array()).matrix() + wb.row(i);
      wa.row(i) = (wa.row(i).array() * wa.row(l).array()).matrix();
    }

  wa.row(n - 1).setOnes();
  wb.row(n - 1).setZero();
  for (long stride = n / 2; stride >= 1; stride >>= 1)
    for (long i = 2 * stride - 1; i < n; i += 2 * stride) {
      const long l = i - stride;
      const Eigen::RowVectorXd ta = wa.row(l), tb = wb.row(l);
      wa.row(l) = wa.row(i);
      wb.row(l) = wb.row(i);
      wb.row(i) = (ta.array() * wb.row(i).array()).matrix() + tb;
      wa.row(i) = (ta.array() * wa.row(i).array()).matrix();
    }

  // The sweeps leave the exclusive scan; fold in element t for the inclusive
  // value h_t = a_t * excl_t + b_t.
  Mat h(t_len, d);
  for (long t = 0; t < t_len; ++t)
    h.row(t) = (a.row(t).array() * wb.row(t).array()).matrix() + b.row(t);
  return h;
}

SelectiveSsmLayer::SelectiveSsmLayer(long d_model_, long d_state_, long d_conv_,
                                     long expand, Rng& rng)
    : d_model(d_model_), d_state(d_state_), d_conv(d_conv_) {
  if (d_model < 1 || d_state < 1 || d_conv < 1 || expand < 1)
    throw_invalid("SelectiveSsmLayer: dims must be >= 1");
  d_inner = expand * d_model;
  dt_rank = std::max<long>(1, (d_model + 15) / 16);

  // The stack has no residual path, so projections need fan-in-scaled
  // uniform inits; transformer-style 0.02 normals starve the state of signal.
  auto fan_in_uniform = [&rng](Var& w, long fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (long j = 0; j < w.cols(); ++j)
      for (long i = 0; i < w.rows(); ++i)
        w.value()(i, j) = rng.uniform(-bound, bound);
  };

  in_proj = Linear(d_model, 2 * d_inner, rng, /*bias=*/false);
  fan_in_uniform(in_proj.w, d_model);

  Mat cw(d_conv, d_inner);
  conv_w = Var(std::move(cw), true);
  fan_in_uniform(conv_w, d_conv);
  conv_b = Var(Mat::Zero(1, d_inner), true);

  x_proj = Linear(d_inner, dt_rank + 2 * d_state, rng, /*bias=*/false);
  fan_in_uniform(x_proj.w, d_inner);
  dt_proj = Linear(dt_rank, d_inner, rng, /*bias=*/true);
  fan_in_uniform(dt_proj.w, dt_rank);
  // Bias chosen so softplus(bias) lands log-uniform in [1e-3, 1e-1].
  for (long j = 0; j < d_inner; ++j) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    dt_proj.b.value()(0, j) = std::log(std::expm1(dt));
  }

  Mat al(1, d_inner * d_state);
  for (long i = 0; i < d_inner; ++i)
    for (long j = 0; j < d_state; ++j)
      al(0, i * d_state + j) = std::log(static_cast<double>(j + 1));
  a_log = Var(std::move(al), true);
  d_skip = Var(Mat::Ones(1, d_inner), true);
  out_proj = Linear(d_inner, d_model, rng, /*bias=*/false);
  fan_in_uniform(out_proj.w, d_inner);
}

Var SelectiveSsmLayer::forward(const Var& u) const {
  if (u.cols() != d_model) throw_invalid("SelectiveSsmLayer: input dim mismatch");
  const long t_len = u.rows();
  Var xz = in_proj.forward(u);
  Var x = slice_cols(xz, 0, d_inner);
  Var z = slice_cols(xz, d_inner, d_inner);

  x = silu(causal_conv1d(x, conv_w, conv_b));

  Var xp = x_proj.forward(x);
  Var dt_low = slice_cols(xp, 0, dt_rank);
  Var b_t = slice_cols(xp, dt_rank, d_state);
  Var c_t = slice_cols(xp, dt_rank + d_state, d_state);
  Var delta = softplus(dt_proj.forward(dt_low));  // t x d_inner

  Var a_neg = neg(exp_op(a_log));  // 1 x (d_inner*d_state)
  Var ones_state = constant(Mat::Ones(1, d_state));
  Var delta_rep = rowwise_kron(delta, expand_rows(ones_state, t_len));
  Var abar = exp_op(mul_rowvec(delta_rep, a_neg));
  Var bx = rowwise_kron(mul(delta, x), b_t);

  Var h = ssm_scan(abar, bx);
  Var y = contract_state(h, c_t);
  y = add(y, mul_rowvec(x, d_skip));
  y = mul(y, silu(z));
  return out_proj.forward(y);
}

void SelectiveSsmLayer::collect(Params& out, const std::string& prefix) {
  in_proj.collect(out, prefix + ".in_proj");
  out.push_back({prefix + ".conv.w", conv_w, false});
  out.push_back({prefix + ".conv.b", conv_b, false});
  x_proj.collect(out, prefix + ".x_proj");
  dt_proj.collect(out, prefix + ".dt_proj");
  out.push_back({prefix + ".a_log", a_log, false});
  out.push_back({prefix + ".d_skip", d_skip, false});
  out_proj.collect(out, prefix + ".out_proj");
}

SsmStack::SsmStack(int depth, long d_model, long d_state, long d_conv,
                   long expand, Rng& rng) {
  if (depth < 1) throw_invalid("SsmStack: depth must be >= 1");
  for (int i = 0; i < depth; ++i)
    layers.emplace_back(d_model, d_state, d_conv, expand, rng);
}

Var SsmStack::forward(const Var& u) const {
  Var h = u;
  for (const auto& layer : layers) h = layer.forward(h);
  return h;
}

void SsmStack::collect(Params& out, const std::string& prefix) {
  for (size_t i = 0; i < layers.size(); ++i)
    layers[i].collect(out, prefix + ".layer" + std::to_string(i));
}

}  // namespace somnus::nn
