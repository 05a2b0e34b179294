#pragma once

#include "somnus/nn/layers.hpp"

namespace somnus::nn {

// Value-domain first-order scans h_t = a_t .* h_{t-1} + b_t over rows=time.
// Both orderings must agree to high precision; the Blelloch form composes
// affine maps (a, b) via (a2*a1, a2*b1 + b2) in an up/down sweep.
Mat scan_sequential(const Mat& a, const Mat& b);
Mat scan_blelloch(const Mat& a, const Mat& b);

// Mamba-flavored selective state-space layer:
//   x, z = in_proj(u); x = SiLU(causal_conv(x))
//   delta = softplus(dt_proj(low_rank)); A = -exp(A_log)
//   h_t = exp(delta A) h_{t-1} + delta B_t x_t;  y_t = C_t h_t + D x_t
//   out = out_proj(y * SiLU(z))
// With every parameter zero the layer output is exactly zero.
class SelectiveSsmLayer {
 public:
  SelectiveSsmLayer() = default;
  SelectiveSsmLayer(long d_model, long d_state, long d_conv, long expand,
                    Rng& rng);
  Var forward(const Var& u) const;
  void collect(Params& out, const std::string& prefix);

  long d_model = 0, d_state = 0, d_conv = 0, d_inner = 0, dt_rank = 0;
  Linear in_proj;   // d_model -> 2*d_inner, no bias
  Var conv_w;       // d_conv x d_inner
  Var conv_b;       // 1 x d_inner
  Linear x_proj;    // d_inner -> dt_rank + 2*d_state, no bias
  Linear dt_proj;   // dt_rank -> d_inner, bias carries the dt init
  Var a_log;        // 1 x (d_inner * d_state), row-major [i*d_state + j]
  Var d_skip;       // 1 x d_inner
  Linear out_proj;  // d_inner -> d_model, no bias
};

class SsmStack {
 public:
  SsmStack() = default;
  SsmStack(int depth, long d_model, long d_state, long d_conv, long expand,
           Rng& rng);
  Var forward(const Var& u) const;  // no internal residuals
  void collect(Params& out, const std::string& prefix);

  std::vector<SelectiveSsmLayer> layers;
};

}  // namespace somnus::nn
