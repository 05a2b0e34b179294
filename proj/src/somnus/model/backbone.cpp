#include "somnus/model/backbone.hpp"

#include <numeric>

#include "somnus/common.hpp"

namespace somnus::model {

using namespace somnus::nn;

Var nt_xent(const Var& a_rows, const Var& b_rows, double tau, NtXentMode mode) {
  if (!a_rows.defined() || !b_rows.defined())
    throw_invalid("nt_xent: undefined embedding stack");
  const long n = a_rows.rows();
  if (n < 2) throw_invalid("nt_xent: need at least 2 pairs for negatives");
  if (b_rows.rows() != n || b_rows.cols() != a_rows.cols())
    throw_invalid("nt_xent: mismatched embedding stacks");
  if (!(tau > 0.0)) throw_invalid("nt_xent: temperature must be positive");

  if (mode == NtXentMode::banks) {
    std::vector<int> diag(static_cast<size_t>(n));
    std::iota(diag.begin(), diag.end(), 0);
    Var ab = scale(matmul(a_rows, transpose(b_rows)), 1.0 / tau);
    Var ba = scale(matmul(b_rows, transpose(a_rows)), 1.0 / tau);
    return scale(add(softmax_cross_entropy(ab, diag),
                     softmax_cross_entropy(ba, diag)),
                 0.5);
  }

  std::vector<int> perm(static_cast<size_t>(2 * n));
  std::vector<int> targets(static_cast<size_t>(2 * n));
  for (long k = 0; k < n; ++k) {
    perm[static_cast<size_t>(2 * k)] = static_cast<int>(k);
    perm[static_cast<size_t>(2 * k + 1)] = static_cast<int>(n + k);
    targets[static_cast<size_t>(2 * k)] = static_cast<int>(2 * k + 1);
    targets[static_cast<size_t>(2 * k + 1)] = static_cast<int>(2 * k);
  }
  Var full = gather_rows(concat_rows({a_rows, b_rows}), perm);
  Var sims = scale(matmul(full, transpose(full)), 1.0 / tau);
  Mat self_mask = Mat::Zero(2 * n, 2 * n);
  self_mask.diagonal().setConstant(-1e9);
  return softmax_cross_entropy(add(sims, constant(self_mask)), targets);
}

void BackboneConfig::validate() const {
  if (enc_dim <= 0 || dec_dim <= 0 || enc_depth <= 0 || dec_depth <= 0)
    throw_invalid("backbone: model dimensions must be positive");
  if (enc_heads <= 0 || enc_dim % enc_heads != 0)
    throw_invalid("backbone: enc_dim must be divisible by enc_heads");
  if (dec_heads <= 0 || dec_dim % dec_heads != 0)
    throw_invalid("backbone: dec_dim must be divisible by dec_heads");
  if (!(temperature > 0.0))
    throw_invalid("backbone: temperature must be positive");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
    throw_invalid("backbone: mask_ratio must lie in (0, 1)");
  if (!(frame_size_s > 0.0))
    throw_invalid("backbone: frame_size_s must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0))
    throw_invalid("backbone: overlap must lie in [0, 1)");
  if (mlp_ratio <= 0) throw_invalid("backbone: mlp_ratio must be positive");
}

Backbone::Backbone(const BackboneConfig& cfg_, long frame_len_, Rng& rng)
    : cfg(cfg_), frame_len(frame_len_) {
  cfg.validate();
  if (frame_len <= 0) throw_invalid("backbone: frame length must be positive");
  patch_embed = Linear(frame_len, cfg.enc_dim, rng);
  encoder = TransformerEncoder(cfg.enc_depth, cfg.enc_dim, cfg.enc_heads,
                               cfg.mlp_ratio * cfg.enc_dim, rng);
  projector = ProjectionHead(cfg.enc_dim, cfg.projection_hidden, rng);
  dec_embed = Linear(cfg.enc_dim, cfg.dec_dim, rng);
  Mat mt(1, cfg.dec_dim);
  for (long j = 0; j < cfg.dec_dim; ++j) mt(0, j) = rng.trunc_normal(0.02);
  mask_token = Var(mt, true);
  decoder = TransformerEncoder(cfg.dec_depth, cfg.dec_dim, cfg.dec_heads,
                               cfg.mlp_ratio * cfg.dec_dim, rng);
  dec_out = Linear(cfg.dec_dim, frame_len, rng);
}

Var Backbone::tokens_with_pos(const Mat& frames) const {
  if (frames.rows() < 1) throw_invalid("backbone: empty frame sequence");
  if (frames.cols() != frame_len)
    throw_invalid("backbone: frame length mismatch");
  Var x = patch_embed.forward(constant(frames));
  return add(x, constant(sinusoidal_positions(frames.rows(), cfg.enc_dim)));
}

Var Backbone::encode_tokens(const Var& tokens, const EncoderAdapters* ad,
                            Rng& rng, bool training) const {
  return encoder.forward(tokens, ad, rng, training);
}

Var Backbone::encode_epoch(const Mat& frames) const {
  Rng rng(0);
  return encode_tokens(tokens_with_pos(frames), nullptr, rng, false);
}

std::vector<int> unshuffle_order(const MaskPlan& plan, long n) {
  if (plan.kept.empty() || plan.masked.empty())
    throw_invalid("mask plan needs at least one kept and one masked frame");
  std::vector<int> order(static_cast<size_t>(n), -1);
  auto place = [&](const std::vector<int>& idx, int base) {
    for (size_t k = 0; k < idx.size(); ++k) {
      int i = idx[k];
      if (i < 0 || i >= n) throw_invalid("mask index out of range");
      if (order[static_cast<size_t>(i)] != -1)
        throw_invalid("mask plan repeats an index");
      order[static_cast<size_t>(i)] = base + static_cast<int>(k);
    }
  };
  place(plan.kept, 0);
  place(plan.masked, static_cast<int>(plan.kept.size()));
  for (int v : order)
    if (v == -1) throw_invalid("mask plan does not cover all positions");
  return order;
}

Var masked_mse(const Var& target, const Var& rec,
               const std::vector<int>& masked) {
  if (masked.empty()) throw_invalid("masked_mse: no masked positions");
  if (target.rows() != rec.rows() || target.cols() != rec.cols())
    throw_invalid("masked_mse: shape mismatch");
  Var diff = sub(gather_rows(target, masked), gather_rows(rec, masked));
  return mean(square(diff));
}

Backbone::ViewOut Backbone::forward_view(const Mat& frames,
                                         const MaskPlan& plan, Rng& rng,
                                         bool training) const {
  const long n = frames.rows();
  std::vector<int> order = unshuffle_order(plan, n);
  Var toks = tokens_with_pos(frames);
  Var enc = encode_tokens(gather_rows(toks, plan.kept), nullptr, rng, training);
  Var pooled = scale(colwise_sum(enc), 1.0 / static_cast<double>(plan.kept.size()));
  Var proj = l2_normalize_rows(projector.forward(pooled));

  Var stack = concat_rows(
      {dec_embed.forward(enc),
       expand_rows(mask_token, static_cast<long>(plan.masked.size()))});
  Var full = add(gather_rows(stack, order),
                 constant(sinusoidal_positions(n, cfg.dec_dim)));
  Var dec = decoder.forward(full, nullptr, rng, training);
  Var rec = dec_out.forward(dec);
  return {proj, masked_mse(constant(frames), rec, plan.masked)};
}

BackboneLosses Backbone::pretrain_step(const std::vector<Mat>& batch_frames,
                                       Rng& rng, bool training) const {
  if (batch_frames.size() < 2)
    throw_invalid("backbone: pretraining batch must hold at least 2 samples");
  std::vector<Var> pa, pb, recs;
  pa.reserve(batch_frames.size());
  pb.reserve(batch_frames.size());
  recs.reserve(batch_frames.size());
  for (const Mat& frames : batch_frames) {
    MaskPlan plan_a = sample_mask(static_cast<int>(frames.rows()),
                                  cfg.mask_ratio, rng);
    MaskPlan plan_b = sample_mask(static_cast<int>(frames.rows()),
                                  cfg.mask_ratio, rng);
    ViewOut va = forward_view(frames, plan_a, rng, training);
    ViewOut vb = forward_view(frames, plan_b, rng, training);
    pa.push_back(va.proj);
    pb.push_back(vb.proj);
    recs.push_back(scale(add(va.recon, vb.recon), 0.5));
  }
  Var recon = mean(concat_rows(recs));
  Var contra =
      nt_xent(concat_rows(pa), concat_rows(pb), cfg.temperature, cfg.contra_mode);
  return {recon, contra, add(recon, contra)};
}

void Backbone::collect(Params& out, const std::string& prefix) {
  patch_embed.collect(out, prefix + ".patch");
  encoder.collect(out, prefix + ".enc");
  projector.collect(out, prefix + ".proj");
  dec_embed.collect(out, prefix + ".dec_embed");
  out.push_back({prefix + ".mask_token", mask_token, false});
  decoder.collect(out, prefix + ".dec");
  dec_out.collect(out, prefix + ".dec_out");
}

}  // namespace somnus::model
