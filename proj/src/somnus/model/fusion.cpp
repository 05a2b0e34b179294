#include "somnus/model/fusion.hpp"

#include "somnus/common.hpp"

namespace somnus::model {

using namespace somnus::nn;

void FusionConfig::validate() const {
  if (mm_dim <= 0 || dec_dim <= 0 || mm_depth <= 0 || dec_depth <= 0)
    throw_invalid("fusion: model dimensions must be positive");
  if (mm_heads <= 0 || mm_dim % mm_heads != 0)
    throw_invalid("fusion: mm_dim must be divisible by mm_heads");
  if (dec_heads <= 0 || dec_dim % dec_heads != 0)
    throw_invalid("fusion: dec_dim must be divisible by dec_heads");
  if (projection_hidden.empty())
    throw_invalid("fusion: projection_hidden must not be empty");
  if (!(temperature > 0.0)) throw_invalid("fusion: temperature must be positive");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
    throw_invalid("fusion: mask_ratio must lie in (0, 1)");
  if (lora.rank <= 0) throw_invalid("fusion: lora rank must be positive");
  if (!(lora.dropout >= 0.0 && lora.dropout < 1.0))
    throw_invalid("fusion: lora dropout must lie in [0, 1)");
  if (contra_weight < 0.0)
    throw_invalid("fusion: contra_weight must be nonnegative");
  if (mlp_ratio <= 0) throw_invalid("fusion: mlp_ratio must be positive");
}

FusionModel::FusionModel(const FusionConfig& cfg_,
                         std::vector<StreamSpec> streams_,
                         std::map<std::string, std::shared_ptr<Backbone>> bases_,
                         Rng& rng)
    : cfg(cfg_), streams(std::move(streams_)), bases(std::move(bases_)) {
  cfg.validate();
  if (streams.empty()) throw_invalid("fusion: at least one stream required");
  for (const auto& s : streams) {
    auto it = bases.find(s.base);
    if (it == bases.end() || !it->second)
      throw_invalid("fusion: stream '" + s.name + "' references missing base '" +
                    s.base + "'");
  }
  const size_t m_count = streams.size();
  adapters.reserve(m_count);
  stream_proj.reserve(m_count);
  mask_tokens.reserve(m_count);
  dec_embed.reserve(m_count);
  decoders.reserve(m_count);
  dec_out.reserve(m_count);
  sig_proj.reserve(m_count);
  for (const auto& s : streams) {
    const Backbone& base = *bases.at(s.base);
    adapters.push_back(make_encoder_adapters(base.encoder, cfg.lora.rank,
                                             cfg.lora.alpha, cfg.lora.dropout,
                                             rng));
    stream_proj.emplace_back(base.cfg.enc_dim, cfg.mm_dim, rng);
    Mat mt(1, cfg.mm_dim);
    for (long j = 0; j < cfg.mm_dim; ++j) mt(0, j) = rng.trunc_normal(0.02);
    mask_tokens.emplace_back(mt, true);
    dec_embed.emplace_back(cfg.mm_dim, cfg.dec_dim, rng);
    decoders.emplace_back(cfg.dec_depth, cfg.dec_dim, cfg.dec_heads,
                          cfg.mlp_ratio * cfg.dec_dim, rng);
    dec_out.emplace_back(cfg.dec_dim, base.cfg.enc_dim, rng);
    sig_proj.emplace_back(base.cfg.enc_dim, cfg.projection_hidden, rng);
  }
  mm_encoder = TransformerEncoder(cfg.mm_depth, cfg.mm_dim, cfg.mm_heads,
                                  cfg.mlp_ratio * cfg.mm_dim, rng);
  fusion_proj = ProjectionHead(cfg.mm_dim, cfg.projection_hidden, rng);
}

Var FusionModel::encode_stream(size_t m, const Mat& frames, Rng& rng,
                               bool training) const {
  if (m >= streams.size()) throw_invalid("fusion: stream index out of range");
  const Backbone& base = *bases.at(streams[m].base);
  Var toks = base.tokens_with_pos(frames);
  return base.encode_tokens(toks, &adapters[m], rng, training);
}

Var FusionModel::project_and_pose(size_t m, const Var& stream_tokens) const {
  if (m >= streams.size()) throw_invalid("fusion: stream index out of range");
  if (!stream_tokens.defined() || stream_tokens.rows() < 1)
    throw_invalid("fusion: empty stream token sequence");
  Var z = stream_proj[m].forward(stream_tokens);
  return add(z, constant(sinusoidal_positions(stream_tokens.rows(), cfg.mm_dim)));
}

namespace {

void check_stream_count(const std::vector<StreamSpec>& streams,
                        const std::vector<Mat>& frames_per_stream) {
  if (frames_per_stream.size() != streams.size())
    throw_invalid("fusion: sample must carry one frame matrix per stream");
}

}  // namespace

FusionModel::SampleOut FusionModel::forward_masked(
    const std::vector<Mat>& frames_per_stream, Rng& rng, bool training) const {
  check_stream_count(streams, frames_per_stream);
  const size_t m_count = streams.size();

  SampleOut out;
  out.stream_tokens.reserve(m_count);
  out.plans.reserve(m_count);
  std::vector<Var> kept_z(m_count);
  std::vector<long> kept_counts(m_count);
  for (size_t m = 0; m < m_count; ++m) {
    Var e = encode_stream(m, frames_per_stream[m], rng, training);
    out.stream_tokens.push_back(e);
    Var z = project_and_pose(m, e);
    MaskPlan plan =
        sample_mask(static_cast<int>(z.rows()), cfg.mask_ratio, rng);
    kept_z[m] = gather_rows(z, plan.kept);
    kept_counts[m] = static_cast<long>(plan.kept.size());
    out.plans.push_back(std::move(plan));
  }

  Var fused = mm_encoder.forward(concat_rows(kept_z), nullptr, rng, training);
  long total_kept = fused.rows();
  out.fusion_pooled =
      scale(colwise_sum(fused), 1.0 / static_cast<double>(total_kept));

  out.fused_kept.reserve(m_count);
  std::vector<Var> recs;
  recs.reserve(m_count);
  long offset = 0;
  for (size_t m = 0; m < m_count; ++m) {
    Var h = slice_rows(fused, offset, kept_counts[m]);
    offset += kept_counts[m];
    out.fused_kept.push_back(h);

    const MaskPlan& plan = out.plans[m];
    const long n = out.stream_tokens[m].rows();
    std::vector<int> order = unshuffle_order(plan, n);
    Var stack = concat_rows(
        {h, expand_rows(mask_tokens[m], static_cast<long>(plan.masked.size()))});
    Var full = add(dec_embed[m].forward(gather_rows(stack, order)),
                   constant(sinusoidal_positions(n, cfg.dec_dim)));
    Var dec = decoders[m].forward(full, nullptr, rng, training);
    Var r = dec_out[m].forward(dec);
    recs.push_back(masked_mse(out.stream_tokens[m], r, plan.masked));
  }
  out.recon = mean(concat_rows(recs));
  return out;
}

FusionLosses FusionModel::pretrain_step(
    const std::vector<std::vector<Mat>>& batch, Rng& rng, bool training) const {
  if (batch.size() < 2)
    throw_invalid("fusion: pretraining batch must hold at least 2 samples");
  const size_t m_count = streams.size();
  std::vector<Var> recs, fh_rows;
  std::vector<std::vector<Var>> sh_rows(m_count);
  recs.reserve(batch.size());
  fh_rows.reserve(batch.size());
  for (const auto& sample : batch) {
    SampleOut fwd = forward_masked(sample, rng, training);
    recs.push_back(fwd.recon);
    fh_rows.push_back(
        l2_normalize_rows(fusion_proj.forward(fwd.fusion_pooled)));
    for (size_t m = 0; m < m_count; ++m) {
      const Var& e = fwd.stream_tokens[m];
      Var pooled =
          scale(colwise_sum(e), 1.0 / static_cast<double>(e.rows()));
      sh_rows[m].push_back(l2_normalize_rows(sig_proj[m].forward(pooled)));
    }
  }
  Var recon = mean(concat_rows(recs));
  Var fh_stack = concat_rows(fh_rows);
  std::vector<Var> per_mod;
  per_mod.reserve(m_count);
  for (size_t m = 0; m < m_count; ++m)
    per_mod.push_back(nt_xent(fh_stack, concat_rows(sh_rows[m]),
                              cfg.temperature, cfg.contra_mode));
  Var contra = mean(concat_rows(per_mod));
  Var total = add(recon, scale(contra, cfg.contra_weight));
  return {recon, contra, total};
}

FusionModel::FeatureOut FusionModel::forward_features(
    const std::vector<Mat>& frames_per_stream) const {
  check_stream_count(streams, frames_per_stream);
  Rng rng(0);
  std::vector<Var> z_all(streams.size());
  FeatureOut out;
  out.offsets.resize(streams.size());
  out.counts.resize(streams.size());
  long offset = 0;
  for (size_t m = 0; m < streams.size(); ++m) {
    Var e = encode_stream(m, frames_per_stream[m], rng, false);
    z_all[m] = project_and_pose(m, e);
    out.offsets[m] = offset;
    out.counts[m] = z_all[m].rows();
    offset += z_all[m].rows();
  }
  out.tokens = mm_encoder.forward(concat_rows(z_all), nullptr, rng, false);
  return out;
}

Mat FusionModel::block_input_eval(const std::vector<Mat>& frames_per_stream,
                                  int block) const {
  check_stream_count(streams, frames_per_stream);
  if (block < 0 || block > static_cast<int>(mm_encoder.blocks.size()))
    throw_invalid("fusion: block index out of range");
  Rng rng(0);
  std::vector<Var> z_all(streams.size());
  for (size_t m = 0; m < streams.size(); ++m) {
    Var e = encode_stream(m, frames_per_stream[m], rng, false);
    z_all[m] = project_and_pose(m, e);
  }
  Var x = concat_rows(z_all);
  for (int b = 0; b < block; ++b)
    x = mm_encoder.blocks[static_cast<size_t>(b)].forward(x, nullptr, rng,
                                                          false);
  return x.value();
}

Var FusionModel::encode_from_block(const Var& x, int block, Rng& rng,
                                   bool training) const {
  if (block < 0 || block > static_cast<int>(mm_encoder.blocks.size()))
    throw_invalid("fusion: block index out of range");
  Var y = x;
  for (size_t b = static_cast<size_t>(block); b < mm_encoder.blocks.size(); ++b)
    y = mm_encoder.blocks[b].forward(y, nullptr, rng, training);
  return y;
}

void FusionModel::collect_trainable(Params& out) {
  for (size_t m = 0; m < streams.size(); ++m) {
    const std::string p = streams[m].name;
    collect_encoder_adapters(adapters[m], out, p + ".adapter");
    stream_proj[m].collect(out, p + ".proj");
    out.push_back({p + ".mask_token", mask_tokens[m], false});
    dec_embed[m].collect(out, p + ".dec_embed");
    decoders[m].collect(out, p + ".dec");
    dec_out[m].collect(out, p + ".dec_out");
    sig_proj[m].collect(out, p + ".sig_proj");
  }
  mm_encoder.collect(out, "mm");
  fusion_proj.collect(out, "fusion_proj");
}

void FusionModel::collect_bases(Params& out) {
  for (auto& [key, base] : bases) base->collect(out, "base." + key);
}

void FusionModel::collect_all(Params& out) {
  collect_bases(out);
  collect_trainable(out);
}

}  // namespace somnus::model
