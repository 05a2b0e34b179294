#include "somnus/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "somnus/common.hpp"

namespace somnus::nn {

void set_trainable(Params& params, bool trainable) {
  for (auto& p : params)
    if (!p.buffer) p.var.node()->requires_grad = trainable;
}

void zero_grads(Params& params) {
  for (auto& p : params) p.var.zero_grad();
}

Linear::Linear(long in_dim, long out_dim, Rng& rng, bool bias) {
  if (in_dim < 1 || out_dim < 1) throw_invalid("Linear: dims must be >= 1");
  Mat wm(in_dim, out_dim);
  for (long j = 0; j < out_dim; ++j)
    for (long i = 0; i < in_dim; ++i) wm(i, j) = rng.trunc_normal(0.02);
  w = Var(std::move(wm), true);
  if (bias) b = Var(Mat::Zero(1, out_dim), true);
}

Var Linear::forward(const Var& x) const {
  Var y = matmul(x, w);
  if (b.defined()) y = add_rowvec(y, b);
  return y;
}

void Linear::collect(Params& out, const std::string& prefix) {
  out.push_back({prefix + ".w", w, false});
  if (b.defined()) out.push_back({prefix + ".b", b, false});
}

LoraAdapter::LoraAdapter(long in_dim, long out_dim, long rank, double alpha,
                         double dropout_p_, Rng& rng)
    : scale(alpha / static_cast<double>(rank)), dropout_p(dropout_p_) {
  if (rank < 1) throw_invalid("LoraAdapter: rank must be >= 1");
  Mat am(in_dim, rank);
  for (long j = 0; j < rank; ++j)
    for (long i = 0; i < in_dim; ++i) am(i, j) = rng.normal(0.0, 0.02);
  a = Var(std::move(am), true);
  bm = Var(Mat::Zero(rank, out_dim), true);
}

void LoraAdapter::collect(Params& out, const std::string& prefix) {
  out.push_back({prefix + ".a", a, false});
  out.push_back({prefix + ".b", bm, false});
}

Var lora_forward(const Linear& base, const LoraAdapter* adapter, const Var& x,
                 Rng& rng, bool training) {
  Var y = base.forward(x);
  if (adapter && adapter->a.defined()) {
    Var xa = matmul(dropout(x, adapter->dropout_p, rng, training), adapter->a);
    y = add(y, scale(matmul(xa, adapter->bm), adapter->scale));
  }
  return y;
}

LayerNorm::LayerNorm(long dim, double eps_) : eps(eps_) {
  gamma = Var(Mat::Ones(1, dim), true);
  beta = Var(Mat::Zero(1, dim), true);
}

Var LayerNorm::forward(const Var& x) const {
  Var mu = rowwise_mean(x);
  Var xc = add_colvec(x, neg(mu));
  Var var_b = rowwise_mean(square(xc));
  Var inv = power(add_scalar(var_b, eps), -0.5);
  Var y = mul_colvec(xc, inv);
  return add_rowvec(mul_rowvec(y, gamma), beta);
}

void LayerNorm::collect(Params& out, const std::string& prefix) {
  out.push_back({prefix + ".gamma", gamma, false});
  out.push_back({prefix + ".beta", beta, false});
}

BatchNorm1d::BatchNorm1d(long dim, double eps_, double momentum_)
    : eps(eps_), momentum(momentum_) {
  gamma = Var(Mat::Ones(1, dim), true);
  beta = Var(Mat::Zero(1, dim), true);
  running_mean = Var(Mat::Zero(1, dim), false);
  running_var = Var(Mat::Ones(1, dim), false);
}

Var BatchNorm1d::forward(const Var& x, bool training) {
  if (!training) {
    Mat inv = (running_var.value().array() + eps).rsqrt();
    Var y = mul_rowvec(sub(x, expand_rows(constant(running_mean.value()),
                                          x.rows())),
                       constant(inv.matrix()));
    return add_rowvec(mul_rowvec(y, gamma), beta);
  }
  const long m = x.rows();
  if (m < 2) throw_invalid("BatchNorm1d: training needs at least 2 rows");
  Var mu = scale(colwise_sum(x), 1.0 / static_cast<double>(m));
  Var xc = sub(x, expand_rows(mu, m));
  Var var_b = scale(colwise_sum(square(xc)), 1.0 / static_cast<double>(m));
  Var inv = power(add_scalar(var_b, eps), -0.5);
  Var y = mul_rowvec(xc, inv);

  running_mean.value() =
      (1.0 - momentum) * running_mean.value() + momentum * mu.value();
  const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
  running_var.value() = (1.0 - momentum) * running_var.value() +
                        momentum * unbias * var_b.value();
  return add_rowvec(mul_rowvec(y, gamma), beta);
}

void BatchNorm1d::collect(Params& out, const std::string& prefix) {
  out.push_back({prefix + ".gamma", gamma, false});
  out.push_back({prefix + ".beta", beta, false});
  out.push_back({prefix + ".running_mean", running_mean, true});
  out.push_back({prefix + ".running_var", running_var, true});
}

MultiheadAttention::MultiheadAttention(long dim, long heads_, Rng& rng)
    : heads(heads_) {
  if (heads < 1 || dim % heads != 0)
    throw_invalid("MultiheadAttention: dim must divide evenly into heads");
  wq = Linear(dim, dim, rng);
  wk = Linear(dim, dim, rng);
  wv = Linear(dim, dim, rng);
  wo = Linear(dim, dim, rng);
}

Var MultiheadAttention::forward(const Var& x, const AttentionAdapters* ad,
                                Rng& rng, bool training) const {
  const long dim = wq.out_dim();
  const long dh = dim / heads;
  Var q = lora_forward(wq, ad ? &ad->q : nullptr, x, rng, training);
  Var k = lora_forward(wk, ad ? &ad->k : nullptr, x, rng, training);
  Var v = lora_forward(wv, ad ? &ad->v : nullptr, x, rng, training);
  std::vector<Var> ctx;
  ctx.reserve(heads);
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  for (long h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, dh);
    Var kh = slice_cols(k, h * dh, dh);
    Var vh = slice_cols(v, h * dh, dh);
    Var scores = scale(matmul(qh, transpose(kh)), sc);
    ctx.push_back(matmul(softmax_rows(scores), vh));
  }
  return lora_forward(wo, ad ? &ad->o : nullptr, concat_cols(ctx), rng,
                      training);
}

void MultiheadAttention::collect(Params& out, const std::string& prefix) {
  wq.collect(out, prefix + ".wq");
  wk.collect(out, prefix + ".wk");
  wv.collect(out, prefix + ".wv");
  wo.collect(out, prefix + ".wo");
}

TransformerBlock::TransformerBlock(long dim, long heads, long mlp_hidden,
                                   Rng& rng)
    : ln1(dim), ln2(dim), attn(dim, heads, rng), fc1(dim, mlp_hidden, rng),
      fc2(mlp_hidden, dim, rng) {}

Var TransformerBlock::forward(const Var& x, const BlockAdapters* ad, Rng& rng,
                              bool training) const {
  Var h = add(x, attn.forward(ln1.forward(x), ad ? &ad->attn : nullptr, rng,
                              training));
  Var m = lora_forward(fc1, ad ? &ad->fc1 : nullptr, ln2.forward(h), rng,
                       training);
  m = lora_forward(fc2, ad ? &ad->fc2 : nullptr, gelu(m), rng, training);
  return add(h, m);
}

void TransformerBlock::collect(Params& out, const std::string& prefix) {
  ln1.collect(out, prefix + ".ln1");
  ln2.collect(out, prefix + ".ln2");
  attn.collect(out, prefix + ".attn");
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

TransformerEncoder::TransformerEncoder(int depth, long dim, long heads,
                                       long mlp_hidden, Rng& rng) {
  if (depth < 1) throw_invalid("TransformerEncoder: depth must be >= 1");
  for (int i = 0; i < depth; ++i)
    blocks.emplace_back(dim, heads, mlp_hidden, rng);
}

Var TransformerEncoder::forward(const Var& x, const EncoderAdapters* ad,
                                Rng& rng, bool training) const {
  if (ad && ad->blocks.size() != blocks.size())
    throw_invalid("TransformerEncoder: adapter depth mismatch");
  Var h = x;
  for (size_t i = 0; i < blocks.size(); ++i)
    h = blocks[i].forward(h, ad ? &ad->blocks[i] : nullptr, rng, training);
  return h;
}

void TransformerEncoder::collect(Params& out, const std::string& prefix) {
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(out, prefix + ".block" + std::to_string(i));
}

EncoderAdapters make_encoder_adapters(const TransformerEncoder& enc, long rank,
                                      double alpha, double dropout_p,
                                      Rng& rng) {
  EncoderAdapters ad;
  for (const auto& blk : enc.blocks) {
    const long dim = blk.fc1.in_dim();
    const long hidden = blk.fc1.out_dim();
    BlockAdapters ba;
    ba.attn.q = LoraAdapter(dim, dim, rank, alpha, dropout_p, rng);
    ba.attn.k = LoraAdapter(dim, dim, rank, alpha, dropout_p, rng);
    ba.attn.v = LoraAdapter(dim, dim, rank, alpha, dropout_p, rng);
    ba.attn.o = LoraAdapter(dim, dim, rank, alpha, dropout_p, rng);
    ba.fc1 = LoraAdapter(dim, hidden, rank, alpha, dropout_p, rng);
    ba.fc2 = LoraAdapter(hidden, dim, rank, alpha, dropout_p, rng);
    ad.blocks.push_back(std::move(ba));
  }
  return ad;
}

void collect_encoder_adapters(EncoderAdapters& ad, Params& out,
                              const std::string& prefix) {
  for (size_t i = 0; i < ad.blocks.size(); ++i) {
    const std::string bp = prefix + ".block" + std::to_string(i);
    ad.blocks[i].attn.q.collect(out, bp + ".attn.q");
    ad.blocks[i].attn.k.collect(out, bp + ".attn.k");
    ad.blocks[i].attn.v.collect(out, bp + ".attn.v");
    ad.blocks[i].attn.o.collect(out, bp + ".attn.o");
    ad.blocks[i].fc1.collect(out, bp + ".fc1");
    ad.blocks[i].fc2.collect(out, bp + ".fc2");
  }
}

Mat sinusoidal_positions(long n, long dim) {
  Mat pe(n, dim);
  for (long p = 0; p < n; ++p)
    for (long j = 0; j < dim; ++j) {
      const long i = j / 2;
      const double angle =
          p / std::pow(10000.0, 2.0 * static_cast<double>(i) /
                                    static_cast<double>(dim));
      pe(p, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

ProjectionHead::ProjectionHead(long in_dim, const std::vector<long>& hidden,
                               Rng& rng) {
  if (hidden.empty()) throw_invalid("ProjectionHead: needs at least one layer");
  long d = in_dim;
  for (long h : hidden) {
    layers.emplace_back(d, h, rng);
    d = h;
  }
}

Var ProjectionHead::forward(const Var& x) const {
  Var h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h);
    if (i + 1 < layers.size()) h = gelu(h);
  }
  return h;
}

void ProjectionHead::collect(Params& out, const std::string& prefix) {
  for (size_t i = 0; i < layers.size(); ++i)
    layers[i].collect(out, prefix + ".fc" + std::to_string(i));
}

MaskPlan sample_mask(int n, double mask_ratio, Rng& rng) {
  if (n < 2) throw_invalid("sample_mask: need at least 2 tokens");
  if (mask_ratio < 0.0 || mask_ratio > 1.0)
    throw_invalid("sample_mask: ratio must lie in [0, 1]");
  long n_masked = std::llround(mask_ratio * n);
  n_masked = std::max<long>(1, std::min<long>(n - 1, n_masked));
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  MaskPlan plan;
  plan.masked.assign(idx.begin(), idx.begin() + n_masked);
  plan.kept.assign(idx.begin() + n_masked, idx.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.kept.begin(), plan.kept.end());
  return plan;
}

Var l2_normalize_rows(const Var& x, double eps) {
  Var inv = power(add_scalar(rowwise_sum(square(x)), eps), -0.5);
  return mul_colvec(x, inv);
}

}  // namespace somnus::nn
