#pragma once

#include <string>
#include <vector>

#include "somnus/nn/graph.hpp"
#include "somnus/rng.hpp"

namespace somnus::nn {

struct NamedParam {
  std::string name;
  Var var;
  bool buffer = false;  // saved in checkpoints but never optimized
};
using Params = std::vector<NamedParam>;

void set_trainable(Params& params, bool trainable);
void zero_grads(Params& params);

class Linear {
 public:
  Linear() = default;
  Linear(long in_dim, long out_dim, Rng& rng, bool bias = true);
  Var forward(const Var& x) const;
  void collect(Params& out, const std::string& prefix);
  long in_dim() const { return w.defined() ? w.rows() : 0; }
  long out_dim() const { return w.defined() ? w.cols() : 0; }

  Var w;  // in x out
  Var b;  // 1 x out (undefined when bias = false)
};

// y = base(x) + (alpha/r) * dropout(x) A B, A: in x r ~ N(0, 0.02), B: r x out = 0.
struct LoraAdapter {
  Var a;
  Var bm;
  double scale = 0.0;
  double dropout_p = 0.0;

  LoraAdapter() = default;
  LoraAdapter(long in_dim, long out_dim, long rank, double alpha,
              double dropout_p, Rng& rng);
  void collect(Params& out, const std::string& prefix);
};

Var lora_forward(const Linear& base, const LoraAdapter* adapter, const Var& x,
                 Rng& rng, bool training);

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(long dim, double eps = 1e-5);
  Var forward(const Var& x) const;
  void collect(Params& out, const std::string& prefix);

  Var gamma, beta;
  double eps = 1e-5;
};

// Batch statistics over rows; running stats follow torch conventions
// (biased variance to normalize, unbiased into the running buffer).
class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  explicit BatchNorm1d(long dim, double eps = 1e-5, double momentum = 0.1);
  Var forward(const Var& x, bool training);
  void collect(Params& out, const std::string& prefix);

  Var gamma, beta;
  Var running_mean, running_var;  // buffers
  double eps = 1e-5;
  double momentum = 0.1;
};

struct AttentionAdapters {
  LoraAdapter q, k, v, o;
};

class MultiheadAttention {
 public:
  MultiheadAttention() = default;
  MultiheadAttention(long dim, long heads, Rng& rng);
  Var forward(const Var& x, const AttentionAdapters* ad, Rng& rng,
              bool training) const;
  void collect(Params& out, const std::string& prefix);

  Linear wq, wk, wv, wo;
  long heads = 0;
};

struct BlockAdapters {
  AttentionAdapters attn;
  LoraAdapter fc1, fc2;
};

// Pre-norm transformer block: x += Attn(LN(x)); x += MLP(LN(x)).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(long dim, long heads, long mlp_hidden, Rng& rng);
  Var forward(const Var& x, const BlockAdapters* ad, Rng& rng,
              bool training) const;
  void collect(Params& out, const std::string& prefix);

  LayerNorm ln1, ln2;
  MultiheadAttention attn;
  Linear fc1, fc2;
};

struct EncoderAdapters {
  std::vector<BlockAdapters> blocks;
};

// A stack of pre-norm blocks with no final LayerNorm: with zeroed residual
// projections the stack is exactly the identity.
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(int depth, long dim, long heads, long mlp_hidden, Rng& rng);
  Var forward(const Var& x, const EncoderAdapters* ad, Rng& rng,
              bool training) const;
  void collect(Params& out, const std::string& prefix);

  std::vector<TransformerBlock> blocks;
};

EncoderAdapters make_encoder_adapters(const TransformerEncoder& enc, long rank,
                                      double alpha, double dropout_p, Rng& rng);
void collect_encoder_adapters(EncoderAdapters& ad, Params& out,
                              const std::string& prefix);

// pe[p, 2i] = sin(p / 10000^(2i/d)), pe[p, 2i+1] = cos(p / 10000^(2i/d)).
Mat sinusoidal_positions(long n, long dim);

// MLP head with GELU between layers and a plain final linear.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(long in_dim, const std::vector<long>& hidden, Rng& rng);
  Var forward(const Var& x) const;
  void collect(Params& out, const std::string& prefix);

  std::vector<Linear> layers;
};

struct MaskPlan {
  std::vector<int> kept;    // ascending
  std::vector<int> masked;  // ascending
};

// round-half-away ratio*n masked, clamped so both sides stay nonempty.
MaskPlan sample_mask(int n, double mask_ratio, Rng& rng);

Var l2_normalize_rows(const Var& x, double eps = 1e-12);

}  // namespace somnus::nn
