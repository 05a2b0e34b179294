#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "somnus/model/backbone.hpp"

namespace somnus::model {

struct LoraConfig {
  long rank = 4;
  double alpha = 16.0;
  double dropout = 0.05;
};

struct FusionConfig {
  long mm_dim = 512;
  int mm_depth = 4;
  long mm_heads = 8;
  long dec_dim = 256;
  int dec_depth = 3;
  long dec_heads = 8;
  std::vector<long> projection_hidden = {512, 256};
  double temperature = 0.1;
  double mask_ratio = 0.4;
  LoraConfig lora;
  double contra_weight = 1.0;
  long mlp_ratio = 4;
  NtXentMode contra_mode = NtXentMode::interleaved;

  void validate() const;
};

// Each stream is one input channel; streams of the same modality reference the
// same shared backbone by key but carry their own adapters, projections,
// decoder, and mask token.
struct StreamSpec {
  std::string name;
  std::string base;
};

using FusionLosses = BackboneLosses;

class FusionModel {
 public:
  FusionModel() = default;
  FusionModel(const FusionConfig& cfg, std::vector<StreamSpec> streams,
              std::map<std::string, std::shared_ptr<Backbone>> bases, Rng& rng);

  // Adapted backbone tokens for stream m (full sequence, no masking).
  Var encode_stream(size_t m, const Mat& frames, Rng& rng, bool training) const;
  // Per-stream projection to mm_dim plus positional encoding.
  Var project_and_pose(size_t m, const Var& stream_tokens) const;

  struct SampleOut {
    std::vector<Var> stream_tokens;  // e per stream, N_m x enc_dim
    std::vector<Var> fused_kept;     // kept fusion tokens per stream
    std::vector<nn::MaskPlan> plans;
    Var fusion_pooled;  // 1 x mm_dim, mean over every kept fusion token
    Var recon;          // scalar
  };
  SampleOut forward_masked(const std::vector<Mat>& frames_per_stream, Rng& rng,
                           bool training) const;

  FusionLosses pretrain_step(const std::vector<std::vector<Mat>>& batch,
                             Rng& rng, bool training = true) const;

  struct FeatureOut {
    Var tokens;  // (sum N_m) x mm_dim fused tokens, streams in order
    std::vector<long> offsets;
    std::vector<long> counts;
  };
  // No masking, eval mode; the path every downstream head consumes.
  FeatureOut forward_features(const std::vector<Mat>& frames_per_stream) const;

  // Raw values of the input to fusion block `block` (eval mode, no graph).
  Mat block_input_eval(const std::vector<Mat>& frames_per_stream,
                       int block) const;
  // Runs fusion blocks [block, depth) on x; with a cached block input this
  // gives gradients to late-block parameters without re-running the prefix.
  Var encode_from_block(const Var& x, int block, Rng& rng, bool training) const;

  void collect_trainable(nn::Params& out);
  void collect_bases(nn::Params& out);
  void collect_all(nn::Params& out);

  FusionConfig cfg;
  std::vector<StreamSpec> streams;
  std::map<std::string, std::shared_ptr<Backbone>> bases;
  std::vector<nn::EncoderAdapters> adapters;
  std::vector<nn::Linear> stream_proj;  // enc_dim -> mm_dim
  nn::TransformerEncoder mm_encoder;
  std::vector<Var> mask_tokens;  // 1 x mm_dim each
  std::vector<nn::Linear> dec_embed;
  std::vector<nn::TransformerEncoder> decoders;
  std::vector<nn::Linear> dec_out;  // dec_dim -> enc_dim
  std::vector<nn::ProjectionHead> sig_proj;
  nn::ProjectionHead fusion_proj;
};

}  // namespace somnus::model
