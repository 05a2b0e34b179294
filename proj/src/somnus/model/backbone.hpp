#pragma once

#include <vector>

#include "somnus/nn/layers.hpp"

namespace somnus::model {

using nn::Mat;
using nn::Var;

enum class NtXentMode { interleaved, banks };

// a_rows/b_rows are matched n x d stacks of L2-normalized embeddings; row k of
// each forms a positive pair. Interleaved mode builds the classic 2n-element
// set [a0; b0; a1; b1; ...] and treats everything but self as candidates;
// banks mode scores a against b (and b against a) only.
Var nt_xent(const Var& a_rows, const Var& b_rows, double tau,
            NtXentMode mode = NtXentMode::interleaved);

// order[i] = row of [kept block; masked block] holding original position i.
// Throws unless the plan is an exact partition of [0, n) with both sides
// nonempty.
std::vector<int> unshuffle_order(const nn::MaskPlan& plan, long n);

// Squared error restricted to the listed rows, averaged over those rows and
// the vector dimension. Rows outside the list contribute exactly nothing.
Var masked_mse(const Var& target, const Var& rec,
               const std::vector<int>& masked);

struct BackboneConfig {
  long enc_dim = 768;
  int enc_depth = 4;
  long enc_heads = 8;
  long dec_dim = 256;
  int dec_depth = 3;
  long dec_heads = 8;
  std::vector<long> projection_hidden = {1024, 512};
  double temperature = 0.05;
  double mask_ratio = 0.75;
  double frame_size_s = 3.0;
  double overlap = 0.75;
  long mlp_ratio = 4;
  NtXentMode contra_mode = NtXentMode::interleaved;

  void validate() const;
};

struct BackboneLosses {
  Var recon, contra, total;
};

// Masked-autoencoder backbone over frame tokens with a two-view contrastive
// head. One instance per modality; channels of a modality share it.
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& cfg, long frame_len, Rng& rng);

  // Patch embedding plus sinusoidal positions; no masking, no encoding.
  Var tokens_with_pos(const Mat& frames) const;
  Var encode_tokens(const Var& tokens, const nn::EncoderAdapters* ad, Rng& rng,
                    bool training) const;
  // Full unmasked token sequence in eval mode (the e_i for fusion).
  Var encode_epoch(const Mat& frames) const;

  struct ViewOut {
    Var proj;   // 1 x proj_dim, L2-normalized
    Var recon;  // scalar: masked-only MSE with per-dimension mean
  };
  ViewOut forward_view(const Mat& frames, const nn::MaskPlan& plan, Rng& rng,
                       bool training) const;

  BackboneLosses pretrain_step(const std::vector<Mat>& batch_frames, Rng& rng,
                               bool training = true) const;

  void collect(nn::Params& out, const std::string& prefix);

  BackboneConfig cfg;
  long frame_len = 0;
  nn::Linear patch_embed;
  nn::TransformerEncoder encoder;
  nn::ProjectionHead projector;
  nn::Linear dec_embed;
  Var mask_token;  // 1 x dec_dim
  nn::TransformerEncoder decoder;
  nn::Linear dec_out;
};

}  // namespace somnus::model
