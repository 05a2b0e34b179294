#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "somnus/signal/pipeline.hpp"

namespace somnus::data {

// Band-limited oscillation: frequency wanders inside [center-width, center+width].
// Components marked burst are gated by a slow on/off envelope (spindle-like).
struct BandComponent {
  double center_hz = 0.0;
  double width_hz = 0.0;
  double amplitude = 0.0;
  bool burst = false;
};

struct StageModalityProfile {
  std::vector<BandComponent> bands;
  double noise_floor = 0.0;
};

struct EventRecipe {
  double rate = 0.0;          // per-epoch probability of one contained event
  double ecg_ibi_mod = 0.0;   // cyclic inter-beat-interval modulation depth
  double emg_scale = 1.0;     // EMG amplitude multiplier inside the event
};

// Spectral recipes are loosely AASM-flavored test fixtures, not a
// physiological claim. Events are drawn per epoch and contained within it, so
// `rate` is exactly the per-epoch label probability.
struct SynthSpec {
  int subject_count = 4;
  int epochs_per_subject = 200;
  uint64_t seed = 1234;

  // stage_profiles[stage][modality]
  std::array<std::array<StageModalityProfile, 4>, signal::kStageCount>
      stage_profiles;

  EventRecipe apnea{0.12, 0.28, 1.30};
  EventRecipe hypopnea{0.10, 0.14, 1.15};

  double unscored_rate = 0.02;   // epochs emitted with M / ? codes
  double ambiguity_rate = 0.18;  // epochs blended toward a confusable stage

  double ecg_base_ibi_lo_s = 0.80;
  double ecg_base_ibi_hi_s = 1.05;
  double ecg_ibi_jitter = 0.02;

  SynthSpec();  // fills stage_profiles with the default recipes
};

void validate_spec(const SynthSpec& spec);

signal::PsgRecord generate_subject(const SynthSpec& spec, int subject_index);
std::vector<signal::PsgRecord> generate(const SynthSpec& spec);

}  // namespace somnus::data
