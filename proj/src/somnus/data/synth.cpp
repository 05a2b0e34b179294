#include "somnus/data/synth.hpp"

#include <algorithm>
#include <cmath>

#include "somnus/common.hpp"
#include "somnus/rng.hpp"

namespace somnus::data {
namespace {

using signal::Modality;
using signal::PsgRecord;
using signal::Stage;

constexpr double kPi = 3.14159265358979323846;
constexpr double kEegRate = 125.0;
constexpr double kEcgRate = 250.0;

// Sleep-cycle Markov chain with a persistence bias so stages run for a few
// minutes at a time. Rows/cols: W, N1, N2, N3, REM.
constexpr double kTransition[5][5] = {
    {0.88, 0.12, 0.00, 0.00, 0.00},
    {0.05, 0.62, 0.25, 0.00, 0.08},
    {0.01, 0.04, 0.80, 0.10, 0.05},
    {0.00, 0.00, 0.13, 0.87, 0.00},
    {0.03, 0.07, 0.08, 0.00, 0.82},
};

// Confusable partner used for ambiguous epochs.
constexpr int kConfusion[5] = {1, 2, 1, 2, 1};

// Mild stage dependence of heart rate (IBI multiplier).
constexpr double kEcgStageIbi[5] = {0.96, 1.00, 1.02, 1.06, 0.99};

StageModalityProfile eeg_profile(double delta, double theta, double alpha,
                                 double sigma, double beta, double noise) {
  return {{{1.25, 0.75, delta, false},
           {5.50, 1.50, theta, false},
           {10.0, 1.00, alpha, false},
           {13.25, 0.75, sigma, true},
           {21.5, 3.50, beta, false}},
          noise};
}

StageModalityProfile eog_profile(double slow, double defl, double alpha,
                                 double noise) {
  return {{{0.45, 0.25, slow, false},
           {1.00, 0.40, defl, false},
           {10.0, 1.00, alpha, false}},
          noise};
}

StageModalityProfile emg_profile(double band, double noise) {
  return {{{35.0, 8.0, band, false}}, noise};
}

StageModalityProfile ecg_profile() {
  return {{{0.25, 0.08, 0.10, false}}, 0.08};
}

struct Osc {
  double phase = 0.0;
  double freq = 0.0;
};

struct ChannelState {
  std::vector<Osc> oscs;
  double burst_phase = 0.0;
};

ChannelState init_state(const StageModalityProfile& prof, somnus::Rng& rng) {
  ChannelState st;
  for (const auto& b : prof.bands) {
    Osc o;
    o.phase = rng.uniform(0.0, 2.0 * kPi);
    o.freq = b.center_hz + b.width_hz * rng.uniform(-1.0, 1.0);
    st.oscs.push_back(o);
  }
  st.burst_phase = rng.uniform(0.0, 2.0 * kPi);
  return st;
}

StageModalityProfile blend(const StageModalityProfile& own,
                           const StageModalityProfile& other, double own_w) {
  StageModalityProfile out = own;
  const double w2 = 1.0 - own_w;
  for (size_t i = 0; i < out.bands.size(); ++i)
    out.bands[i].amplitude =
        own_w * own.bands[i].amplitude + w2 * other.bands[i].amplitude;
  out.noise_floor = own_w * own.noise_floor + w2 * other.noise_floor;
  return out;
}

struct EventScale {
  int s0 = 0;
  int s1 = 0;
  double scale = 1.0;
};

// Renders one 30 s epoch of band-limited oscillations + noise. When out_neg is
// given, sub-2 Hz components are mirrored into it with opposite sign (EOG pair).
void render_band_epoch(const StageModalityProfile& prof, double rate, int n,
                       double gain, ChannelState& st, somnus::Rng& rng,
                       const std::vector<EventScale>& scales,
                       std::vector<float>& out_pos, std::vector<float>* out_neg) {
  const int walk_stride = std::max(1, static_cast<int>(rate / 10.0));
  const double burst_step = 2.0 * kPi * 0.23 / rate;
  for (int i = 0; i < n; ++i) {
    double low = 0.0, high = 0.0;
    for (size_t b = 0; b < prof.bands.size(); ++b) {
      const auto& band = prof.bands[b];
      auto& osc = st.oscs[b];
      if (i % walk_stride == 0 && band.width_hz > 0.0) {
        osc.freq += 0.02 * band.width_hz * rng.normal();
        osc.freq = std::clamp(osc.freq, band.center_hz - band.width_hz,
                              band.center_hz + band.width_hz);
      }
      osc.phase += 2.0 * kPi * osc.freq / rate;
      double env = 1.0;
      if (band.burst) {
        const double s = std::sin(st.burst_phase);
        env = s > 0.0 ? s * s : 0.0;
      }
      const double v = band.amplitude * env * std::sin(osc.phase);
      (band.center_hz < 2.0 ? low : high) += v;
    }
    st.burst_phase += burst_step;

    double scale = 1.0;
    for (const auto& es : scales)
      if (i >= es.s0 && i < es.s1) scale *= es.scale;

    const double pos = (low + high + prof.noise_floor * rng.normal()) * scale;
    out_pos.push_back(static_cast<float>(gain * pos));
    if (out_neg) {
      const double neg =
          (-low + 0.95 * high + prof.noise_floor * rng.normal()) * scale;
      out_neg->push_back(static_cast<float>(gain * neg));
    }
  }
}

double event_ibi_mod(const std::vector<signal::EventInterval>& events,
                     double depth, double t, double phase) {
  auto it = std::upper_bound(
      events.begin(), events.end(), t,
      [](double tv, const signal::EventInterval& e) { return tv < e.start_s; });
  if (it == events.begin()) return 0.0;
  --it;
  if (t >= it->start_s && t < it->end_s)
    return depth * std::sin(2.0 * kPi * 0.05 * t + phase);
  return 0.0;
}

}  // namespace

SynthSpec::SynthSpec() {
  auto& p = stage_profiles;
  const int eeg = 0, eog = 1, emg = 2, ecg = 3;
  p[0][eeg] = eeg_profile(0.10, 0.15, 1.10, 0.05, 0.45, 0.45);
  p[1][eeg] = eeg_profile(0.20, 0.90, 0.25, 0.05, 0.15, 0.45);
  p[2][eeg] = eeg_profile(0.55, 0.60, 0.12, 1.30, 0.10, 0.40);
  p[3][eeg] = eeg_profile(2.60, 0.35, 0.08, 0.15, 0.05, 0.35);
  p[4][eeg] = eeg_profile(0.15, 0.65, 0.18, 0.03, 0.25, 0.50);

  p[0][eog] = eog_profile(0.90, 0.20, 0.15, 0.40);
  p[1][eog] = eog_profile(1.10, 0.30, 0.06, 0.35);
  p[2][eog] = eog_profile(0.25, 0.10, 0.04, 0.30);
  p[3][eog] = eog_profile(0.85, 0.12, 0.03, 0.30);
  p[4][eog] = eog_profile(0.40, 2.20, 0.04, 0.40);

  p[0][emg] = emg_profile(0.50, 1.60);
  p[1][emg] = emg_profile(0.25, 0.80);
  p[2][emg] = emg_profile(0.20, 0.60);
  p[3][emg] = emg_profile(0.18, 0.50);
  p[4][emg] = emg_profile(0.05, 0.12);

  for (int s = 0; s < signal::kStageCount; ++s) p[s][ecg] = ecg_profile();
}

void validate_spec(const SynthSpec& spec) {
  if (spec.subject_count < 1) throw_invalid("subject_count must be >= 1");
  if (spec.epochs_per_subject < 1)
    throw_invalid("epochs_per_subject must be >= 1");
  for (double r : {spec.apnea.rate, spec.hypopnea.rate, spec.unscored_rate,
                   spec.ambiguity_rate})
    if (r < 0.0 || r > 1.0) throw_invalid("rates must lie in [0, 1]");
  if (!(spec.ecg_base_ibi_lo_s > 0.0 &&
        spec.ecg_base_ibi_lo_s < spec.ecg_base_ibi_hi_s &&
        spec.ecg_base_ibi_hi_s < 3.0))
    throw_invalid("ECG base IBI range must satisfy 0 < lo < hi < 3 s");
  if (spec.ecg_ibi_jitter < 0.0) throw_invalid("ecg_ibi_jitter must be >= 0");
  for (int m = 0; m < 4; ++m) {
    const size_t n_bands = spec.stage_profiles[0][m].bands.size();
    for (int s = 0; s < signal::kStageCount; ++s) {
      const auto& prof = spec.stage_profiles[s][m];
      if (prof.bands.size() != n_bands)
        throw_invalid("stage profiles must share a band structure per modality");
      if (prof.noise_floor < 0.0) throw_invalid("noise floors must be >= 0");
      for (const auto& b : prof.bands) {
        if (b.amplitude <= 0.0) throw_invalid("band amplitudes must be > 0");
        if (b.center_hz <= 0.0 || b.width_hz < 0.0)
          throw_invalid("band center/width out of range");
      }
    }
  }
}

PsgRecord generate_subject(const SynthSpec& spec, int subject_index) {
  validate_spec(spec);
  if (subject_index < 0 || subject_index >= spec.subject_count)
    throw_invalid("subject_index out of range");
  Rng rng(derive_seed(spec.seed, "synth-subject",
                      static_cast<uint64_t>(subject_index)));

  const int n_epochs = spec.epochs_per_subject;
  const double epoch_s = signal::kEpochSeconds;

  PsgRecord rec;
  {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%03d", subject_index);
    rec.subject_id = buf;
  }

  std::vector<Stage> stages(n_epochs);
  {
    int s = 0;
    for (int e = 0; e < n_epochs; ++e) {
      stages[e] = static_cast<Stage>(s);
      const double r = rng.uniform();
      double acc = 0.0;
      for (int k = 0; k < 5; ++k) {
        acc += kTransition[s][k];
        if (r < acc) {
          s = k;
          break;
        }
      }
    }
  }

  int unscored_alternator = 0;
  for (int e = 0; e < n_epochs; ++e) {
    std::string code = signal::stage_name(stages[e]);
    if (stages[e] == Stage::n3 && rng.uniform() < 0.25) code = "N4";
    if (rng.uniform() < spec.unscored_rate)
      code = (unscored_alternator++ % 2 == 0) ? "M" : "?";
    rec.stage_codes.push_back(code);
  }

  std::vector<int> ambig(n_epochs, -1);
  for (int e = 0; e < n_epochs; ++e)
    if (rng.uniform() < spec.ambiguity_rate)
      ambig[e] = kConfusion[static_cast<int>(stages[e])];

  std::vector<char> has_apnea(n_epochs, 0), has_hypopnea(n_epochs, 0);
  for (int e = 0; e < n_epochs; ++e) {
    const double t0 = e * epoch_s;
    if (rng.uniform() < spec.apnea.rate) {
      has_apnea[e] = 1;
      const double start = t0 + rng.uniform(1.0, 8.0);
      const double end = std::min(start + rng.uniform(12.0, 26.0), t0 + 29.5);
      rec.apnea_events.push_back({start, end});
    }
    if (rng.uniform() < spec.hypopnea.rate) {
      has_hypopnea[e] = 1;
      const double start = t0 + rng.uniform(1.0, 8.0);
      const double end = std::min(start + rng.uniform(12.0, 26.0), t0 + 29.5);
      rec.hypopnea_events.push_back({start, end});
    }
  }

  auto profile_for = [&](int epoch, Modality mod) {
    const int s = static_cast<int>(stages[epoch]);
    const int m = static_cast<int>(mod);
    if (ambig[epoch] < 0) return spec.stage_profiles[s][m];
    return blend(spec.stage_profiles[s][m], spec.stage_profiles[ambig[epoch]][m],
                 0.55);
  };

  auto emg_scales_for = [&](int epoch, double rate) {
    std::vector<EventScale> scales;
    const double t0 = epoch * epoch_s;
    auto add = [&](const std::vector<signal::EventInterval>& evs, double sc) {
      for (const auto& ev : evs) {
        if (ev.end_s <= t0 || ev.start_s >= t0 + epoch_s) continue;
        scales.push_back({static_cast<int>((ev.start_s - t0) * rate),
                          static_cast<int>((ev.end_s - t0) * rate), sc});
      }
    };
    add(rec.apnea_events, spec.apnea.emg_scale);
    add(rec.hypopnea_events, spec.hypopnea.emg_scale);
    return scales;
  };

  const int n_eeg = static_cast<int>(epoch_s * kEegRate);
  auto make_channel = [&](const char* name, Modality mod, double rate) {
    signal::Channel ch;
    ch.name = name;
    ch.modality = mod;
    ch.rate_hz = rate;
    ch.samples.reserve(static_cast<size_t>(n_epochs) *
                       static_cast<size_t>(epoch_s * rate));
    return ch;
  };

  signal::Channel eeg1 = make_channel("EEG1", Modality::eeg, kEegRate);
  signal::Channel eeg2 = make_channel("EEG2", Modality::eeg, kEegRate);
  signal::Channel eog1 = make_channel("EOG1", Modality::eog, kEegRate);
  signal::Channel eog2 = make_channel("EOG2", Modality::eog, kEegRate);
  signal::Channel emg1 = make_channel("EMG1", Modality::emg, kEegRate);
  signal::Channel ecg1 = make_channel("ECG1", Modality::ecg, kEcgRate);

  ChannelState st_eeg1 = init_state(spec.stage_profiles[0][0], rng);
  ChannelState st_eeg2 = init_state(spec.stage_profiles[0][0], rng);
  ChannelState st_eog = init_state(spec.stage_profiles[0][1], rng);
  ChannelState st_emg = init_state(spec.stage_profiles[0][2], rng);
  ChannelState st_ecg = init_state(spec.stage_profiles[0][3], rng);

  for (int e = 0; e < n_epochs; ++e) {
    const auto none = std::vector<EventScale>{};
    render_band_epoch(profile_for(e, Modality::eeg), kEegRate, n_eeg, 1.0,
                      st_eeg1, rng, none, eeg1.samples, nullptr);
    render_band_epoch(profile_for(e, Modality::eeg), kEegRate, n_eeg, 0.92,
                      st_eeg2, rng, none, eeg2.samples, nullptr);
    render_band_epoch(profile_for(e, Modality::eog), kEegRate, n_eeg, 1.0,
                      st_eog, rng, none, eog1.samples, &eog2.samples);
    render_band_epoch(profile_for(e, Modality::emg), kEegRate, n_eeg, 1.0,
                      st_emg, rng, emg_scales_for(e, kEegRate), emg1.samples,
                      nullptr);
  }

  // ECG: baseline wander + noise via the band machinery, then a pulse train
  // whose inter-beat interval is modulated inside apnea/hypopnea events.
  const int n_ecg = static_cast<int>(epoch_s * kEcgRate);
  for (int e = 0; e < n_epochs; ++e)
    render_band_epoch(profile_for(e, Modality::ecg), kEcgRate, n_ecg, 1.0,
                      st_ecg, rng, std::vector<EventScale>{}, ecg1.samples,
                      nullptr);

  const double base_ibi =
      rng.uniform(spec.ecg_base_ibi_lo_s, spec.ecg_base_ibi_hi_s);
  const double mod_phase = rng.uniform(0.0, 2.0 * kPi);
  const double duration = n_epochs * epoch_s;
  std::vector<double> beats;
  double t_beat = 0.3 + rng.uniform() * base_ibi;
  while (t_beat < duration) {
    beats.push_back(t_beat);
    const int epoch = std::min(n_epochs - 1, static_cast<int>(t_beat / epoch_s));
    double mod = event_ibi_mod(rec.apnea_events, spec.apnea.ecg_ibi_mod, t_beat,
                               mod_phase);
    if (mod == 0.0)
      mod = event_ibi_mod(rec.hypopnea_events, spec.hypopnea.ecg_ibi_mod,
                          t_beat, mod_phase);
    const double ibi = base_ibi *
                       kEcgStageIbi[static_cast<int>(stages[epoch])] *
                       (1.0 + mod) * (1.0 + spec.ecg_ibi_jitter * rng.normal());
    t_beat += std::max(0.35, ibi);
  }
  {
    size_t lo = 0;
    for (size_t i = 0; i < ecg1.samples.size(); ++i) {
      const double t = static_cast<double>(i) / kEcgRate;
      while (lo < beats.size() && beats[lo] + 0.42 < t) ++lo;
      double v = 0.0;
      for (size_t k = lo; k < beats.size() && beats[k] - 0.10 <= t; ++k) {
        const double x = (t - beats[k]) / 0.022;
        v += 1.6 * (1.0 - x * x) * std::exp(-0.5 * x * x);
        const double xt = (t - beats[k] - 0.18) / 0.06;
        v += 0.28 * std::exp(-0.5 * xt * xt);
      }
      ecg1.samples[i] += static_cast<float>(v);
    }
  }

  rec.channels = {std::move(eeg1), std::move(eeg2), std::move(eog1),
                  std::move(eog2), std::move(emg1), std::move(ecg1)};
  return rec;
}

std::vector<PsgRecord> generate(const SynthSpec& spec) {
  validate_spec(spec);
  std::vector<PsgRecord> records;
  records.reserve(static_cast<size_t>(spec.subject_count));
  for (int i = 0; i < spec.subject_count; ++i)
    records.push_back(generate_subject(spec, i));
  return records;
}

}  // namespace somnus::data
