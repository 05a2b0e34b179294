#include "somnus/signal/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "somnus/common.hpp"
#include "somnus/log.hpp"
#include "somnus/signal/filters.hpp"
#include "somnus/signal/resample.hpp"

namespace somnus::signal {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::eeg: return "eeg";
    case Modality::eog: return "eog";
    case Modality::emg: return "emg";
    case Modality::ecg: return "ecg";
  }
  return "?";
}

Modality modality_from_name(const std::string& name) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(c)));
  if (s == "eeg") return Modality::eeg;
  if (s == "eog") return Modality::eog;
  if (s == "emg") return Modality::emg;
  if (s == "ecg") return Modality::ecg;
  throw_invalid("unknown modality name: " + name);
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::wake: return "W";
    case Stage::n1: return "N1";
    case Stage::n2: return "N2";
    case Stage::n3: return "N3";
    case Stage::rem: return "R";
  }
  return "?";
}

std::vector<double> robust_scale(const std::vector<double>& x) {
  if (x.empty()) throw_invalid("robust_scale: empty signal");
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  const auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
  };
  const double median = quantile(0.5);
  const double iqr = quantile(0.75) - quantile(0.25);
  const double denom = std::max(iqr, 1e-8);

  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - median) / denom;
  return out;
}

std::pair<double, double> band_for(Modality m) {
  switch (m) {
    case Modality::eeg:
    case Modality::eog: return {0.5, 40.0};
    case Modality::ecg: return {3.0, 30.0};
    case Modality::emg: return {25.0, 50.0};
  }
  return {0.5, 40.0};
}

std::optional<Stage> map_stage_code(const std::string& code) {
  std::string s;
  for (char c : code) s.push_back(static_cast<char>(std::toupper(c)));
  if (s == "W" || s == "WAKE") return Stage::wake;
  if (s == "N1" || s == "1") return Stage::n1;
  if (s == "N2" || s == "2") return Stage::n2;
  if (s == "N3" || s == "3") return Stage::n3;
  if (s == "N4" || s == "4") return Stage::n3;  // N4 merges into N3
  if (s == "R" || s == "REM") return Stage::rem;
  if (s == "M" || s == "MOVEMENT" || s == "?" || s == "UNKNOWN") return std::nullopt;
  SOMNUS_WARN("unrecognized stage code '" << code << "' treated as unscored");
  return std::nullopt;
}

void validate_record(const PsgRecord& rec) {
  if (rec.channels.empty())
    throw_invalid("record " + rec.subject_id + " has no channels");
  double min_rate = 1e300, min_dur = 1e300, max_dur = 0.0;
  for (const Channel& ch : rec.channels) {
    if (!(ch.rate_hz > 0.0))
      throw_invalid("channel " + ch.name + " has non-positive rate");
    if (ch.samples.empty())
      throw_invalid("channel " + ch.name + " is empty");
    const double dur = static_cast<double>(ch.samples.size()) / ch.rate_hz;
    min_rate = std::min(min_rate, ch.rate_hz);
    min_dur = std::min(min_dur, dur);
    max_dur = std::max(max_dur, dur);
  }
  if (max_dur - min_dur > 1.0 / min_rate + 1e-9)
    throw_invalid("record " + rec.subject_id +
                  ": channel durations differ by more than one sample");
  const auto check_events = [&](const std::vector<EventInterval>& evs,
                                const char* kind) {
    for (const EventInterval& ev : evs) {
      if (!(ev.start_s >= 0.0) || !(ev.end_s > ev.start_s) ||
          ev.end_s > max_dur + 1e-9)
        throw_invalid(std::string("record ") + rec.subject_id + ": " + kind +
                      " event outside [0, duration]");
    }
  };
  check_events(rec.apnea_events, "apnea");
  check_events(rec.hypopnea_events, "hypopnea");
}

PsgRecord preprocess(const PsgRecord& raw) {
  validate_record(raw);
  PsgRecord out;
  out.subject_id = raw.subject_id;
  out.stage_codes = raw.stage_codes;
  out.apnea_events = raw.apnea_events;
  out.hypopnea_events = raw.hypopnea_events;
  out.channels.reserve(raw.channels.size());
  for (const Channel& ch : raw.channels) {
    std::vector<double> x(ch.samples.begin(), ch.samples.end());
    x = resample(x, ch.rate_hz, kTargetRateHz);
    x = robust_scale(x);
    const auto [lo, hi] = band_for(ch.modality);
    x = bandpass(x, lo, hi, kTargetRateHz);

    Channel pch;
    pch.name = ch.name;
    pch.modality = ch.modality;
    pch.rate_hz = kTargetRateHz;
    pch.samples.assign(x.begin(), x.end());
    out.channels.push_back(std::move(pch));
  }
  return out;
}

namespace {

bool overlaps_epoch(const EventInterval& ev, double t0, double t1,
                    EventLabelRule rule) {
  const double lo = std::max(ev.start_s, t0);
  const double hi = std::min(ev.end_s, t1);
  if (rule == EventLabelRule::any_overlap) return hi > lo;
  return (hi - lo) > (t1 - t0) / 2.0;
}

}  // namespace

SubjectEpochs segment_and_label(const PsgRecord& rec, EventLabelRule rule) {
  SubjectEpochs out;
  out.subject_id = rec.subject_id;
  if (rec.channels.empty())
    throw_invalid("segment_and_label: record has no channels");

  size_t min_len = SIZE_MAX;
  for (const Channel& ch : rec.channels) {
    if (ch.rate_hz != kTargetRateHz)
      throw_invalid("segment_and_label expects a 100 Hz preprocessed record");
    out.channel_names.push_back(ch.name);
    out.channel_modalities.push_back(ch.modality);
    min_len = std::min(min_len, ch.samples.size());
  }

  const size_t n_epochs = min_len / kEpochSamples;
  if (min_len % kEpochSamples != 0)
    SOMNUS_INFO("record " << rec.subject_id << ": trailing partial segment of "
                          << min_len % kEpochSamples << " samples discarded");
  if (rec.stage_codes.size() != n_epochs)
    SOMNUS_WARN("record " << rec.subject_id << ": " << rec.stage_codes.size()
                          << " stage codes for " << n_epochs << " epochs");

  out.epochs.reserve(n_epochs);
  for (size_t e = 0; e < n_epochs; ++e) {
    EpochSample sample;
    sample.subject_id = rec.subject_id;
    sample.epoch_index = static_cast<int>(e);
    sample.signals.reserve(rec.channels.size());
    for (const Channel& ch : rec.channels) {
      const auto begin = ch.samples.begin() + static_cast<long>(e) * kEpochSamples;
      sample.signals.emplace_back(begin, begin + kEpochSamples);
    }
    if (e < rec.stage_codes.size())
      sample.stage = map_stage_code(rec.stage_codes[e]);

    const double t0 = static_cast<double>(e) * kEpochSeconds;
    const double t1 = t0 + kEpochSeconds;
    for (const EventInterval& ev : rec.apnea_events)
      if (overlaps_epoch(ev, t0, t1, rule)) sample.apnea = 1;
    for (const EventInterval& ev : rec.hypopnea_events)
      if (overlaps_epoch(ev, t0, t1, rule)) sample.hypopnea = 1;

    out.epochs.push_back(std::move(sample));
  }
  return out;
}

int frame_count_for(double frame_size_s, double overlap, double window_s) {
  if (!(frame_size_s > 0.0) || frame_size_s > window_s)
    throw_invalid("frame size must lie in (0, window]");
  if (!(overlap >= 0.0) || overlap >= 1.0)
    throw_invalid("overlap must lie in [0, 1)");
  const double stride_s = frame_size_s * (1.0 - overlap);
  if (stride_s * kTargetRateHz < 1.0 - 1e-9)
    throw_invalid("frame stride is smaller than one sample");
  return static_cast<int>(
             std::floor((window_s - frame_size_s) / stride_s + 1e-9)) + 1;
}

FrameSequence frame_tokenize(std::span<const float> epoch_signal,
                             double frame_size_s, double overlap) {
  if (epoch_signal.size() != static_cast<size_t>(kEpochSamples))
    throw_invalid("frame_tokenize expects a 3000-sample epoch signal");
  const int n_frames = frame_count_for(frame_size_s, overlap);
  const int frame_len = static_cast<int>(std::llround(frame_size_s * kTargetRateHz));
  const double stride_samp = frame_size_s * (1.0 - overlap) * kTargetRateHz;

  FrameSequence seq;
  seq.frame_size_s = frame_size_s;
  seq.stride_s = frame_size_s * (1.0 - overlap);
  seq.frames.resize(n_frames, frame_len);
  for (int i = 0; i < n_frames; ++i) {
    const long start = std::llround(static_cast<double>(i) * stride_samp);
    if (start + frame_len > kEpochSamples)
      throw Error(ErrorCode::internal, "frame exceeds epoch bounds");
    for (int j = 0; j < frame_len; ++j)
      seq.frames(i, j) = static_cast<double>(epoch_signal[start + j]);
  }
  return seq;
}

}  // namespace somnus::signal
