#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace somnus::signal {

enum class Modality { eeg = 0, eog = 1, emg = 2, ecg = 3 };

const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);

// Stage labels after the N3/N4 merge; Movement/Unknown segments carry no stage.
enum class Stage { wake = 0, n1 = 1, n2 = 2, n3 = 3, rem = 4 };
constexpr int kStageCount = 5;
const char* stage_name(Stage s);

constexpr double kTargetRateHz = 100.0;
constexpr double kEpochSeconds = 30.0;
constexpr int kEpochSamples = 3000;  // 30 s at 100 Hz

struct Channel {
  std::string name;
  Modality modality = Modality::eeg;
  double rate_hz = 0.0;
  std::vector<float> samples;  // float32 matches the on-disk layout
};

struct EventInterval {
  double start_s = 0.0;
  double end_s = 0.0;
};

struct PsgRecord {
  std::string subject_id;
  std::vector<Channel> channels;
  std::vector<std::string> stage_codes;  // one code per 30 s segment
  std::vector<EventInterval> apnea_events;
  std::vector<EventInterval> hypopnea_events;
};

struct EpochSample {
  std::string subject_id;
  int epoch_index = 0;
  std::vector<std::vector<float>> signals;  // channel order of SubjectEpochs
  std::optional<Stage> stage;
  int apnea = 0;
  int hypopnea = 0;
};

struct SubjectEpochs {
  std::string subject_id;
  std::vector<std::string> channel_names;
  std::vector<Modality> channel_modalities;
  std::vector<EpochSample> epochs;
};

struct FrameSequence {
  Eigen::MatrixXd frames;  // n_frames x frame_len
  double frame_size_s = 0.0;
  double stride_s = 0.0;
};

// (x - median) / max(IQR, 1e-8); quartiles by linear interpolation.
std::vector<double> robust_scale(const std::vector<double>& x);

// Fixed band map: EEG/EOG 0.5-40, ECG 3-30, EMG 25-50.
std::pair<double, double> band_for(Modality m);

// Stage code mapping (W, N1..N4, R); Movement/Unknown and anything
// unrecognized map to nullopt.
std::optional<Stage> map_stage_code(const std::string& code);

// Record invariants: positive rates, matching durations, in-range events.
void validate_record(const PsgRecord& rec);

// resample -> robust scale -> bandpass, per channel, to 100 Hz.
PsgRecord preprocess(const PsgRecord& raw);

enum class EventLabelRule { any_overlap, majority_overlap };

// Cut a preprocessed record into consecutive 30 s epochs with stage and
// per-event labels. A trailing partial segment is dropped (logged).
SubjectEpochs segment_and_label(const PsgRecord& rec,
                                EventLabelRule rule = EventLabelRule::any_overlap);

// Closed-form frame count: floor((30 - frame_size)/stride) + 1.
int frame_count_for(double frame_size_s, double overlap,
                    double window_s = kEpochSeconds);

FrameSequence frame_tokenize(std::span<const float> epoch_signal,
                             double frame_size_s = 3.0, double overlap = 0.75);

}  // namespace somnus::signal
