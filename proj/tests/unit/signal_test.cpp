#include <cmath>
#include <vector>

#include "doctest.h"
#include "somnus/common.hpp"
#include "somnus/signal/filters.hpp"
#include "somnus/signal/pipeline.hpp"
#include "somnus/signal/resample.hpp"
#include "support/testutil.hpp"

using namespace somnus;
using namespace somnus::signal;

namespace {

// Reference magnitudes and sample values computed with an independent
// implementation of the same textbook designs; frozen here.
struct MagPoint {
  double f, mag;
};

std::vector<double> sine_mix(int n, double fs) {
  std::vector<double> x(static_cast<size_t>(n));
  const double twopi = 2.0 * 3.14159265358979323846;
  for (int i = 0; i < n; ++i) {
    const double t = i / fs;
    x[static_cast<size_t>(i)] =
        std::sin(twopi * 10.0 * t) + 0.5 * std::sin(twopi * 45.0 * t) + 0.3;
  }
  return x;
}

}  // namespace

TEST_CASE("bandpass magnitude response matches the reference design") {
  const auto sos = butter_bandpass(4, 0.5, 40.0, 100.0);
  const MagPoint pts[] = {
      {0.1, 0.001568365378}, {0.5, 0.707106781187}, {1.0, 0.998282778439},
      {5.0, 0.999999999986}, {10.0, 0.999999999940}, {20.0, 0.999997670342},
      {40.0, 0.707106781187}, {45.0, 0.055500195102}, {49.0, 0.000085755155}};
  for (const auto& p : pts)
    CHECK(sos_magnitude(sos, p.f, 100.0) ==
          doctest::Approx(p.mag).epsilon(1e-9));

  const auto ecg = butter_bandpass(4, 3.0, 30.0, 100.0);
  const MagPoint ecg_pts[] = {{1.0, 0.009474324449},
                              {3.0, 0.707106781187},
                              {10.0, 0.999999999928},
                              {30.0, 0.707106781187},
                              {40.0, 0.031788185212}};
  for (const auto& p : ecg_pts)
    CHECK(sos_magnitude(ecg, p.f, 100.0) ==
          doctest::Approx(p.mag).epsilon(1e-9));

  const auto hp = butter_highpass(4, 25.0, 100.0);
  const MagPoint hp_pts[] = {{5.0, 0.000629288755},
                             {25.0, 0.707106781187},
                             {40.0, 0.999937893386}};
  for (const auto& p : hp_pts)
    CHECK(sos_magnitude(hp, p.f, 100.0) ==
          doctest::Approx(p.mag).epsilon(1e-9));
}

TEST_CASE("zero-phase filtering matches reference output samples") {
  const auto sos = butter_bandpass(4, 0.5, 40.0, 100.0);
  const auto y = sosfiltfilt(sos, sine_mix(300, 100.0));
  REQUIRE(y.size() == 300);
  const std::pair<int, double> expect[] = {
      {0, -0.122116828877},  {1, 0.470967359998},  {57, -0.947787026096},
      {150, 0.048268110654}, {298, -0.335471991085}, {299, -0.188699348839}};
  for (const auto& [i, v] : expect)
    CHECK(y[static_cast<size_t>(i)] == doctest::Approx(v).epsilon(1e-9));
}

TEST_CASE("zero-phase filtering rejects signals shorter than its padding") {
  const auto sos = butter_bandpass(4, 0.5, 40.0, 100.0);
  std::vector<double> x(27, 1.0);  // pad length for four sections
  CHECK_THROWS_AS(sosfiltfilt(sos, x), Error);
  x.push_back(1.0);
  CHECK_NOTHROW(sosfiltfilt(sos, x));
}

TEST_CASE("the passband passes and the stopband is strongly attenuated") {
  const double fs = 100.0;
  const int n = 2000;
  const double twopi = 2.0 * 3.14159265358979323846;
  std::vector<double> in_pass(n), in_stop(n);
  for (int i = 0; i < n; ++i) {
    in_pass[static_cast<size_t>(i)] = std::sin(twopi * 10.0 * i / fs);
    in_stop[static_cast<size_t>(i)] = std::sin(twopi * 45.0 * i / fs);
  }
  const auto yp = bandpass(in_pass, 0.5, 40.0, fs);
  const auto ys = bandpass(in_stop, 0.5, 40.0, fs);
  const double p_pass = testutil::band_power(yp, fs, 9.0, 11.0);
  const double p_pass_in = testutil::band_power(in_pass, fs, 9.0, 11.0);
  const double p_stop = testutil::band_power(ys, fs, 44.0, 46.0);
  const double p_stop_in = testutil::band_power(in_stop, fs, 44.0, 46.0);
  CHECK(10.0 * std::log10(p_pass / p_pass_in) > -0.1);  // passband intact
  CHECK(10.0 * std::log10(p_stop / p_stop_in) < -45.0);  // two-pass stopband
}

TEST_CASE("a band reaching Nyquist degenerates to the matching highpass") {
  Rng rng(5);
  std::vector<double> x(400);
  for (auto& v : x) v = rng.normal();
  const auto y1 = bandpass(x, 25.0, 50.0, 100.0);
  const auto y2 = sosfiltfilt(butter_highpass(4, 25.0, 100.0), x);
  REQUIRE(y1.size() == y2.size());
  for (size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("Fourier resampling matches reference values") {
  const std::vector<double> x{0.0, 1.0,  2.0,   0.5, -1.0, -2.0,
                              -0.5, 0.25, 1.5, -0.75, 0.3, -0.1};
  const auto down = resample(x, 300.0, 100.0);
  REQUIRE(down.size() == 4);
  const double down_ref[] = {0.369994553338, 0.442863279495, -0.861661220005,
                             0.448803387171};
  for (size_t i = 0; i < 4; ++i)
    CHECK(down[i] == doctest::Approx(down_ref[i]).epsilon(1e-10));

  const auto up = resample(x, 100.0, 200.0);
  REQUIRE(up.size() == 24);
  const double up_ref[] = {0.0, 0.434996434555, 1.0, 1.725242058557, 2.0,
                           1.414367401253};
  for (size_t i = 0; i < 6; ++i)
    CHECK(up[i] == doctest::Approx(up_ref[i]).epsilon(1e-10));
  // Original samples sit at the even output positions.
  for (size_t i = 0; i < x.size(); ++i)
    CHECK(up[2 * i] == doctest::Approx(x[i]).epsilon(1e-10));
}

TEST_CASE("resampling a band-limited sine reproduces it at the new rate") {
  const double twopi = 2.0 * 3.14159265358979323846;
  std::vector<double> x(24);
  for (int i = 0; i < 24; ++i)
    x[static_cast<size_t>(i)] = std::sin(twopi * 3.0 * i / 24.0);
  const auto y = resample(x, 24.0, 16.0);
  REQUIRE(y.size() == 16);
  for (int i = 0; i < 16; ++i)
    CHECK(y[static_cast<size_t>(i)] ==
          doctest::Approx(std::sin(twopi * 3.0 * i / 16.0)).epsilon(1e-9));
}

TEST_CASE("resampled lengths follow the rounding rule") {
  std::vector<double> x7(7, 1.0);
  CHECK(resample(x7, 100.0, 50.0).size() == 4);  // round(3.5) away from zero
  std::vector<double> x3000(3000, 0.0);
  CHECK(resample(x3000, 125.0, 100.0).size() == 2400);
}

TEST_CASE("robust scaling centers on the median and divides by the IQR") {
  const auto y = robust_scale({1.0, 2.0, 3.0, 4.0, 5.0});
  const double expect[] = {-1.0, -0.5, 0.0, 0.5, 1.0};
  for (size_t i = 0; i < 5; ++i)
    CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-12));

  const auto four = robust_scale({4.0, 1.0, 3.0, 2.0});  // order must not matter
  CHECK(four[1] == doctest::Approx((1.0 - 2.5) / 1.5).epsilon(1e-12));
  CHECK(four[2] == doctest::Approx((3.0 - 2.5) / 1.5).epsilon(1e-12));

  const auto flat = robust_scale({2.0, 2.0, 2.0, 2.0});
  for (double v : flat) CHECK(v == 0.0);
}

TEST_CASE("modality band map and stage code mapping") {
  CHECK(band_for(Modality::eeg) == std::pair{0.5, 40.0});
  CHECK(band_for(Modality::eog) == std::pair{0.5, 40.0});
  CHECK(band_for(Modality::ecg) == std::pair{3.0, 30.0});
  CHECK(band_for(Modality::emg) == std::pair{25.0, 50.0});

  CHECK(map_stage_code("W") == Stage::wake);
  CHECK(map_stage_code("N1") == Stage::n1);
  CHECK(map_stage_code("N2") == Stage::n2);
  CHECK(map_stage_code("N3") == Stage::n3);
  CHECK(map_stage_code("N4") == Stage::n3);  // deep-sleep merge
  CHECK(map_stage_code("R") == Stage::rem);
  CHECK_FALSE(map_stage_code("M").has_value());
  CHECK_FALSE(map_stage_code("?").has_value());
  CHECK_FALSE(map_stage_code("bogus").has_value());

  CHECK(std::string(modality_name(Modality::ecg)) == "ecg");
  CHECK(modality_from_name("eog") == Modality::eog);
  CHECK_THROWS_AS(modality_from_name("nope"), Error);
}

TEST_CASE("frame counts and frame content follow the windowing rule") {
  CHECK(frame_count_for(3.0, 0.75) == 37);
  CHECK(frame_count_for(2.0, 0.5) == 29);
  CHECK(frame_count_for(30.0, 0.0) == 1);

  std::vector<float> epoch(kEpochSamples);
  for (int i = 0; i < kEpochSamples; ++i)
    epoch[static_cast<size_t>(i)] = static_cast<float>(i);
  const FrameSequence seq = frame_tokenize(epoch);
  CHECK(seq.frames.rows() == 37);
  CHECK(seq.frames.cols() == 300);
  CHECK(seq.frame_size_s == 3.0);
  CHECK(seq.stride_s == doctest::Approx(0.75));
  CHECK(seq.frames(0, 0) == 0.0);
  CHECK(seq.frames(0, 299) == 299.0);
  CHECK(seq.frames(1, 0) == 75.0);   // 0.75 s stride at 100 Hz
  CHECK(seq.frames(36, 0) == 2700.0);
  CHECK(seq.frames(36, 299) == 2999.0);
}

TEST_CASE("record validation flags structural problems") {
  PsgRecord rec;
  rec.subject_id = "s";
  Channel c;
  c.name = "EEG1";
  c.modality = Modality::eeg;
  c.rate_hz = 10.0;
  c.samples.assign(600, 0.0f);  // 60 s
  rec.channels = {c};
  rec.stage_codes = {"W", "N1"};
  CHECK_NOTHROW(validate_record(rec));

  PsgRecord bad = rec;
  bad.channels[0].rate_hz = 0.0;
  CHECK_THROWS_AS(validate_record(bad), Error);

  bad = rec;
  Channel other = c;
  other.name = "ECG1";
  other.samples.assign(500, 0.0f);  // different duration
  bad.channels.push_back(other);
  CHECK_THROWS_AS(validate_record(bad), Error);

  bad = rec;
  bad.apnea_events.push_back({50.0, 70.0});  // past the end
  CHECK_THROWS_AS(validate_record(bad), Error);

  bad = rec;
  bad.apnea_events.push_back({20.0, 10.0});  // inverted
  CHECK_THROWS_AS(validate_record(bad), Error);

  PsgRecord empty;
  empty.subject_id = "e";
  CHECK_THROWS_AS(validate_record(empty), Error);
}

TEST_CASE("segmentation labels epochs from codes and event overlap") {
  PsgRecord rec;
  rec.subject_id = "s";
  Channel c;
  c.name = "EEG1";
  c.modality = Modality::eeg;
  c.rate_hz = kTargetRateHz;
  c.samples.assign(3 * kEpochSamples, 1.0f);
  rec.channels = {c};
  rec.stage_codes = {"W", "N4", "?"};
  rec.apnea_events.push_back({35.0, 50.0});    // 15 s of epoch 1, not majority
  rec.hypopnea_events.push_back({30.0, 46.0});  // 16 s of epoch 1, majority

  const SubjectEpochs any = segment_and_label(rec, EventLabelRule::any_overlap);
  REQUIRE(any.epochs.size() == 3);
  CHECK(any.epochs[0].stage == Stage::wake);
  CHECK(any.epochs[1].stage == Stage::n3);
  CHECK_FALSE(any.epochs[2].stage.has_value());
  CHECK(any.epochs[0].apnea == 0);
  CHECK(any.epochs[1].apnea == 1);
  CHECK(any.epochs[1].hypopnea == 1);
  CHECK(any.epochs[2].apnea == 0);

  const SubjectEpochs maj =
      segment_and_label(rec, EventLabelRule::majority_overlap);
  CHECK(maj.epochs[1].apnea == 0);     // 15 s is not a strict majority
  CHECK(maj.epochs[1].hypopnea == 1);  // 16 s is

  // A trailing partial segment is dropped.
  PsgRecord longer = rec;
  longer.channels[0].samples.resize(3 * kEpochSamples + 500, 0.5f);
  longer.stage_codes.push_back("N2");
  const SubjectEpochs trimmed = segment_and_label(longer);
  CHECK(trimmed.epochs.size() == 3);
}

TEST_CASE("preprocessing resamples to 100 Hz and suppresses out-of-band power") {
  const double twopi = 2.0 * 3.14159265358979323846;
  PsgRecord rec;
  rec.subject_id = "s";
  Channel eeg;
  eeg.name = "EEG1";
  eeg.modality = Modality::eeg;
  eeg.rate_hz = 200.0;
  eeg.samples.resize(200 * 60);
  for (size_t i = 0; i < eeg.samples.size(); ++i) {
    const double t = static_cast<double>(i) / 200.0;
    eeg.samples[i] = static_cast<float>(std::sin(twopi * 10.0 * t) +
                                        0.8 * std::sin(twopi * 47.0 * t));
  }
  Channel ecg = eeg;
  ecg.name = "ECG1";
  ecg.modality = Modality::ecg;
  rec.channels = {eeg, ecg};
  rec.stage_codes.assign(2, "W");

  const PsgRecord out = preprocess(rec);
  REQUIRE(out.channels.size() == 2);
  for (const auto& ch : out.channels) {
    CHECK(ch.rate_hz == kTargetRateHz);
    CHECK(ch.samples.size() == 6000);
  }
  std::vector<double> y(out.channels[0].samples.begin(),
                        out.channels[0].samples.end());
  const double p10 = testutil::band_power(y, 100.0, 9.0, 11.0);
  const double p47 = testutil::band_power(y, 100.0, 46.0, 48.0);
  CHECK(p10 > 100.0 * p47);

  std::vector<double> yc(out.channels[1].samples.begin(),
                         out.channels[1].samples.end());
  const double c10 = testutil::band_power(yc, 100.0, 9.0, 11.0);
  const double c47 = testutil::band_power(yc, 100.0, 46.0, 48.0);
  CHECK(c10 > 100.0 * c47);  // 47 Hz sits far outside the 3-30 band
}
