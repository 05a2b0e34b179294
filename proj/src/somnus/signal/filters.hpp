#pragma once

#include <utility>
#include <vector>

namespace somnus::signal {

// One second-order section, a0 normalized to 1.
struct Biquad {
  double b0, b1, b2;
  double a1, a2;
};

// Butterworth designs (bilinear transform with prewarped edges).
// `order` is the analog prototype order; the bandpass therefore has 2*order poles.
std::vector<Biquad> butter_bandpass(int order, double low_hz, double high_hz,
                                    double fs_hz);
std::vector<Biquad> butter_highpass(int order, double cut_hz, double fs_hz);

// Magnitude response of a cascade at frequency f (for design checks).
double sos_magnitude(const std::vector<Biquad>& sos, double f_hz, double fs_hz);

// Zero-phase forward-backward filtering with odd-extension padding and
// steady-state initial conditions. Output length equals input length.
std::vector<double> sosfiltfilt(const std::vector<Biquad>& sos,
                                const std::vector<double>& x);

// Band-pass a 100 Hz signal. When the upper edge reaches Nyquist the design
// degenerates to a highpass at the lower edge (the bilinear transform has no
// finite image for the Nyquist frequency).
std::vector<double> bandpass(const std::vector<double>& x, double low_hz,
                             double high_hz, double fs_hz = 100.0);

}  // namespace somnus::signal
