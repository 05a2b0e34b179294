#pragma once

#include <vector>

namespace somnus::signal {

// Band-limited resampling via the Fourier method: the signal is treated as
// periodic, its spectrum truncated or zero-padded to the new length, and
// inverse-transformed. Output length = round(len * to_hz / from_hz).
std::vector<double> resample(const std::vector<double>& x, double from_hz,
                             double to_hz);

}  // namespace somnus::signal
