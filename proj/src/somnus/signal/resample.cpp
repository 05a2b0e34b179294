#include "somnus/signal/resample.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <mutex>

#include "somnus/common.hpp"

namespace somnus::signal {

namespace {
// FFTW plan creation is not thread-safe; execution of distinct plans is.
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

std::vector<double> resample(const std::vector<double>& x, double from_hz,
                             double to_hz) {
  if (x.empty()) throw_invalid("resample: empty signal");
  if (!(from_hz > 0.0) || !(to_hz > 0.0))
    throw_invalid("resample: rates must be positive");
  if (from_hz == to_hz) return x;

  const size_t n_in = x.size();
  const size_t n_out = static_cast<size_t>(std::max<long long>(
      1, std::llround(static_cast<double>(n_in) * to_hz / from_hz)));
  if (n_out == n_in) return x;

  const size_t nb_in = n_in / 2 + 1;
  const size_t nb_out = n_out / 2 + 1;

  fftw_complex* spec_in;
  fftw_complex* spec_out;
  double* buf_in;
  double* buf_out;
  fftw_plan fwd, inv;
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    buf_in = fftw_alloc_real(n_in);
    buf_out = fftw_alloc_real(n_out);
    spec_in = fftw_alloc_complex(nb_in);
    spec_out = fftw_alloc_complex(nb_out);
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n_in), buf_in, spec_in,
                               FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(n_out), spec_out, buf_out,
                               FFTW_ESTIMATE);
  }

  std::memcpy(buf_in, x.data(), n_in * sizeof(double));
  fftw_execute(fwd);

  std::memset(spec_out, 0, nb_out * sizeof(fftw_complex));
  const size_t nb_copy = std::min(nb_in, nb_out);
  std::memcpy(spec_out, spec_in, nb_copy * sizeof(fftw_complex));

  if (n_out < n_in && n_out % 2 == 0) {
    // the new Nyquist bin folds the conjugate pair of the old spectrum
    spec_out[n_out / 2][0] = 2.0 * spec_in[n_out / 2][0];
    spec_out[n_out / 2][1] = 0.0;
  } else if (n_out > n_in && n_in % 2 == 0) {
    // the old Nyquist bin splits into a conjugate pair in the new spectrum
    spec_out[n_in / 2][0] *= 0.5;
    spec_out[n_in / 2][1] *= 0.5;
  }

  fftw_execute(inv);

  std::vector<double> out(n_out);
  const double scale = 1.0 / static_cast<double>(n_in);
  for (size_t i = 0; i < n_out; ++i) out[i] = buf_out[i] * scale;

  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
    fftw_free(buf_in);
    fftw_free(buf_out);
    fftw_free(spec_in);
    fftw_free(spec_out);
  }
  return out;
}

}  // namespace somnus::signal
