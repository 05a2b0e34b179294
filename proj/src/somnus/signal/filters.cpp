#include "somnus/signal/filters.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "somnus/common.hpp"

namespace somnus::signal {

namespace {

using cplx = std::complex<double>;
constexpr double kPi = std::numbers::pi;

// Left-half-plane poles of the normalized analog Butterworth prototype.
std::vector<cplx> prototype_poles(int order) {
  std::vector<cplx> poles;
  poles.reserve(order);
  for (int k = 1; k <= order; ++k) {
    const double theta = kPi * (2.0 * k + order - 1.0) / (2.0 * order);
    poles.emplace_back(std::cos(theta), std::sin(theta));
  }
  return poles;
}

double prewarp(double f_hz, double fs_hz) {
  return 2.0 * fs_hz * std::tan(kPi * f_hz / fs_hz);
}

struct Zpk {
  std::vector<cplx> zeros;
  std::vector<cplx> poles;
  double gain;
};

Zpk bilinear(const Zpk& analog, double fs_hz) {
  const double fs2 = 2.0 * fs_hz;
  Zpk digital;
  digital.zeros.reserve(analog.poles.size());
  cplx num(1.0, 0.0), den(1.0, 0.0);
  for (const cplx& z : analog.zeros) {
    digital.zeros.push_back((fs2 + z) / (fs2 - z));
    num *= (fs2 - z);
  }
  for (const cplx& p : analog.poles) {
    digital.poles.push_back((fs2 + p) / (fs2 - p));
    den *= (fs2 - p);
  }
  // zeros at analog infinity land on z = -1
  const size_t degree = analog.poles.size() - analog.zeros.size();
  for (size_t i = 0; i < degree; ++i) digital.zeros.emplace_back(-1.0, 0.0);
  digital.gain = analog.gain * std::real(num / den);
  return digital;
}

// Group poles into conjugate (or real) pairs and attach two zeros per section.
// All zero sets we produce here are real (+1 / -1), so sections stay real.
std::vector<Biquad> zpk_to_sos(const Zpk& zpk) {
  std::vector<cplx> poles = zpk.poles;
  std::vector<cplx> zeros = zpk.zeros;
  if (poles.size() % 2 != 0 || zeros.size() != poles.size())
    throw Error(ErrorCode::internal, "zpk_to_sos expects even, matched orders");

  // Pair each pole with its conjugate; sort for determinism.
  auto order_key = [](const cplx& a, const cplx& b) {
    if (a.real() != b.real()) return a.real() < b.real();
    return std::abs(a.imag()) < std::abs(b.imag());
  };
  std::sort(poles.begin(), poles.end(), order_key);
  std::sort(zeros.begin(), zeros.end(), order_key);

  std::vector<Biquad> sos;
  std::vector<bool> used(poles.size(), false);
  for (size_t i = 0; i < poles.size(); ++i) {
    if (used[i]) continue;
    used[i] = true;
    // find the (numerically) conjugate partner, or the next unused real pole
    size_t best = poles.size();
    double best_d = 1e300;
    for (size_t j = i + 1; j < poles.size(); ++j) {
      if (used[j]) continue;
      const double d = std::abs(poles[j] - std::conj(poles[i]));
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (best == poles.size())
      throw Error(ErrorCode::internal, "unpaired pole in zpk_to_sos");
    used[best] = true;
    const cplx p1 = poles[i], p2 = poles[best];
    Biquad s{};
    s.a1 = -std::real(p1 + p2);
    s.a2 = std::real(p1 * p2);
    // two zeros per section, consumed in sorted order
    const cplx z1 = zeros[sos.size() * 2];
    const cplx z2 = zeros[sos.size() * 2 + 1];
    s.b0 = 1.0;
    s.b1 = -std::real(z1 + z2);
    s.b2 = std::real(z1 * z2);
    sos.push_back(s);
  }
  // spread the gain magnitude evenly across sections, sign on the first
  const double mag = std::pow(std::abs(zpk.gain), 1.0 / sos.size());
  for (size_t i = 0; i < sos.size(); ++i) {
    const double g = (i == 0 && zpk.gain < 0.0) ? -mag : mag;
    sos[i].b0 *= g;
    sos[i].b1 *= g;
    sos[i].b2 *= g;
  }
  return sos;
}

// Steady-state (unit-step) internal state of a DF2T biquad.
void steady_state(const Biquad& s, double& z1, double& z2) {
  const double denom = 1.0 + s.a1 + s.a2;
  const double h1 = std::abs(denom) > 1e-300
                        ? (s.b0 + s.b1 + s.b2) / denom
                        : 0.0;
  z1 = h1 - s.b0;
  z2 = s.b2 - s.a2 * h1;
}

void sosfilt_inplace(const std::vector<Biquad>& sos, std::vector<double>& x) {
  for (const Biquad& s : sos) {
    double z1s, z2s;
    steady_state(s, z1s, z2s);
    const double x0 = x.empty() ? 0.0 : x.front();
    double z1 = z1s * x0, z2 = z2s * x0;
    for (double& v : x) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}

}  // namespace

std::vector<Biquad> butter_bandpass(int order, double low_hz, double high_hz,
                                    double fs_hz) {
  if (order < 1) throw_invalid("filter order must be >= 1");
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < fs_hz / 2.0))
    throw_invalid("band edges must satisfy 0 < low < high < Nyquist");

  const double w_lo = prewarp(low_hz, fs_hz);
  const double w_hi = prewarp(high_hz, fs_hz);
  const double w0 = std::sqrt(w_lo * w_hi);
  const double bw = w_hi - w_lo;

  Zpk analog;
  analog.gain = std::pow(bw, order);
  for (const cplx& p : prototype_poles(order)) {
    // lowpass -> bandpass: each pole maps to the roots of s^2 - p*bw*s + w0^2
    const cplx half = p * bw * 0.5;
    const cplx root = std::sqrt(half * half - w0 * w0);
    analog.poles.push_back(half + root);
    analog.poles.push_back(half - root);
  }
  for (int i = 0; i < order; ++i) analog.zeros.emplace_back(0.0, 0.0);

  return zpk_to_sos(bilinear(analog, fs_hz));
}

std::vector<Biquad> butter_highpass(int order, double cut_hz, double fs_hz) {
  if (order < 1 || order % 2 != 0)
    throw_invalid("highpass design here requires an even order");
  if (!(cut_hz > 0.0 && cut_hz < fs_hz / 2.0))
    throw_invalid("cutoff must lie inside (0, Nyquist)");

  const double wc = prewarp(cut_hz, fs_hz);
  Zpk analog;
  analog.gain = 1.0;
  for (const cplx& p : prototype_poles(order)) {
    analog.poles.push_back(wc / p);
    analog.zeros.emplace_back(0.0, 0.0);
  }
  return zpk_to_sos(bilinear(analog, fs_hz));
}

double sos_magnitude(const std::vector<Biquad>& sos, double f_hz,
                     double fs_hz) {
  const cplx zinv = std::exp(cplx(0.0, -2.0 * kPi * f_hz / fs_hz));
  cplx h(1.0, 0.0);
  for (const Biquad& s : sos) {
    h *= (s.b0 + s.b1 * zinv + s.b2 * zinv * zinv) /
         (1.0 + s.a1 * zinv + s.a2 * zinv * zinv);
  }
  return std::abs(h);
}

std::vector<double> sosfiltfilt(const std::vector<Biquad>& sos,
                                const std::vector<double>& x) {
  const size_t n = x.size();
  if (n == 0) return {};
  size_t b2_zero = 0, a2_zero = 0;
  for (const Biquad& s : sos) {
    if (s.b2 == 0.0) ++b2_zero;
    if (s.a2 == 0.0) ++a2_zero;
  }
  const size_t ntaps = 2 * sos.size() + 1 - std::min(b2_zero, a2_zero);
  const size_t pad = 3 * ntaps;
  if (n <= pad)
    throw_invalid("signal too short for zero-phase filtering");

  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  sosfilt_inplace(sos, ext);
  std::reverse(ext.begin(), ext.end());
  sosfilt_inplace(sos, ext);
  std::reverse(ext.begin(), ext.end());

  return std::vector<double>(ext.begin() + pad, ext.begin() + pad + n);
}

std::vector<double> bandpass(const std::vector<double>& x, double low_hz,
                             double high_hz, double fs_hz) {
  const double nyq = fs_hz / 2.0;
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz <= nyq))
    throw_invalid("bandpass edges must satisfy 0 < low < high <= Nyquist");
  const std::vector<Biquad> sos =
      high_hz >= 0.999 * nyq ? butter_highpass(4, low_hz, fs_hz)
                             : butter_bandpass(4, low_hz, high_hz, fs_hz);
  return sosfiltfilt(sos, x);
}

}  // namespace somnus::signal
