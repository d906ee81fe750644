#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <vector>

#include "ptpai/common.hpp"

namespace ptpai::dsp {

inline std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

// Forward real DFT, n/2+1 bins.
inline std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
  require(!x.empty(), ErrorCode::invalid_input, "rfft: empty input");
  std::lock_guard<std::mutex> lock(fftw_mutex());
  const int n = static_cast<int>(x.size());
  std::vector<double> in(x);
  std::vector<std::complex<double>> out(n / 2 + 1);
  fftw_plan plan = fftw_plan_dft_r2c_1d(
      n, in.data(), reinterpret_cast<fftw_complex*>(out.data()),
      FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  return out;
}

// Inverse of rfft; returns a length-n real signal (1/n normalized).
inline std::vector<double> irfft(std::vector<std::complex<double>> spec,
                                 int n) {
  require(n > 0 && static_cast<int>(spec.size()) == n / 2 + 1,
          ErrorCode::shape, "irfft: bin count does not match length");
  std::lock_guard<std::mutex> lock(fftw_mutex());
  std::vector<double> out(static_cast<std::size_t>(n));
  fftw_plan plan = fftw_plan_dft_c2r_1d(
      n, reinterpret_cast<fftw_complex*>(spec.data()), out.data(),
      FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  for (double& v : out) v /= n;
  return out;
}

// Symmetric Hann window; endpoints are exactly zero for n >= 2.
inline std::vector<double> hann_window(int n) {
  require(n >= 2, ErrorCode::invalid_spec, "hann_window: need n >= 2");
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    w[static_cast<std::size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (n - 1)));
  }
  return w;
}

// Squared magnitude response of an order-4 Butterworth band-pass, i.e. the
// net gain of a forward+reverse (zero-phase) pass.
inline double butterworth_bandpass_gain(double f, double low_hz,
                                        double high_hz) {
  if (f <= 0.0) return 0.0;
  const auto pow8 = [](double r) {
    double r2 = r * r;
    double r4 = r2 * r2;
    return r4 * r4;
  };
  double hp = 1.0 / (1.0 + pow8(low_hz / f));
  double lp = 1.0 / (1.0 + pow8(f / high_hz));
  return hp * hp * lp * lp;
}

// Zero-phase band-pass via DFT-domain application of the Butterworth gain.
// DC is removed exactly; output length equals input length.
inline std::vector<double> zero_phase_bandpass(const std::vector<double>& x,
                                               double low_hz, double high_hz,
                                               double fs) {
  require(0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0,
          ErrorCode::invalid_spec, "bandpass: need 0 < low < high < fs/2");
  const int n = static_cast<int>(x.size());
  auto spec = rfft(x);
  for (int k = 0; k < static_cast<int>(spec.size()); ++k) {
    double f = fs * k / n;
    spec[static_cast<std::size_t>(k)] *=
        butterworth_bandpass_gain(f, low_hz, high_hz);
  }
  return irfft(std::move(spec), n);
}

}  // namespace ptpai::dsp
