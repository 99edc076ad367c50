#include "tokensynth/stft.hpp"

#include <cmath>
#include <stdexcept>

namespace tokensynth {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<double> hann_periodic(long n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i)
    w[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / static_cast<double>(n)));
  return w;
}

double princarg(double x) { return std::remainder(x, 2.0 * kPi); }

}  // namespace

void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw std::runtime_error("fft: size not a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * kPi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= static_cast<double>(n);
}

Grid stft_magif(const AudioClip& clip, const StftConfig& cfg) {
  const long fft = cfg.fft_size;
  if (fft <= 0 || (fft & (fft - 1)) != 0)
    throw std::runtime_error("stft: fft_size not a power of two");
  if (cfg.overlap < 0.0 || cfg.overlap >= 1.0) throw std::runtime_error("stft: bad overlap");
  const long hop = cfg.hop();
  const long len = static_cast<long>(clip.samples.size());
  if (len < fft) throw std::runtime_error("stft: clip shorter than one window");
  const long frames = (len + hop - 1) / hop;
  const long bins = fft / 2;  // Nyquist dropped

  const std::vector<double> win = hann_periodic(fft);
  double wsum = 0.0;
  for (double w : win) wsum += w;
  const double mag_scale = 2.0 / wsum;

  Grid out(2, bins, frames);
  std::vector<double> prev_phase(static_cast<size_t>(bins), 0.0);
  std::vector<std::complex<double>> buf(static_cast<size_t>(fft));
  // The floor in linear units, with a small margin to absorb rounding.
  const double floor_lin = std::pow(10.0, cfg.floor_db / 20.0) * (1.0 + 1e-9);

  for (long t = 0; t < frames; ++t) {
    const long start = t * hop - fft / 2;  // center-padded framing
    for (long i = 0; i < fft; ++i) {
      const long n = start + i;
      const double s = (n >= 0 && n < len) ? clip.samples[static_cast<size_t>(n)] : 0.0;
      buf[static_cast<size_t>(i)] = {s * win[static_cast<size_t>(i)], 0.0};
    }
    fft_radix2(buf, false);
    for (long k = 0; k < bins; ++k) {
      const double mag = std::abs(buf[static_cast<size_t>(k)]) * mag_scale;
      double db = mag > 0.0 ? 20.0 * std::log10(mag) : cfg.floor_db;
      db = std::min(0.0, std::max(cfg.floor_db, db));
      out.at(0, k, t) = db / (-0.5 * cfg.floor_db) + 1.0;

      const bool floored = mag <= floor_lin;
      const double phase = floored ? 0.0 : std::arg(buf[static_cast<size_t>(k)]);
      if (floored) {
        out.at(1, k, t) = 0.0;
      } else if (t == 0) {
        out.at(1, k, t) = phase / kPi;
      } else {
        const double advance = 2.0 * kPi * static_cast<double>(k * hop) / static_cast<double>(fft);
        out.at(1, k, t) = princarg(phase - prev_phase[static_cast<size_t>(k)] - advance) / kPi;
      }
      prev_phase[static_cast<size_t>(k)] = phase;
    }
  }
  return out;
}

std::vector<double> invert_magif(const Grid& spec, const StftConfig& cfg) {
  const long fft = cfg.fft_size;
  const long bins = fft / 2;
  if (spec.channels != 2 || spec.freq != bins)
    throw std::runtime_error("invert: geometry mismatch with fft_size");
  const long hop = cfg.hop();
  const long frames = spec.frames;
  const long out_len = frames * hop;

  const std::vector<double> win = hann_periodic(fft);
  double wsum = 0.0;
  for (double w : win) wsum += w;
  const double mag_unscale = wsum / 2.0;

  std::vector<double> y(static_cast<size_t>(out_len), 0.0);
  std::vector<double> norm(static_cast<size_t>(out_len), 0.0);
  std::vector<double> phase(static_cast<size_t>(bins), 0.0);
  std::vector<std::complex<double>> buf(static_cast<size_t>(fft));

  for (long t = 0; t < frames; ++t) {
    for (long k = 0; k < bins; ++k) {
      const double db = (spec.at(0, k, t) - 1.0) * (-0.5 * cfg.floor_db);
      // Values at the floor render as silence rather than a -80 dB hiss bed.
      const double mag =
          db <= cfg.floor_db + 1e-9 ? 0.0 : std::pow(10.0, db / 20.0) * mag_unscale;
      const double ifdev = spec.at(1, k, t) * kPi;
      if (t == 0) {
        phase[static_cast<size_t>(k)] = ifdev;
      } else {
        const double advance = 2.0 * kPi * static_cast<double>(k * hop) / static_cast<double>(fft);
        phase[static_cast<size_t>(k)] += advance + ifdev;
      }
      buf[static_cast<size_t>(k)] = std::polar(mag, phase[static_cast<size_t>(k)]);
    }
    // Hermitian completion; Nyquist assumed zero.
    buf[static_cast<size_t>(bins)] = {0.0, 0.0};
    for (long k = 1; k < bins; ++k)
      buf[static_cast<size_t>(fft - k)] = std::conj(buf[static_cast<size_t>(k)]);
    buf[0] = {buf[0].real(), 0.0};
    fft_radix2(buf, true);

    const long start = t * hop - fft / 2;
    for (long i = 0; i < fft; ++i) {
      const long n = start + i;
      if (n < 0 || n >= out_len) continue;
      const double w = win[static_cast<size_t>(i)];
      y[static_cast<size_t>(n)] += buf[static_cast<size_t>(i)].real() * w;
      norm[static_cast<size_t>(n)] += w * w;
    }
  }
  for (long n = 0; n < out_len; ++n)
    if (norm[static_cast<size_t>(n)] > 1e-9) y[static_cast<size_t>(n)] /= norm[static_cast<size_t>(n)];
  return y;
}

}  // namespace tokensynth
