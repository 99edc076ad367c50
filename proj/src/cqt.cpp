#include "tokensynth/cqt.hpp"

#include <cmath>
#include <complex>
#include <stdexcept>

namespace tokensynth {

namespace {

constexpr double kPi = 3.14159265358979323846;

}  // namespace

long cqt_bin_of(double freq_hz, const CqtConfig& cfg) {
  const double b = static_cast<double>(cfg.bins_per_octave) * std::log2(freq_hz / cfg.f_min);
  long k = std::lround(b);
  const long total = cfg.octaves * cfg.bins_per_octave;
  if (k < 0) k = 0;
  if (k >= total) k = total - 1;
  return k;
}

Grid cqt(const AudioClip& clip, const CqtConfig& cfg) {
  const long bins = cfg.octaves * cfg.bins_per_octave;
  const double sr = static_cast<double>(clip.rate);
  const double f_max = cfg.f_min * std::pow(2.0, static_cast<double>(bins - 1) /
                                                     static_cast<double>(cfg.bins_per_octave));
  if (f_max >= sr / 2.0) throw std::runtime_error("cqt: octave span exceeds Nyquist");

  const long len = static_cast<long>(clip.samples.size());
  const long frames = (len + cfg.hop - 1) / cfg.hop;
  const double q = 1.0 / (std::pow(2.0, 1.0 / static_cast<double>(cfg.bins_per_octave)) - 1.0);

  Grid out(1, bins, frames);
  std::vector<std::complex<double>> atom;
  for (long k = 0; k < bins; ++k) {
    const double fk = cfg.f_min * std::pow(2.0, static_cast<double>(k) /
                                                    static_cast<double>(cfg.bins_per_octave));
    const long nk = static_cast<long>(std::ceil(q * sr / fk));
    const double omega = 2.0 * kPi * fk / sr;
    // Hann-windowed complex atom, built once per bin.
    atom.resize(static_cast<size_t>(nk));
    double wsum = 0.0;
    for (long i = 0; i < nk; ++i) {
      const double w = 0.5 * (1.0 - std::cos(2.0 * kPi * i / static_cast<double>(nk)));
      wsum += w;
      atom[static_cast<size_t>(i)] = std::polar(w, -omega * static_cast<double>(i));
    }
    const double scale = 2.0 / wsum;

    for (long t = 0; t < frames; ++t) {
      const long start = t * cfg.hop - nk / 2;
      std::complex<double> acc(0.0, 0.0);
      const long i0 = std::max(0L, -start);
      const long i1 = std::min(nk, len - start);
      for (long i = i0; i < i1; ++i)
        acc += clip.samples[static_cast<size_t>(start + i)] * atom[static_cast<size_t>(i)];
      out.at(0, k, t) = std::abs(acc) * scale;
    }
  }
  return out;
}

}  // namespace tokensynth
