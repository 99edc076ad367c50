#pragma once

#include "tokensynth/wav.hpp"

#include <complex>
#include <vector>

namespace tokensynth {

// Spectrogram grid, channels x freq x frames, row-major.
struct Grid {
  long channels = 0;
  long freq = 0;
  long frames = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(long c, long f, long t) : channels(c), freq(f), frames(t) {
    values.assign(static_cast<size_t>(c * f * t), 0.0);
  }
  double& at(long c, long f, long t) { return values[static_cast<size_t>((c * freq + f) * frames + t)]; }
  double at(long c, long f, long t) const {
    return values[static_cast<size_t>((c * freq + f) * frames + t)];
  }
};

struct StftConfig {
  long fft_size = 2048;
  double overlap = 0.75;
  double floor_db = -80.0;
  long hop() const { return static_cast<long>(static_cast<double>(fft_size) * (1.0 - overlap)); }
};

// In-place radix-2 complex FFT; size must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a, bool inverse);

// Log-magnitude plus instantaneous-frequency deviation, channels (2, F, L)
// with F = fft_size/2 (Nyquist dropped) and L = ceil(len/hop).
//
// Magnitude: |X| scaled so a full-scale sine at a bin center reads 1.0, then
// 20*log10, clamped to [floor_db, 0] and mapped linearly to [-1, 1]. The dB
// reference is fixed at full scale, not the clip maximum, so inversion keeps
// absolute level.
//
// IF channel: frame 0 holds phase/pi; later frames hold
// princarg(dphase - bin advance)/pi. Bins at the magnitude floor carry 0.
Grid stft_magif(const AudioClip& clip, const StftConfig& cfg);

// Inverse of stft_magif: integrate IF to phase, weighted overlap-add.
// Output length = frames * hop.
std::vector<double> invert_magif(const Grid& spec, const StftConfig& cfg);

}  // namespace tokensynth
