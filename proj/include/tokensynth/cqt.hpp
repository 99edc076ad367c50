#pragma once

#include "tokensynth/stft.hpp"
#include "tokensynth/wav.hpp"

namespace tokensynth {

struct CqtConfig {
  long octaves = 6;
  long bins_per_octave = 24;
  long hop = 512;
  // C1; six octaves end at C7, covering the fundamentals of MIDI 44-70.
  double f_min = 32.70319566257483;
};

// Constant-Q magnitude grid (1, octaves*bins_per_octave, L) where
// L = ceil(len/hop), matching the STFT frame count on the same clip. Window
// centers sit at t*hop; windows extend past the signal into zeros. Magnitudes
// are scaled so an amplitude-1 sine at a bin frequency reads about 1.
Grid cqt(const AudioClip& clip, const CqtConfig& cfg);

// Bin index whose center frequency is nearest freq_hz.
long cqt_bin_of(double freq_hz, const CqtConfig& cfg);

}  // namespace tokensynth
