#pragma once

#include "tokensynth/stft.hpp"

#include <string>

namespace tokensynth {

// Flat binary grid container: 32-byte little-endian header
// (magic "TSGR", version, channels, freq, frames, dtype, 8 reserved bytes)
// followed by row-major float32 values. Writes are atomic (temp + rename).
void grid_save(const Grid& g, const std::string& path);
Grid grid_load(const std::string& path);

// Average pooling along frequency only; factor must divide freq.
Grid downscale_freq(const Grid& g, long factor);

// Trim or zero-pad along time to exactly `frames`.
Grid reconcile_frames(const Grid& g, long frames);

}  // namespace tokensynth
