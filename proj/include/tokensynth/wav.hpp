#pragma once

#include <string>
#include <vector>

namespace tokensynth {

struct AudioClip {
  std::vector<double> samples;  // [-1, 1]
  long rate = 16000;
  int pitch = -1;
  std::string instrument_family;
  std::string source_id;
};

// 16-bit PCM mono RIFF only.
struct WavData {
  long rate = 0;
  std::vector<double> samples;
};

WavData wav_read(const std::string& path);
void wav_write(const std::string& path, long rate, const std::vector<double>& samples);

// Loads and conforms a clip: mono 16-bit PCM, trimmed or zero-padded to
// duration_s at expected_rate. A differing file rate is an error unless
// allow_resample, which applies linear resampling.
AudioClip load_clip(const std::string& path, long expected_rate, double duration_s,
                    bool allow_resample = false);

std::vector<double> resample_linear(const std::vector<double>& x, long from_rate,
                                    long to_rate);

}  // namespace tokensynth
