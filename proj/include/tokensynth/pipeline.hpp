#pragma once

#include "tokensynth/config.hpp"

#include <cstdint>
#include <string>

namespace tokensynth {

struct PrepareReport {
  int clips = 0;
  int train_clips = 0;
  int test_clips = 0;
  long frames = 0;  // frame count L shared by every feature file
};

// Scans audio_dir for wav files, filters by the configured pitch range,
// splits train/test, and writes the manifests, the config snapshot, the STFT
// feature pyramid, and CQT grids under run_dir. workers <= 0 picks the
// hardware thread count. Refuses an already prepared run_dir unless force.
PrepareReport prepare_run(const Config& cfg, const std::string& audio_dir,
                          const std::string& run_dir, bool force, int workers = 0);

// Frame count for a clip duration: round(duration*rate/hop) pushed up to the
// next multiple of 16 so the scale blocks divide evenly. 0.5/1/2/4 s at
// 16 kHz with hop 512 give 16/32/64/128.
long frames_for_duration(double duration_s, long rate, long hop);

struct GenerateRequest {
  int pitch = -1;
  double duration_s = 0;   // <= 0 uses audio.duration_s
  std::string token_file;  // exactly one token source must be set:
  std::string ref_wav;     //   .tok file | reference wav | constant token
  int const_token = -1;
  std::uint64_t z_seed = 0;
  std::string out_path;  // empty writes run_dir/generated.wav
  bool force = false;
};

// Synthesizes one clip from the trained generator, inverts it to audio, and
// writes 16-bit PCM at the configured rate. Returns the sample count.
long generate_audio(const Config& cfg, const std::string& run_dir, const GenerateRequest& req);

// Runs the metric pipeline, writes run_dir/metrics.tsv, and returns the
// human-readable report.
std::string evaluate_and_write(const Config& cfg, const std::string& run_dir, bool force);

}  // namespace tokensynth
