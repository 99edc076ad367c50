#pragma once

#include "tokensynth/gan.hpp"
#include "tokensynth/manifest.hpp"

#include <memory>
#include <string>
#include <vector>

namespace tokensynth {

struct ScalePhase {
  int scale = 1;       // 1-based ladder position
  long iters = 0;      // iterations spent at this scale
  long fade_iters = 0; // leading iterations that blend in the new scale
  int batch = 1;
};

// Expands the config into one phase per scale. Scale 1 never fades.
std::vector<ScalePhase> progressive_schedule(const Config& cfg);

// Blend weight for the i-th iteration (0-based) of a phase: ramps 0 -> 1
// over fade_iters, then holds at 1.
double fade_alpha(const ScalePhase& p, long i);

// Runs the progressive loop inside run_dir (expects manifests, the feature
// pyramid, and token files to exist). resume continues from
// checkpoints/gan_latest.ck. stop_after_steps >= 0 pauses once the global
// step counter reaches it, leaving a resumable checkpoint. Returns the step
// reached.
long train_gan(const Config& cfg, const std::string& run_dir, bool resume = false,
               long stop_after_steps = -1);

// A generator restored from a training checkpoint, plus everything needed to
// condition it.
struct LoadedGan {
  GanSettings settings;
  std::vector<int> pitch_classes;  // ascending midi pitches, index = class
  std::unique_ptr<Generator> gen;
  int scale = 1;  // scale the checkpoint was training at
  long step = 0;
};

LoadedGan load_generator(const Config& cfg, const std::string& ckpt_path);

}  // namespace tokensynth
