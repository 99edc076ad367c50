#pragma once

#include "tokensynth/config.hpp"
#include "tokensynth/modules.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tokensynth {

// Geometry and widths of the progressive pair. The frequency axis grows
// base_freq -> full_freq across n_scales doublings; the frame axis is fixed
// by the conditioning length and never grows.
struct GanSettings {
  int z_dim = 128;
  int pitch_classes = 0;
  int token_classes = 16;
  std::vector<int> maps;  // feature maps per scale, low to high resolution
  int n_scales = 6;
  int frames = 32;  // training sequence length L
  int full_freq = 1024;
  int base_freq = 32;
  int dense_hidden = 256;

  long freq_at(int scale) const;  // scale is 1-based
  int cond_channels() const { return pitch_classes + z_dim + token_classes; }

  static GanSettings from(const Config& cfg, int pitch_classes, int frames);
};

// Nearest-index stretch or decimation of a token sequence to target_len.
std::vector<std::uint8_t> resample_tokens(const std::vector<std::uint8_t>& tokens,
                                          long target_len);

// Stacks pitch one-hot, noise, and per-frame token one-hot into a
// (P + Z + C, 1, L) conditioning grid. Pitch and noise rows are constant
// across frames; token rows switch per frame.
Tensor assemble_input(const std::vector<double>& z, const std::vector<double>& pitch_onehot,
                      const std::vector<std::uint8_t>& tokens, int token_classes);

// Batched conditioning, (B, P + Z + C, 1, L). pitch_class holds class indices.
Tensor assemble_cond_batch(const GanSettings& s, const std::vector<std::vector<double>>& z,
                           const std::vector<int>& pitch_class,
                           const std::vector<std::vector<std::uint8_t>>& tokens);

// Per-location channel normalization: x / sqrt(mean_c x^2 + eps) on (B,C,F,T).
ad::Var pixel_norm(const ad::Var& x, double eps = 1e-8);

// Mean cross entropy from raw logits. 2-d form takes (R, K) with one target
// per row; the channel form takes (B, K, 1, L) with B*L targets in b-major
// frame order.
ad::Var softmax_ce(const ad::Var& logits, const std::vector<int>& targets);
ad::Var softmax_ce_channels(const ad::Var& logits, const std::vector<int>& targets);

// Progressive generator. All scales' parameters exist from construction; the
// scale argument selects how much of the ladder runs. Output is (B, 2, F, L)
// in [-1, 1] (tanh), channel 0 magnitude, channel 1 instantaneous frequency.
class Generator {
 public:
  Generator(const GanSettings& s, Rng& rng);

  // alpha in [0, 1]: during fade-in the new scale's head is blended with the
  // upsampled previous head. alpha >= 1 bypasses the blend.
  ad::Var forward(const ad::Var& cond, int scale, double alpha);

  ParamStore& params() { return ps_; }
  const GanSettings& settings() const { return s_; }

 private:
  GanSettings s_;
  ParamStore ps_;
  Conv2d in1_, in2_;
  std::vector<Conv2d> block_a_, block_b_;  // scales 2..n
  std::vector<Conv2d> heads_;              // scales 1..n
};

struct DLocalOut {
  ad::Var score;         // (B, 1, 1, L)
  ad::Var token_logits;  // (B, C, 1, L)
};

// Frame-local critic. Every convolution has time kernel 1 and time stride 1,
// so each frame's score depends only on that frame's column and the stack
// accepts any L without rebuilding.
class DLocal {
 public:
  DLocal(const GanSettings& s, Rng& rng);

  DLocalOut forward(const ad::Var& spec, int scale);

  ParamStore& params() { return ps_; }
  const GanSettings& settings() const { return s_; }

 private:
  GanSettings s_;
  ParamStore ps_;
  std::vector<Conv2d> entry_;   // scales 1..n
  std::vector<Conv2d> blocks_;  // scales 2..n, used by every scale above
  std::vector<Conv2d> tail_;    // base_freq -> 1
  Conv2d head_score_, head_token_;
};

struct DGlobalOut {
  ad::Var score;         // (B, 1)
  ad::Var pitch_logits;  // (B, P)
};

// Whole-excerpt critic: 3x3 ladder mirroring the generator with reversed
// maps, then a dense pair over the flattened (maps[0], 1, L) features. The
// dense head fixes L; other frame counts are rejected.
class DGlobal {
 public:
  DGlobal(const GanSettings& s, Rng& rng);

  DGlobalOut forward(const ad::Var& spec, int scale);

  ParamStore& params() { return ps_; }
  const GanSettings& settings() const { return s_; }

 private:
  GanSettings s_;
  ParamStore ps_;
  std::vector<Conv2d> entry_;
  std::vector<Conv2d> blocks_;
  std::vector<Conv2d> tail_;
  Dense fc1_, fc2_;
};

enum class GpMode {
  PerSample,  // gradient norm over each sample's full grid
  PerFrame,   // gradient norm over each frame's column; critic must emit per-frame scores
};

// WGAN-GP penalty mean((||grad_xhat critic|| - 1)^2) at xhat = u*real +
// (1-u)*fake, u drawn once per sample. The critic sees a rank-4 batch and
// must return per-sample or per-frame scores to match the mode.
ad::Var gradient_penalty(const std::function<ad::Var(const ad::Var&)>& critic,
                         const Tensor& real, const Tensor& fake, GpMode mode, Rng& rng);

struct GanWeights {
  double lambda_gp = 10.0;
  double w_ce = 1.0;
  double drift_eps = 0.001;

  static GanWeights from(const Config& cfg);
};

struct GanBatch {
  Tensor real;  // (B, 2, F, L) at the current scale
  Tensor cond;  // (B, P + Z + C, 1, L)
  std::vector<int> real_pitch;            // B class indices
  std::vector<std::uint8_t> real_tokens;  // B*L frame tokens, b-major
  std::vector<int> fake_pitch;            // labels used to build cond
  std::vector<std::uint8_t> fake_tokens;
};

struct GanLossReport {
  ad::Var d_total_var;  // backward target for the critics
  ad::Var g_total_var;  // backward target for the generator
  double w_local = 0, w_global = 0;  // E[D(real)] - E[D(fake)] per critic
  double gp_local = 0, gp_global = 0;
  double ce_token = 0, ce_pitch = 0;  // critic-side, real and fake pooled
  double drift = 0;
  double d_total = 0, g_total = 0;
};

// One full loss evaluation. The critic loss sees the generator output as a
// constant; the generator loss runs its own critic passes on the live fake.
// rng drives the gradient-penalty interpolation draws.
GanLossReport gan_losses(Generator& gen, DLocal& dl, DGlobal& dg, const GanBatch& batch,
                         int scale, double alpha, const GanWeights& w, Rng& rng);

}  // namespace tokensynth
