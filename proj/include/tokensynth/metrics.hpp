#pragma once

#include "tokensynth/config.hpp"
#include "tokensynth/modules.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace tokensynth {

// Penultimate-layer vectors plus both class posteriors for a set of clips.
struct EmbeddingSet {
  std::vector<std::vector<double>> vectors;       // N x d_e
  std::vector<std::vector<double>> pitch_probs;   // N x P
  std::vector<std::vector<double>> family_probs;  // N x F
};

struct EvalNetOut {
  ad::Var embed;          // (B, d_e)
  ad::Var pitch_logits;   // (B, P)
  ad::Var family_logits;  // (B, F)
};

// Small classifier over log-magnitude grids: three strided 3x3 convolutions,
// global average pooling, a dense embedding layer, and two linear heads.
// Pooling makes it geometry-free, so one net serves every preset.
class EvalNet {
 public:
  EvalNet(int pitch_classes, int family_classes, int embed_dim, Rng& rng);

  EvalNetOut forward(const ad::Var& x);  // x: (B, 1, F, L)

  ParamStore& params() { return ps_; }
  int pitch_classes() const { return pitch_classes_; }
  int family_classes() const { return family_classes_; }
  int embed_dim() const { return embed_dim_; }

 private:
  int pitch_classes_ = 0, family_classes_ = 0, embed_dim_ = 0;
  ParamStore ps_;
  Conv2d c1_, c2_, c3_;
  Dense embed_, head_pitch_, head_family_;
};

struct EvalTrainResult {
  double pitch_accuracy = 0;  // on the held-out test split
  double family_accuracy = 0;
  long steps = 0;
};

// Trains the classifier on the train split's full-resolution magnitude
// channel, writes checkpoints/eval.ck and logs/eval.tsv, and reports held-out
// accuracy. steps_override < 0 uses eval.steps.
EvalTrainResult train_inception(const Config& cfg, const std::string& run_dir,
                                long steps_override = -1);

struct LoadedEval {
  std::unique_ptr<EvalNet> net;
  std::vector<int> pitch_classes;
  std::vector<std::string> families;
};

LoadedEval load_eval_net(const Config& cfg, const std::string& path);

// FNV-1a over the classifier parameters; names the embedder in reports so
// scores from different embedders are never compared by accident.
std::uint64_t embedder_fingerprint(const ParamStore& ps);

// Batched no-gradient forward over (1, F, L) magnitude grids.
EmbeddingSet embed(EvalNet& net, const std::vector<Tensor>& mags, long batch);

// exp(mean_i KL(p_i || mean_j p_j)). Every row must sum to 1 within 1e-6.
// Always lands in [1, K].
double inception_score(const std::vector<std::vector<double>>& probs);

// Unbiased MMD^2 with kernel k(x, y) = (x.y/d + 1)^3. Within-set sums drop
// the diagonal; equally sized sets additionally drop index-matched cross
// pairs (the U-statistic form), so identical sets score zero up to rounding.
double kid(const std::vector<std::vector<double>>& a,
           const std::vector<std::vector<double>>& b);

struct GaussianStats {
  long n = 0;
  std::vector<double> mu;   // d
  std::vector<double> cov;  // d x d row-major, (n - 1)-normalized
};

GaussianStats embedding_stats(const std::vector<std::vector<double>>& rows);

// ||mu_a - mu_b||^2 + Tr(Ca + Cb - 2 (Ca Cb)^{1/2}). The square root comes
// from the eigendecomposition of the symmetrized product with negative
// eigenvalues clipped at zero; a 1e-6 ridge is added for any set with n <= d.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);
double fad(const std::vector<std::vector<double>>& a,
           const std::vector<std::vector<double>>& b);

struct MetricReport {
  double pis = 0, iis = 0;
  double kid = 0, fad = 0;
  long n_samples = 0;
  std::uint64_t embedder = 0;
};

std::string metric_report_tsv(const MetricReport& r);
std::string metric_report_text(const MetricReport& r);

// Loads the trained pair, generates n samples conditioned on test-split
// pitches and token sequences with fresh noise, embeds generated and test
// sets, and computes all four metrics. Trains the classifier first when
// checkpoints/eval.ck is missing.
MetricReport evaluate_run(const Config& cfg, const std::string& run_dir,
                          long n_samples_override = -1);

}  // namespace tokensynth
