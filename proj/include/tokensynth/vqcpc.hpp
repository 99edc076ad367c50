#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tokensynth/autodiff.hpp"
#include "tokensynth/config.hpp"
#include "tokensynth/manifest.hpp"
#include "tokensynth/modules.hpp"
#include "tokensynth/rng.hpp"
#include "tokensynth/stft.hpp"

namespace tokensynth {

// Hyperparameters for the tokenizer, resolved from a Config.
struct VqcpcSettings {
  int n_bins = 144;
  std::vector<int> enc_channels;  // hidden widths; code_dim is appended as the final layer
  int code_dim = 32;
  int codebook_size = 16;
  int gru_hidden = 256;
  int gru_layers = 2;
  int context_dim = 512;
  int pred_steps = 5;   // K
  int negatives = 16;   // per candidate set, positive excluded
  double commit_beta = 0.25;
  std::string negative_mode = "intra";  // intra | dataset
  bool shared_negatives = false;        // one candidate set per t, shared across k

  static VqcpcSettings from(const Config& cfg);
};

// Linear CQT magnitudes to normalized log features in [-1, 1].
// db = 20*log10(mag) clamped to [floor_db, 0], value = db / (-0.5*floor_db) + 1.
// Output rows are frames, columns are bins.
Tensor cqt_to_features(const Grid& cqt, double floor_db);

// Result of quantizing one embedding against a codebook. Ties go to the
// lowest centroid index. Losses are squared L2 distances.
struct QuantizeOne {
  int token = 0;
  std::vector<double> quantized;
  double vq = 0.0;
  double commit = 0.0;
};
QuantizeOne quantize_one(const std::vector<double>& e, const Tensor& codebook);

// n_neg indices uniform over [0, seq_len) excluding positive_index, with
// replacement. seq_len must be > 1.
std::vector<int> sample_negatives_intra(int seq_len, int positive_index, int n_neg, Rng& rng);

// Mean over rows of -log softmax at column 0. logits is (rows, candidates)
// with the positive candidate in column 0. Log-domain with a detached
// per-row max shift.
ad::Var infonce_from_logits(const ad::Var& logits);

// Single-context InfoNCE matching the scoring convention f_k(a, h) =
// exp(a^T W_k h). positives[k] and each negatives[k][j] are d_z vectors,
// heads[k] is (d_z, d_h), h is d_h. Throws if any candidate set is empty.
double infonce_loss(const std::vector<double>& h,
                    const std::vector<std::vector<double>>& positives,
                    const std::vector<std::vector<std::vector<double>>>& negatives,
                    const std::vector<Tensor>& heads);

// Empirical perplexity exp(entropy) of a token histogram. counts must have
// at least one positive entry.
double perplexity_from_counts(const std::vector<double>& counts);
double codebook_perplexity(const std::vector<std::vector<uint8_t>>& sequences, int codebook_size);

// k-means over points (n, d), k centroids, fixed iteration budget. Empty
// clusters are reseeded from the point farthest from its assigned centroid.
Tensor kmeans_codebook(const Tensor& points, int k, int iters, Rng& rng);

class VqcpcModel {
 public:
  VqcpcModel(const VqcpcSettings& s, Rng& rng);

  // feats (rows, n_bins) -> embeddings (rows, code_dim). Frame-local.
  ad::Var encode_frames(const ad::Var& feats);

  // Straight-through quantization of embedding rows.
  struct QuantizeRows {
    std::vector<int> tokens;
    ad::Var straight_through;  // value equals the selected centroids
    ad::Var vq;                // mean over rows of |sg(e) - c|^2
    ad::Var commit;            // mean over rows of |e - sg(c)|^2
  };
  QuantizeRows quantize_rows(const ad::Var& e);

  // Causal context over step-major inputs; steps[t] is (batch, code_dim).
  // Returns (batch, context_dim) per step.
  std::vector<ad::Var> context(const std::vector<ad::Var>& steps);

  ad::Var codebook() { return ps_.get("codebook"); }
  ad::Var head(int k) { return ps_.get("head." + std::to_string(k)); }
  void set_codebook(const Tensor& cb);

  ParamStore& params() { return ps_; }
  const VqcpcSettings& settings() const { return s_; }

 private:
  VqcpcSettings s_;
  ParamStore ps_;
  std::vector<Dense> enc_;
  Gru gru_;
  Dense proj_;
};

// Captured quantization state so a finite-difference oracle can probe the
// straight-through surrogate. The raw objective is piecewise constant along
// the quantization path; the surrogate with frozen assignments is the
// function whose gradient the optimizer actually consumes.
struct VqcpcFrozen {
  std::vector<int> tokens;      // batch*frames
  std::vector<int> negatives;   // [b][t][k][j] flattened
  Tensor st_offset;             // (rows, code_dim), q - e at capture
  Tensor e_detached;            // (rows, code_dim)
};

struct VqcpcStepLoss {
  ad::Var total;  // infonce + vq + beta*commit
  double infonce = 0.0;
  double vq = 0.0;
  double commit = 0.0;
  double perplexity = 0.0;
};

// One training objective evaluation. feats is (batch*frames, n_bins) with
// row index b*frames + t. frames must exceed pred_steps + 1. If capture is
// given, quantization state is recorded; if frozen is given, it replaces
// sampling and detached values (rng is not consumed).
VqcpcStepLoss vqcpc_step_loss(VqcpcModel& m, const Tensor& feats, int batch, int frames,
                              Rng& rng, VqcpcFrozen* capture = nullptr,
                              const VqcpcFrozen* frozen = nullptr);

// Feature matrices per manifest entry, loaded from run_dir/features/<id>.cqt.grid.
std::vector<Tensor> load_cqt_features(const std::string& run_dir, const Manifest& man,
                                      const Config& cfg);

// Deterministic model construction: parameter init from rng, then k-means
// codebook init over the first warmup_batches batches of encoder outputs.
VqcpcModel init_vqcpc_model(const Config& cfg, const std::vector<Tensor>& features, Rng& rng);

// Full training loop. Reads manifest_train.tsv and CQT features under
// run_dir, writes logs/vqcpc.tsv and checkpoints/vqcpc.ck. Aborts on
// non-finite loss. steps_override < 0 uses cfg vqcpc.steps.
void train_vqcpc(const Config& cfg, const std::string& run_dir, long steps_override = -1);

struct TokenFile {
  std::string id;
  int pitch = 0;
  std::vector<uint8_t> tokens;
};
void token_file_save(const std::string& path, const TokenFile& tf);
TokenFile token_file_load(const std::string& path);

// Encoder restored from a checkpoint; the fingerprint must match cfg.
VqcpcModel load_vqcpc_model(const Config& cfg, const std::string& ckpt_path);

// Tokens for one feature matrix (frames, n_bins), one byte per frame.
std::vector<uint8_t> tokenize_features(VqcpcModel& m, const Tensor& feats);

// Tokenize every manifest entry with the trained encoder; writes
// run_dir/tokens/<id>.tok. Returns number of files written.
int extract_tokens(const Config& cfg, const std::string& run_dir, const Manifest& man);

}  // namespace tokensynth
