#include "tokensynth/metrics.hpp"

#include "tokensynth/checkpoint.hpp"
#include "tokensynth/gan.hpp"
#include "tokensynth/manifest.hpp"
#include "tokensynth/spectro.hpp"
#include "tokensynth/train.hpp"
#include "tokensynth/vqcpc.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace fs = std::filesystem;

namespace tokensynth {

namespace {

constexpr double kLeak = 0.2;

// Conv widths of the classifier trunk. Pooling keeps the net independent of
// the grid geometry, so these are the only architecture knobs.
constexpr long kTrunk[3] = {16, 32, 64};

std::vector<double> softmax_row(const double* logits, long k) {
  double mx = logits[0];
  for (long i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
  std::vector<double> p(static_cast<size_t>(k));
  double z = 0.0;
  for (long i = 0; i < k; ++i) {
    p[static_cast<size_t>(i)] = std::exp(logits[i] - mx);
    z += p[static_cast<size_t>(i)];
  }
  for (auto& v : p) v /= z;
  return p;
}

void check_rows(const std::vector<std::vector<double>>& rows, const char* what) {
  if (rows.size() < 2) throw std::runtime_error(std::string(what) + ": need at least 2 rows");
  const size_t d = rows[0].size();
  if (d == 0) throw std::runtime_error(std::string(what) + ": empty rows");
  for (const auto& r : rows) {
    if (r.size() != d) throw std::runtime_error(std::string(what) + ": ragged rows");
    for (double v : r)
      if (!std::isfinite(v)) throw std::runtime_error(std::string(what) + ": non-finite value");
  }
}

double poly3(const std::vector<double>& x, const std::vector<double>& y) {
  double dot = 0.0;
  for (size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
  const double b = dot / static_cast<double>(x.size()) + 1.0;
  return b * b * b;
}

}  // namespace

EvalNet::EvalNet(int pitch_classes, int family_classes, int embed_dim, Rng& rng)
    : pitch_classes_(pitch_classes), family_classes_(family_classes), embed_dim_(embed_dim) {
  if (pitch_classes < 2) throw std::runtime_error("eval net: need at least two pitch classes");
  if (family_classes < 2) throw std::runtime_error("eval net: need at least two families");
  if (embed_dim < 1) throw std::runtime_error("eval net: embed_dim must be positive");
  c1_ = Conv2d(ps_, "ev.c1", 1, kTrunk[0], 3, 3, 2, 2, 1, 1, rng);
  c2_ = Conv2d(ps_, "ev.c2", kTrunk[0], kTrunk[1], 3, 3, 2, 2, 1, 1, rng);
  c3_ = Conv2d(ps_, "ev.c3", kTrunk[1], kTrunk[2], 3, 3, 2, 2, 1, 1, rng);
  embed_ = Dense(ps_, "ev.embed", kTrunk[2], embed_dim, rng);
  head_pitch_ = Dense(ps_, "ev.pitch", embed_dim, pitch_classes, rng);
  head_family_ = Dense(ps_, "ev.family", embed_dim, family_classes, rng);
}

EvalNetOut EvalNet::forward(const ad::Var& x) {
  if (x.value().rank() != 4 || x.dim(1) != 1)
    throw std::runtime_error("eval net: input must be (B, 1, F, L)");
  ad::Var h = ad::leaky_relu(c1_.forward(x), kLeak);
  h = ad::leaky_relu(c2_.forward(h), kLeak);
  h = ad::leaky_relu(c3_.forward(h), kLeak);
  const long cells = h.dim(2) * h.dim(3);
  h = ad::sum_keep(ad::sum_keep(h, 2), 3);
  h = ad::muls(ad::reshape(h, {h.dim(0), h.dim(1)}), 1.0 / static_cast<double>(cells));
  ad::Var e = ad::leaky_relu(embed_.forward(h), kLeak);
  EvalNetOut out;
  out.embed = e;
  out.pitch_logits = head_pitch_.forward(e);
  out.family_logits = head_family_.forward(e);
  return out;
}

std::uint64_t embedder_fingerprint(const ParamStore& ps) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, v] : ps.entries()) {
    mix(name.data(), name.size());
    mix(v.value().data(), static_cast<size_t>(v.numel()) * sizeof(double));
  }
  return h;
}

EmbeddingSet embed(EvalNet& net, const std::vector<Tensor>& mags, long batch) {
  if (mags.empty()) throw std::runtime_error("embed: empty clip set");
  if (batch < 1) throw std::runtime_error("embed: batch must be positive");
  const long F = mags[0].dim(1), L = mags[0].dim(2);
  for (const auto& m : mags)
    if (m.rank() != 3 || m.dim(0) != 1 || m.dim(1) != F || m.dim(2) != L)
      throw std::runtime_error("embed: clip geometry mismatch");

  EmbeddingSet out;
  const long n = static_cast<long>(mags.size());
  for (long start = 0; start < n; start += batch) {
    const long bs = std::min(batch, n - start);
    Tensor x({bs, 1, F, L});
    for (long b = 0; b < bs; ++b)
      std::copy(mags[static_cast<size_t>(start + b)].data(),
                mags[static_cast<size_t>(start + b)].data() + F * L, x.data() + b * F * L);
    ad::NoGradGuard ng;
    EvalNetOut o = net.forward(ad::constant(x));
    const long d = o.embed.dim(1);
    const long P = o.pitch_logits.dim(1);
    const long Fm = o.family_logits.dim(1);
    for (long b = 0; b < bs; ++b) {
      out.vectors.emplace_back(o.embed.value().data() + b * d,
                               o.embed.value().data() + (b + 1) * d);
      out.pitch_probs.push_back(softmax_row(o.pitch_logits.value().data() + b * P, P));
      out.family_probs.push_back(softmax_row(o.family_logits.value().data() + b * Fm, Fm));
    }
  }
  return out;
}

double inception_score(const std::vector<std::vector<double>>& probs) {
  if (probs.empty()) throw std::runtime_error("inception score: empty set");
  const size_t k = probs[0].size();
  if (k == 0) throw std::runtime_error("inception score: empty rows");
  for (const auto& r : probs) {
    if (r.size() != k) throw std::runtime_error("inception score: ragged rows");
    double sum = 0.0;
    for (double v : r) {
      if (!(v >= 0.0)) throw std::runtime_error("inception score: negative probability");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw std::runtime_error("inception score: row does not sum to 1");
  }
  std::vector<double> pbar(k, 0.0);
  for (const auto& r : probs)
    for (size_t i = 0; i < k; ++i) pbar[i] += r[i];
  for (auto& v : pbar) v /= static_cast<double>(probs.size());

  double mean_kl = 0.0;
  for (const auto& r : probs) {
    double kl = 0.0;
    for (size_t i = 0; i < k; ++i)
      if (r[i] > 0.0) kl += r[i] * (std::log(r[i]) - std::log(pbar[i]));
    mean_kl += kl;
  }
  mean_kl /= static_cast<double>(probs.size());
  return std::exp(mean_kl);
}

double kid(const std::vector<std::vector<double>>& a,
           const std::vector<std::vector<double>>& b) {
  check_rows(a, "kid");
  check_rows(b, "kid");
  if (a[0].size() != b[0].size()) throw std::runtime_error("kid: dimension mismatch");
  const long m = static_cast<long>(a.size());
  const long n = static_cast<long>(b.size());

  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < m; ++j)
      if (i != j) saa += poly3(a[static_cast<size_t>(i)], a[static_cast<size_t>(j)]);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j)
      if (i != j) sbb += poly3(b[static_cast<size_t>(i)], b[static_cast<size_t>(j)]);

  if (m == n) {
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < n; ++j)
        if (i != j) sab += poly3(a[static_cast<size_t>(i)], b[static_cast<size_t>(j)]);
    return saa / static_cast<double>(m * (m - 1)) + sbb / static_cast<double>(n * (n - 1)) -
           2.0 * sab / static_cast<double>(m * (m - 1));
  }
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < n; ++j)
      sab += poly3(a[static_cast<size_t>(i)], b[static_cast<size_t>(j)]);
  return saa / static_cast<double>(m * (m - 1)) + sbb / static_cast<double>(n * (n - 1)) -
         2.0 * sab / static_cast<double>(m * n);
}

GaussianStats embedding_stats(const std::vector<std::vector<double>>& rows) {
  check_rows(rows, "embedding stats");
  const long n = static_cast<long>(rows.size());
  const long d = static_cast<long>(rows[0].size());
  GaussianStats s;
  s.n = n;
  s.mu.assign(static_cast<size_t>(d), 0.0);
  for (const auto& r : rows)
    for (long i = 0; i < d; ++i) s.mu[static_cast<size_t>(i)] += r[static_cast<size_t>(i)];
  for (auto& v : s.mu) v /= static_cast<double>(n);

  s.cov.assign(static_cast<size_t>(d * d), 0.0);
  for (const auto& r : rows)
    for (long i = 0; i < d; ++i) {
      const double ci = r[static_cast<size_t>(i)] - s.mu[static_cast<size_t>(i)];
      for (long j = 0; j < d; ++j)
        s.cov[static_cast<size_t>(i * d + j)] +=
            ci * (r[static_cast<size_t>(j)] - s.mu[static_cast<size_t>(j)]);
    }
  for (auto& v : s.cov) v /= static_cast<double>(n - 1);
  return s;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  const long d = static_cast<long>(a.mu.size());
  if (d == 0 || static_cast<long>(b.mu.size()) != d)
    throw std::runtime_error("frechet distance: dimension mismatch");
  if (static_cast<long>(a.cov.size()) != d * d || static_cast<long>(b.cov.size()) != d * d)
    throw std::runtime_error("frechet distance: covariance size mismatch");

  using Mat = Eigen::MatrixXd;
  Mat A = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                         Eigen::RowMajor>>(a.cov.data(), d, d);
  Mat B = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                         Eigen::RowMajor>>(b.cov.data(), d, d);
  if (a.n > 0 && a.n <= d) A.diagonal().array() += 1e-6;
  if (b.n > 0 && b.n <= d) B.diagonal().array() += 1e-6;

  Eigen::SelfAdjointEigenSolver<Mat> ea(0.5 * (A + A.transpose()));
  Mat Ah = ea.eigenvectors() *
           ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
           ea.eigenvectors().transpose();
  Mat S = Ah * B * Ah;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()));
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  double mu2 = 0.0;
  for (long i = 0; i < d; ++i) {
    const double diff = a.mu[static_cast<size_t>(i)] - b.mu[static_cast<size_t>(i)];
    mu2 += diff * diff;
  }
  const double value = mu2 + A.trace() + B.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

double fad(const std::vector<std::vector<double>>& a,
           const std::vector<std::vector<double>>& b) {
  return frechet_distance(embedding_stats(a), embedding_stats(b));
}

namespace {

struct LabeledGrids {
  std::vector<Tensor> mags;  // (1, F, L) each
  std::vector<int> pitch;
  std::vector<int> family;
};

LabeledGrids load_mag_grids(const std::string& run_dir, const Manifest& man, int scale,
                            long full_freq, const std::map<int, int>& class_of,
                            const std::map<std::string, int>& family_of) {
  LabeledGrids out;
  for (const auto& e : man.entries) {
    const std::string path =
        run_dir + "/features/" + e.source_id + ".s" + std::to_string(scale) + ".grid";
    Grid g = grid_load(path);
    if (g.channels != 2 || g.freq != full_freq)
      throw std::runtime_error("feature grid has unexpected geometry: " + path);
    Tensor m({1, g.freq, g.frames});
    std::copy(g.values.begin(), g.values.begin() + g.freq * g.frames, m.data());
    out.mags.push_back(std::move(m));
    auto pit = class_of.find(e.pitch);
    auto fit = family_of.find(e.family);
    if (pit == class_of.end() || fit == family_of.end())
      throw std::runtime_error("split entry missing from manifest_all: " + e.source_id);
    out.pitch.push_back(pit->second);
    out.family.push_back(fit->second);
  }
  return out;
}

double head_accuracy(const ad::Var& logits, const std::vector<int>& labels, long start) {
  const long bs = logits.dim(0), k = logits.dim(1);
  double hits = 0.0;
  for (long b = 0; b < bs; ++b) {
    const double* row = logits.value().data() + b * k;
    long best = 0;
    for (long i = 1; i < k; ++i)
      if (row[i] > row[best]) best = i;
    if (best == labels[static_cast<size_t>(start + b)]) hits += 1.0;
  }
  return hits;
}

// Doubles frequency rows until the magnitude plane reaches full resolution,
// the same nearest-neighbour stretch used when fading real data in.
Tensor upsample_mag_to(const Tensor& m, long full_freq) {
  Tensor cur = m;
  while (cur.dim(1) < full_freq) {
    const long F = cur.dim(1), L = cur.dim(2);
    Tensor next({1, 2 * F, L});
    for (long f = 0; f < 2 * F; ++f)
      std::copy(cur.data() + (f / 2) * L, cur.data() + (f / 2 + 1) * L,
                next.data() + f * L);
    cur = next;
  }
  if (cur.dim(1) != full_freq)
    throw std::runtime_error("generated grid cannot be stretched to the analysis height");
  return cur;
}

}  // namespace

EvalTrainResult train_inception(const Config& cfg, const std::string& run_dir,
                                long steps_override) {
  Manifest all = manifest_load(run_dir + "/manifest_all.tsv");
  Manifest train = manifest_load(run_dir + "/manifest_train.tsv");
  Manifest test = manifest_load(run_dir + "/manifest_test.tsv");
  if (train.entries.empty() || test.entries.empty())
    throw std::runtime_error("train and test splits must both be non-empty");

  const std::vector<int> classes = manifest_pitch_classes(all);
  const std::vector<std::string> families = manifest_families(all);
  if (classes.size() < 2)
    throw std::runtime_error("single-class dataset: need at least two pitches");
  if (families.size() < 2)
    throw std::runtime_error("single-class dataset: need at least two families");
  std::map<int, int> class_of;
  for (size_t i = 0; i < classes.size(); ++i) class_of[classes[i]] = static_cast<int>(i);
  std::map<std::string, int> family_of;
  for (size_t i = 0; i < families.size(); ++i) family_of[families[i]] = static_cast<int>(i);

  const int top_scale = static_cast<int>(cfg.integer("gan.max_scales"));
  const long full_freq = cfg.integer("stft.fft_size") / 2;
  LabeledGrids tr = load_mag_grids(run_dir, train, top_scale, full_freq, class_of, family_of);
  LabeledGrids te = load_mag_grids(run_dir, test, top_scale, full_freq, class_of, family_of);
  const long F = tr.mags[0].dim(1), L = tr.mags[0].dim(2);

  Rng rng(static_cast<uint64_t>(cfg.integer("run.seed")));
  EvalNet net(static_cast<int>(classes.size()), static_cast<int>(families.size()),
              static_cast<int>(cfg.integer("eval.embed_dim")), rng);

  AdamConfig ac;
  ac.lr = cfg.real("eval.lr");
  Adam opt(net.params(), ac);

  const long B = cfg.integer("eval.batch");
  const long steps = steps_override >= 0 ? steps_override : cfg.integer("eval.steps");
  const long n_train = static_cast<long>(tr.mags.size());

  fs::create_directories(run_dir + "/logs");
  fs::create_directories(run_dir + "/checkpoints");
  std::ofstream log(run_dir + "/logs/eval.tsv", std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + run_dir + "/logs/eval.tsv");
  log << "step\ttotal\tce_pitch\tce_family\n";

  for (long step = 1; step <= steps; ++step) {
    Tensor x({B, 1, F, L});
    std::vector<int> yp(static_cast<size_t>(B)), yf(static_cast<size_t>(B));
    for (long b = 0; b < B; ++b) {
      const long pick = rng.uniform_int(n_train);
      std::copy(tr.mags[static_cast<size_t>(pick)].data(),
                tr.mags[static_cast<size_t>(pick)].data() + F * L, x.data() + b * F * L);
      yp[static_cast<size_t>(b)] = tr.pitch[static_cast<size_t>(pick)];
      yf[static_cast<size_t>(b)] = tr.family[static_cast<size_t>(pick)];
    }
    EvalNetOut out = net.forward(ad::constant(x));
    ad::Var ce_p = softmax_ce(out.pitch_logits, yp);
    ad::Var ce_f = softmax_ce(out.family_logits, yf);
    ad::Var total = ad::add(ce_p, ce_f);
    const double tv = total.value().at(0);
    if (!std::isfinite(tv))
      throw std::runtime_error("classifier training diverged at step " + std::to_string(step));
    net.params().zero_grad();
    ad::backward(total);
    opt.step(net.params());

    char line[160];
    std::snprintf(line, sizeof line, "%ld\t%.17g\t%.17g\t%.17g\n", step, tv,
                  ce_p.value().at(0), ce_f.value().at(0));
    log << line;
  }

  // Held-out accuracy over the full test split.
  double hit_p = 0.0, hit_f = 0.0;
  const long n_test = static_cast<long>(te.mags.size());
  for (long start = 0; start < n_test; start += B) {
    const long bs = std::min(B, n_test - start);
    Tensor x({bs, 1, F, L});
    for (long b = 0; b < bs; ++b)
      std::copy(te.mags[static_cast<size_t>(start + b)].data(),
                te.mags[static_cast<size_t>(start + b)].data() + F * L, x.data() + b * F * L);
    ad::NoGradGuard ng;
    EvalNetOut out = net.forward(ad::constant(x));
    hit_p += head_accuracy(out.pitch_logits, te.pitch, start);
    hit_f += head_accuracy(out.family_logits, te.family, start);
  }

  EvalTrainResult res;
  res.pitch_accuracy = hit_p / static_cast<double>(n_test);
  res.family_accuracy = hit_f / static_cast<double>(n_test);
  res.steps = steps;

  Checkpoint ck;
  ck.fingerprint = cfg.fingerprint();
  ck.put_int("meta.embed_dim", cfg.integer("eval.embed_dim"));
  ck.put_int("meta.steps", steps);
  ck.put_i64("meta.pitch_classes", std::vector<std::int64_t>(classes.begin(), classes.end()));
  std::string joined;
  for (const auto& f : families) {
    if (!joined.empty()) joined.push_back('\n');
    joined += f;
  }
  ck.put_u8("meta.families", std::vector<std::uint8_t>(joined.begin(), joined.end()));
  ck.put_scalar("meta.pitch_accuracy", res.pitch_accuracy);
  ck.put_scalar("meta.family_accuracy", res.family_accuracy);
  checkpoint_put_params(ck, "eval", net.params());
  ck.save(run_dir + "/checkpoints/eval.ck");
  return res;
}

LoadedEval load_eval_net(const Config& cfg, const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.fingerprint != cfg.fingerprint())
    throw std::runtime_error("checkpoint was written under a different config");

  LoadedEval out;
  const auto& raw = ck.i64("meta.pitch_classes");
  out.pitch_classes.assign(raw.begin(), raw.end());
  const auto& fam = ck.u8("meta.families");
  std::string joined(fam.begin(), fam.end());
  size_t pos = 0;
  while (pos <= joined.size() && !joined.empty()) {
    const size_t nl = joined.find('\n', pos);
    out.families.push_back(joined.substr(pos, nl == std::string::npos ? nl : nl - pos));
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }

  Rng rng(static_cast<uint64_t>(cfg.integer("run.seed")));
  out.net = std::make_unique<EvalNet>(static_cast<int>(out.pitch_classes.size()),
                                      static_cast<int>(out.families.size()),
                                      static_cast<int>(ck.integer("meta.embed_dim")), rng);
  checkpoint_get_params(ck, "eval", out.net->params());
  return out;
}

std::string metric_report_tsv(const MetricReport& r) {
  char line[320];
  std::snprintf(line, sizeof line,
                "pis\tiis\tkid\tfad\tn_samples\tembedder\n%.17g\t%.17g\t%.17g\t%.17g\t%ld\t%016llx\n",
                r.pis, r.iis, r.kid, r.fad, r.n_samples,
                static_cast<unsigned long long>(r.embedder));
  return line;
}

std::string metric_report_text(const MetricReport& r) {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "samples:             %ld\n"
                "pitch IS:            %.4g\n"
                "instrument IS:       %.4g\n"
                "KID:                 %.4g\n"
                "FAD:                 %.4g\n"
                "embedder:            %016llx\n",
                r.n_samples, r.pis, r.iis, r.kid, r.fad,
                static_cast<unsigned long long>(r.embedder));
  return buf;
}

MetricReport evaluate_run(const Config& cfg, const std::string& run_dir,
                          long n_samples_override) {
  const std::string gan_path = run_dir + "/checkpoints/gan.ck";
  if (!fs::exists(gan_path))
    throw std::runtime_error("no GAN checkpoint in " + run_dir + "; run train-gan first");
  LoadedGan lg = load_generator(cfg, gan_path);

  const std::string eval_path = run_dir + "/checkpoints/eval.ck";
  if (!fs::exists(eval_path)) train_inception(cfg, run_dir);
  LoadedEval ev = load_eval_net(cfg, eval_path);
  if (ev.pitch_classes != lg.pitch_classes)
    throw std::runtime_error("embedder and generator disagree on pitch classes");

  Manifest test = manifest_load(run_dir + "/manifest_test.tsv");
  if (test.entries.size() < 2)
    throw std::runtime_error("insufficient reference samples for KID/FAD");
  const long n = n_samples_override > 0 ? n_samples_override : cfg.integer("eval.n_samples");
  if (n < 2) throw std::runtime_error("insufficient generated samples for KID/FAD");

  std::map<int, int> class_of;
  for (size_t i = 0; i < lg.pitch_classes.size(); ++i)
    class_of[lg.pitch_classes[i]] = static_cast<int>(i);
  std::map<std::string, int> family_of;
  for (size_t i = 0; i < ev.families.size(); ++i)
    family_of[ev.families[i]] = static_cast<int>(i);

  const GanSettings& s = lg.settings;
  const long L = s.frames;
  const int top_scale = static_cast<int>(cfg.integer("gan.max_scales"));
  LabeledGrids ref =
      load_mag_grids(run_dir, test, top_scale, s.full_freq, class_of, family_of);

  std::vector<std::vector<std::uint8_t>> test_tokens;
  for (const auto& e : test.entries) {
    TokenFile tf = token_file_load(run_dir + "/tokens/" + e.source_id + ".tok");
    if (static_cast<long>(tf.tokens.size()) != L)
      throw std::runtime_error("token sequence for " + e.source_id +
                               " does not match the feature frame count");
    test_tokens.push_back(std::move(tf.tokens));
  }

  const long B = cfg.integer("eval.batch");
  EmbeddingSet ref_set = embed(*ev.net, ref.mags, B);

  // Fresh noise, conditioning cycled over the test split. The xor constant
  // decorrelates these draws from the training streams under the same seed.
  Rng rng(static_cast<uint64_t>(cfg.integer("run.seed")) ^ 0x65761A6CULL);
  const long n_test = static_cast<long>(test.entries.size());
  std::vector<Tensor> gen_mags;
  gen_mags.reserve(static_cast<size_t>(n));
  const long Fs = s.freq_at(lg.scale);
  for (long start = 0; start < n; start += B) {
    const long bs = std::min(B, n - start);
    std::vector<std::vector<double>> z(static_cast<size_t>(bs),
                                       std::vector<double>(static_cast<size_t>(s.z_dim)));
    std::vector<int> pitch(static_cast<size_t>(bs));
    std::vector<std::vector<std::uint8_t>> toks(static_cast<size_t>(bs));
    for (long b = 0; b < bs; ++b) {
      for (int k = 0; k < s.z_dim; ++k)
        z[static_cast<size_t>(b)][static_cast<size_t>(k)] = rng.normal();
      const long src = (start + b) % n_test;
      pitch[static_cast<size_t>(b)] = ref.pitch[static_cast<size_t>(src)];
      toks[static_cast<size_t>(b)] = test_tokens[static_cast<size_t>(src)];
    }
    Tensor cond = assemble_cond_batch(s, z, pitch, toks);
    ad::NoGradGuard ng;
    ad::Var out = lg.gen->forward(ad::constant(cond), lg.scale, 1.0);
    for (long b = 0; b < bs; ++b) {
      Tensor mag({1, Fs, L});
      std::copy(out.value().data() + (b * 2) * Fs * L,
                out.value().data() + (b * 2) * Fs * L + Fs * L, mag.data());
      gen_mags.push_back(upsample_mag_to(mag, s.full_freq));
    }
  }
  EmbeddingSet gen_set = embed(*ev.net, gen_mags, B);

  MetricReport rep;
  rep.pis = inception_score(gen_set.pitch_probs);
  rep.iis = inception_score(gen_set.family_probs);
  rep.kid = kid(gen_set.vectors, ref_set.vectors);
  rep.fad = fad(gen_set.vectors, ref_set.vectors);
  rep.n_samples = n;
  rep.embedder = embedder_fingerprint(ev.net->params());
  return rep;
}

}  // namespace tokensynth
