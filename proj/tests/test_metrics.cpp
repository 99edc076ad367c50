#include "doctest.h"

#include "tokensynth/manifest.hpp"
#include "tokensynth/metrics.hpp"
#include "tokensynth/spectro.hpp"
#include "tokensynth/train.hpp"
#include "tokensynth/vqcpc.hpp"

#include "support/testutil.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

using namespace tokensynth;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<double>> random_rows(long n, long d, Rng& rng, double scale = 1.0,
                                             double shift = 0.0) {
  std::vector<std::vector<double>> rows(static_cast<size_t>(n),
                                        std::vector<double>(static_cast<size_t>(d)));
  for (auto& r : rows)
    for (auto& v : r) v = shift + scale * rng.normal();
  return rows;
}

double kernel3(const std::vector<double>& x, const std::vector<double>& y) {
  double dot = 0.0;
  for (size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
  const double b = dot / static_cast<double>(x.size()) + 1.0;
  return b * b * b;
}

// Straight transcription of the estimator definition, kept deliberately
// different in structure from the library implementation.
double kid_oracle(const std::vector<std::vector<double>>& a,
                  const std::vector<std::vector<double>>& b) {
  const long m = static_cast<long>(a.size()), n = static_cast<long>(b.size());
  double within_a = 0.0, within_b = 0.0, cross = 0.0;
  long cross_pairs = 0;
  for (long i = 0; i < m; ++i)
    for (long j = i + 1; j < m; ++j) within_a += 2.0 * kernel3(a[i], a[j]);
  for (long i = 0; i < n; ++i)
    for (long j = i + 1; j < n; ++j) within_b += 2.0 * kernel3(b[i], b[j]);
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < n; ++j) {
      if (m == n && i == j) continue;
      cross += kernel3(a[i], b[j]);
      ++cross_pairs;
    }
  return within_a / (m * (m - 1.0)) + within_b / (n * (n - 1.0)) -
         2.0 * cross / static_cast<double>(cross_pairs);
}

// Fixture for classifier training: grids where the bright row band encodes
// pitch and the overall offset encodes family.
void write_toy_eval_run(const std::string& dir, int per_combo_train, int per_combo_test) {
  fs::create_directories(dir + "/features");
  Rng rng(42);
  Manifest all, train, test;
  const int pitches[2] = {50, 60};
  const char* families[2] = {"organ", "pluck"};
  for (int p = 0; p < 2; ++p)
    for (int f = 0; f < 2; ++f)
      for (int i = 0; i < per_combo_train + per_combo_test; ++i) {
        ManifestEntry e;
        e.source_id = "c" + std::to_string(p) + std::to_string(f) + "_" + std::to_string(i);
        e.path = dir + "/audio/" + e.source_id + ".wav";
        e.pitch = pitches[p];
        e.family = families[f];
        all.entries.push_back(e);
        (i < per_combo_train ? train : test).entries.push_back(e);

        Grid g(2, 16, 8);
        const long row0 = p == 0 ? 2 : 10;
        const double dc = f == 0 ? 0.3 : -0.3;
        for (long r = 0; r < 16; ++r)
          for (long t = 0; t < 8; ++t) {
            const double band = (r >= row0 && r < row0 + 4) ? 0.6 : -0.6;
            g.at(0, r, t) = band + dc + 0.05 * rng.normal();
          }
        grid_save(g, dir + "/features/" + e.source_id + ".s1.grid");
      }
  manifest_save(all, dir + "/manifest_all.tsv");
  train.split_tag = "train";
  manifest_save(train, dir + "/manifest_train.tsv");
  test.split_tag = "test";
  manifest_save(test, dir + "/manifest_test.tsv");
}

Config toy_eval_cfg() {
  Config cfg = Config::preset("desk");
  cfg.set("stft.fft_size", "32");  // grids are 16 rows tall
  cfg.set("gan.max_scales", "1");
  cfg.set("gan.maps", "4");
  cfg.set("gan.batches", "1");
  cfg.set("eval.embed_dim", "8");
  cfg.set("eval.batch", "4");
  cfg.set("eval.steps", "250");
  cfg.set("eval.lr", "0.005");
  return cfg;
}

// Full miniature run dir: pyramid, tokens, splits, plus an untrained GAN
// checkpoint produced by a zero-iteration schedule.
Config make_gan_eval_run(const std::string& dir) {
  Config cfg = Config::preset("desk");
  cfg.set("stft.fft_size", "64");
  cfg.set("gan.max_scales", "2");
  cfg.set("gan.maps", "2,2");
  cfg.set("gan.batches", "1,1");
  cfg.set("gan.latent_dim", "2");
  cfg.set("gan.dense_hidden", "2");
  cfg.set("gan.iters_per_scale", "8");
  cfg.set("gan.iter_divisor", "1000000");
  cfg.set("vqcpc.codebook_size", "4");
  cfg.set("eval.embed_dim", "8");
  cfg.set("eval.batch", "4");
  cfg.set("eval.steps", "20");
  cfg.set("eval.n_samples", "8");

  fs::create_directories(dir + "/features");
  fs::create_directories(dir + "/tokens");
  Rng rng(9);
  Manifest all, train, test;
  const char* families[2] = {"organ", "pluck"};
  for (int i = 0; i < 6; ++i) {
    ManifestEntry e;
    e.source_id = "clip" + std::to_string(i);
    e.path = dir + "/audio/" + e.source_id + ".wav";
    e.pitch = 60 + i % 3;
    e.family = families[i % 2];
    all.entries.push_back(e);
    (i < 4 ? train : test).entries.push_back(e);
    for (int sc = 1; sc <= 2; ++sc) {
      Grid g(2, sc == 1 ? 16 : 32, 8);
      for (auto& v : g.values) v = rng.uniform(-1.0, 1.0);
      grid_save(g, dir + "/features/" + e.source_id + ".s" + std::to_string(sc) + ".grid");
    }
    TokenFile tf;
    tf.id = e.source_id;
    tf.pitch = e.pitch;
    for (int t = 0; t < 8; ++t) tf.tokens.push_back(static_cast<uint8_t>(rng.uniform_int(4)));
    token_file_save(dir + "/tokens/" + e.source_id + ".tok", tf);
  }
  manifest_save(all, dir + "/manifest_all.tsv");
  train.split_tag = "train";
  manifest_save(train, dir + "/manifest_train.tsv");
  test.split_tag = "test";
  manifest_save(test, dir + "/manifest_test.tsv");
  REQUIRE(train_gan(cfg, dir) == 0);
  return cfg;
}

}  // namespace

TEST_CASE("inception score closed forms and bounds") {
  std::vector<std::vector<double>> uniform(5, std::vector<double>(4, 0.25));
  CHECK(inception_score(uniform) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<std::vector<double>> onehot;
  for (int rep = 0; rep < 2; ++rep)
    for (int k = 0; k < 4; ++k) {
      std::vector<double> row(4, 0.0);
      row[static_cast<size_t>(k)] = 1.0;
      onehot.push_back(row);
    }
  CHECK(inception_score(onehot) == doctest::Approx(4.0).epsilon(1e-9));

  std::vector<std::vector<double>> two = {{0.9, 0.1}, {0.1, 0.9}};
  const double expected = std::exp(0.9 * std::log(1.8) + 0.1 * std::log(0.2));
  CHECK(inception_score(two) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(inception_score(two) == doctest::Approx(1.445).epsilon(1e-3));

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const long k = 2 + rng.uniform_int(6);
    std::vector<std::vector<double>> rows(static_cast<size_t>(3 + rng.uniform_int(10)),
                                          std::vector<double>(static_cast<size_t>(k)));
    for (auto& r : rows) {
      double sum = 0.0;
      for (auto& v : r) {
        v = rng.uniform(0.001, 1.0);
        sum += v;
      }
      for (auto& v : r) v /= sum;
    }
    const double is = inception_score(rows);
    CHECK(is >= 1.0 - 1e-9);
    CHECK(is <= static_cast<double>(k) + 1e-9);
  }

  CHECK_THROWS_AS(inception_score({}), std::runtime_error);
  CHECK_THROWS_AS(inception_score({{0.6, 0.6}}), std::runtime_error);
  CHECK_THROWS_AS(inception_score({{1.1, -0.1}}), std::runtime_error);
  CHECK_THROWS_AS(inception_score({{0.5, 0.5}, {0.5}}), std::runtime_error);
}

TEST_CASE("kid matches hand oracles") {
  // Equal sizes: within sums 54/2 and 8192/2, cross drops matched indices.
  std::vector<std::vector<double>> a = {{1.0}, {2.0}};
  std::vector<std::vector<double>> b = {{3.0}, {5.0}};
  const double k15 = 216.0, k23 = 343.0;  // (5+1)^3, (6+1)^3
  const double want_eq = 27.0 + 4096.0 - (k15 + k23);
  CHECK(kid(a, b) == doctest::Approx(want_eq).epsilon(1e-12));
  CHECK(kid(a, b) == doctest::Approx(kid_oracle(a, b)).epsilon(1e-12));

  // Unequal sizes: full cross mean.
  std::vector<std::vector<double>> b3 = {{3.0}, {5.0}, {0.0}};
  const double sbb = (4096.0 + 1.0 + 1.0) * 2.0;
  const double sab = 64.0 + 216.0 + 1.0 + 343.0 + 1331.0 + 1.0;
  const double want_ne = 27.0 + sbb / 6.0 - 2.0 * sab / 6.0;
  CHECK(kid(a, b3) == doctest::Approx(want_ne).epsilon(1e-12));
  CHECK(kid(a, b3) == doctest::Approx(kid_oracle(a, b3)).epsilon(1e-12));

  Rng rng(11);
  auto x = random_rows(6, 3, rng);
  auto y = random_rows(5, 3, rng);
  CHECK(kid(x, y) == doctest::Approx(kid_oracle(x, y)).epsilon(1e-9));
  CHECK(kid(x, y) == doctest::Approx(kid(y, x)).epsilon(1e-9));

  auto xs = x;
  std::reverse(xs.begin(), xs.end());
  CHECK(kid(xs, y) == doctest::Approx(kid(x, y)).epsilon(1e-9));

  auto z = random_rows(10, 4, rng);
  CHECK(std::abs(kid(z, z)) <= 1e-12);

  CHECK_THROWS_AS(kid({{1.0}}, {{1.0}, {2.0}}), std::runtime_error);
  CHECK_THROWS_AS(kid(x, random_rows(4, 2, rng)), std::runtime_error);
  auto bad = random_rows(3, 2, rng);
  bad[1][0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(kid(bad, random_rows(3, 2, rng)), std::runtime_error);
}

TEST_CASE("kid statistics: same distribution near zero, separation grows") {
  Rng rng(5);
  std::vector<double> kids;
  for (int rep = 0; rep < 20; ++rep)
    kids.push_back(kid(random_rows(60, 4, rng), random_rows(60, 4, rng)));
  double mean = 0.0;
  for (double v : kids) mean += v;
  mean /= static_cast<double>(kids.size());
  double var = 0.0;
  for (double v : kids) var += (v - mean) * (v - mean);
  var /= static_cast<double>(kids.size() - 1);
  const double se = std::sqrt(var / static_cast<double>(kids.size()));
  CHECK(std::abs(mean) <= 3.0 * se);

  auto base = random_rows(40, 4, rng);
  const double near = kid(base, random_rows(40, 4, rng, 1.0, 5.0));
  const double far = kid(base, random_rows(40, 4, rng, 1.0, 10.0));
  CHECK(near > 0.0);
  CHECK(far > near);
}

TEST_CASE("embedding stats match a hand computation") {
  GaussianStats s = embedding_stats({{1.0, 2.0}, {3.0, 4.0}, {5.0, 9.0}});
  CHECK(s.n == 3);
  CHECK(s.mu[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(s.mu[1] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(s.cov[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(s.cov[1] == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(s.cov[2] == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(s.cov[3] == doctest::Approx(13.0).epsilon(1e-12));
  CHECK_THROWS_AS(embedding_stats({{1.0, 2.0}}), std::runtime_error);
}

TEST_CASE("frechet distance closed forms") {
  Rng rng(17);

  auto random_spd = [&rng](long d) {
    std::vector<double> m(static_cast<size_t>(d * d), 0.0);
    std::vector<double> r(static_cast<size_t>(d * d));
    for (auto& v : r) v = rng.normal();
    for (long i = 0; i < d; ++i)
      for (long j = 0; j < d; ++j) {
        double acc = i == j ? 0.1 : 0.0;
        for (long k = 0; k < d; ++k)
          acc += r[static_cast<size_t>(i * d + k)] * r[static_cast<size_t>(j * d + k)];
        m[static_cast<size_t>(i * d + j)] = acc;
      }
    return m;
  };

  // Identical stats.
  GaussianStats a;
  a.n = 100;
  a.mu = {0.5, -1.0, 2.0};
  a.cov = random_spd(3);
  CHECK(frechet_distance(a, a) <= 1e-6);

  // Equal covariance, shifted mean.
  GaussianStats b = a;
  b.mu = {1.5, 1.0, 0.0};
  const double want = 1.0 + 4.0 + 4.0;
  CHECK(frechet_distance(a, b) == doctest::Approx(want).epsilon(1e-9));

  // Diagonal covariances against the scalar closed form.
  GaussianStats da, db;
  da.n = db.n = 500;
  const std::vector<double> va = {0.5, 2.0, 1.3, 0.01, 4.0, 0.9};
  const std::vector<double> vb = {1.5, 0.2, 1.3, 2.5, 0.25, 3.0};
  da.mu = {0, 0, 0, 0, 0, 0};
  db.mu = {1, 0, -2, 0, 0.5, 0};
  da.cov.assign(36, 0.0);
  db.cov.assign(36, 0.0);
  double closed = 0.0;
  for (long i = 0; i < 6; ++i) {
    da.cov[static_cast<size_t>(i * 6 + i)] = va[static_cast<size_t>(i)];
    db.cov[static_cast<size_t>(i * 6 + i)] = vb[static_cast<size_t>(i)];
    const double md = da.mu[static_cast<size_t>(i)] - db.mu[static_cast<size_t>(i)];
    const double sd = std::sqrt(va[static_cast<size_t>(i)]) - std::sqrt(vb[static_cast<size_t>(i)]);
    closed += md * md + sd * sd;
  }
  CHECK(frechet_distance(da, db) == doctest::Approx(closed).epsilon(1e-8));

  // 2x2 general case: Tr((AB)^{1/2}) = sqrt(tr(AB) + 2 sqrt(det(AB))).
  for (int trial = 0; trial < 5; ++trial) {
    GaussianStats p, q;
    p.n = q.n = 50;
    p.mu = {rng.normal(), rng.normal()};
    q.mu = {rng.normal(), rng.normal()};
    p.cov = random_spd(2);
    q.cov = random_spd(2);
    const double tr_ab = p.cov[0] * q.cov[0] + p.cov[1] * q.cov[2] + p.cov[2] * q.cov[1] +
                         p.cov[3] * q.cov[3];
    const double det_a = p.cov[0] * p.cov[3] - p.cov[1] * p.cov[2];
    const double det_b = q.cov[0] * q.cov[3] - q.cov[1] * q.cov[2];
    const double tr_sqrt = std::sqrt(tr_ab + 2.0 * std::sqrt(det_a * det_b));
    const double m0 = p.mu[0] - q.mu[0], m1 = p.mu[1] - q.mu[1];
    const double want2 = m0 * m0 + m1 * m1 + p.cov[0] + p.cov[3] + q.cov[0] + q.cov[3] -
                         2.0 * tr_sqrt;
    CHECK(frechet_distance(p, q) ==
          doctest::Approx(std::max(want2, 0.0)).epsilon(1e-9));
  }

  // Symmetry on a bigger random pair.
  GaussianStats s1, s2;
  s1.n = s2.n = 200;
  for (int i = 0; i < 8; ++i) {
    s1.mu.push_back(rng.normal());
    s2.mu.push_back(rng.normal());
  }
  s1.cov = random_spd(8);
  s2.cov = random_spd(8);
  const double f12 = frechet_distance(s1, s2);
  const double f21 = frechet_distance(s2, s1);
  CHECK(std::abs(f12 - f21) <= 1e-6 * (1.0 + std::abs(f12)));

  GaussianStats mismatch;
  mismatch.n = 10;
  mismatch.mu = {0.0, 0.0};
  mismatch.cov = {1.0, 0.0, 0.0, 1.0};
  CHECK_THROWS_AS(frechet_distance(a, mismatch), std::runtime_error);
}

TEST_CASE("fad over sample sets: self-distance, degradation, regularization") {
  Rng rng(23);
  auto a = random_rows(80, 6, rng);
  CHECK(fad(a, a) <= 1e-6);

  auto b = random_rows(80, 6, rng);
  auto degraded = b;
  for (auto& r : degraded)
    for (auto& v : r) v += 3.0 * rng.normal();
  const double self_dist = fad(a, b);
  const double degraded_dist = fad(a, degraded);
  CHECK(self_dist < 0.1 * degraded_dist);
  CHECK(kid(a, b) < kid(a, degraded));

  // Fewer rows than dimensions: the ridge keeps the square root stable.
  auto tiny_a = random_rows(3, 8, rng);
  auto tiny_b = random_rows(3, 8, rng);
  const double small = fad(tiny_a, tiny_b);
  CHECK(std::isfinite(small));
  CHECK(small >= 0.0);
  CHECK(fad(tiny_a, tiny_a) <= 1e-6);

  auto bad = random_rows(4, 3, rng);
  bad[0][1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(fad(bad, random_rows(4, 3, rng)), std::runtime_error);
}

TEST_CASE("eval net shapes, determinism, and probability contract") {
  Rng rng(31);
  EvalNet net(5, 3, 8, rng);

  Tensor x({3, 1, 16, 8});
  for (long i = 0; i < x.numel(); ++i) x.at(i) = rng.uniform(-1.0, 1.0);
  EvalNetOut out = net.forward(ad::constant(x));
  CHECK(out.embed.shape() == std::vector<long>{3, 8});
  CHECK(out.pitch_logits.shape() == std::vector<long>{3, 5});
  CHECK(out.family_logits.shape() == std::vector<long>{3, 3});

  // Same clip twice in one batch: identical rows everywhere.
  std::vector<Tensor> mags;
  Tensor clip({1, 16, 8});
  for (long i = 0; i < clip.numel(); ++i) clip.at(i) = rng.uniform(-1.0, 1.0);
  mags.push_back(clip);
  mags.push_back(clip.clone());
  EmbeddingSet es = embed(net, mags, 2);
  REQUIRE(es.vectors.size() == 2);
  CHECK(es.vectors[0] == es.vectors[1]);
  CHECK(es.pitch_probs[0] == es.pitch_probs[1]);
  for (const auto& row : es.pitch_probs) {
    double sum = 0.0;
    for (double v : row) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  for (const auto& row : es.family_probs) {
    double sum = 0.0;
    for (double v : row) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }

  // Same seed, same parameters.
  Rng r1(7), r2(7);
  EvalNet n1(4, 2, 6, r1), n2(4, 2, 6, r2);
  const auto& e1 = n1.params().entries();
  const auto& e2 = n2.params().entries();
  REQUIRE(e1.size() == e2.size());
  for (size_t i = 0; i < e1.size(); ++i) {
    CHECK(e1[i].first == e2[i].first);
    for (long j = 0; j < e1[i].second.numel(); ++j)
      CHECK(e1[i].second.value().at(j) == e2[i].second.value().at(j));
  }
  CHECK(embedder_fingerprint(n1.params()) == embedder_fingerprint(n2.params()));
  CHECK(embedder_fingerprint(n1.params()) != embedder_fingerprint(net.params()));

  Tensor wrong({2, 2, 16, 8});
  CHECK_THROWS_AS(net.forward(ad::constant(wrong)), std::runtime_error);
  CHECK_THROWS_AS(EvalNet(1, 3, 8, rng), std::runtime_error);
}

TEST_CASE("classifier training separates a toy dataset") {
  Config cfg = toy_eval_cfg();

  const std::string dir = testing::make_tmpdir("eval_toy");
  write_toy_eval_run(dir, 5, 2);
  EvalTrainResult res = train_inception(cfg, dir);
  CHECK(res.steps == 250);
  CHECK(res.pitch_accuracy > 0.9);
  CHECK(res.family_accuracy > 0.9);
  REQUIRE(fs::exists(dir + "/checkpoints/eval.ck"));
  REQUIRE(fs::exists(dir + "/logs/eval.tsv"));

  // Reload reproduces the trained net exactly.
  LoadedEval ev = load_eval_net(cfg, dir + "/checkpoints/eval.ck");
  CHECK(ev.pitch_classes == std::vector<int>{50, 60});
  CHECK(ev.families == std::vector<std::string>{"organ", "pluck"});
  Grid g = grid_load(dir + "/features/c00_0.s1.grid");
  Tensor mag({1, 16, 8});
  std::copy(g.values.begin(), g.values.begin() + 16 * 8, mag.data());
  EmbeddingSet before = embed(*ev.net, {mag}, 1);
  CHECK(before.pitch_probs[0].size() == 2);

  // Determinism: an identical fixture trains to identical bytes.
  const std::string dir2 = testing::make_tmpdir("eval_toy2");
  write_toy_eval_run(dir2, 5, 2);
  train_inception(cfg, dir2);
  std::ifstream f1(dir + "/checkpoints/eval.ck", std::ios::binary);
  std::ifstream f2(dir2 + "/checkpoints/eval.ck", std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(c1 == c2);

  // Untrained net stays near chance.
  const std::string dir0 = testing::make_tmpdir("eval_toy0");
  write_toy_eval_run(dir0, 5, 2);
  EvalTrainResult res0 = train_inception(cfg, dir0, 0);
  CHECK(res0.pitch_accuracy <= 0.75);

  // One family only: refused.
  const std::string dir1 = testing::make_tmpdir("eval_onefam");
  write_toy_eval_run(dir1, 5, 2);
  Manifest all = manifest_load(dir1 + "/manifest_all.tsv");
  for (auto& e : all.entries) e.family = "organ";
  manifest_save(all, dir1 + "/manifest_all.tsv");
  CHECK_THROWS_WITH_AS(train_inception(cfg, dir1), doctest::Contains("two families"),
                       std::runtime_error);
}

TEST_CASE("evaluate produces a bounded deterministic report") {
  const std::string dir = testing::make_tmpdir("eval_run");
  Config cfg = make_gan_eval_run(dir);

  MetricReport rep = evaluate_run(cfg, dir);
  CHECK(rep.n_samples == 8);
  CHECK(rep.pis >= 1.0 - 1e-9);
  CHECK(rep.pis <= 3.0 + 1e-9);
  CHECK(rep.iis >= 1.0 - 1e-9);
  CHECK(rep.iis <= 2.0 + 1e-9);
  CHECK(std::isfinite(rep.kid));
  CHECK(rep.fad >= 0.0);
  CHECK(std::isfinite(rep.fad));
  CHECK(rep.embedder != 0);

  // Second call loads the cached classifier and reproduces everything.
  MetricReport again = evaluate_run(cfg, dir);
  CHECK(again.pis == rep.pis);
  CHECK(again.iis == rep.iis);
  CHECK(again.kid == rep.kid);
  CHECK(again.fad == rep.fad);
  CHECK(again.embedder == rep.embedder);

  const std::string tsv = metric_report_tsv(rep);
  CHECK(tsv.find("pis\tiis\tkid\tfad") != std::string::npos);
  CHECK(metric_report_text(rep).find("FAD") != std::string::npos);

  const std::string empty_dir = testing::make_tmpdir("eval_nogan");
  CHECK_THROWS_WITH_AS(evaluate_run(cfg, empty_dir), doctest::Contains("train-gan"),
                       std::runtime_error);
}
