#include "doctest.h"

#include "tokensynth/gan.hpp"
#include "tokensynth/manifest.hpp"
#include "tokensynth/spectro.hpp"
#include "tokensynth/train.hpp"
#include "tokensynth/vqcpc.hpp"

#include "support/testutil.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace tokensynth;
namespace fs = std::filesystem;

namespace {

// Two scales, 16 -> 32 frequency rows, 8 frames, single-sample batches. Small
// enough to run the full progressive loop many times inside one test binary.
Config tiny_cfg() {
  Config cfg = Config::preset("desk");
  cfg.set("stft.fft_size", "64");
  cfg.set("gan.max_scales", "2");
  cfg.set("gan.maps", "2,2");
  cfg.set("gan.batches", "1,1");
  cfg.set("gan.latent_dim", "2");
  cfg.set("gan.dense_hidden", "2");
  cfg.set("gan.iters_per_scale", "8");
  cfg.set("gan.iter_divisor", "1");
  cfg.set("gan.checkpoint_interval", "100");
  cfg.set("vqcpc.codebook_size", "4");
  return cfg;
}

// Writes manifests, a two-scale feature pyramid, and token files for three
// clips. No audio: the trainer never goes back to the waveforms.
void make_run(const std::string& dir, long frames = 8) {
  fs::create_directories(dir + "/features");
  fs::create_directories(dir + "/tokens");
  Rng rng(77);
  Manifest m;
  for (int i = 0; i < 3; ++i) {
    ManifestEntry e;
    e.source_id = "clip" + std::to_string(i);
    e.path = dir + "/audio/" + e.source_id + ".wav";
    e.pitch = 60 + i;
    e.family = "organ";
    m.entries.push_back(e);
    for (int sc = 1; sc <= 2; ++sc) {
      Grid g(2, sc == 1 ? 16 : 32, frames);
      for (auto& v : g.values) v = rng.uniform(-1.0, 1.0);
      grid_save(g, dir + "/features/" + e.source_id + ".s" + std::to_string(sc) + ".grid");
    }
    TokenFile tf;
    tf.id = e.source_id;
    tf.pitch = e.pitch;
    for (long t = 0; t < frames; ++t)
      tf.tokens.push_back(static_cast<uint8_t>(rng.uniform_int(4)));
    token_file_save(dir + "/tokens/" + e.source_id + ".tok", tf);
  }
  manifest_save(m, dir + "/manifest_all.tsv");
  Manifest tr = m;
  tr.split_tag = "train";
  manifest_save(tr, dir + "/manifest_train.tsv");
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> tsv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::vector<std::string> cells;
    std::istringstream cs(line);
    std::string cell;
    while (std::getline(cs, cell, '\t')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("progressive schedule follows the config") {
  Config cfg = Config::preset("desk");
  auto phases = progressive_schedule(cfg);
  REQUIRE(phases.size() == 6);
  const int want_batch[6] = {4, 4, 3, 3, 2, 2};
  for (int i = 0; i < 6; ++i) {
    CHECK(phases[static_cast<size_t>(i)].scale == i + 1);
    CHECK(phases[static_cast<size_t>(i)].iters == 200);  // 200000 / 1000
    CHECK(phases[static_cast<size_t>(i)].fade_iters == (i == 0 ? 0 : 100));
    CHECK(phases[static_cast<size_t>(i)].batch == want_batch[i]);
  }

  Config full = Config::preset("full");
  auto fp = progressive_schedule(full);
  REQUIRE(fp.size() == 6);
  CHECK(fp[0].iters == 200000);
  CHECK(fp[5].fade_iters == 100000);
  CHECK(fp[0].batch == 30);
  CHECK(fp[5].batch == 12);

  Config bad = Config::preset("desk");
  bad.set("gan.batches", "4,4");
  CHECK_THROWS_AS(progressive_schedule(bad), std::runtime_error);

  Config zero = Config::preset("desk");
  zero.set("gan.iter_divisor", "0");
  CHECK_THROWS_AS(progressive_schedule(zero), std::runtime_error);

  Config fade = Config::preset("desk");
  fade.set("gan.fade_fraction", "1.5");
  CHECK_THROWS_AS(progressive_schedule(fade), std::runtime_error);
}

TEST_CASE("fade alpha ramps from zero then holds at one") {
  ScalePhase p{2, 200, 100, 4};
  CHECK(fade_alpha(p, 0) == 0.0);
  CHECK(fade_alpha(p, 25) == doctest::Approx(0.25));
  CHECK(fade_alpha(p, 99) == doctest::Approx(0.99));
  CHECK(fade_alpha(p, 100) == 1.0);
  CHECK(fade_alpha(p, 199) == 1.0);

  ScalePhase first{1, 200, 0, 4};
  CHECK(fade_alpha(first, 0) == 1.0);
}

TEST_CASE("training runs the schedule, logs every step, and resumes bitwise") {
  Config cfg = tiny_cfg();

  const std::string a = testing::make_tmpdir("train_a");
  make_run(a);
  CHECK(train_gan(cfg, a) == 16);
  REQUIRE(fs::exists(a + "/checkpoints/gan.ck"));
  REQUIRE(fs::exists(a + "/checkpoints/gan_latest.ck"));

  const std::string log_a = slurp(a + "/logs/train.tsv");
  auto rows = tsv_rows(log_a);
  REQUIRE(rows.size() == 17);  // header + one line per step
  REQUIRE(rows[0].size() == 11);
  CHECK(rows[0][0] == "step");
  CHECK(rows[0][3] == "d_total");
  for (size_t i = 1; i < rows.size(); ++i) {
    REQUIRE(rows[i].size() == 11);
    CHECK(rows[i][0] == std::to_string(i));
    CHECK(rows[i][1] == (i <= 8 ? "1" : "2"));
  }
  // Scale 1 never fades; scale 2 ramps over the first half of its 8 iters.
  CHECK(std::stod(rows[1][2]) == 1.0);
  CHECK(std::stod(rows[8][2]) == 1.0);
  CHECK(std::stod(rows[9][2]) == 0.0);
  CHECK(std::stod(rows[10][2]) == doctest::Approx(0.25));
  CHECK(std::stod(rows[12][2]) == doctest::Approx(0.75));
  CHECK(std::stod(rows[13][2]) == 1.0);
  CHECK(std::stod(rows[16][2]) == 1.0);

  // Pause mid-fade, resume, and land on the identical run.
  const std::string b = testing::make_tmpdir("train_b");
  make_run(b);
  CHECK(train_gan(cfg, b, false, 10) == 10);
  CHECK(fs::exists(b + "/checkpoints/gan_latest.ck"));
  CHECK(!fs::exists(b + "/checkpoints/gan.ck"));
  CHECK(train_gan(cfg, b, true) == 16);
  CHECK(slurp(b + "/logs/train.tsv") == log_a);
  CHECK(slurp(b + "/checkpoints/gan.ck") == slurp(a + "/checkpoints/gan.ck"));
}

TEST_CASE("zero-iteration schedule still finalizes a loadable checkpoint") {
  Config cfg = tiny_cfg();
  cfg.set("gan.iter_divisor", "1000000");

  const std::string dir = testing::make_tmpdir("train_zero");
  make_run(dir);
  CHECK(train_gan(cfg, dir) == 0);
  REQUIRE(fs::exists(dir + "/checkpoints/gan.ck"));

  LoadedGan lg = load_generator(cfg, dir + "/checkpoints/gan.ck");
  CHECK(lg.step == 0);
  CHECK(lg.scale == 2);
  CHECK(lg.settings.frames == 8);
  CHECK(lg.settings.full_freq == 32);
  CHECK(lg.pitch_classes == std::vector<int>{60, 61, 62});

  std::vector<std::vector<double>> z(1, std::vector<double>(2, 0.3));
  std::vector<std::vector<uint8_t>> toks(1, std::vector<uint8_t>(8, 1));
  Tensor cond = assemble_cond_batch(lg.settings, z, {1}, toks);
  ad::Var out = lg.gen->forward(ad::constant(cond), lg.scale, 1.0);
  CHECK(out.shape() == std::vector<long>{1, 2, 32, 8});

  Config other = tiny_cfg();
  other.set("run.seed", "999");
  CHECK_THROWS_WITH_AS(load_generator(other, dir + "/checkpoints/gan.ck"),
                       doctest::Contains("different config"), std::runtime_error);
}

TEST_CASE("diverging loss aborts instead of writing garbage") {
  Config cfg = tiny_cfg();
  cfg.set("gan.lr", "1e60");

  const std::string dir = testing::make_tmpdir("train_nan");
  make_run(dir);
  CHECK_THROWS_WITH_AS(train_gan(cfg, dir), doctest::Contains("diverged"),
                       std::runtime_error);
  CHECK(!fs::exists(dir + "/checkpoints/gan_latest.ck"));
}

TEST_CASE("resume and inputs are guarded") {
  Config cfg = tiny_cfg();

  const std::string dir = testing::make_tmpdir("train_guard");
  make_run(dir);
  CHECK(train_gan(cfg, dir, false, 3) == 3);

  Config other = tiny_cfg();
  other.set("run.seed", "999");
  CHECK_THROWS_WITH_AS(train_gan(other, dir, true),
                       doctest::Contains("different config"), std::runtime_error);

  // Same config, new pitch in the dataset: the class list no longer matches.
  Manifest all = manifest_load(dir + "/manifest_all.tsv");
  ManifestEntry extra = all.entries[0];
  extra.source_id = "clip9";
  extra.pitch = 70;
  all.entries.push_back(extra);
  manifest_save(all, dir + "/manifest_all.tsv");
  CHECK_THROWS_WITH_AS(train_gan(cfg, dir, true),
                       doctest::Contains("pitch classes changed"), std::runtime_error);

  const std::string no_tok = testing::make_tmpdir("train_notok");
  make_run(no_tok);
  fs::remove(no_tok + "/tokens/clip1.tok");
  CHECK_THROWS_WITH_AS(train_gan(cfg, no_tok), doctest::Contains("run encode first"),
                       std::runtime_error);

  const std::string bad_geo = testing::make_tmpdir("train_geo");
  make_run(bad_geo);
  Grid wrong(2, 8, 8);
  grid_save(wrong, bad_geo + "/features/clip0.s1.grid");
  CHECK_THROWS_WITH_AS(train_gan(cfg, bad_geo),
                       doctest::Contains("unexpected geometry"), std::runtime_error);
}
