#include "doctest.h"

#include "support/gradcheck.hpp"
#include "tokensynth/gan.hpp"

#include <cmath>
#include <vector>

namespace ts = tokensynth;
namespace ad = tokensynth::ad;

namespace {

ts::GanSettings micro_settings() {
  ts::GanSettings s;
  s.z_dim = 2;
  s.pitch_classes = 2;
  s.token_classes = 2;
  s.maps = {4, 4};
  s.n_scales = 2;
  s.frames = 4;
  s.full_freq = 8;
  s.base_freq = 4;
  s.dense_hidden = 5;
  return s;
}

ts::Tensor random_grid(std::vector<long> shape, ts::Rng& rng, double lo = -1.0,
                       double hi = 1.0) {
  ts::Tensor t = ts::Tensor::zeros(shape);
  for (long i = 0; i < t.numel(); ++i) t.at(i) = lo + (hi - lo) * rng.uniform01();
  return t;
}

std::vector<std::uint8_t> random_tokens(long n, int classes, ts::Rng& rng) {
  std::vector<std::uint8_t> out(static_cast<size_t>(n));
  for (auto& v : out) v = static_cast<std::uint8_t>(rng.uniform_int(classes));
  return out;
}

ts::Tensor micro_cond(const ts::GanSettings& s, long b, long l, ts::Rng& rng) {
  std::vector<std::vector<double>> z;
  std::vector<int> pitch;
  std::vector<std::vector<std::uint8_t>> tok;
  for (long i = 0; i < b; ++i) {
    std::vector<double> zi(static_cast<size_t>(s.z_dim));
    for (auto& v : zi) v = rng.normal();
    z.push_back(zi);
    pitch.push_back(static_cast<int>(rng.uniform_int(s.pitch_classes)));
    tok.push_back(random_tokens(l, s.token_classes, rng));
  }
  return ts::assemble_cond_batch(s, z, pitch, tok);
}

ts::GanBatch micro_batch(const ts::GanSettings& s, long b, int scale, ts::Rng& rng) {
  ts::GanBatch batch;
  const long f = s.freq_at(scale);
  const long l = s.frames;
  batch.real = random_grid({b, 2, f, l}, rng);
  batch.cond = micro_cond(s, b, l, rng);
  for (long i = 0; i < b; ++i) {
    batch.real_pitch.push_back(static_cast<int>(rng.uniform_int(s.pitch_classes)));
    batch.fake_pitch.push_back(static_cast<int>(rng.uniform_int(s.pitch_classes)));
  }
  batch.real_tokens = random_tokens(b * l, s.token_classes, rng);
  batch.fake_tokens = random_tokens(b * l, s.token_classes, rng);
  return batch;
}

bool same_tensor(const ts::Tensor& a, const ts::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (long i = 0; i < a.numel(); ++i)
    if (a.at(i) != b.at(i)) return false;
  return true;
}

double max_abs_diff(const ts::Tensor& a, const ts::Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (long i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.at(i) - b.at(i)));
  return m;
}

void zero_params(ts::ParamStore& ps) {
  for (const auto& [name, v] : ps.entries()) {
    ts::Tensor& t = v.value_ref();
    for (long i = 0; i < t.numel(); ++i) t.at(i) = 0.0;
  }
}

std::vector<ad::Var> collect_params(std::initializer_list<ts::ParamStore*> stores) {
  std::vector<ad::Var> out;
  for (ts::ParamStore* ps : stores)
    for (const auto& [name, v] : ps->entries()) out.push_back(v);
  return out;
}

// Freshly built models have all biases at zero, which leaves the zero-padded
// frequency rows sitting exactly on the pixel-norm sharp point (curvature of
// order eps^-3/2 there breaks finite differences). Gradients are checked at a
// generic point instead.
void randomize_biases(ts::ParamStore& ps, ts::Rng& rng) {
  for (const auto& [name, v] : ps.entries()) {
    if (name.size() < 2 || name.substr(name.size() - 2) != ".b") continue;
    ts::Tensor& t = v.value_ref();
    for (long i = 0; i < t.numel(); ++i) t.at(i) = -0.3 + 0.6 * rng.uniform01();
  }
}

}  // namespace

TEST_CASE("token resampling maps indices by floor ratio") {
  std::vector<std::uint8_t> toks(32);
  for (int i = 0; i < 32; ++i) toks[i] = static_cast<std::uint8_t>(i % 16);

  auto up = ts::resample_tokens(toks, 128);
  REQUIRE(up.size() == 128);
  for (int i = 0; i < 128; ++i) CHECK(up[i] == toks[i / 4]);

  CHECK(ts::resample_tokens(toks, 32) == toks);

  auto down = ts::resample_tokens(toks, 16);
  REQUIRE(down.size() == 16);
  for (int i = 0; i < 16; ++i) CHECK(down[i] == toks[2 * i]);

  // 5 -> 3 picks floor(i*5/3) = 0, 1, 3.
  std::vector<std::uint8_t> five{7, 8, 9, 10, 11};
  auto three = ts::resample_tokens(five, 3);
  CHECK(three == std::vector<std::uint8_t>{7, 8, 10});

  auto spread = ts::resample_tokens({4}, 6);
  CHECK(spread == std::vector<std::uint8_t>(6, 4));

  CHECK_THROWS(ts::resample_tokens({}, 8));
  CHECK_THROWS(ts::resample_tokens(five, 0));
}

TEST_CASE("conditioning grid layout and validation") {
  const std::vector<double> z{0.5, -1.25};
  const std::vector<double> pitch{0.0, 1.0, 0.0};
  const std::vector<std::uint8_t> toks{0, 3, 2, 1, 0};
  ts::Tensor g = ts::assemble_input(z, pitch, toks, 4);
  REQUIRE(g.shape() == std::vector<long>({3 + 2 + 4, 1, 5}));

  for (long c = 0; c < 3; ++c)
    for (long t = 0; t < 5; ++t) CHECK(g.at(c * 5 + t) == pitch[c]);
  for (long c = 0; c < 2; ++c)
    for (long t = 0; t < 5; ++t) CHECK(g.at((3 + c) * 5 + t) == z[c]);
  for (long t = 0; t < 5; ++t)
    for (long c = 0; c < 4; ++c)
      CHECK(g.at((5 + c) * 5 + t) == (c == toks[t] ? 1.0 : 0.0));

  CHECK_THROWS(ts::assemble_input(z, {1.0, 1.0, 0.0}, toks, 4));
  CHECK_THROWS(ts::assemble_input(z, {0.0, 0.5, 0.0}, toks, 4));
  CHECK_THROWS(ts::assemble_input(z, {0.0, 0.0, 0.0}, toks, 4));
  CHECK_THROWS(ts::assemble_input(z, pitch, {0, 4}, 4));
  CHECK_THROWS(ts::assemble_input({}, pitch, toks, 4));
  CHECK_THROWS(ts::assemble_input(z, pitch, {}, 4));

  ts::GanSettings s = micro_settings();
  ts::Rng rng(3);
  std::vector<std::vector<double>> zb{{0.1, 0.2}, {0.3, 0.4}};
  std::vector<int> pb{1, 0};
  std::vector<std::vector<std::uint8_t>> tb{{0, 1, 1, 0}, {1, 1, 0, 0}};
  ts::Tensor cb = ts::assemble_cond_batch(s, zb, pb, tb);
  REQUIRE(cb.shape() == std::vector<long>({2, s.cond_channels(), 1, 4}));
  std::vector<double> oh1{0.0, 1.0};
  ts::Tensor one = ts::assemble_input(zb[0], oh1, tb[0], s.token_classes);
  for (long j = 0; j < one.numel(); ++j) CHECK(cb.at(j) == one.at(j));

  CHECK_THROWS(ts::assemble_cond_batch(s, zb, {1, 5}, tb));
  CHECK_THROWS(ts::assemble_cond_batch(s, zb, pb, {{0, 1}, {1, 1, 0, 0}}));
  CHECK_THROWS(ts::assemble_cond_batch(s, zb, {1}, tb));
}

TEST_CASE("pixel norm fixes per-location channel energy") {
  ts::Rng rng(9);

  ad::Var ones = ad::constant(ts::Tensor::full({2, 3, 2, 2}, 1.0));
  ts::Tensor n1 = ts::pixel_norm(ones).value();
  for (long i = 0; i < n1.numel(); ++i) CHECK(std::fabs(n1.at(i) - 1.0) < 1e-6);

  ts::Tensor zeros = ts::Tensor::zeros({1, 4, 2, 3});
  ts::Tensor n0 = ts::pixel_norm(ad::constant(zeros)).value();
  for (long i = 0; i < n0.numel(); ++i) CHECK(n0.at(i) == 0.0);

  ts::Tensor x = random_grid({2, 5, 3, 4}, rng, -3.0, 3.0);
  ts::Tensor nx = ts::pixel_norm(ad::constant(x)).value();
  for (long b = 0; b < 2; ++b) {
    for (long f = 0; f < 3; ++f) {
      for (long t = 0; t < 4; ++t) {
        double ms = 0.0;
        for (long c = 0; c < 5; ++c) {
          const double v = nx.at(((b * 5 + c) * 3 + f) * 4 + t);
          ms += v * v;
        }
        CHECK(std::fabs(ms / 5.0 - 1.0) < 1e-5);
      }
    }
  }

  // Differentiable through the normalization.
  ts::Tensor w = random_grid({1, 3, 2, 2}, rng);
  auto fn = [&](const std::vector<ad::Var>& in) {
    return ad::sum_all(ad::mul(ts::pixel_norm(in[0]), ad::constant(w)));
  };
  auto res = ts::testing::gradcheck(fn, {random_grid({1, 3, 2, 2}, rng)});
  INFO(res.detail);
  CHECK(res.ok);

  CHECK_THROWS(ts::pixel_norm(ad::constant(ts::Tensor::zeros({3, 4}))));
}

TEST_CASE("cross entropy matches closed forms") {
  // Uniform logits price every class at log(count).
  ts::Tensor flat = ts::Tensor::zeros({4, 7});
  double ce = ts::softmax_ce(ad::constant(flat), {0, 3, 6, 2}).value().at(0);
  CHECK(std::fabs(ce - std::log(7.0)) < 1e-12);

  ts::Tensor p27 = ts::Tensor::zeros({1, 27});
  double ce27 = ts::softmax_ce(ad::constant(p27), {13}).value().at(0);
  CHECK(std::fabs(ce27 - std::log(27.0)) < 1e-12);

  // Shift invariance through the detached row max.
  ts::Rng rng(21);
  ts::Tensor lg = random_grid({3, 5}, rng, -2.0, 2.0);
  ts::Tensor lg_shift = lg.clone();
  for (long i = 0; i < lg_shift.numel(); ++i) lg_shift.at(i) += 100.0;
  std::vector<int> tg{4, 0, 2};
  double a = ts::softmax_ce(ad::constant(lg), tg).value().at(0);
  double b = ts::softmax_ce(ad::constant(lg_shift), tg).value().at(0);
  CHECK(std::fabs(a - b) < 1e-9);

  // A dominant correct logit drives the loss toward zero.
  ts::Tensor sharp = ts::Tensor::zeros({1, 4});
  sharp.at(2) = 40.0;
  CHECK(ts::softmax_ce(ad::constant(sharp), {2}).value().at(0) < 1e-12);

  // Channel layout agrees with the flat layout on the same numbers.
  const long bn = 2, k = 3, l = 4;
  ts::Tensor ch = random_grid({bn, k, 1, l}, rng, -1.5, 1.5);
  ts::Tensor rows = ts::Tensor::zeros({bn * l, k});
  std::vector<int> tgt;
  for (long i = 0; i < bn; ++i)
    for (long t = 0; t < l; ++t) {
      for (long c = 0; c < k; ++c) rows.at((i * l + t) * k + c) = ch.at((i * k + c) * l + t);
      tgt.push_back(static_cast<int>(rng.uniform_int(k)));
    }
  double c1 = ts::softmax_ce_channels(ad::constant(ch), tgt).value().at(0);
  double c2 = ts::softmax_ce(ad::constant(rows), tgt).value().at(0);
  CHECK(std::fabs(c1 - c2) < 1e-12);

  CHECK_THROWS(ts::softmax_ce(ad::constant(flat), {0, 1, 2}));
  CHECK_THROWS(ts::softmax_ce(ad::constant(flat), {0, 1, 2, 7}));
  CHECK_THROWS(ts::softmax_ce_channels(ad::constant(ch), {0, 1}));
}

TEST_CASE("generator ladder geometry and determinism") {
  ts::GanSettings s = micro_settings();
  ts::Rng rng(5);
  ts::Generator g(s, rng);

  ts::Rng crng(6);
  ts::Tensor cond = micro_cond(s, 2, 4, crng);

  ts::Tensor o1 = g.forward(ad::constant(cond), 1, 1.0).value();
  CHECK(o1.shape() == std::vector<long>({2, 2, 4, 4}));
  ts::Tensor o2 = g.forward(ad::constant(cond), 2, 1.0).value();
  CHECK(o2.shape() == std::vector<long>({2, 2, 8, 4}));

  // Outputs stay inside the tanh range.
  for (long i = 0; i < o2.numel(); ++i) CHECK(std::fabs(o2.at(i)) <= 1.0);

  CHECK(same_tensor(o2, g.forward(ad::constant(cond), 2, 1.0).value()));

  // The same parameters serve any frame count.
  ts::Rng crng2(8);
  ts::Tensor cond7 = micro_cond(s, 1, 7, crng2);
  CHECK(g.forward(ad::constant(cond7), 2, 1.0).value().shape() ==
        std::vector<long>({1, 2, 8, 7}));

  ts::Tensor bad = ts::Tensor::zeros({2, s.cond_channels() + 1, 1, 4});
  CHECK_THROWS(g.forward(ad::constant(bad), 1, 1.0));
  CHECK_THROWS(g.forward(ad::constant(cond), 0, 1.0));
  CHECK_THROWS(g.forward(ad::constant(cond), 3, 1.0));
}

TEST_CASE("fade blends the new head with the upsampled previous head") {
  ts::GanSettings s = micro_settings();
  ts::Rng rng(15);
  ts::Generator g(s, rng);
  ts::Rng crng(16);
  ts::Tensor cond = micro_cond(s, 2, 4, crng);

  ts::Tensor prev = g.forward(ad::constant(cond), 1, 1.0).value();
  ts::Tensor at0 = g.forward(ad::constant(cond), 2, 0.0).value();
  ts::Tensor up = ad::upsample2_freq(ad::constant(prev)).value();
  CHECK(same_tensor(at0, up));

  ts::Tensor at1 = g.forward(ad::constant(cond), 2, 1.0).value();
  ts::Tensor mid = g.forward(ad::constant(cond), 2, 0.5).value();
  for (long i = 0; i < mid.numel(); ++i)
    CHECK(std::fabs(mid.at(i) - 0.5 * (at1.at(i) + at0.at(i))) < 1e-12);
}

TEST_CASE("local critic is frame local and length agnostic") {
  ts::GanSettings s = micro_settings();
  ts::Rng rng(31);
  ts::DLocal dl(s, rng);

  ts::Rng drng(32);
  ts::Tensor x = random_grid({1, 2, 8, 6}, drng);
  ts::DLocalOut out = dl.forward(ad::constant(x), 2);
  REQUIRE(out.score.shape() == std::vector<long>({1, 1, 1, 6}));
  REQUIRE(out.token_logits.shape() == std::vector<long>({1, s.token_classes, 1, 6}));

  // Perturbing one frame's column moves only that frame's outputs.
  ts::Tensor x2 = x.clone();
  for (long c = 0; c < 2; ++c)
    for (long f = 0; f < 8; ++f) x2.at((c * 8 + f) * 6 + 3) += 0.37;
  ts::DLocalOut out2 = dl.forward(ad::constant(x2), 2);
  for (long t = 0; t < 6; ++t) {
    const double d = std::fabs(out.score.value().at(t) - out2.score.value().at(t));
    if (t == 3)
      CHECK(d > 1e-9);
    else
      CHECK(d == 0.0);
    for (long c = 0; c < s.token_classes; ++c) {
      const double dt =
          std::fabs(out.token_logits.value().at(c * 6 + t) - out2.token_logits.value().at(c * 6 + t));
      if (t == 3)
        CHECK(dt > 1e-12);
      else
        CHECK(dt == 0.0);
    }
  }

  // Other lengths and scales reuse the same parameters.
  ts::Tensor x13 = random_grid({2, 2, 8, 13}, drng);
  CHECK(dl.forward(ad::constant(x13), 2).score.shape() == std::vector<long>({2, 1, 1, 13}));
  ts::Tensor xs1 = random_grid({1, 2, 4, 6}, drng);
  CHECK(dl.forward(ad::constant(xs1), 1).score.shape() == std::vector<long>({1, 1, 1, 6}));

  CHECK_THROWS(dl.forward(ad::constant(x), 1));
  CHECK_THROWS(dl.forward(ad::constant(ts::Tensor::zeros({1, 1, 8, 6})), 2));
}

TEST_CASE("global critic shapes and dense-head frame check") {
  ts::GanSettings s = micro_settings();
  ts::Rng rng(41);
  ts::DGlobal dg(s, rng);

  ts::Rng drng(42);
  ts::Tensor x = random_grid({2, 2, 8, 4}, drng);
  ts::DGlobalOut out = dg.forward(ad::constant(x), 2);
  CHECK(out.score.shape() == std::vector<long>({2, 1}));
  CHECK(out.pitch_logits.shape() == std::vector<long>({2, s.pitch_classes}));

  ts::Tensor x1 = random_grid({1, 2, 4, 4}, drng);
  CHECK(dg.forward(ad::constant(x1), 1).score.shape() == std::vector<long>({1, 1}));

  ts::Tensor wrong_l = random_grid({1, 2, 8, 5}, drng);
  CHECK_THROWS_WITH_AS(dg.forward(ad::constant(wrong_l), 2), doctest::Contains("frames"),
                       std::runtime_error);
  CHECK_THROWS(dg.forward(ad::constant(x), 1));
}

TEST_CASE("gradient penalty hits its closed forms") {
  ts::Rng data_rng(11);
  const long b = 3, cdim = 2, f = 4, l = 5;
  ts::Tensor real = random_grid({b, cdim, f, l}, data_rng);
  ts::Tensor fake = random_grid({b, cdim, f, l}, data_rng);
  const long per = cdim * f * l;

  // Critic with unit input gradient everywhere: zero penalty.
  auto unit_sample = [&](const ad::Var& x) {
    return ad::muls(ad::sum_keep(ad::reshape(x, {b, per}), 1), 1.0 / std::sqrt(double(per)));
  };
  ts::Rng r1(7);
  double gp0 = ts::gradient_penalty(unit_sample, real, fake, ts::GpMode::PerSample, r1)
                   .value()
                   .at(0);
  CHECK(std::fabs(gp0) < 1e-5);
  CHECK(std::fabs(gp0) < 1e-10);

  auto unit_frame = [&](const ad::Var& x) {
    return ad::muls(ad::sum_keep(ad::sum_keep(x, 1), 2), 1.0 / std::sqrt(double(cdim * f)));
  };
  ts::Rng r2(7);
  double gpf = ts::gradient_penalty(unit_frame, real, fake, ts::GpMode::PerFrame, r2)
                   .value()
                   .at(0);
  CHECK(std::fabs(gpf) < 1e-5);

  // Constant critic: gradient norm (almost) zero, penalty (almost) one.
  auto flat = [&](const ad::Var& x) {
    (void)x;
    return ad::constant(ts::Tensor::full({b, 1}, 2.5));
  };
  ts::Rng r3(7);
  double gp1 = ts::gradient_penalty(flat, real, fake, ts::GpMode::PerSample, r3).value().at(0);
  CHECK(std::fabs(gp1 - 1.0) < 1e-5);

  // Linear critic: per-sample gradient equals the weight grid.
  ts::Tensor w = random_grid({1, cdim, f, l}, data_rng, -0.6, 0.6);
  auto linear_sample = [&](const ad::Var& x) {
    return ad::sum_keep(ad::reshape(ad::mul(x, ad::constant(w)), {b, per}), 1);
  };
  double wn = 0.0;
  for (long i = 0; i < per; ++i) wn += w.at(i) * w.at(i);
  const double expect_s = std::pow(std::sqrt(wn + 1e-12) - 1.0, 2.0);
  ts::Rng r4(19);
  double gps = ts::gradient_penalty(linear_sample, real, fake, ts::GpMode::PerSample, r4)
                   .value()
                   .at(0);
  CHECK(std::fabs(gps - expect_s) < 1e-9);

  auto linear_frame = [&](const ad::Var& x) {
    return ad::sum_keep(ad::sum_keep(ad::mul(x, ad::constant(w)), 1), 2);
  };
  double expect_f = 0.0;
  for (long t = 0; t < l; ++t) {
    double n2 = 0.0;
    for (long c = 0; c < cdim; ++c)
      for (long ff = 0; ff < f; ++ff) {
        const double v = w.at((c * f + ff) * l + t);
        n2 += v * v;
      }
    const double miss = std::sqrt(n2 + 1e-12) - 1.0;
    expect_f += miss * miss;
  }
  expect_f /= double(l);
  ts::Rng r5(19);
  double gpfr = ts::gradient_penalty(linear_frame, real, fake, ts::GpMode::PerFrame, r5)
                    .value()
                    .at(0);
  CHECK(std::fabs(gpfr - expect_f) < 1e-9);

  // Same seed, same interpolation, same value.
  ts::Rng r6(19), r7(19);
  CHECK(ts::gradient_penalty(linear_sample, real, fake, ts::GpMode::PerSample, r6).value().at(0) ==
        ts::gradient_penalty(linear_sample, real, fake, ts::GpMode::PerSample, r7).value().at(0));

  ts::Rng r8(1);
  CHECK_THROWS(ts::gradient_penalty(linear_sample, real,
                                    ts::Tensor::zeros({b, cdim, f, l + 1}), ts::GpMode::PerSample,
                                    r8));
}

TEST_CASE("loss report assembles critics penalties and labels") {
  ts::GanSettings s = micro_settings();
  ts::Rng mrng(7);
  ts::Generator g(s, mrng);
  ts::DLocal dl(s, mrng);
  ts::DGlobal dg(s, mrng);

  ts::Rng brng(70);
  ts::GanBatch batch = micro_batch(s, 2, 2, brng);
  ts::GanWeights w;
  w.lambda_gp = 10.0;
  w.w_ce = 1.0;
  w.drift_eps = 0.001;

  ts::Rng lrng(3);
  ts::GanLossReport r = ts::gan_losses(g, dl, dg, batch, 2, 0.7, w, lrng);

  CHECK(std::isfinite(r.d_total));
  CHECK(std::isfinite(r.g_total));
  CHECK(std::isfinite(r.w_local));
  CHECK(std::isfinite(r.w_global));
  CHECK(r.gp_local >= 0.0);
  CHECK(r.gp_global >= 0.0);
  CHECK(r.ce_token >= 0.0);
  CHECK(r.ce_pitch >= 0.0);
  CHECK(r.drift >= 0.0);

  const double rebuilt = -(r.w_local + r.w_global) + w.lambda_gp * (r.gp_local + r.gp_global) +
                         w.w_ce * (r.ce_token + r.ce_pitch) + r.drift;
  CHECK(std::fabs(r.d_total - rebuilt) < 1e-9);

  ts::Rng lrng2(3);
  ts::GanLossReport r2 = ts::gan_losses(g, dl, dg, batch, 2, 0.7, w, lrng2);
  CHECK(r.d_total == r2.d_total);
  CHECK(r.g_total == r2.g_total);
  CHECK(r.gp_local == r2.gp_local);

  ts::GanBatch bad = batch;
  bad.real_tokens.pop_back();
  ts::Rng lrng3(3);
  CHECK_THROWS(ts::gan_losses(g, dl, dg, bad, 2, 0.7, w, lrng3));
  ts::GanBatch bad2 = batch;
  bad2.fake_pitch.clear();
  ts::Rng lrng4(3);
  CHECK_THROWS(ts::gan_losses(g, dl, dg, bad2, 2, 0.7, w, lrng4));
}

TEST_CASE("zeroed critics price classification at log class count") {
  ts::GanSettings s = micro_settings();
  s.pitch_classes = 27;
  s.token_classes = 16;
  ts::Rng mrng(97);
  ts::Generator g(s, mrng);
  ts::DLocal dl(s, mrng);
  ts::DGlobal dg(s, mrng);
  zero_params(dl.params());
  zero_params(dg.params());

  ts::Rng brng(98);
  ts::GanBatch batch = micro_batch(s, 2, 2, brng);
  ts::GanWeights w;
  w.lambda_gp = 10.0;
  w.w_ce = 1.0;
  w.drift_eps = 0.001;
  ts::Rng lrng(5);
  ts::GanLossReport r = ts::gan_losses(g, dl, dg, batch, 2, 1.0, w, lrng);

  CHECK(std::fabs(r.ce_pitch - std::log(27.0)) < 1e-12);
  CHECK(std::fabs(r.ce_token - std::log(16.0)) < 1e-12);
  CHECK(r.w_local == 0.0);
  CHECK(r.w_global == 0.0);
  CHECK(r.drift == 0.0);

  // Zero critics have zero input gradient, so each penalty sits at the
  // epsilon-regularized unit miss.
  const double gp0 = std::pow(std::sqrt(1e-12) - 1.0, 2.0);
  CHECK(std::fabs(r.gp_local - gp0) < 1e-12);
  CHECK(std::fabs(r.gp_global - gp0) < 1e-12);
  CHECK(std::fabs(r.d_total - (w.lambda_gp * 2.0 * gp0 + std::log(27.0) + std::log(16.0))) <
        1e-9);
  CHECK(std::fabs(r.g_total - (std::log(27.0) + std::log(16.0))) < 1e-9);
}

TEST_CASE("loss gradients match finite differences") {
  ts::GanSettings s = micro_settings();
  ts::Rng mrng(103);
  ts::Generator g(s, mrng);
  ts::DLocal dl(s, mrng);
  ts::DGlobal dg(s, mrng);
  randomize_biases(g.params(), mrng);
  randomize_biases(dl.params(), mrng);
  randomize_biases(dg.params(), mrng);

  const long n_g = g.params().total_params();
  const long n_d = dl.params().total_params() + dg.params().total_params();
  REQUIRE(n_g <= 1000);
  REQUIRE(n_d <= 1000);

  ts::Rng brng(203);
  ts::GanBatch batch = micro_batch(s, 2, 2, brng);
  ts::GanWeights w;
  w.lambda_gp = 10.0;
  w.w_ce = 1.0;
  w.drift_eps = 0.001;

  ts::testing::GradCheckOpts opts;
  opts.graph_in_eval = true;

  // The critic loss treats the generator output as data, so its parameter set
  // is the two critics'; the generator loss is checked against the generator.
  auto build_d = [&]() {
    ts::Rng lrng(17);
    return ts::gan_losses(g, dl, dg, batch, 2, 0.6, w, lrng).d_total_var;
  };
  auto res_d = ts::testing::gradcheck_params(build_d, collect_params({&dl.params(), &dg.params()}),
                                             opts);
  INFO("d_total: " << res_d.detail);
  CHECK(res_d.ok);
  CHECK(res_d.checked == n_d);
  CHECK(res_d.worst_rel < 1e-3);

  auto build_g = [&]() {
    ts::Rng lrng(17);
    return ts::gan_losses(g, dl, dg, batch, 2, 0.6, w, lrng).g_total_var;
  };
  auto res_g = ts::testing::gradcheck_params(build_g, collect_params({&g.params()}), opts);
  INFO("g_total: " << res_g.detail);
  CHECK(res_g.ok);
  CHECK(res_g.checked == n_g);
  CHECK(res_g.worst_rel < 1e-3);
}

TEST_CASE("gan settings derive from config") {
  ts::Config desk = ts::Config::preset("desk");
  ts::GanSettings s = ts::GanSettings::from(desk, 27, 32);
  CHECK(s.maps == std::vector<int>({16, 16, 16, 16, 12, 8}));
  CHECK(s.n_scales == 6);
  CHECK(s.base_freq == 32);
  CHECK(s.full_freq == 1024);
  CHECK(s.z_dim == 16);
  CHECK(s.token_classes == 16);
  CHECK(s.dense_hidden == 32);
  CHECK(s.cond_channels() == 27 + 16 + 16);
  CHECK(s.freq_at(1) == 32);
  CHECK(s.freq_at(6) == 1024);
  CHECK_THROWS(s.freq_at(0));
  CHECK_THROWS(s.freq_at(7));

  ts::Config full = ts::Config::preset("full");
  ts::GanSettings sf = ts::GanSettings::from(full, 27, 32);
  CHECK(sf.maps == std::vector<int>({512, 256, 256, 256, 256, 128}));
  CHECK(sf.dense_hidden == 256);
  CHECK(sf.z_dim == 128);
  CHECK(sf.cond_channels() == 27 + 128 + 16);

  ts::Config broken = ts::Config::preset("desk");
  broken.set("gan.maps", "1,2,3");
  CHECK_THROWS(ts::GanSettings::from(broken, 27, 32));
  CHECK_THROWS(ts::GanSettings::from(desk, 0, 32));
}
