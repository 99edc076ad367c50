#include "tokensynth/gan.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tokensynth {

namespace {

// Output height of a kh=3, ph=1, stride-2 convolution; halves even heights
// and takes 2 -> 1.
long halved(long f) { return (f - 1) / 2 + 1; }

int tail_steps(int base_freq) {
  int n = 0;
  long f = base_freq;
  while (f > 1) {
    f = halved(f);
    ++n;
  }
  return n;
}

}  // namespace

long GanSettings::freq_at(int scale) const {
  if (scale < 1 || scale > n_scales)
    throw std::runtime_error("scale " + std::to_string(scale) + " outside 1.." +
                             std::to_string(n_scales));
  return static_cast<long>(base_freq) << (scale - 1);
}

GanSettings GanSettings::from(const Config& cfg, int pitch_classes, int frames) {
  GanSettings s;
  s.z_dim = static_cast<int>(cfg.integer("gan.latent_dim"));
  s.pitch_classes = pitch_classes;
  s.token_classes = static_cast<int>(cfg.integer("vqcpc.codebook_size"));
  s.maps.clear();
  for (long v : cfg.int_list("gan.maps")) s.maps.push_back(static_cast<int>(v));
  s.n_scales = static_cast<int>(cfg.integer("gan.max_scales"));
  if (static_cast<int>(s.maps.size()) != s.n_scales)
    throw std::runtime_error("gan.maps lists " + std::to_string(s.maps.size()) +
                             " widths for " + std::to_string(s.n_scales) + " scales");
  s.frames = frames;
  s.full_freq = static_cast<int>(cfg.integer("stft.fft_size")) / 2;
  s.base_freq = s.full_freq >> (s.n_scales - 1);
  if (s.base_freq < 2 || (s.base_freq << (s.n_scales - 1)) != s.full_freq)
    throw std::runtime_error("stft.fft_size/2 must be base_freq * 2^(gan.max_scales-1)");
  s.dense_hidden = static_cast<int>(cfg.integer("gan.dense_hidden"));
  if (s.pitch_classes < 1) throw std::runtime_error("gan: pitch class count must be positive");
  if (s.z_dim < 1) throw std::runtime_error("gan.latent_dim must be positive");
  if (s.frames < 1) throw std::runtime_error("gan: frame count must be positive");
  return s;
}

std::vector<std::uint8_t> resample_tokens(const std::vector<std::uint8_t>& tokens,
                                          long target_len) {
  if (tokens.empty()) throw std::runtime_error("resample_tokens: empty token sequence");
  if (target_len < 1) throw std::runtime_error("resample_tokens: target length must be positive");
  const long len = static_cast<long>(tokens.size());
  std::vector<std::uint8_t> out(static_cast<size_t>(target_len));
  for (long i = 0; i < target_len; ++i) out[i] = tokens[i * len / target_len];
  return out;
}

Tensor assemble_input(const std::vector<double>& z, const std::vector<double>& pitch_onehot,
                      const std::vector<std::uint8_t>& tokens, int token_classes) {
  if (z.empty()) throw std::runtime_error("assemble_input: empty noise vector");
  if (tokens.empty()) throw std::runtime_error("assemble_input: empty token sequence");
  if (token_classes < 1) throw std::runtime_error("assemble_input: bad token class count");
  long ones = 0;
  for (double v : pitch_onehot) {
    if (v != 0.0 && v != 1.0)
      throw std::runtime_error("assemble_input: pitch vector is not one-hot");
    if (v == 1.0) ++ones;
  }
  if (ones != 1) throw std::runtime_error("assemble_input: pitch vector is not one-hot");
  for (std::uint8_t t : tokens)
    if (t >= token_classes)
      throw std::runtime_error("assemble_input: token " + std::to_string(int(t)) +
                               " outside codebook of " + std::to_string(token_classes));

  const long p = static_cast<long>(pitch_onehot.size());
  const long zc = static_cast<long>(z.size());
  const long l = static_cast<long>(tokens.size());
  Tensor out = Tensor::zeros({p + zc + token_classes, 1, l});
  double* o = out.data();
  for (long c = 0; c < p; ++c)
    for (long t = 0; t < l; ++t) o[c * l + t] = pitch_onehot[c];
  for (long c = 0; c < zc; ++c)
    for (long t = 0; t < l; ++t) o[(p + c) * l + t] = z[c];
  for (long t = 0; t < l; ++t) o[(p + zc + tokens[t]) * l + t] = 1.0;
  return out;
}

Tensor assemble_cond_batch(const GanSettings& s, const std::vector<std::vector<double>>& z,
                           const std::vector<int>& pitch_class,
                           const std::vector<std::vector<std::uint8_t>>& tokens) {
  const size_t b = z.size();
  if (b == 0 || pitch_class.size() != b || tokens.size() != b)
    throw std::runtime_error("assemble_cond_batch: per-sample lists disagree");
  const long l = static_cast<long>(tokens[0].size());
  Tensor out = Tensor::zeros({static_cast<long>(b), s.cond_channels(), 1, l});
  const long per = static_cast<long>(s.cond_channels()) * l;
  for (size_t i = 0; i < b; ++i) {
    if (pitch_class[i] < 0 || pitch_class[i] >= s.pitch_classes)
      throw std::runtime_error("assemble_cond_batch: pitch class out of range");
    if (static_cast<long>(tokens[i].size()) != l)
      throw std::runtime_error("assemble_cond_batch: ragged token lengths");
    std::vector<double> onehot(s.pitch_classes, 0.0);
    onehot[pitch_class[i]] = 1.0;
    Tensor one = assemble_input(z[i], onehot, tokens[i], s.token_classes);
    for (long j = 0; j < per; ++j) out.data()[i * per + j] = one.data()[j];
  }
  return out;
}

ad::Var pixel_norm(const ad::Var& x, double eps) {
  if (x.shape().size() != 4) throw std::runtime_error("pixel_norm: expected a rank-4 batch");
  const double inv_c = 1.0 / static_cast<double>(x.dim(1));
  ad::Var ms = ad::muls(ad::sum_keep(ad::mul(x, x), 1), inv_c);
  return ad::div(x, ad::sqrt(ad::adds(ms, eps)));
}

ad::Var softmax_ce(const ad::Var& logits, const std::vector<int>& targets) {
  if (logits.shape().size() != 2) throw std::runtime_error("softmax_ce: expected (rows, classes)");
  const long r = logits.dim(0);
  const long k = logits.dim(1);
  if (static_cast<long>(targets.size()) != r)
    throw std::runtime_error("softmax_ce: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(r) + " rows");
  Tensor mx = Tensor::zeros({r, 1});
  Tensor mask = Tensor::zeros({r, k});
  for (long i = 0; i < r; ++i) {
    if (targets[i] < 0 || targets[i] >= k)
      throw std::runtime_error("softmax_ce: target class out of range");
    double m = logits.value().at(i * k);
    for (long j = 1; j < k; ++j) m = std::max(m, logits.value().at(i * k + j));
    mx.at(i) = m;
    mask.at(i * k + targets[i]) = 1.0;
  }
  ad::Var shifted = ad::sub(logits, ad::constant(mx));
  ad::Var lse = ad::log(ad::sum_keep(ad::exp(shifted), 1));
  ad::Var picked = ad::sum_keep(ad::mul(shifted, ad::constant(mask)), 1);
  return ad::mean_all(ad::sub(lse, picked));
}

ad::Var softmax_ce_channels(const ad::Var& logits, const std::vector<int>& targets) {
  if (logits.shape().size() != 4 || logits.dim(2) != 1)
    throw std::runtime_error("softmax_ce_channels: expected (batch, classes, 1, frames)");
  const long b = logits.dim(0);
  const long k = logits.dim(1);
  const long l = logits.dim(3);
  if (static_cast<long>(targets.size()) != b * l)
    throw std::runtime_error("softmax_ce_channels: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(b * l) + " frames");
  Tensor mx = Tensor::zeros({b, 1, 1, l});
  Tensor mask = Tensor::zeros({b, k, 1, l});
  const double* v = logits.value().data();
  for (long i = 0; i < b; ++i) {
    for (long t = 0; t < l; ++t) {
      const int cls = targets[i * l + t];
      if (cls < 0 || cls >= k)
        throw std::runtime_error("softmax_ce_channels: target class out of range");
      double m = v[(i * k) * l + t];
      for (long j = 1; j < k; ++j) m = std::max(m, v[(i * k + j) * l + t]);
      mx.at(i * l + t) = m;
      mask.at((i * k + cls) * l + t) = 1.0;
    }
  }
  ad::Var shifted = ad::sub(logits, ad::constant(mx));
  ad::Var lse = ad::log(ad::sum_keep(ad::exp(shifted), 1));
  ad::Var picked = ad::sum_keep(ad::mul(shifted, ad::constant(mask)), 1);
  return ad::mean_all(ad::sub(lse, picked));
}

Generator::Generator(const GanSettings& s, Rng& rng) : s_(s) {
  in1_ = Conv2d(ps_, "g.in1", s.cond_channels(), s.maps[0], 3, 3, 1, 1, 1, 1, rng);
  in2_ = Conv2d(ps_, "g.in2", s.maps[0], s.maps[0], 3, 3, 1, 1, 1, 1, rng);
  for (int j = 2; j <= s.n_scales; ++j) {
    const std::string p = "g.s" + std::to_string(j);
    block_a_.emplace_back(ps_, p + ".a", s.maps[j - 2], s.maps[j - 1], 3, 3, 1, 1, 1, 1, rng);
    block_b_.emplace_back(ps_, p + ".b", s.maps[j - 1], s.maps[j - 1], 3, 3, 1, 1, 1, 1, rng);
  }
  for (int j = 1; j <= s.n_scales; ++j)
    heads_.emplace_back(ps_, "g.head" + std::to_string(j), s.maps[j - 1], 2, 1, 1, 1, 1, 0, 0,
                        rng);
}

ad::Var Generator::forward(const ad::Var& cond, int scale, double alpha) {
  s_.freq_at(scale);
  if (cond.shape().size() != 4 || cond.dim(1) != s_.cond_channels() || cond.dim(2) != 1)
    throw std::runtime_error("generator: conditioning must be (batch, " +
                             std::to_string(s_.cond_channels()) + ", 1, frames)");
  ad::Var x = ad::pad_freq(cond, 0, s_.base_freq - 1);
  x = ad::relu(in1_.forward(x));
  x = ad::relu(in2_.forward(x));
  ad::Var below;  // features entering the top block, for the fade branch
  for (int j = 2; j <= scale; ++j) {
    if (j == scale) below = x;
    x = ad::upsample2_freq(x);
    x = pixel_norm(ad::leaky_relu(block_a_[j - 2].forward(x), 0.2));
    x = pixel_norm(ad::leaky_relu(block_b_[j - 2].forward(x), 0.2));
  }
  ad::Var out = ad::tanh(heads_[scale - 1].forward(x));
  if (scale > 1 && alpha < 1.0) {
    ad::Var low = ad::tanh(heads_[scale - 2].forward(below));
    out = ad::add(ad::muls(out, alpha), ad::muls(ad::upsample2_freq(low), 1.0 - alpha));
  }
  return out;
}

DLocal::DLocal(const GanSettings& s, Rng& rng) : s_(s) {
  for (int j = 1; j <= s.n_scales; ++j)
    entry_.emplace_back(ps_, "dl.in" + std::to_string(j), 2, s.maps[j - 1], 1, 1, 1, 1, 0, 0,
                        rng);
  for (int j = 2; j <= s.n_scales; ++j)
    blocks_.emplace_back(ps_, "dl.s" + std::to_string(j), s.maps[j - 1], s.maps[j - 2], 3, 1, 2,
                         1, 1, 0, rng);
  const int n = tail_steps(s.base_freq);
  for (int i = 0; i < n; ++i)
    tail_.emplace_back(ps_, "dl.t" + std::to_string(i), s.maps[0], s.maps[0], 3, 1, 2, 1, 1, 0,
                       rng);
  head_score_ = Conv2d(ps_, "dl.score", s.maps[0], 1, 1, 1, 1, 1, 0, 0, rng);
  head_token_ = Conv2d(ps_, "dl.token", s.maps[0], s.token_classes, 1, 1, 1, 1, 0, 0, rng);
}

DLocalOut DLocal::forward(const ad::Var& spec, int scale) {
  const long f = s_.freq_at(scale);
  if (spec.shape().size() != 4 || spec.dim(1) != 2 || spec.dim(2) != f)
    throw std::runtime_error("local critic: expected (batch, 2, " + std::to_string(f) +
                             ", frames) at scale " + std::to_string(scale));
  ad::Var h = ad::leaky_relu(entry_[scale - 1].forward(spec), 0.2);
  for (int j = scale; j >= 2; --j) h = ad::leaky_relu(blocks_[j - 2].forward(h), 0.2);
  for (const Conv2d& c : tail_) h = ad::leaky_relu(c.forward(h), 0.2);
  return {head_score_.forward(h), head_token_.forward(h)};
}

DGlobal::DGlobal(const GanSettings& s, Rng& rng) : s_(s) {
  for (int j = 1; j <= s.n_scales; ++j)
    entry_.emplace_back(ps_, "dg.in" + std::to_string(j), 2, s.maps[j - 1], 1, 1, 1, 1, 0, 0,
                        rng);
  for (int j = 2; j <= s.n_scales; ++j)
    blocks_.emplace_back(ps_, "dg.s" + std::to_string(j), s.maps[j - 1], s.maps[j - 2], 3, 3, 2,
                         1, 1, 1, rng);
  const int n = tail_steps(s.base_freq);
  for (int i = 0; i < n; ++i)
    tail_.emplace_back(ps_, "dg.t" + std::to_string(i), s.maps[0], s.maps[0], 3, 3, 2, 1, 1, 1,
                       rng);
  fc1_ = Dense(ps_, "dg.fc1", static_cast<long>(s.maps[0]) * s.frames, s.dense_hidden, rng);
  fc2_ = Dense(ps_, "dg.fc2", s.dense_hidden, 1 + s.pitch_classes, rng);
}

DGlobalOut DGlobal::forward(const ad::Var& spec, int scale) {
  const long f = s_.freq_at(scale);
  if (spec.shape().size() != 4 || spec.dim(1) != 2 || spec.dim(2) != f)
    throw std::runtime_error("global critic: expected (batch, 2, " + std::to_string(f) +
                             ", frames) at scale " + std::to_string(scale));
  if (spec.dim(3) != s_.frames)
    throw std::runtime_error("global critic: dense head is sized for " +
                             std::to_string(s_.frames) + " frames, got " +
                             std::to_string(spec.dim(3)));
  ad::Var h = ad::leaky_relu(entry_[scale - 1].forward(spec), 0.2);
  for (int j = scale; j >= 2; --j) h = ad::leaky_relu(blocks_[j - 2].forward(h), 0.2);
  for (const Conv2d& c : tail_) h = ad::leaky_relu(c.forward(h), 0.2);
  h = ad::reshape(h, {spec.dim(0), static_cast<long>(s_.maps[0]) * s_.frames});
  h = ad::leaky_relu(fc1_.forward(h), 0.2);
  ad::Var out = fc2_.forward(h);
  return {ad::narrow(out, 1, 0, 1), ad::narrow(out, 1, 1, s_.pitch_classes)};
}

ad::Var gradient_penalty(const std::function<ad::Var(const ad::Var&)>& critic,
                         const Tensor& real, const Tensor& fake, GpMode mode, Rng& rng) {
  if (real.shape() != fake.shape())
    throw std::runtime_error("gradient_penalty: real and fake geometry differ");
  if (real.shape().size() != 4) throw std::runtime_error("gradient_penalty: expected rank 4");
  const long b = real.dim(0);
  const long per = real.numel() / b;
  Tensor xh = Tensor::zeros(real.shape());
  for (long i = 0; i < b; ++i) {
    const double u = rng.uniform01();
    for (long j = 0; j < per; ++j)
      xh.data()[i * per + j] = u * real.data()[i * per + j] + (1.0 - u) * fake.data()[i * per + j];
  }
  ad::Var x = ad::leaf(xh, true);
  ad::Var g = ad::grad(ad::sum_all(critic(x)), {x}, true)[0];
  ad::Var sq = ad::mul(g, g);
  ad::Var norm2 = ad::sum_keep(ad::sum_keep(sq, 1), 2);  // (B,1,1,L)
  if (mode == GpMode::PerSample) norm2 = ad::sum_keep(norm2, 3);
  ad::Var miss = ad::adds(ad::sqrt(ad::adds(norm2, 1e-12)), -1.0);
  return ad::mean_all(ad::mul(miss, miss));
}

GanWeights GanWeights::from(const Config& cfg) {
  GanWeights w;
  w.lambda_gp = cfg.real("gan.lambda_gp");
  w.w_ce = cfg.real("gan.w_ce");
  w.drift_eps = cfg.real("gan.drift_eps");
  return w;
}

GanLossReport gan_losses(Generator& gen, DLocal& dl, DGlobal& dg, const GanBatch& batch,
                         int scale, double alpha, const GanWeights& w, Rng& rng) {
  const long b = batch.real.dim(0);
  const long l = batch.real.dim(3);
  if (batch.cond.dim(0) != b || batch.cond.dim(3) != l)
    throw std::runtime_error("gan_losses: conditioning batch does not match the real batch");
  if (static_cast<long>(batch.real_pitch.size()) != b ||
      static_cast<long>(batch.fake_pitch.size()) != b)
    throw std::runtime_error("gan_losses: missing pitch labels");
  if (static_cast<long>(batch.real_tokens.size()) != b * l ||
      static_cast<long>(batch.fake_tokens.size()) != b * l)
    throw std::runtime_error("gan_losses: missing frame token labels");

  auto as_int = [](const std::vector<std::uint8_t>& v) {
    return std::vector<int>(v.begin(), v.end());
  };
  const std::vector<int> real_tok = as_int(batch.real_tokens);
  const std::vector<int> fake_tok = as_int(batch.fake_tokens);

  ad::Var real = ad::constant(batch.real);
  ad::Var fake_live = gen.forward(ad::constant(batch.cond), scale, alpha);
  ad::Var fake_const = ad::constant(fake_live.value().clone());

  // Critic side: generator output enters as a constant.
  DLocalOut dl_real = dl.forward(real, scale);
  DLocalOut dl_fake = dl.forward(fake_const, scale);
  DGlobalOut dg_real = dg.forward(real, scale);
  DGlobalOut dg_fake = dg.forward(fake_const, scale);

  ad::Var ml_real = ad::mean_all(dl_real.score);
  ad::Var ml_fake = ad::mean_all(dl_fake.score);
  ad::Var mg_real = ad::mean_all(dg_real.score);
  ad::Var mg_fake = ad::mean_all(dg_fake.score);
  ad::Var adv = ad::add(ad::sub(ml_fake, ml_real), ad::sub(mg_fake, mg_real));
  ad::Var gp_l = gradient_penalty([&](const ad::Var& x) { return dl.forward(x, scale).score; },
                                  batch.real, fake_const.value(), GpMode::PerFrame, rng);
  ad::Var gp_g = gradient_penalty([&](const ad::Var& x) { return dg.forward(x, scale).score; },
                                  batch.real, fake_const.value(), GpMode::PerSample, rng);
  ad::Var ce_tok_d = ad::muls(ad::add(softmax_ce_channels(dl_real.token_logits, real_tok),
                                      softmax_ce_channels(dl_fake.token_logits, fake_tok)),
                              0.5);
  ad::Var ce_pit_d = ad::muls(ad::add(softmax_ce(dg_real.pitch_logits, batch.real_pitch),
                                      softmax_ce(dg_fake.pitch_logits, batch.fake_pitch)),
                              0.5);
  ad::Var drift = ad::muls(ad::add(ad::mean_all(ad::mul(dl_real.score, dl_real.score)),
                                   ad::mean_all(ad::mul(dg_real.score, dg_real.score))),
                           w.drift_eps);
  ad::Var d_total =
      ad::add(ad::add(adv, ad::muls(ad::add(gp_l, gp_g), w.lambda_gp)),
              ad::add(ad::muls(ad::add(ce_tok_d, ce_pit_d), w.w_ce), drift));

  // Generator side: fresh critic passes on the live fake.
  DLocalOut dl_gen = dl.forward(fake_live, scale);
  DGlobalOut dg_gen = dg.forward(fake_live, scale);
  ad::Var g_adv = ad::neg(ad::add(ad::mean_all(dl_gen.score), ad::mean_all(dg_gen.score)));
  ad::Var ce_tok_g = softmax_ce_channels(dl_gen.token_logits, fake_tok);
  ad::Var ce_pit_g = softmax_ce(dg_gen.pitch_logits, batch.fake_pitch);
  ad::Var g_total = ad::add(g_adv, ad::muls(ad::add(ce_tok_g, ce_pit_g), w.w_ce));

  GanLossReport r;
  r.d_total_var = d_total;
  r.g_total_var = g_total;
  r.w_local = ml_real.value().at(0) - ml_fake.value().at(0);
  r.w_global = mg_real.value().at(0) - mg_fake.value().at(0);
  r.gp_local = gp_l.value().at(0);
  r.gp_global = gp_g.value().at(0);
  r.ce_token = ce_tok_d.value().at(0);
  r.ce_pitch = ce_pit_d.value().at(0);
  r.drift = drift.value().at(0);
  r.d_total = d_total.value().at(0);
  r.g_total = g_total.value().at(0);
  return r;
}

}  // namespace tokensynth
