#include "tokensynth/train.hpp"

#include "tokensynth/checkpoint.hpp"
#include "tokensynth/spectro.hpp"
#include "tokensynth/vqcpc.hpp"

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

std::vector<ScalePhase> progressive_schedule(const Config& cfg) {
  const long per_scale = cfg.integer("gan.iters_per_scale");
  const long divisor = cfg.integer("gan.iter_divisor");
  if (divisor <= 0) throw std::runtime_error("gan.iter_divisor must be positive");
  const long iters = per_scale / divisor;
  const int n = static_cast<int>(cfg.integer("gan.max_scales"));
  const std::vector<long> batches = cfg.int_list("gan.batches");
  if (static_cast<int>(batches.size()) != n)
    throw std::runtime_error("gan.batches must list one batch size per scale");
  const double fade_fraction = cfg.real("gan.fade_fraction");
  if (fade_fraction < 0.0 || fade_fraction > 1.0)
    throw std::runtime_error("gan.fade_fraction must be in [0, 1]");

  std::vector<ScalePhase> phases;
  phases.reserve(static_cast<size_t>(n));
  for (int s = 1; s <= n; ++s) {
    ScalePhase p;
    p.scale = s;
    p.iters = iters;
    p.fade_iters = s == 1 ? 0 : static_cast<long>(std::floor(iters * fade_fraction));
    p.batch = static_cast<int>(batches[static_cast<size_t>(s - 1)]);
    if (p.batch < 1) throw std::runtime_error("gan.batches entries must be positive");
    phases.push_back(p);
  }
  return phases;
}

double fade_alpha(const ScalePhase& p, long i) {
  if (p.fade_iters <= 0 || i >= p.fade_iters) return 1.0;
  return static_cast<double>(i) / static_cast<double>(p.fade_iters);
}

namespace {

struct Clip {
  std::string id;
  int pitch_class = 0;
  std::vector<std::uint8_t> tokens;  // one code per frame
};

std::string grid_path(const std::string& run_dir, const std::string& id, int scale) {
  return run_dir + "/features/" + id + ".s" + std::to_string(scale) + ".grid";
}

// Nearest-neighbor frequency doubling, the same stretch the generator's fade
// path applies to its previous-scale output.
double blended(const Grid& hi, const Grid& lo, double alpha, long c, long f, long t) {
  return alpha * hi.at(c, f, t) + (1.0 - alpha) * lo.at(c, f / 2, t);
}

std::vector<std::int64_t> to_i64(const std::vector<int>& v) {
  return std::vector<std::int64_t>(v.begin(), v.end());
}

}  // namespace

long train_gan(const Config& cfg, const std::string& run_dir, bool resume,
               long stop_after_steps) {
  Manifest all = manifest_load(run_dir + "/manifest_all.tsv");
  Manifest train = manifest_load(run_dir + "/manifest_train.tsv");
  if (train.entries.empty()) throw std::runtime_error("train manifest is empty");

  // Classes come from the full filtered manifest so generation can target any
  // dataset pitch even when the split left it out of the training set.
  const std::vector<int> classes = manifest_pitch_classes(all);
  std::map<int, int> class_of;
  for (size_t i = 0; i < classes.size(); ++i) class_of[classes[i]] = static_cast<int>(i);

  Grid first = grid_load(grid_path(run_dir, train.entries[0].source_id, 1));
  const long L = first.frames;

  GanSettings s = GanSettings::from(cfg, static_cast<int>(classes.size()),
                                    static_cast<int>(L));

  std::vector<Clip> clips;
  clips.reserve(train.entries.size());
  for (const auto& e : train.entries) {
    const std::string tok_path = run_dir + "/tokens/" + e.source_id + ".tok";
    if (!fs::exists(tok_path))
      throw std::runtime_error("token file missing for " + e.source_id +
                               "; run encode first");
    TokenFile tf = token_file_load(tok_path);
    if (static_cast<long>(tf.tokens.size()) != L)
      throw std::runtime_error("token sequence for " + e.source_id +
                               " does not match the feature frame count");
    for (std::uint8_t t : tf.tokens)
      if (t >= s.token_classes)
        throw std::runtime_error("token out of range in " + tok_path);
    auto it = class_of.find(e.pitch);
    if (it == class_of.end())
      throw std::runtime_error("train pitch missing from manifest_all: " + e.source_id);
    clips.push_back(Clip{e.source_id, it->second, std::move(tf.tokens)});
  }
  const long n_clips = static_cast<long>(clips.size());

  Rng rng(static_cast<uint64_t>(cfg.integer("run.seed")));
  Generator gen(s, rng);
  DLocal dl(s, rng);
  DGlobal dg(s, rng);

  AdamConfig ac;
  ac.lr = cfg.real("gan.lr");
  ac.beta1 = cfg.real("gan.adam_beta1");
  ac.beta2 = cfg.real("gan.adam_beta2");
  Adam opt_g(gen.params(), ac);
  Adam opt_dl(dl.params(), ac);
  Adam opt_dg(dg.params(), ac);

  const GanWeights w = GanWeights::from(cfg);
  const long d_steps = std::max(1L, cfg.integer("gan.d_steps"));
  const long ck_interval = std::max(1L, cfg.integer("gan.checkpoint_interval"));
  const std::vector<ScalePhase> phases = progressive_schedule(cfg);

  long step = 0;
  size_t phase_idx = 0;
  long phase_iter = 0;

  fs::create_directories(run_dir + "/logs");
  fs::create_directories(run_dir + "/checkpoints");
  const std::string latest_path = run_dir + "/checkpoints/gan_latest.ck";

  if (resume) {
    Checkpoint ck = Checkpoint::load(latest_path);
    if (ck.fingerprint != cfg.fingerprint())
      throw std::runtime_error("checkpoint was written under a different config");
    if (ck.integer("meta.frames") != L)
      throw std::runtime_error("checkpoint frame count does not match the run features");
    if (ck.i64("meta.pitch_classes") != to_i64(classes))
      throw std::runtime_error("pitch classes changed since the checkpoint was written");
    step = ck.integer("meta.step");
    phase_idx = static_cast<size_t>(ck.integer("meta.phase"));
    phase_iter = ck.integer("meta.phase_iter");
    checkpoint_get_params(ck, "gan", gen.params());
    checkpoint_get_params(ck, "gan", dl.params());
    checkpoint_get_params(ck, "gan", dg.params());
    opt_g.load_state(ck.f64("opt.g"));
    opt_dl.load_state(ck.f64("opt.dl"));
    opt_dg.load_state(ck.f64("opt.dg"));
    std::uint64_t st;
    std::int64_t raw = ck.i64("meta.rng").at(0);
    std::memcpy(&st, &raw, sizeof st);
    rng.set_state(st);
  }

  auto write_checkpoint = [&](const std::string& path, int scale_now) {
    Checkpoint ck;
    ck.fingerprint = cfg.fingerprint();
    ck.put_int("meta.step", step);
    ck.put_int("meta.phase", static_cast<std::int64_t>(phase_idx));
    ck.put_int("meta.phase_iter", phase_iter);
    ck.put_int("meta.frames", L);
    ck.put_int("meta.scale", scale_now);
    ck.put_i64("meta.pitch_classes", to_i64(classes));
    std::uint64_t st = rng.state();
    std::int64_t raw;
    std::memcpy(&raw, &st, sizeof raw);
    ck.put_i64("meta.rng", {raw});
    ck.put_f64("opt.g", opt_g.serialize_state());
    ck.put_f64("opt.dl", opt_dl.serialize_state());
    ck.put_f64("opt.dg", opt_dg.serialize_state());
    checkpoint_put_params(ck, "gan", gen.params());
    checkpoint_put_params(ck, "gan", dl.params());
    checkpoint_put_params(ck, "gan", dg.params());
    ck.save(path);
  };

  std::ofstream log(run_dir + "/logs/train.tsv",
                    resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + run_dir + "/logs/train.tsv");
  if (!resume)
    log << "step\tscale\talpha\td_total\tg_total\tw_local\tw_global\tgp_local\tgp_"
           "global\tce_token\tce_pitch\n";

  // Per-scale cache of every training clip's grid. Only the active scale and,
  // during fade-in, the one below it stay resident.
  std::map<int, std::vector<Grid>> pyramid;
  auto load_scale = [&](int sc) {
    if (pyramid.count(sc)) return;
    std::vector<Grid> grids;
    grids.reserve(clips.size());
    for (const auto& c : clips) {
      Grid g = grid_load(grid_path(run_dir, c.id, sc));
      if (g.channels != 2 || g.freq != s.freq_at(sc) || g.frames != L)
        throw std::runtime_error("feature grid has unexpected geometry: " +
                                 grid_path(run_dir, c.id, sc));
      grids.push_back(std::move(g));
    }
    pyramid.emplace(sc, std::move(grids));
  };

  while (phase_idx < phases.size()) {
    const ScalePhase& ph = phases[phase_idx];
    if (phase_iter < ph.iters) {
      load_scale(ph.scale);
      if (ph.scale > 1 && phase_iter < ph.fade_iters) load_scale(ph.scale - 1);
      for (auto it = pyramid.begin(); it != pyramid.end();)
        it = it->first < ph.scale - 1 ? pyramid.erase(it) : std::next(it);
    }

    while (phase_iter < ph.iters) {
      if (stop_after_steps >= 0 && step >= stop_after_steps) {
        write_checkpoint(latest_path, ph.scale);
        return step;
      }
      const double alpha = fade_alpha(ph, phase_iter);
      const long B = ph.batch;
      const long F = s.freq_at(ph.scale);

      std::vector<long> pick(static_cast<size_t>(B));
      for (long b = 0; b < B; ++b) pick[static_cast<size_t>(b)] = rng.uniform_int(n_clips);

      Tensor real({B, 2, F, L});
      std::vector<int> real_pitch(static_cast<size_t>(B));
      std::vector<std::uint8_t> real_tokens;
      real_tokens.reserve(static_cast<size_t>(B * L));
      const std::vector<Grid>& hi_grids = pyramid.at(ph.scale);
      const std::vector<Grid>* lo_grids =
          alpha < 1.0 ? &pyramid.at(ph.scale - 1) : nullptr;
      for (long b = 0; b < B; ++b) {
        const Clip& c = clips[static_cast<size_t>(pick[static_cast<size_t>(b)])];
        const Grid& hi = hi_grids[static_cast<size_t>(pick[static_cast<size_t>(b)])];
        for (long ch = 0; ch < 2; ++ch)
          for (long f = 0; f < F; ++f)
            for (long t = 0; t < L; ++t) {
              double v = lo_grids
                             ? blended(hi, (*lo_grids)[static_cast<size_t>(
                                               pick[static_cast<size_t>(b)])],
                                       alpha, ch, f, t)
                             : hi.at(ch, f, t);
              real.at(((b * 2 + ch) * F + f) * L + t) = v;
            }
        real_pitch[static_cast<size_t>(b)] = c.pitch_class;
        real_tokens.insert(real_tokens.end(), c.tokens.begin(), c.tokens.end());
      }

      std::vector<std::vector<double>> z(static_cast<size_t>(B),
                                         std::vector<double>(static_cast<size_t>(s.z_dim)));
      for (long b = 0; b < B; ++b)
        for (int k = 0; k < s.z_dim; ++k) z[static_cast<size_t>(b)][static_cast<size_t>(k)] = rng.normal();
      std::vector<int> fake_pitch(static_cast<size_t>(B));
      for (long b = 0; b < B; ++b)
        fake_pitch[static_cast<size_t>(b)] =
            static_cast<int>(rng.uniform_int(static_cast<long>(classes.size())));
      std::vector<std::vector<std::uint8_t>> fake_token_rows(static_cast<size_t>(B));
      for (long b = 0; b < B; ++b)
        fake_token_rows[static_cast<size_t>(b)] =
            clips[static_cast<size_t>(rng.uniform_int(n_clips))].tokens;

      GanBatch batch;
      batch.real = real;
      batch.cond = assemble_cond_batch(s, z, fake_pitch, fake_token_rows);
      batch.real_pitch = real_pitch;
      batch.real_tokens = real_tokens;
      batch.fake_pitch = fake_pitch;
      batch.fake_tokens.clear();
      for (const auto& row : fake_token_rows)
        batch.fake_tokens.insert(batch.fake_tokens.end(), row.begin(), row.end());

      auto check_finite = [&](const GanLossReport& r) {
        if (!std::isfinite(r.d_total) || !std::isfinite(r.g_total))
          throw std::runtime_error("training diverged: non-finite loss at step " +
                                   std::to_string(step + 1));
      };

      // Critic updates first, then one generator update, each on a fresh
      // forward pass: Adam rewrites leaf values in place, so a graph built
      // before a step cannot be backpropagated after it.
      for (long k = 0; k < d_steps; ++k) {
        GanLossReport rep = gan_losses(gen, dl, dg, batch, ph.scale, alpha, w, rng);
        check_finite(rep);
        dl.params().zero_grad();
        dg.params().zero_grad();
        ad::backward(rep.d_total_var);
        opt_dl.step(dl.params());
        opt_dg.step(dg.params());
      }
      GanLossReport rep = gan_losses(gen, dl, dg, batch, ph.scale, alpha, w, rng);
      check_finite(rep);
      gen.params().zero_grad();
      ad::backward(rep.g_total_var);
      opt_g.step(gen.params());

      ++step;
      ++phase_iter;

      char line[512];
      std::snprintf(line, sizeof line,
                    "%ld\t%d\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n",
                    step, ph.scale, alpha, rep.d_total, rep.g_total, rep.w_local,
                    rep.w_global, rep.gp_local, rep.gp_global, rep.ce_token, rep.ce_pitch);
      log << line;
      log.flush();

      if (step % ck_interval == 0) write_checkpoint(latest_path, ph.scale);
    }
    ++phase_idx;
    phase_iter = 0;
  }

  const int final_scale = phases.empty() ? 1 : phases.back().scale;
  write_checkpoint(run_dir + "/checkpoints/gan.ck", final_scale);
  write_checkpoint(latest_path, final_scale);
  return step;
}

LoadedGan load_generator(const Config& cfg, const std::string& ckpt_path) {
  Checkpoint ck = Checkpoint::load(ckpt_path);
  if (ck.fingerprint != cfg.fingerprint())
    throw std::runtime_error("checkpoint was written under a different config");

  LoadedGan out;
  const std::vector<std::int64_t>& raw_classes = ck.i64("meta.pitch_classes");
  out.pitch_classes.assign(raw_classes.begin(), raw_classes.end());
  const long frames = ck.integer("meta.frames");
  out.settings = GanSettings::from(cfg, static_cast<int>(out.pitch_classes.size()),
                                   static_cast<int>(frames));
  Rng rng(static_cast<uint64_t>(cfg.integer("run.seed")));
  out.gen = std::make_unique<Generator>(out.settings, rng);
  checkpoint_get_params(ck, "gan", out.gen->params());
  out.scale = static_cast<int>(ck.integer("meta.scale"));
  out.step = ck.integer("meta.step");
  return out;
}

}  // namespace tokensynth
