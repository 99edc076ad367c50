#include "tokensynth/pipeline.hpp"

#include "tokensynth/cqt.hpp"
#include "tokensynth/manifest.hpp"
#include "tokensynth/metrics.hpp"
#include "tokensynth/spectro.hpp"
#include "tokensynth/train.hpp"
#include "tokensynth/vqcpc.hpp"
#include "tokensynth/wav.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

namespace tokensynth {

namespace fs = std::filesystem;

namespace {

StftConfig stft_config_of(const Config& cfg) {
  StftConfig st;
  st.fft_size = cfg.integer("stft.fft_size");
  st.overlap = cfg.real("stft.overlap");
  st.floor_db = cfg.real("stft.floor_db");
  return st;
}

CqtConfig cqt_config_of(const Config& cfg, long hop) {
  CqtConfig cq;
  cq.octaves = cfg.integer("cqt.octaves");
  cq.bins_per_octave = cfg.integer("cqt.bins_per_octave");
  cq.hop = hop;
  cq.f_min = cfg.real("cqt.f_min");
  return cq;
}

}  // namespace

long frames_for_duration(double duration_s, long rate, long hop) {
  if (duration_s <= 0) throw std::invalid_argument("duration must be positive");
  const long raw =
      std::llround(duration_s * static_cast<double>(rate) / static_cast<double>(hop));
  const long l = std::max<long>(raw, 1);
  return (l + 15) / 16 * 16;
}

PrepareReport prepare_run(const Config& cfg, const std::string& audio_dir,
                          const std::string& run_dir, bool force, int workers) {
  if (!fs::is_directory(audio_dir))
    throw std::runtime_error("audio directory not found: " + audio_dir);
  if (fs::exists(run_dir + "/manifest_all.tsv") && !force)
    throw std::runtime_error("run directory already prepared: " + run_dir +
                             " (use --force to redo)");

  Manifest all = manifest_scan_dir(audio_dir);
  if (all.entries.empty())
    throw std::runtime_error("no usable wav files in " + audio_dir);
  all = filter_manifest(all, static_cast<int>(cfg.integer("data.pitch_min")),
                        static_cast<int>(cfg.integer("data.pitch_max")));
  auto [train, test] = split_manifest(all, cfg.real("data.train_fraction"),
                                      static_cast<std::uint64_t>(cfg.integer("run.seed")));

  fs::create_directories(run_dir + "/features");
  manifest_save(all, run_dir + "/manifest_all.tsv");
  train.split_tag = "train";
  manifest_save(train, run_dir + "/manifest_train.tsv");
  test.split_tag = "test";
  manifest_save(test, run_dir + "/manifest_test.tsv");
  cfg.save(run_dir + "/config.txt");

  const StftConfig st = stft_config_of(cfg);
  const CqtConfig cq = cqt_config_of(cfg, st.hop());
  const long rate = cfg.integer("audio.rate");
  const double dur = cfg.real("audio.duration_s");
  const long L = frames_for_duration(dur, rate, st.hop());
  const int max_scale = static_cast<int>(cfg.integer("gan.max_scales"));

  // Clips are independent, so a worker pool just races over the index. The
  // first failure stops new work and is rethrown after the join.
  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex err_mu;
  std::exception_ptr first_err;
  auto work = [&]() {
    for (;;) {
      if (failed.load()) return;
      const size_t i = next.fetch_add(1);
      if (i >= all.entries.size()) return;
      try {
        const ManifestEntry& en = all.entries[i];
        AudioClip clip = load_clip(en.path, rate, dur);
        Grid spec = reconcile_frames(stft_magif(clip, st), L);
        grid_save(spec, run_dir + "/features/" + en.source_id + ".s" +
                            std::to_string(max_scale) + ".grid");
        for (int sc = max_scale - 1; sc >= 1; --sc) {
          spec = downscale_freq(spec, 2);
          grid_save(spec,
                    run_dir + "/features/" + en.source_id + ".s" + std::to_string(sc) + ".grid");
        }
        grid_save(reconcile_frames(cqt(clip, cq), L),
                  run_dir + "/features/" + en.source_id + ".cqt.grid");
      } catch (...) {
        std::lock_guard<std::mutex> g(err_mu);
        if (!first_err) first_err = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  size_t n_workers = workers > 0 ? static_cast<size_t>(workers)
                                 : std::max(1u, std::thread::hardware_concurrency());
  n_workers = std::min(n_workers, all.entries.size());
  std::vector<std::thread> pool;
  for (size_t w = 1; w < n_workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (first_err) std::rethrow_exception(first_err);

  PrepareReport rep;
  rep.clips = static_cast<int>(all.entries.size());
  rep.train_clips = static_cast<int>(train.entries.size());
  rep.test_clips = static_cast<int>(test.entries.size());
  rep.frames = L;
  return rep;
}

long generate_audio(const Config& cfg, const std::string& run_dir, const GenerateRequest& req) {
  const int sources = (req.token_file.empty() ? 0 : 1) + (req.ref_wav.empty() ? 0 : 1) +
                      (req.const_token >= 0 ? 1 : 0);
  if (sources != 1)
    throw std::invalid_argument(
        "choose exactly one token source: --tokens, --ref-wav, or --const-token");
  const std::string out = req.out_path.empty() ? run_dir + "/generated.wav" : req.out_path;
  if (fs::exists(out) && !req.force)
    throw std::runtime_error("output exists: " + out + " (use --force to overwrite)");

  std::string ck = run_dir + "/checkpoints/gan.ck";
  if (!fs::exists(ck)) ck = run_dir + "/checkpoints/gan_latest.ck";
  if (!fs::exists(ck))
    throw std::runtime_error("no GAN checkpoint in " + run_dir + "; run train-gan first");
  LoadedGan lg = load_generator(cfg, ck);
  const GanSettings& s = lg.settings;

  const StftConfig st = stft_config_of(cfg);
  const long rate = cfg.integer("audio.rate");
  const double dur = req.duration_s > 0 ? req.duration_s : cfg.real("audio.duration_s");
  const long frames = frames_for_duration(dur, rate, st.hop());

  const auto cls = std::find(lg.pitch_classes.begin(), lg.pitch_classes.end(), req.pitch);
  if (cls == lg.pitch_classes.end())
    throw std::runtime_error("pitch " + std::to_string(req.pitch) +
                             " is not among the trained pitch classes");
  const int pitch_class = static_cast<int>(cls - lg.pitch_classes.begin());

  std::vector<std::uint8_t> tokens;
  if (!req.token_file.empty()) {
    tokens = token_file_load(req.token_file).tokens;
  } else if (!req.ref_wav.empty()) {
    AudioClip clip = load_clip(req.ref_wav, rate, dur);
    VqcpcModel enc = load_vqcpc_model(cfg, run_dir + "/checkpoints/vqcpc.ck");
    Grid g = reconcile_frames(cqt(clip, cqt_config_of(cfg, st.hop())), frames);
    tokens = tokenize_features(enc, cqt_to_features(g, st.floor_db));
  } else {
    tokens.assign(static_cast<size_t>(frames), static_cast<std::uint8_t>(req.const_token));
  }
  if (tokens.empty()) throw std::runtime_error("token source is empty");
  for (std::uint8_t t : tokens)
    if (t >= s.token_classes)
      throw std::runtime_error("token " + std::to_string(int(t)) +
                               " is out of range for the trained codebook");
  tokens = resample_tokens(tokens, frames);

  Rng zrng(req.z_seed);
  std::vector<std::vector<double>> z(1, std::vector<double>(static_cast<size_t>(s.z_dim)));
  for (auto& v : z[0]) v = zrng.normal();
  Tensor cond = assemble_cond_batch(s, z, {pitch_class}, {tokens});

  ad::NoGradGuard ng;
  ad::Var outv = lg.gen->forward(ad::constant(cond), lg.scale, 1.0);
  const long fs0 = s.freq_at(lg.scale);
  Grid spec(2, fs0, frames);
  std::copy(outv.value().data(), outv.value().data() + 2 * fs0 * frames, spec.values.begin());

  // A mid-ladder checkpoint synthesizes at reduced height; climb to the
  // analysis height by row repetition before inversion.
  while (spec.freq < s.full_freq) {
    Grid up(2, spec.freq * 2, frames);
    for (long c = 0; c < 2; ++c)
      for (long f = 0; f < up.freq; ++f)
        for (long t = 0; t < frames; ++t) up.at(c, f, t) = spec.at(c, f / 2, t);
    spec = std::move(up);
  }
  if (spec.freq != s.full_freq)
    throw std::runtime_error("checkpoint resolution does not divide the analysis height");

  std::vector<double> samples = invert_magif(spec, st);
  const long want = std::llround(dur * static_cast<double>(rate));
  if (static_cast<long>(samples.size()) > want) samples.resize(static_cast<size_t>(want));

  const fs::path parent = fs::path(out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  wav_write(out, rate, samples);
  return static_cast<long>(samples.size());
}

std::string evaluate_and_write(const Config& cfg, const std::string& run_dir, bool force) {
  const std::string path = run_dir + "/metrics.tsv";
  if (fs::exists(path) && !force)
    throw std::runtime_error("metrics already written: " + path + " (use --force to redo)");
  MetricReport rep = evaluate_run(cfg, run_dir);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << metric_report_tsv(rep);
  if (!f) throw std::runtime_error("write failed for " + path);
  return metric_report_text(rep);
}

}  // namespace tokensynth
