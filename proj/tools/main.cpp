#include "CLI11.hpp"

#include "tokensynth/config.hpp"
#include "tokensynth/manifest.hpp"
#include "tokensynth/pipeline.hpp"
#include "tokensynth/train.hpp"
#include "tokensynth/vqcpc.hpp"

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace {

using tokensynth::Config;

struct CommonOpts {
  std::string config_path;
  std::string preset = "desk";
  std::vector<std::string> sets;
  std::string run_dir;
  long long seed = -1;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool need_run_dir) {
  cmd->add_option("--config", o.config_path, "config file to load over the preset")
      ->check(CLI::ExistingFile);
  cmd->add_option("--preset", o.preset, "base preset: desk or full")
      ->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--set", o.sets, "override, key=value (repeatable)");
  auto* rd = cmd->add_option("--run-dir", o.run_dir, "run directory");
  if (need_run_dir) rd->required();
  cmd->add_option("--seed", o.seed, "overrides run.seed");
  cmd->add_flag("--force", o.force, "redo work whose outputs already exist");
}

// Priority: explicit --config file, else the snapshot prepare wrote into the
// run dir, else the preset. --set and --seed land on top either way.
Config resolve_config(const CommonOpts& o, bool prefer_snapshot) {
  Config cfg = Config::preset(o.preset);
  if (!o.config_path.empty()) {
    cfg = Config::from_file(o.config_path, o.preset);
  } else if (prefer_snapshot && !o.run_dir.empty() &&
             std::filesystem::exists(o.run_dir + "/config.txt")) {
    cfg = Config::from_file(o.run_dir + "/config.txt", o.preset);
  }
  for (const auto& kv : o.sets) cfg.set_kv(kv);
  if (o.seed >= 0) cfg.set("run.seed", std::to_string(o.seed));
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"token-conditioned progressive spectrogram synthesis"};
  app.require_subcommand(1);

  CommonOpts prep_o, tv_o, enc_o, tg_o, gen_o, ev_o, dump_o;
  std::string audio_dir;
  int workers = 0;
  auto* prepare = app.add_subcommand(
      "prepare", "scan an audio directory and write manifests and feature grids");
  add_common(prepare, prep_o, true);
  prepare->add_option("--audio-dir", audio_dir, "directory of wav files")
      ->required()
      ->check(CLI::ExistingDirectory);
  prepare->add_option("--workers", workers, "feature extraction threads (0 = auto)");

  auto* train_vqcpc = app.add_subcommand("train-vqcpc", "train the token encoder");
  add_common(train_vqcpc, tv_o, true);

  auto* encode = app.add_subcommand("encode", "write token files for every clip");
  add_common(encode, enc_o, true);

  bool resume = false;
  long long stop_after = -1;
  auto* train_gan = app.add_subcommand("train-gan", "run the progressive adversarial loop");
  add_common(train_gan, tg_o, true);
  train_gan->add_flag("--resume", resume, "continue from checkpoints/gan_latest.ck");
  train_gan->add_option("--stop-after", stop_after,
                        "pause once the global step counter reaches N");

  tokensynth::GenerateRequest req;
  long long z_seed = 0;
  auto* generate = app.add_subcommand("generate", "synthesize one clip from the trained model");
  add_common(generate, gen_o, true);
  generate->add_option("--pitch", req.pitch, "midi pitch, must be a trained class")->required();
  generate->add_option("--duration", req.duration_s, "seconds (default audio.duration_s)");
  generate->add_option("--tokens", req.token_file, "token file to condition on")
      ->check(CLI::ExistingFile);
  generate->add_option("--ref-wav", req.ref_wav, "extract conditioning tokens from this clip")
      ->check(CLI::ExistingFile);
  generate->add_option("--const-token", req.const_token, "condition every frame on one token");
  generate->add_option("--z-seed", z_seed, "noise seed");
  generate->add_option("--out", req.out_path, "output wav path (default run-dir/generated.wav)");

  auto* evaluate = app.add_subcommand("evaluate", "score the run and write metrics.tsv");
  add_common(evaluate, ev_o, true);

  auto* dump = app.add_subcommand("dump-config", "print the resolved config");
  add_common(dump, dump_o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (prepare->parsed()) {
      const Config cfg = resolve_config(prep_o, false);
      const tokensynth::PrepareReport rep =
          tokensynth::prepare_run(cfg, audio_dir, prep_o.run_dir, prep_o.force, workers);
      std::cout << "prepared " << rep.clips << " clips (" << rep.train_clips << " train, "
                << rep.test_clips << " test), " << rep.frames << " frames each\n";
    } else if (train_vqcpc->parsed()) {
      const Config cfg = resolve_config(tv_o, true);
      const std::string ck = tv_o.run_dir + "/checkpoints/vqcpc.ck";
      if (std::filesystem::exists(ck) && !tv_o.force)
        throw std::runtime_error("encoder already trained: " + ck + " (use --force to redo)");
      tokensynth::train_vqcpc(cfg, tv_o.run_dir);
      std::cout << "wrote " << ck << "\n";
    } else if (encode->parsed()) {
      const Config cfg = resolve_config(enc_o, true);
      const tokensynth::Manifest all =
          tokensynth::manifest_load(enc_o.run_dir + "/manifest_all.tsv");
      if (!all.entries.empty() &&
          std::filesystem::exists(enc_o.run_dir + "/tokens/" + all.entries[0].source_id +
                                  ".tok") &&
          !enc_o.force)
        throw std::runtime_error("tokens already extracted in " + enc_o.run_dir +
                                 " (use --force to redo)");
      const int n = tokensynth::extract_tokens(cfg, enc_o.run_dir, all);
      std::cout << "wrote " << n << " token files\n";
    } else if (train_gan->parsed()) {
      const Config cfg = resolve_config(tg_o, true);
      const std::string ck = tg_o.run_dir + "/checkpoints/gan.ck";
      if (std::filesystem::exists(ck) && !resume && !tg_o.force)
        throw std::runtime_error("generator already trained: " + ck + " (use --force to redo)");
      const long step = tokensynth::train_gan(cfg, tg_o.run_dir, resume, stop_after);
      std::cout << "stopped at step " << step << "\n";
    } else if (generate->parsed()) {
      const Config cfg = resolve_config(gen_o, true);
      req.z_seed = static_cast<std::uint64_t>(z_seed);
      req.force = gen_o.force;
      const long n = tokensynth::generate_audio(cfg, gen_o.run_dir, req);
      const std::string out =
          req.out_path.empty() ? gen_o.run_dir + "/generated.wav" : req.out_path;
      std::cout << "wrote " << out << " (" << n << " samples)\n";
    } else if (evaluate->parsed()) {
      const Config cfg = resolve_config(ev_o, true);
      std::cout << tokensynth::evaluate_and_write(cfg, ev_o.run_dir, ev_o.force);
    } else if (dump->parsed()) {
      const Config cfg = resolve_config(dump_o, true);
      std::cout << cfg.dump();
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
