#include "tokensynth/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tokensynth {

namespace {

struct SchemaEntry {
  const char* key;
  const char* full_default;
  const char* desk_default;  // nullptr = same as full
};

// The full preset mirrors the published training setup; desk shrinks model,
// batch, and iteration sizes so the whole pipeline runs on one core in
// minutes while exercising identical code paths.
const SchemaEntry kSchema[] = {
    {"run.seed", "1", nullptr},
    {"audio.rate", "16000", nullptr},
    {"audio.duration_s", "1.0", nullptr},
    {"stft.fft_size", "2048", nullptr},
    {"stft.overlap", "0.75", nullptr},
    {"stft.floor_db", "-80", nullptr},
    {"cqt.octaves", "6", nullptr},
    {"cqt.bins_per_octave", "24", nullptr},
    {"cqt.f_min", "32.70319566257483", nullptr},
    {"data.pitch_min", "44", nullptr},
    {"data.pitch_max", "70", nullptr},
    {"data.train_fraction", "0.9", nullptr},
    {"vqcpc.codebook_size", "16", nullptr},
    {"vqcpc.code_dim", "32", nullptr},
    {"vqcpc.enc_channels", "512,512,256", "64,64,32"},
    {"vqcpc.gru_hidden", "256", "64"},
    {"vqcpc.gru_layers", "2", nullptr},
    {"vqcpc.context_dim", "512", "64"},
    {"vqcpc.pred_steps", "5", nullptr},
    {"vqcpc.negatives", "16", nullptr},
    // intra draws negatives from the same excerpt; dataset draws them from
    // other sequences in the batch (ablation alternative, untuned).
    {"vqcpc.negative_mode", "intra", nullptr},
    // 1 shares one candidate set across the K prediction steps at each t.
    {"vqcpc.shared_negatives", "0", nullptr},
    {"vqcpc.commit_beta", "0.25", nullptr},
    {"vqcpc.lr", "0.0002", nullptr},
    {"vqcpc.steps", "50000", "2000"},
    {"vqcpc.batch", "32", nullptr},
    {"vqcpc.warmup_batches", "4", nullptr},
    {"vqcpc.log_interval", "50", nullptr},
    {"gan.latent_dim", "128", "16"},
    // 0 = derive the one-hot size from the distinct pitches in the manifest.
    {"gan.pitch_classes", "0", nullptr},
    {"gan.maps", "512,256,256,256,256,128", "16,16,16,16,12,8"},
    {"gan.batches", "30,30,20,20,12,12", "4,4,3,3,2,2"},
    {"gan.iters_per_scale", "200000", nullptr},
    {"gan.iter_divisor", "1", "1000"},
    {"gan.max_scales", "6", nullptr},
    {"gan.lr", "0.001", nullptr},
    {"gan.adam_beta1", "0.0", nullptr},
    {"gan.adam_beta2", "0.99", nullptr},
    {"gan.lambda_gp", "10.0", nullptr},
    {"gan.w_ce", "1.0", nullptr},
    {"gan.drift_eps", "0.001", nullptr},
    {"gan.d_steps", "1", nullptr},
    {"gan.dense_hidden", "256", "32"},
    {"gan.fade_fraction", "0.5", nullptr},
    {"gan.checkpoint_interval", "5000", "100"},
    {"eval.embed_dim", "128", nullptr},
    {"eval.steps", "20000", "300"},
    {"eval.batch", "16", nullptr},
    {"eval.lr", "0.001", nullptr},
    {"eval.n_samples", "25000", "48"},
};

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::preset(const std::string& name) {
  if (name != "desk" && name != "full")
    throw std::runtime_error("unknown preset: " + name + " (expected desk or full)");
  Config c;
  for (const auto& e : kSchema) {
    const char* v = (name == "desk" && e.desk_default) ? e.desk_default : e.full_default;
    c.values_[e.key] = v;
    c.order_.push_back(e.key);
  }
  return c;
}

Config Config::from_file(const std::string& path, const std::string& preset_name) {
  Config c = preset(preset_name);
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::string line;
  long lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("unknown config key: " + key);
  it->second = value;
}

void Config::set_kv(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::runtime_error("override must be key=value: " + assignment);
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& Config::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("unknown config key: " + key);
  return it->second;
}

long Config::integer(const std::string& key) const {
  const std::string& v = str(key);
  size_t pos = 0;
  long out = 0;
  try {
    out = std::stol(v, &pos);
  } catch (...) {
    throw std::runtime_error("config " + key + ": not an integer: " + v);
  }
  if (pos != v.size()) throw std::runtime_error("config " + key + ": not an integer: " + v);
  return out;
}

double Config::real(const std::string& key) const {
  const std::string& v = str(key);
  size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (...) {
    throw std::runtime_error("config " + key + ": not a number: " + v);
  }
  if (pos != v.size()) throw std::runtime_error("config " + key + ": not a number: " + v);
  return out;
}

std::vector<long> Config::int_list(const std::string& key) const {
  const std::string& v = str(key);
  std::vector<long> out;
  std::istringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    try {
      out.push_back(std::stol(part));
    } catch (...) {
      throw std::runtime_error("config " + key + ": not an integer list: " + v);
    }
  }
  if (out.empty()) throw std::runtime_error("config " + key + ": empty list");
  return out;
}

std::string Config::dump() const {
  std::ostringstream os;
  for (const auto& k : order_) os << k << " = " << values_.at(k) << "\n";
  return os.str();
}

void Config::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write config: " + path);
    f << dump();
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move config into place: " + path);
}

std::uint64_t Config::fingerprint() const {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [k, v] : values_) {  // std::map iterates sorted
    mix(k);
    mix("=");
    mix(v);
    mix("\n");
  }
  return h;
}

}  // namespace tokensynth
