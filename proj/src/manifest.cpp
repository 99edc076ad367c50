#include "tokensynth/manifest.hpp"

#include "tokensynth/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tokensynth {

Manifest manifest_load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest: " + path);
  Manifest m;
  std::string line;
  long lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestEntry e;
    std::string pitch_str;
    if (!std::getline(ss, e.source_id, '\t') || !std::getline(ss, e.path, '\t') ||
        !std::getline(ss, pitch_str, '\t') || !std::getline(ss, e.family))
      throw std::runtime_error("malformed manifest line " + std::to_string(lineno) + ": " +
                               path);
    e.pitch = std::stoi(pitch_str);
    m.entries.push_back(std::move(e));
  }
  return m;
}

void manifest_save(const Manifest& m, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write manifest: " + path);
    for (const auto& e : m.entries)
      f << e.source_id << '\t' << e.path << '\t' << e.pitch << '\t' << e.family << '\n';
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move manifest into place: " + path);
}

Manifest manifest_scan_dir(const std::string& dir) {
  Manifest m;
  std::vector<std::string> names;
  for (const auto& de : std::filesystem::directory_iterator(dir)) {
    if (!de.is_regular_file()) continue;
    const std::string name = de.path().filename().string();
    if (name.size() < 5 || name.substr(name.size() - 4) != ".wav") continue;
    names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  for (const auto& name : names) {
    const std::string stem = name.substr(0, name.size() - 4);
    // "<instrument>-<pitch>-<velocity>"; instrument's leading token is the family.
    const size_t d2 = stem.rfind('-');
    if (d2 == std::string::npos) continue;
    const size_t d1 = stem.rfind('-', d2 - 1);
    if (d1 == std::string::npos) continue;
    const std::string pitch_str = stem.substr(d1 + 1, d2 - d1 - 1);
    int pitch = -1;
    try {
      pitch = std::stoi(pitch_str);
    } catch (...) {
      continue;
    }
    ManifestEntry e;
    e.source_id = stem;
    e.path = (std::filesystem::path(dir) / name).string();
    e.pitch = pitch;
    const std::string inst = stem.substr(0, d1);
    const size_t us = inst.find('_');
    e.family = us == std::string::npos ? inst : inst.substr(0, us);
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest filter_manifest(const Manifest& m, int pitch_min, int pitch_max) {
  if (pitch_min > pitch_max)
    throw std::runtime_error("filter_manifest: pitch_min " + std::to_string(pitch_min) +
                             " > pitch_max " + std::to_string(pitch_max));
  Manifest out;
  out.split_tag = m.split_tag;
  for (const auto& e : m.entries)
    if (e.pitch >= pitch_min && e.pitch <= pitch_max) out.entries.push_back(e);
  if (out.entries.empty())
    throw std::runtime_error("filter_manifest: no entries in pitch range [" +
                             std::to_string(pitch_min) + "," + std::to_string(pitch_max) + "]");
  return out;
}

std::pair<Manifest, Manifest> split_manifest(const Manifest& m, double train_fraction,
                                             std::uint64_t seed) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw std::runtime_error("split_manifest: train_fraction must be in (0,1)");
  std::vector<size_t> order(m.entries.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const long n_train = std::lround(static_cast<double>(m.entries.size()) * train_fraction);
  Manifest train, test;
  train.split_tag = "train";
  test.split_tag = "test";
  for (size_t i = 0; i < order.size(); ++i)
    (static_cast<long>(i) < n_train ? train : test).entries.push_back(m.entries[order[i]]);
  return {train, test};
}

std::vector<int> manifest_pitch_classes(const Manifest& m) {
  std::set<int> s;
  for (const auto& e : m.entries) s.insert(e.pitch);
  return {s.begin(), s.end()};
}

std::vector<std::string> manifest_families(const Manifest& m) {
  std::set<std::string> s;
  for (const auto& e : m.entries) s.insert(e.family);
  return {s.begin(), s.end()};
}

}  // namespace tokensynth
