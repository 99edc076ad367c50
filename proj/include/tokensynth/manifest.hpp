#pragma once

#include <string>
#include <vector>

namespace tokensynth {

struct ManifestEntry {
  std::string source_id;
  std::string path;
  int pitch = -1;
  std::string family;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::string split_tag;  // "", "train", or "test"
};

// TSV, one entry per line: source_id<TAB>path<TAB>pitch<TAB>family.
Manifest manifest_load(const std::string& path);
void manifest_save(const Manifest& m, const std::string& path);

// Scans a directory for .wav files named like "<family>_...-<pitch>-<vel>.wav"
// and builds entries from the names. Non-conforming names are skipped.
Manifest manifest_scan_dir(const std::string& dir);

// Keeps entries with pitch_min <= pitch <= pitch_max. Throws on an inverted
// range or an empty result.
Manifest filter_manifest(const Manifest& m, int pitch_min, int pitch_max);

// Deterministic shuffle-split; train gets round(n * train_fraction) entries.
std::pair<Manifest, Manifest> split_manifest(const Manifest& m, double train_fraction,
                                             std::uint64_t seed);

// Distinct pitch values, ascending.
std::vector<int> manifest_pitch_classes(const Manifest& m);

// Distinct family names, ascending.
std::vector<std::string> manifest_families(const Manifest& m);

}  // namespace tokensynth
