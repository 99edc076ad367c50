#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace tokensynth {

// Flat key=value run configuration. All keys live in a fixed schema with
// defaults; presets overlay defaults; a config file overlays the preset;
// --set overrides overlay everything. Unknown keys are errors anywhere.
class Config {
 public:
  // preset: "desk" or "full".
  static Config preset(const std::string& name);
  static Config from_file(const std::string& path, const std::string& preset_name);

  void set(const std::string& key, const std::string& value);
  // Parses "key=value".
  void set_kv(const std::string& assignment);

  const std::string& str(const std::string& key) const;
  long integer(const std::string& key) const;
  double real(const std::string& key) const;
  std::vector<long> int_list(const std::string& key) const;

  // Resolved config as a valid config file; parsing it back reproduces the
  // same resolved values.
  std::string dump() const;
  void save(const std::string& path) const;

  // FNV-1a over the sorted resolved key=value pairs.
  std::uint64_t fingerprint() const;

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace tokensynth
