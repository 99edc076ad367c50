#pragma once

#include "tokensynth/modules.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace tokensynth {

// Binary checkpoint container: named typed blocks plus the config fingerprint
// of the run that wrote it. The file ends with a checksum over everything
// before it so truncation or corruption fails loudly instead of loading
// garbage.
class Checkpoint {
 public:
  std::uint64_t fingerprint = 0;

  void put_f64(const std::string& name, std::vector<double> v);
  void put_i64(const std::string& name, std::vector<std::int64_t> v);
  void put_u8(const std::string& name, std::vector<std::uint8_t> v);

  bool has(const std::string& name) const;
  const std::vector<double>& f64(const std::string& name) const;
  const std::vector<std::int64_t>& i64(const std::string& name) const;
  const std::vector<std::uint8_t>& u8(const std::string& name) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  // Convenience for scalar blocks.
  void put_scalar(const std::string& name, double v) { put_f64(name, {v}); }
  double scalar(const std::string& name) const { return f64(name).at(0); }
  void put_int(const std::string& name, std::int64_t v) { put_i64(name, {v}); }
  std::int64_t integer(const std::string& name) const { return i64(name).at(0); }

 private:
  std::map<std::string, std::vector<double>> f64_;
  std::map<std::string, std::vector<std::int64_t>> i64_;
  std::map<std::string, std::vector<std::uint8_t>> u8_;
  std::vector<std::string> order_;
};

// Parameter blocks are stored one per registered parameter, in registry
// order, under "<prefix>.<param name>".
void checkpoint_put_params(Checkpoint& ck, const std::string& prefix, const ParamStore& ps);
void checkpoint_get_params(const Checkpoint& ck, const std::string& prefix, ParamStore& ps);

}  // namespace tokensynth
