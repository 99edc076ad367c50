#include "tokensynth/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tokensynth {

namespace {

constexpr char kMagic[4] = {'T', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

enum Dtype : std::uint8_t { kF64 = 0, kI64 = 1, kU8 = 2 };

void append_u32(std::vector<std::uint8_t>& b, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((x >> (8 * i)) & 0xFF));
}

void append_u64(std::vector<std::uint8_t>& b, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((x >> (8 * i)) & 0xFF));
}

std::uint32_t read_u32(const std::uint8_t* p) {
  std::uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return x;
}

std::uint64_t read_u64(const std::uint8_t* p) {
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return x;
}

std::uint64_t fnv1a(const std::uint8_t* p, size_t n) {
  std::uint64_t h = 14695981039346656037ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void Checkpoint::put_f64(const std::string& name, std::vector<double> v) {
  if (has(name)) throw std::runtime_error("checkpoint: duplicate block " + name);
  f64_[name] = std::move(v);
  order_.push_back(name);
}

void Checkpoint::put_i64(const std::string& name, std::vector<std::int64_t> v) {
  if (has(name)) throw std::runtime_error("checkpoint: duplicate block " + name);
  i64_[name] = std::move(v);
  order_.push_back(name);
}

void Checkpoint::put_u8(const std::string& name, std::vector<std::uint8_t> v) {
  if (has(name)) throw std::runtime_error("checkpoint: duplicate block " + name);
  u8_[name] = std::move(v);
  order_.push_back(name);
}

bool Checkpoint::has(const std::string& name) const {
  return f64_.count(name) || i64_.count(name) || u8_.count(name);
}

const std::vector<double>& Checkpoint::f64(const std::string& name) const {
  auto it = f64_.find(name);
  if (it == f64_.end()) throw std::runtime_error("checkpoint: missing f64 block " + name);
  return it->second;
}

const std::vector<std::int64_t>& Checkpoint::i64(const std::string& name) const {
  auto it = i64_.find(name);
  if (it == i64_.end()) throw std::runtime_error("checkpoint: missing i64 block " + name);
  return it->second;
}

const std::vector<std::uint8_t>& Checkpoint::u8(const std::string& name) const {
  auto it = u8_.find(name);
  if (it == u8_.end()) throw std::runtime_error("checkpoint: missing u8 block " + name);
  return it->second;
}

void Checkpoint::save(const std::string& path) const {
  std::vector<std::uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  append_u32(buf, kVersion);
  append_u64(buf, fingerprint);
  append_u32(buf, static_cast<std::uint32_t>(order_.size()));

  for (const auto& name : order_) {
    if (name.size() > 0xFFFF) throw std::runtime_error("checkpoint: block name too long");
    buf.push_back(static_cast<std::uint8_t>(name.size() & 0xFF));
    buf.push_back(static_cast<std::uint8_t>((name.size() >> 8) & 0xFF));
    buf.insert(buf.end(), name.begin(), name.end());
    if (auto it = f64_.find(name); it != f64_.end()) {
      buf.push_back(kF64);
      append_u64(buf, it->second.size());
      for (double d : it->second) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        append_u64(buf, bits);
      }
    } else if (auto it2 = i64_.find(name); it2 != i64_.end()) {
      buf.push_back(kI64);
      append_u64(buf, it2->second.size());
      for (std::int64_t d : it2->second) append_u64(buf, static_cast<std::uint64_t>(d));
    } else {
      const auto& v = u8_.at(name);
      buf.push_back(kU8);
      append_u64(buf, v.size());
      buf.insert(buf.end(), v.begin(), v.end());
    }
  }
  append_u64(buf, fnv1a(buf.data(), buf.size()));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<long>(buf.size()));
    if (!f) throw std::runtime_error("short write: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move checkpoint into place: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  if (buf.size() < 28 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  const std::uint32_t version = read_u32(buf.data() + 4);
  if (version != kVersion)
    throw std::runtime_error("checkpoint version mismatch (file v" + std::to_string(version) +
                             ", supported v" + std::to_string(kVersion) + "): " + path);
  const std::uint64_t want = read_u64(buf.data() + buf.size() - 8);
  const std::uint64_t got = fnv1a(buf.data(), buf.size() - 8);
  if (want != got) throw std::runtime_error("checkpoint checksum mismatch: " + path);

  Checkpoint ck;
  ck.fingerprint = read_u64(buf.data() + 8);
  const std::uint32_t count = read_u32(buf.data() + 16);
  size_t pos = 20;
  const size_t end = buf.size() - 8;
  auto need = [&](size_t n) {
    if (pos + n > end) throw std::runtime_error("checkpoint truncated block: " + path);
  };
  for (std::uint32_t b = 0; b < count; ++b) {
    need(2);
    const size_t name_len = buf[pos] | (static_cast<size_t>(buf[pos + 1]) << 8);
    pos += 2;
    need(name_len + 9);
    std::string name(reinterpret_cast<const char*>(buf.data() + pos), name_len);
    pos += name_len;
    const std::uint8_t dtype = buf[pos++];
    const std::uint64_t n = read_u64(buf.data() + pos);
    pos += 8;
    if (dtype == kF64) {
      need(n * 8);
      std::vector<double> v(n);
      for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint64_t bits = read_u64(buf.data() + pos + 8 * i);
        std::memcpy(&v[i], &bits, 8);
      }
      pos += n * 8;
      ck.put_f64(name, std::move(v));
    } else if (dtype == kI64) {
      need(n * 8);
      std::vector<std::int64_t> v(n);
      for (std::uint64_t i = 0; i < n; ++i)
        v[i] = static_cast<std::int64_t>(read_u64(buf.data() + pos + 8 * i));
      pos += n * 8;
      ck.put_i64(name, std::move(v));
    } else if (dtype == kU8) {
      need(n);
      ck.put_u8(name, std::vector<std::uint8_t>(buf.begin() + static_cast<long>(pos),
                                                buf.begin() + static_cast<long>(pos + n)));
      pos += n;
    } else {
      throw std::runtime_error("checkpoint unknown dtype: " + path);
    }
  }
  return ck;
}

void checkpoint_put_params(Checkpoint& ck, const std::string& prefix, const ParamStore& ps) {
  for (const auto& [name, v] : ps.entries()) {
    const Tensor& t = v.value();
    ck.put_f64(prefix + "." + name, std::vector<double>(t.data(), t.data() + t.numel()));
  }
}

void checkpoint_get_params(const Checkpoint& ck, const std::string& prefix, ParamStore& ps) {
  for (const auto& [name, v] : ps.entries()) {
    const auto& data = ck.f64(prefix + "." + name);
    Tensor& t = v.value_ref();
    if (static_cast<long>(data.size()) != t.numel())
      throw std::runtime_error("checkpoint param size mismatch: " + prefix + "." + name);
    std::copy(data.begin(), data.end(), t.data());
  }
}

}  // namespace tokensynth
