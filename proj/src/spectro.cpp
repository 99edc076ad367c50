#include "tokensynth/spectro.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tokensynth {

namespace {

constexpr char kMagic[4] = {'T', 'S', 'G', 'R'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 0;

void put_u32(unsigned char* p, std::uint32_t x) {
  p[0] = static_cast<unsigned char>(x & 0xFF);
  p[1] = static_cast<unsigned char>((x >> 8) & 0xFF);
  p[2] = static_cast<unsigned char>((x >> 16) & 0xFF);
  p[3] = static_cast<unsigned char>((x >> 24) & 0xFF);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void grid_save(const Grid& g, const std::string& path) {
  unsigned char header[32];
  std::memset(header, 0, sizeof(header));
  std::memcpy(header, kMagic, 4);
  put_u32(header + 4, kVersion);
  put_u32(header + 8, static_cast<std::uint32_t>(g.channels));
  put_u32(header + 12, static_cast<std::uint32_t>(g.freq));
  put_u32(header + 16, static_cast<std::uint32_t>(g.frames));
  put_u32(header + 20, kDtypeF32);

  std::vector<float> f32(g.values.size());
  for (size_t i = 0; i < g.values.size(); ++i) f32[i] = static_cast<float>(g.values[i]);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write grid: " + path);
    f.write(reinterpret_cast<const char*>(header), sizeof(header));
    f.write(reinterpret_cast<const char*>(f32.data()),
            static_cast<long>(f32.size() * sizeof(float)));
    if (!f) throw std::runtime_error("short write: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move grid into place: " + path);
}

Grid grid_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open grid: " + path);
  unsigned char header[32];
  f.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!f || std::memcmp(header, kMagic, 4) != 0)
    throw std::runtime_error("not a grid file: " + path);
  if (get_u32(header + 4) != kVersion)
    throw std::runtime_error("unsupported grid version: " + path);
  if (get_u32(header + 20) != kDtypeF32)
    throw std::runtime_error("unsupported grid dtype: " + path);
  const long c = get_u32(header + 8);
  const long fr = get_u32(header + 12);
  const long t = get_u32(header + 16);
  Grid g(c, fr, t);
  std::vector<float> f32(g.values.size());
  f.read(reinterpret_cast<char*>(f32.data()), static_cast<long>(f32.size() * sizeof(float)));
  if (!f) throw std::runtime_error("truncated grid file: " + path);
  for (size_t i = 0; i < f32.size(); ++i) g.values[i] = static_cast<double>(f32[i]);
  return g;
}

Grid downscale_freq(const Grid& g, long factor) {
  if (factor <= 0 || g.freq % factor != 0)
    throw std::runtime_error("downscale_freq: factor does not divide freq bins");
  Grid out(g.channels, g.freq / factor, g.frames);
  const double inv = 1.0 / static_cast<double>(factor);
  for (long c = 0; c < g.channels; ++c)
    for (long f = 0; f < out.freq; ++f)
      for (long t = 0; t < g.frames; ++t) {
        double acc = 0.0;
        for (long j = 0; j < factor; ++j) acc += g.at(c, f * factor + j, t);
        out.at(c, f, t) = acc * inv;
      }
  return out;
}

Grid reconcile_frames(const Grid& g, long frames) {
  if (g.frames == frames) return g;
  Grid out(g.channels, g.freq, frames);
  const long keep = std::min(frames, g.frames);
  for (long c = 0; c < g.channels; ++c)
    for (long f = 0; f < g.freq; ++f)
      for (long t = 0; t < keep; ++t) out.at(c, f, t) = g.at(c, f, t);
  return out;
}

}  // namespace tokensynth
