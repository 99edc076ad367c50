#include "tokensynth/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tokensynth {

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void wr_u32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(static_cast<unsigned char>(x & 0xFF));
  v.push_back(static_cast<unsigned char>((x >> 8) & 0xFF));
  v.push_back(static_cast<unsigned char>((x >> 16) & 0xFF));
  v.push_back(static_cast<unsigned char>((x >> 24) & 0xFF));
}

void wr_u16(std::vector<unsigned char>& v, std::uint16_t x) {
  v.push_back(static_cast<unsigned char>(x & 0xFF));
  v.push_back(static_cast<unsigned char>((x >> 8) & 0xFF));
}

}  // namespace

WavData wav_read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open wav: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF wave file: " + path);

  long rate = 0;
  int channels = 0, bits = 0, format = 0;
  size_t data_off = 0, data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const char* id = reinterpret_cast<const char*>(buf.data() + pos);
    const std::uint32_t len = rd_u32(buf.data() + pos + 4);
    if (std::memcmp(id, "fmt ", 4) == 0 && pos + 8 + 16 <= buf.size()) {
      format = rd_u16(buf.data() + pos + 8);
      channels = rd_u16(buf.data() + pos + 10);
      rate = rd_u32(buf.data() + pos + 12);
      bits = rd_u16(buf.data() + pos + 22);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_off = pos + 8;
      data_len = std::min<size_t>(len, buf.size() - data_off);
    }
    pos += 8 + len + (len & 1);
  }
  if (rate == 0 || data_off == 0) throw std::runtime_error("malformed wave file: " + path);
  if (format != 1 || bits != 16) throw std::runtime_error("only 16-bit PCM supported: " + path);
  if (channels != 1) throw std::runtime_error("only mono supported: " + path);

  WavData out;
  out.rate = rate;
  const size_t n = data_len / 2;
  out.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    std::int16_t s = static_cast<std::int16_t>(rd_u16(buf.data() + data_off + 2 * i));
    out.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return out;
}

void wav_write(const std::string& path, long rate, const std::vector<double>& samples) {
  std::vector<unsigned char> buf;
  buf.reserve(44 + samples.size() * 2);
  const std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * 2);
  buf.insert(buf.end(), {'R', 'I', 'F', 'F'});
  wr_u32(buf, 36 + data_len);
  buf.insert(buf.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  wr_u32(buf, 16);
  wr_u16(buf, 1);
  wr_u16(buf, 1);
  wr_u32(buf, static_cast<std::uint32_t>(rate));
  wr_u32(buf, static_cast<std::uint32_t>(rate * 2));
  wr_u16(buf, 2);
  wr_u16(buf, 16);
  buf.insert(buf.end(), {'d', 'a', 't', 'a'});
  wr_u32(buf, data_len);
  for (double x : samples) {
    double c = std::clamp(x, -1.0, 1.0);
    long q = std::lround(c * 32767.0);
    wr_u16(buf, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write wav: " + path);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<long>(buf.size()));
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move wav into place: " + path);
}

std::vector<double> resample_linear(const std::vector<double>& x, long from_rate,
                                    long to_rate) {
  if (from_rate == to_rate || x.empty()) return x;
  const long n = static_cast<long>(
      std::llround(static_cast<double>(x.size()) * to_rate / from_rate));
  std::vector<double> y(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * from_rate / to_rate;
    const long i0 = static_cast<long>(t);
    const double frac = t - static_cast<double>(i0);
    const double a = x[static_cast<size_t>(std::min<long>(i0, x.size() - 1))];
    const double b = x[static_cast<size_t>(std::min<long>(i0 + 1, x.size() - 1))];
    y[static_cast<size_t>(i)] = a + frac * (b - a);
  }
  return y;
}

AudioClip load_clip(const std::string& path, long expected_rate, double duration_s,
                    bool allow_resample) {
  WavData w = wav_read(path);
  if (w.rate != expected_rate) {
    if (!allow_resample)
      throw std::runtime_error("rate mismatch (" + std::to_string(w.rate) + " vs " +
                               std::to_string(expected_rate) + "): " + path);
    w.samples = resample_linear(w.samples, w.rate, expected_rate);
    w.rate = expected_rate;
  }
  const long want = std::lround(duration_s * static_cast<double>(expected_rate));
  w.samples.resize(static_cast<size_t>(want), 0.0);

  AudioClip clip;
  clip.samples = std::move(w.samples);
  clip.rate = expected_rate;
  const size_t slash = path.find_last_of('/');
  clip.source_id = slash == std::string::npos ? path : path.substr(slash + 1);
  const size_t dot = clip.source_id.find_last_of('.');
  if (dot != std::string::npos) clip.source_id = clip.source_id.substr(0, dot);
  return clip;
}

}  // namespace tokensynth
