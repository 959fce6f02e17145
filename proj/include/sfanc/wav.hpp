#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfanc/fft.hpp"

namespace sfanc {

// Minimal RIFF/WAVE reader and writer covering the two encodings the corpus
// loader accepts: 16-bit PCM and 32-bit IEEE float.

struct WavData {
  double fs = 0.0;
  std::size_t channels = 0;
  std::vector<double> samples;  // interleaved, in [-1, 1] for PCM sources

  std::size_t frames() const { return channels == 0 ? 0 : samples.size() / channels; }
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(static_cast<std::uint32_t>(p[0]) |
                                    (static_cast<std::uint32_t>(p[1]) << 8));
}

}  // namespace detail

inline WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_wav: cannot open " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 44 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("read_wav: not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= raw.size()) {
    const char* id = reinterpret_cast<const char*>(raw.data() + pos);
    const std::uint32_t len = detail::read_u32(raw.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > raw.size())
      throw std::runtime_error("read_wav: truncated chunk in " + path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw std::runtime_error("read_wav: short fmt chunk in " + path);
      format = detail::read_u16(raw.data() + body);
      channels = detail::read_u16(raw.data() + body + 2);
      sample_rate = detail::read_u32(raw.data() + body + 4);
      bits = detail::read_u16(raw.data() + body + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = raw.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word-aligned
  }
  if (channels == 0 || sample_rate == 0 || data == nullptr)
    throw std::runtime_error("read_wav: missing fmt or data chunk in " + path);

  WavData wav;
  wav.fs = static_cast<double>(sample_rate);
  wav.channels = channels;
  if (format == 1 && bits == 16) {
    const std::size_t count = data_len / 2;
    wav.samples.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::int16_t v;
      std::memcpy(&v, data + 2 * i, 2);
      wav.samples[i] = static_cast<double>(v) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    const std::size_t count = data_len / 4;
    wav.samples.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      float v;
      std::memcpy(&v, data + 4 * i, 4);
      wav.samples[i] = static_cast<double>(v);
    }
  } else {
    throw std::runtime_error("read_wav: unsupported encoding (format " +
                             std::to_string(format) + ", " + std::to_string(bits) +
                             " bits) in " + path);
  }
  if (wav.samples.size() % wav.channels != 0)
    wav.samples.resize(wav.samples.size() - wav.samples.size() % wav.channels);
  return wav;
}

namespace detail {

inline void write_header(std::ofstream& out, std::uint16_t format, std::uint16_t channels,
                         std::uint32_t fs, std::uint16_t bits, std::uint32_t data_bytes) {
  auto put_u32 = [&out](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto put_u16 = [&out](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
  out.write("RIFF", 4);
  put_u32(36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(format);
  put_u16(channels);
  put_u32(fs);
  put_u32(fs * channels * bits / 8);
  put_u16(static_cast<std::uint16_t>(channels * bits / 8));
  put_u16(bits);
  out.write("data", 4);
  put_u32(data_bytes);
}

}  // namespace detail

inline void write_wav_pcm16(const std::string& path, const std::vector<double>& interleaved,
                            double fs, std::size_t channels = 1) {
  if (channels == 0 || interleaved.size() % channels != 0)
    throw std::invalid_argument("write_wav_pcm16: bad channel count");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_wav_pcm16: cannot open " + path);
  detail::write_header(out, 1, static_cast<std::uint16_t>(channels),
                       static_cast<std::uint32_t>(std::llround(fs)), 16,
                       static_cast<std::uint32_t>(interleaved.size() * 2));
  for (double v : interleaved) {
    const long q = std::clamp(std::lround(v * 32768.0), -32768l, 32767l);
    const std::int16_t s = static_cast<std::int16_t>(q);
    out.write(reinterpret_cast<const char*>(&s), 2);
  }
}

inline void write_wav_float32(const std::string& path, const std::vector<double>& interleaved,
                              double fs, std::size_t channels = 1) {
  if (channels == 0 || interleaved.size() % channels != 0)
    throw std::invalid_argument("write_wav_float32: bad channel count");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_wav_float32: cannot open " + path);
  detail::write_header(out, 3, static_cast<std::uint16_t>(channels),
                       static_cast<std::uint32_t>(std::llround(fs)), 32,
                       static_cast<std::uint32_t>(interleaved.size() * 4));
  for (double v : interleaved) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  }
}

inline std::vector<double> mix_to_mono(const WavData& wav) {
  if (wav.channels == 0) throw std::invalid_argument("mix_to_mono: no channels");
  if (wav.channels == 1) return wav.samples;
  const std::size_t frames = wav.frames();
  std::vector<double> mono(frames, 0.0);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < wav.channels; ++c) acc += wav.samples[i * wav.channels + c];
    mono[i] = acc / static_cast<double>(wav.channels);
  }
  return mono;
}

/// Sample-rate conversion with a symmetric (linear-phase) Hann-windowed sinc
/// anti-aliasing kernel evaluated per output phase; for rational ratios this
/// is the classic polyphase filter with one branch per phase.
inline std::vector<double> resample(const std::vector<double>& x, double fs_in,
                                    double fs_out) {
  if (fs_in <= 0.0 || fs_out <= 0.0)
    throw std::invalid_argument("resample: sample rates must be positive");
  if (fs_in == fs_out) return x;
  if (x.empty()) return {};

  const double ratio = fs_out / fs_in;
  // cutoff in cycles per input sample; the sampled kernel has unit passband
  // gain, so no rate-dependent rescaling is needed
  const double cutoff = 0.45 * std::min(1.0, ratio);
  const int half_width = 32;

  const std::size_t n_out =
      static_cast<std::size_t>(std::floor(static_cast<double>(x.size() - 1) * ratio)) + 1;
  std::vector<double> y(n_out, 0.0);
  for (std::size_t n = 0; n < n_out; ++n) {
    const double t = static_cast<double>(n) / ratio;
    const long k0 = static_cast<long>(std::ceil(t)) - half_width;
    const long k1 = static_cast<long>(std::floor(t)) + half_width;
    double acc = 0.0;
    for (long k = std::max<long>(0, k0); k <= std::min<long>(k1, static_cast<long>(x.size()) - 1);
         ++k) {
      const double u = static_cast<double>(k) - t;
      const double win = 0.5 * (1.0 + std::cos(kPi * u / static_cast<double>(half_width)));
      double sinc;
      if (std::abs(u) < 1e-12)
        sinc = 2.0 * cutoff;
      else
        sinc = std::sin(2.0 * kPi * cutoff * u) / (kPi * u);
      acc += x[static_cast<std::size_t>(k)] * sinc * win;
    }
    y[n] = acc;
  }
  return y;
}

}  // namespace sfanc
