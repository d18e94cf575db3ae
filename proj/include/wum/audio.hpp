#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "wum/errors.hpp"

namespace wum {

/// Mono waveform with its sampling rate. Samples are dimensionless
/// amplitudes, nominally in [-1, 1].
struct AudioBuffer {
  std::vector<float> samples;
  int rate = 0;

  AudioBuffer() = default;
  AudioBuffer(std::vector<float> s, int r) : samples(std::move(s)), rate(r) {}

  [[nodiscard]] std::size_t size() const { return samples.size(); }
  [[nodiscard]] bool empty() const { return samples.empty(); }
  [[nodiscard]] double duration_seconds() const {
    return rate > 0 ? static_cast<double>(samples.size()) / rate : 0.0;
  }
  [[nodiscard]] std::span<const float> view() const { return samples; }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(samples.begin(), samples.end(),
                       [](float v) { return std::isfinite(v); });
  }
  [[nodiscard]] float peak() const {
    float p = 0.0f;
    for (float v : samples) p = std::max(p, std::abs(v));
    return p;
  }
};

enum class WavFormat { kPcm16, kFloat32 };

struct WavInfo {
  int rate = 0;
  int channels = 0;
  int bits_per_sample = 0;
  std::size_t frames = 0;
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

struct ParsedWav {
  WavInfo info;
  int format_tag = 0;
  const unsigned char* data = nullptr;
  std::size_t data_bytes = 0;
};

inline ParsedWav parse_wav(const std::vector<unsigned char>& bytes, const std::string& name) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw IoError(name + ": not a RIFF/WAVE file");
  }
  ParsedWav out;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    std::uint32_t len = read_u32(chunk + 4);
    std::size_t body = pos + 8;
    std::size_t avail = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16 || avail < 16) throw IoError(name + ": truncated fmt chunk");
      const unsigned char* f = bytes.data() + body;
      out.format_tag = read_u16(f);
      out.info.channels = read_u16(f + 2);
      out.info.rate = static_cast<int>(read_u32(f + 4));
      out.info.bits_per_sample = read_u16(f + 14);
      if (out.format_tag == 0xFFFE && len >= 26) out.format_tag = read_u16(f + 24);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      out.data = bytes.data() + body;
      out.data_bytes = std::min<std::size_t>(len, avail);
      break;
    }
    pos = body + len + (len & 1u);
  }
  if (!have_fmt || out.data == nullptr) throw IoError(name + ": missing fmt or data chunk");
  if (out.info.channels <= 0 || out.info.bits_per_sample <= 0)
    throw IoError(name + ": malformed fmt chunk");
  out.info.frames =
      out.data_bytes / (static_cast<std::size_t>(out.info.channels) * (out.info.bits_per_sample / 8));
  return out;
}

inline std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Header-only probe; used by the dataset indexer to get durations cheaply.
inline WavInfo read_wav_info(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  // fmt and the data chunk header are near the start for every writer we care about
  std::vector<unsigned char> head(4096);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  in.clear();
  in.seekg(0, std::ios::end);
  auto total = static_cast<std::size_t>(in.tellg());
  auto parsed = detail::parse_wav(head, path.string());
  std::size_t data_offset = static_cast<std::size_t>(parsed.data - head.data());
  std::uint32_t declared = detail::read_u32(parsed.data - 4);
  std::size_t bytes = std::min<std::size_t>(declared, total - data_offset);
  parsed.info.frames = bytes / (static_cast<std::size_t>(parsed.info.channels) *
                                (parsed.info.bits_per_sample / 8));
  return parsed.info;
}

/// Reads a mono PCM16 / PCM24 / PCM32 / float32 WAV. Multi-channel files are rejected.
inline AudioBuffer read_wav(const std::filesystem::path& path) {
  auto bytes = detail::slurp(path);
  auto wav = detail::parse_wav(bytes, path.string());
  if (wav.info.channels != 1) {
    throw InvalidInput(path.string() + ": expected mono audio, got " +
                       std::to_string(wav.info.channels) + " channels");
  }
  AudioBuffer out;
  out.rate = wav.info.rate;
  out.samples.resize(wav.info.frames);
  const unsigned char* p = wav.data;
  const int bits = wav.info.bits_per_sample;
  if (wav.format_tag == 3 && bits == 32) {
    for (std::size_t i = 0; i < wav.info.frames; ++i) {
      std::uint32_t raw = detail::read_u32(p + 4 * i);
      float v;
      std::memcpy(&v, &raw, sizeof(v));
      out.samples[i] = v;
    }
  } else if (wav.format_tag == 1 && bits == 16) {
    for (std::size_t i = 0; i < wav.info.frames; ++i) {
      auto v = static_cast<std::int16_t>(detail::read_u16(p + 2 * i));
      out.samples[i] = static_cast<float>(v) / 32768.0f;
    }
  } else if (wav.format_tag == 1 && bits == 24) {
    for (std::size_t i = 0; i < wav.info.frames; ++i) {
      const unsigned char* s = p + 3 * i;
      std::int32_t v = (s[0] << 8) | (s[1] << 16) | (s[2] << 24);
      out.samples[i] = static_cast<float>(v >> 8) / 8388608.0f;
    }
  } else if (wav.format_tag == 1 && bits == 32) {
    for (std::size_t i = 0; i < wav.info.frames; ++i) {
      auto v = static_cast<std::int32_t>(detail::read_u32(p + 4 * i));
      out.samples[i] = static_cast<float>(static_cast<double>(v) / 2147483648.0);
    }
  } else {
    throw IoError(path.string() + ": unsupported WAV encoding (tag " +
                  std::to_string(wav.format_tag) + ", " + std::to_string(bits) + " bits)");
  }
  return out;
}

/// PCM16 output clips to [-1, 1]; float32 output is written verbatim.
inline void write_wav(const std::filesystem::path& path, const AudioBuffer& audio,
                      WavFormat format = WavFormat::kPcm16) {
  detail::require(audio.rate > 0, "write_wav: rate must be positive");
  const std::uint16_t bits = format == WavFormat::kPcm16 ? 16 : 32;
  const std::uint16_t tag = format == WavFormat::kPcm16 ? 1 : 3;
  const auto data_bytes = static_cast<std::uint32_t>(audio.size() * (bits / 8));
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, tag);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(audio.rate));
  detail::put_u32(out, static_cast<std::uint32_t>(audio.rate) * (bits / 8));
  detail::put_u16(out, bits / 8);
  detail::put_u16(out, bits);
  out += "data";
  detail::put_u32(out, data_bytes);
  for (float v : audio.samples) {
    if (format == WavFormat::kPcm16) {
      float c = std::clamp(v, -1.0f, 1.0f);
      auto q = static_cast<std::int16_t>(std::lrint(std::clamp(c * 32768.0f, -32768.0f, 32767.0f)));
      detail::put_u16(out, static_cast<std::uint16_t>(q));
    } else {
      std::uint32_t raw;
      std::memcpy(&raw, &v, sizeof(raw));
      detail::put_u32(out, raw);
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace wum
