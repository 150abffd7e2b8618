#pragma once

#include <litefew/dsp.hpp>
#include <litefew/tensor.hpp>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace litefew::wav {

namespace detail {

inline void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t get_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

// single-channel 16 kHz 16-bit PCM RIFF, little-endian
inline void write_wav(const std::string& path, const AudioClip& clip) {
  validate_clip(clip);
  const uint32_t n = static_cast<uint32_t>(clip.samples.size());
  std::string out;
  out.reserve(44 + 2 * n);
  out += "RIFF";
  detail::put_u32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, kSampleRate);
  detail::put_u32(out, kSampleRate * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, 2 * n);
  for (double s : clip.samples) {
    const double c = std::min(1.0, std::max(-1.0, s));
    const auto q = static_cast<int16_t>(std::lrint(c * 32767.0));
    detail::put_u16(out, static_cast<uint16_t>(q));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write: " + path);
}

inline AudioClip read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw ValidationError(path + ": not a RIFF/WAVE file");

  size_t pos = 12;
  bool have_fmt = false;
  AudioClip clip;
  while (pos + 8 <= bytes.size()) {
    const std::string id(reinterpret_cast<const char*>(bytes.data() + pos), 4);
    const uint32_t size = detail::get_u32(bytes.data() + pos + 4);
    pos += 8;
    if (pos + size > bytes.size())
      throw ValidationError(path + ": truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (size < 16) throw ValidationError(path + ": malformed fmt chunk");
      const uint16_t format = detail::get_u16(bytes.data() + pos);
      const uint16_t channels = detail::get_u16(bytes.data() + pos + 2);
      const uint32_t rate = detail::get_u32(bytes.data() + pos + 4);
      const uint16_t bits = detail::get_u16(bytes.data() + pos + 14);
      if (format != 1 || bits != 16)
        throw ValidationError(path + ": only 16-bit PCM supported");
      if (channels != 1) throw ValidationError(path + ": only mono supported");
      if (rate != kSampleRate)
        throw ValidationError(path + ": sample rate must be 16000, got " +
                              std::to_string(rate));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw ValidationError(path + ": data chunk before fmt");
      const size_t n = size / 2;
      clip.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        const auto v = static_cast<int16_t>(detail::get_u16(bytes.data() + pos + 2 * i));
        clip.samples[i] = static_cast<double>(v) / 32767.0;
      }
      return clip;
    }
    pos += size + (size & 1);  // chunks are word-aligned
  }
  throw ValidationError(path + ": no data chunk found");
}

}  // namespace litefew::wav
