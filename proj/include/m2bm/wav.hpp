// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Minimal RIFF/WAVE reader and writer: PCM 16-bit and IEEE float-32,
// interleaved multichannel.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "m2bm/error.hpp"

namespace m2bm::wav {

static_assert(std::endian::native == std::endian::little, "wav io assumes a little-endian host");

enum class SampleFormat { kPcm16, kFloat32 };

struct Audio {
  int sample_rate = 16000;
  std::vector<std::vector<double>> channels;  // [channel][sample]

  std::size_t num_channels() const { return channels.size(); }
  std::size_t num_samples() const { return channels.empty() ? 0 : channels.front().size(); }
};

namespace detail {

inline void PutU32(std::string& s, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  s.append(b, 4);
}
inline void PutU16(std::string& s, std::uint16_t v) {
  char b[2];
  std::memcpy(b, &v, 2);
  s.append(b, 2);
}
inline std::uint32_t GetU32(const std::string& s, std::size_t pos) {
  std::uint32_t v;
  std::memcpy(&v, s.data() + pos, 4);
  return v;
}
inline std::uint16_t GetU16(const std::string& s, std::size_t pos) {
  std::uint16_t v;
  std::memcpy(&v, s.data() + pos, 2);
  return v;
}

}  // namespace detail

inline std::string Encode(const Audio& audio, SampleFormat format = SampleFormat::kFloat32) {
  using namespace detail;
  if (audio.channels.empty()) throw Error("wav: no channels to write");
  const std::size_t n = audio.num_samples();
  for (const auto& c : audio.channels) {
    if (c.size() != n) throw Error("wav: ragged channel lengths");
  }
  const std::uint16_t nch = static_cast<std::uint16_t>(audio.channels.size());
  const std::uint16_t bytes = format == SampleFormat::kPcm16 ? 2 : 4;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(n * nch * bytes);

  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  PutU32(out, 36 + data_bytes);
  out += "WAVE";
  out += "fmt ";
  PutU32(out, 16);
  PutU16(out, format == SampleFormat::kPcm16 ? 1 : 3);
  PutU16(out, nch);
  PutU32(out, static_cast<std::uint32_t>(audio.sample_rate));
  PutU32(out, static_cast<std::uint32_t>(audio.sample_rate) * nch * bytes);
  PutU16(out, static_cast<std::uint16_t>(nch * bytes));
  PutU16(out, static_cast<std::uint16_t>(8 * bytes));
  out += "data";
  PutU32(out, data_bytes);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& c : audio.channels) {
      if (format == SampleFormat::kPcm16) {
        const double s = std::clamp(c[i], -1.0, 32767.0 / 32768.0);
        PutU16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(s * 32768.0))));
      } else {
        const float v = static_cast<float>(c[i]);
        PutU32(out, std::bit_cast<std::uint32_t>(v));
      }
    }
  }
  return out;
}

inline Audio Decode(const std::string& bytes) {
  using namespace detail;
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0) {
    throw Error("wav: not a RIFF/WAVE file");
  }
  std::uint16_t tag = 0, nch = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::uint32_t len = GetU32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw Error("wav: truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (len < 16) throw Error("wav: short fmt chunk");
      tag = GetU16(bytes, body);
      nch = GetU16(bytes, body + 2);
      rate = GetU32(bytes, body + 4);
      bits = GetU16(bytes, body + 14);
      if (tag == 0xFFFE && len >= 26) tag = GetU16(bytes, body + 24);  // extensible
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw Error("wav: data chunk before fmt chunk");
      if (nch == 0) throw Error("wav: zero channels");
      const bool pcm16 = tag == 1 && bits == 16;
      const bool f32 = tag == 3 && bits == 32;
      if (!pcm16 && !f32) {
        throw Error("wav: unsupported sample format (tag " + std::to_string(tag) + ", " +
                    std::to_string(bits) + " bits)");
      }
      const std::size_t width = bits / 8;
      const std::size_t frames = len / (width * nch);
      Audio audio;
      audio.sample_rate = static_cast<int>(rate);
      audio.channels.assign(nch, std::vector<double>(frames));
      std::size_t p = body;
      for (std::size_t i = 0; i < frames; ++i) {
        for (std::size_t c = 0; c < nch; ++c, p += width) {
          if (pcm16) {
            audio.channels[c][i] = static_cast<std::int16_t>(GetU16(bytes, p)) / 32768.0;
          } else {
            audio.channels[c][i] = std::bit_cast<float>(GetU32(bytes, p));
          }
        }
      }
      return audio;
    }
    pos = body + len + (len & 1u);
  }
  throw Error("wav: no data chunk");
}

inline Audio Read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("wav: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return Decode(bytes);
  } catch (const Error& e) {
    throw Error(std::string(e.what()) + " in '" + path + "'");
  }
}

inline void Write(const std::string& path, const Audio& audio,
                  SampleFormat format = SampleFormat::kFloat32) {
  const std::string bytes = Encode(audio, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("wav: cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace m2bm::wav
