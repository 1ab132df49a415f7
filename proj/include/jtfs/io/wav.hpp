// SPDX-License-Identifier: Apache-2.0
//
// Minimal RIFF/WAVE reader and writer. Reads 16-bit PCM and 32-bit float
// (plain or WAVE_FORMAT_EXTENSIBLE), downmixing to mono; writes mono 32-bit
// float.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <string>
#include <vector>

#include "jtfs/error.hpp"

namespace jtfs::io {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

struct AudioBuffer {
  std::vector<double> samples;
  std::uint32_t sample_rate = 0;
};

namespace detail {

inline constexpr std::uint16_t kFormatPcm = 1;
inline constexpr std::uint16_t kFormatFloat = 3;
inline constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T load(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <typename T>
void store(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t bytes[sizeof v];
  std::memcpy(bytes, &v, sizeof v);
  out.insert(out.end(), bytes, bytes + sizeof v);
}

inline void store_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

}  // namespace detail

/// Decode a WAV image held in memory. Multichannel audio is averaged to
/// mono with a warning on `diag`. PCM16 maps 32767 to 32767/32768.
inline AudioBuffer decode_wav(const std::vector<std::uint8_t>& bytes, std::ostream& diag = std::cerr) {
  using detail::load;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("RIFF: not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(reinterpret_cast<const char*>(bytes.data() + pos), 4);
    const auto size = static_cast<std::size_t>(load<std::uint32_t>(bytes.data() + pos + 4));
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min(size, bytes.size() - body);
    if (id == "fmt ") {
      if (avail < 16) throw FormatError("fmt: chunk truncated");
      format = load<std::uint16_t>(bytes.data() + body);
      channels = load<std::uint16_t>(bytes.data() + body + 2);
      rate = load<std::uint32_t>(bytes.data() + body + 4);
      bits = load<std::uint16_t>(bytes.data() + body + 14);
      if (format == detail::kFormatExtensible) {
        if (avail < 26) throw FormatError("fmt: extensible chunk truncated");
        format = load<std::uint16_t>(bytes.data() + body + 24);  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (id == "data") {
      data = bytes.data() + body;
      data_size = avail;
    }
    pos = body + size + (size & 1U);
  }
  if (!have_fmt) throw FormatError("fmt: chunk missing");
  if (data == nullptr) throw FormatError("data: chunk missing");
  if (channels == 0) throw FormatError("fmt: zero channels");
  if (rate == 0) throw FormatError("fmt: zero sample rate");

  const bool pcm16 = format == detail::kFormatPcm && bits == 16;
  const bool float32 = format == detail::kFormatFloat && bits == 32;
  if (!pcm16 && !float32) {
    throw FormatError("fmt: unsupported encoding (format tag " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bits); expected 16-bit PCM or 32-bit float");
  }
  const std::size_t width = bits / 8;
  const std::size_t frames = data_size / (width * channels);
  if (channels > 1) {
    diag << "warning: " << channels << "-channel input averaged to mono\n";
  }

  AudioBuffer out;
  out.sample_rate = rate;
  out.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* p = data + (f * channels + c) * width;
      acc += pcm16 ? load<std::int16_t>(p) / 32768.0 : static_cast<double>(load<float>(p));
    }
    out.samples[f] = channels == 1 ? acc : acc / channels;
  }
  return out;
}

inline AudioBuffer read_wav(const std::string& path, std::ostream& diag = std::cerr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes, diag);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

/// Encode mono float32. Returns the gain applied: when the peak exceeds 1
/// the signal is scaled down to unit peak, otherwise the gain is 1.
inline std::vector<std::uint8_t> encode_wav(const AudioBuffer& audio, double* gain_out = nullptr) {
  using detail::store;
  if (audio.sample_rate == 0) throw FormatError("fmt: zero sample rate");
  double peak = 0.0;
  for (double v : audio.samples) {
    if (!std::isfinite(v)) throw NumericError("cannot write non-finite samples");
    peak = std::max(peak, std::abs(v));
  }
  const double gain = peak > 1.0 ? 1.0 / peak : 1.0;
  if (gain_out != nullptr) *gain_out = gain;

  const auto data_size = static_cast<std::uint32_t>(audio.samples.size() * 4);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_size);
  detail::store_tag(out, "RIFF");
  store<std::uint32_t>(out, 36 + data_size);
  detail::store_tag(out, "WAVE");
  detail::store_tag(out, "fmt ");
  store<std::uint32_t>(out, 16);
  store<std::uint16_t>(out, detail::kFormatFloat);
  store<std::uint16_t>(out, 1);
  store<std::uint32_t>(out, audio.sample_rate);
  store<std::uint32_t>(out, audio.sample_rate * 4);
  store<std::uint16_t>(out, 4);
  store<std::uint16_t>(out, 32);
  detail::store_tag(out, "data");
  store<std::uint32_t>(out, data_size);
  for (double v : audio.samples) store<float>(out, static_cast<float>(v * gain));
  return out;
}

inline double write_wav(const std::string& path, const AudioBuffer& audio, std::ostream& diag = std::cerr) {
  double gain = 1.0;
  const auto bytes = encode_wav(audio, &gain);
  if (gain != 1.0) diag << "note: peak-normalized " << path << " with gain " << gain << '\n';
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
  return gain;
}

}  // namespace jtfs::io
