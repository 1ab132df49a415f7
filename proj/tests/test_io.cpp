// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "jtfs/gradcheck.hpp"
#include "jtfs/io/features.hpp"
#include "jtfs/io/wav.hpp"
#include "oracles.hpp"

using namespace jtfs;
namespace fs = std::filesystem;

namespace {

// Hand-assembled canonical WAV file, independent of the encoder under test.
template <typename Sample>
std::vector<std::uint8_t> wav_bytes(std::uint16_t format, std::uint16_t channels, std::uint32_t rate,
                                    const std::vector<Sample>& interleaved) {
  std::vector<std::uint8_t> b;
  auto put = [&](auto v) {
    std::uint8_t raw[sizeof v];
    std::memcpy(raw, &v, sizeof v);
    b.insert(b.end(), raw, raw + sizeof v);
  };
  auto tag = [&](const char* t) { b.insert(b.end(), t, t + 4); };
  const auto bits = static_cast<std::uint16_t>(8 * sizeof(Sample));
  const auto data = static_cast<std::uint32_t>(interleaved.size() * sizeof(Sample));
  tag("RIFF");
  put(std::uint32_t{36 + data});
  tag("WAVE");
  tag("fmt ");
  put(std::uint32_t{16});
  put(format);
  put(channels);
  put(rate);
  put(std::uint32_t{rate * channels * bits / 8});
  put(static_cast<std::uint16_t>(channels * bits / 8));
  put(bits);
  tag("data");
  put(data);
  for (Sample s : interleaved) put(s);
  return b;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("jtfs_test_io_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Wav, Pcm16ScalesByInverse32768) {
  std::ostringstream diag;
  const auto a = io::decode_wav(wav_bytes<std::int16_t>(1, 1, 8000, {32767, -32768, 0, 1}), diag);
  ASSERT_EQ(a.samples.size(), 4U);
  EXPECT_EQ(a.sample_rate, 8000U);
  EXPECT_EQ(a.samples[0], 32767.0 / 32768.0);
  EXPECT_EQ(a.samples[1], -1.0);
  EXPECT_EQ(a.samples[2], 0.0);
  EXPECT_EQ(a.samples[3], 1.0 / 32768.0);
  EXPECT_TRUE(diag.str().empty());
}

TEST(Wav, FloatRoundTripIsBitExact) {
  io::AudioBuffer a;
  a.sample_rate = 22050;
  for (double v : oracle::random_real(257, 3)) a.samples.push_back(static_cast<float>(0.1 * v));
  const auto bytes = io::encode_wav(a);
  const auto b = io::decode_wav(bytes);
  EXPECT_EQ(b.sample_rate, a.sample_rate);
  ASSERT_EQ(b.samples.size(), a.samples.size());
  EXPECT_EQ(std::memcmp(a.samples.data(), b.samples.data(), a.samples.size() * sizeof(double)), 0);
  // The encoder writes the same canonical layout as the hand-built file.
  std::vector<float> f(a.samples.begin(), a.samples.end());
  EXPECT_EQ(bytes, wav_bytes<float>(3, 1, 22050, f));
}

TEST(Wav, StereoIsAveragedWithWarning) {
  std::ostringstream diag;
  const auto a = io::decode_wav(wav_bytes<float>(3, 2, 44100, {0.5f, 0.25f, -1.0f, 1.0f}), diag);
  ASSERT_EQ(a.samples.size(), 2U);
  EXPECT_EQ(a.samples[0], 0.375);
  EXPECT_EQ(a.samples[1], 0.0);
  EXPECT_NE(diag.str().find("warning"), std::string::npos);
}

TEST(Wav, LoudSignalIsPeakNormalized) {
  io::AudioBuffer a{{2.0, -1.0, 0.5}, 8000};
  double gain = 0.0;
  const auto b = io::decode_wav(io::encode_wav(a, &gain));
  EXPECT_EQ(gain, 0.5);
  EXPECT_EQ(b.samples, (std::vector<double>{1.0, -0.5, 0.25}));
}

TEST(Wav, SilentFileIsValid) {
  const auto a = io::decode_wav(wav_bytes<std::int16_t>(1, 1, 16000, std::vector<std::int16_t>(64, 0)));
  EXPECT_EQ(a.samples, std::vector<double>(64, 0.0));
}

TEST(Wav, UnsupportedEncodingNamesFmtChunk) {
  // 8-bit unsigned PCM is not supported.
  try {
    io::decode_wav(wav_bytes<std::uint8_t>(1, 1, 8000, {128, 129}));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("fmt"), std::string::npos);
  }
  EXPECT_THROW(io::decode_wav({'R', 'I', 'F', 'F'}), FormatError);
}

TEST(Wav, MissingFileIsIoError) {
  EXPECT_THROW(io::read_wav("/nonexistent/dir/in.wav"), IoError);
}

TEST(Wav, FileRoundTrip) {
  TempDir dir("wav");
  io::AudioBuffer a{{0.25, -0.5, 0.125}, 8000};
  io::write_wav((dir.path / "a.wav").string(), a);
  EXPECT_EQ(io::read_wav((dir.path / "a.wav").string()).samples, a.samples);
}

TEST(Features, RoundTripPreservesEveryPath) {
  TempDir dir("features");
  const auto plan = build_plan(gradcheck_params());
  const auto s = jtfs_forward(oracle::random_real(1024, 5), *plan);
  io::write_features(dir.path, s, *plan);
  const auto r = io::read_features(dir.path);
  ASSERT_EQ(r.entries.size(), s.entries.size());
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    EXPECT_EQ(r.entries[i].key, s.entries[i].key);
    EXPECT_EQ(r.entries[i].values.rows(), s.entries[i].values.rows());
    EXPECT_EQ(r.entries[i].values.data(), s.entries[i].values.data());
  }
  EXPECT_EQ(r.plan_fingerprint, s.plan_fingerprint);
}

TEST(Features, CorruptedCoefficientsAreDetected) {
  TempDir dir("corrupt");
  const auto plan = build_plan(gradcheck_params());
  io::write_features(dir.path, jtfs_forward(oracle::random_real(1024, 6), *plan), *plan);
  const fs::path file = dir.path / io::kCoefficientName;
  auto bytes = slurp(file);
  bytes[bytes.size() / 2] ^= 0x01;
  std::ofstream(file, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                              static_cast<std::streamsize>(bytes.size()));
  EXPECT_THROW(io::read_features(dir.path), FormatError);
}

TEST(Features, OutputIsByteIdenticalAcrossRuns) {
  TempDir a("bytes_a"), b("bytes_b");
  const auto plan = build_plan(gradcheck_params());
  const RealVec x = oracle::random_real(1024, 7);
  io::write_features(a.path, jtfs_forward(x, *plan), *plan);
  io::write_features(b.path, jtfs_forward(x, *build_plan(gradcheck_params())), *plan);
  for (const char* name : {io::kManifestName, io::kCoefficientName}) {
    EXPECT_EQ(slurp(a.path / name), slurp(b.path / name)) << name;
  }
}

TEST(Features, Sha256MatchesKnownDigest) {
  const std::string abc = "abc";
  EXPECT_EQ(io::sha256_hex({abc.begin(), abc.end()}),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
