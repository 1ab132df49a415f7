// SPDX-License-Identifier: Apache-2.0
//
// Feature files: `manifest.json` describes every path in order, and
// `coefficients.f64` holds all values as little-endian float64, entries
// concatenated row-major in manifest order. The manifest carries the plan
// hyperparameters and the SHA-256 of the binary file.
#pragma once

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "jtfs/error.hpp"
#include "jtfs/filterbank.hpp"
#include "jtfs/scattering.hpp"

namespace jtfs::io {

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kCoefficientName = "coefficients.f64";

inline std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("SHA-256 computation failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return os.str();
}

inline std::vector<std::uint8_t> pack_coefficients(const CoefficientSet& set) {
  static_assert(std::endian::native == std::endian::little, "feature files are little-endian");
  std::vector<std::uint8_t> out(set.coefficient_count() * sizeof(double));
  std::size_t pos = 0;
  for (const auto& e : set.entries) {
    const auto& v = e.values.data();
    std::memcpy(out.data() + pos, v.data(), v.size() * sizeof(double));
    pos += v.size() * sizeof(double);
  }
  return out;
}

inline nlohmann::ordered_json make_manifest(const CoefficientSet& set, const FilterbankPlan& plan,
                                            const std::string& digest) {
  using nlohmann::ordered_json;
  const auto& p = plan.params;
  ordered_json m;
  m["format"] = "jtfs-features";
  m["version"] = 1;
  m["params"] = {{"J", p.J},         {"Q1", p.Q1},         {"Q2", p.Q2},         {"J_fr", p.J_fr},
                 {"Q_fr", p.Q_fr},   {"log2_T", p.log2_T}, {"log2_F", p.log2_F}, {"N_input", p.N_input},
                 {"N_padded", plan.N_padded}, {"N_fr_padded", plan.N_fr_padded}};
  m["fingerprint"] = set.plan_fingerprint;
  m["coefficients"] = kCoefficientName;
  m["dtype"] = "float64-le";
  m["sha256"] = digest;
  ordered_json paths = ordered_json::array();
  std::size_t offset = 0;
  for (const auto& e : set.entries) {
    ordered_json j;
    j["order"] = e.key.order;
    j["n2"] = e.key.n2 ? ordered_json(*e.key.n2) : ordered_json(nullptr);
    j["n_fr"] = e.key.n_fr ? ordered_json(*e.key.n_fr) : ordered_json(nullptr);
    j["spin"] = e.key.spin;
    j["j"] = {e.key.j1, e.key.j2, e.key.j_fr};
    j["rows"] = e.values.rows();
    j["cols"] = e.values.cols();
    j["log2_stride_time"] = e.log2_stride_time;
    j["log2_stride_freq"] = e.log2_stride_freq;
    j["u_log2_stride_time"] = e.u_log2_stride_time;
    j["u_log2_stride_freq"] = e.u_log2_stride_freq;
    j["n1_max"] = e.n1_max;
    j["offset"] = offset;
    offset += e.values.size();
    paths.push_back(std::move(j));
  }
  m["paths"] = std::move(paths);
  return m;
}

namespace detail {

inline void write_bytes(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Write the manifest and binary file into `dir`, creating it if needed.
inline void write_features(const std::filesystem::path& dir, const CoefficientSet& set,
                           const FilterbankPlan& plan) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto blob = pack_coefficients(set);
  detail::write_bytes(dir / kCoefficientName, std::string(blob.begin(), blob.end()));
  detail::write_bytes(dir / kManifestName, make_manifest(set, plan, sha256_hex(blob)).dump(2) + "\n");
}

/// Load a feature directory, verifying the hash and the declared shapes.
inline CoefficientSet read_features(const std::filesystem::path& dir) {
  nlohmann::json m;
  try {
    const auto text = detail::read_bytes(dir / kManifestName);
    m = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  const auto blob = detail::read_bytes(dir / m.at("coefficients").get<std::string>());
  if (sha256_hex(blob) != m.at("sha256").get<std::string>()) {
    throw FormatError("coefficients: content hash does not match the manifest");
  }
  CoefficientSet set;
  set.plan_fingerprint = m.at("fingerprint").get<std::string>();
  try {
    for (const auto& j : m.at("paths")) {
      CoefficientEntry e;
      e.key.order = j.at("order").get<int>();
      if (!j.at("n2").is_null()) e.key.n2 = j.at("n2").get<int>();
      if (!j.at("n_fr").is_null()) e.key.n_fr = j.at("n_fr").get<int>();
      e.key.spin = j.at("spin").get<int>();
      e.key.j1 = j.at("j").at(0).get<int>();
      e.key.j2 = j.at("j").at(1).get<int>();
      e.key.j_fr = j.at("j").at(2).get<int>();
      e.values = RealArray(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
      e.log2_stride_time = j.at("log2_stride_time").get<int>();
      e.log2_stride_freq = j.at("log2_stride_freq").get<int>();
      e.u_log2_stride_time = j.at("u_log2_stride_time").get<int>();
      e.u_log2_stride_freq = j.at("u_log2_stride_freq").get<int>();
      e.n1_max = j.at("n1_max").get<int>();
      const auto offset = j.at("offset").get<std::size_t>();
      const std::size_t bytes = e.values.size() * sizeof(double);
      if ((offset + e.values.size()) * sizeof(double) > blob.size()) {
        throw FormatError("coefficients: path " + e.key.to_string() + " runs past the end of the file");
      }
      std::memcpy(e.values.data().data(), blob.data() + offset * sizeof(double), bytes);
      set.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return set;
}

}  // namespace jtfs::io
