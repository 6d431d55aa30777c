#pragma once

#include <filesystem>
#include <string>

#include "fva/numerics.hpp"

namespace fva::test {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                            double scale = 1.0) {
  RandomStream rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  return m;
}

inline Vector random_vector(Eigen::Index n, std::uint64_t seed, double scale = 1.0) {
  return random_matrix(1, n, seed, scale).row(0).transpose();
}

// Fresh empty directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("fva-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

}  // namespace fva::test

#include <cstring>
#include <vector>

namespace fva::test {

// Hand-assembled EMB1 bytes, independent of the library encoder.
struct Emb1Bytes {
  std::string bytes;

  void u8(std::uint8_t v) { bytes.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    u32(u);
  }
  void raw(const std::string& s) { bytes += s; }

  void header(std::uint32_t dim, std::uint64_t count, std::uint8_t modality = 1,
              std::uint32_t version = 1, const char* magic = "EMB1") {
    raw(std::string(magic, 4));
    u32(version);
    u8(modality);
    u32(dim);
    u64(count);
  }
  void record(const std::string& id, const std::vector<float>& values) {
    u16(static_cast<std::uint16_t>(id.size()));
    raw(id);
    for (float f : values) f32(f);
  }
};

}  // namespace fva::test
