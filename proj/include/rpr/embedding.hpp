// Embedding containers and the .rpem embedding file format.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "rpr/binio.hpp"

namespace rpr {

using Embedding = std::vector<double>;  // unit-norm, length d

inline constexpr double kVarianceFloor = 1e-6;

// Per-dimension mean and (floored) unbiased variance of T stochastic
// forward passes, computed on pre-normalisation outputs.
struct EmbeddingFamily {
  std::vector<double> mean;
  std::vector<double> variance;  // elementwise >= kVarianceFloor
  std::size_t sample_count = 0;
};

inline double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline Embedding l2_normalized(const std::vector<double>& v) {
  const double n = l2_norm(v);
  if (n == 0.0) throw std::runtime_error("cannot normalise zero vector");
  Embedding out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

// ---------------------------------------------------------------------------
// .rpem embedding file: magic "RPEM", version u16 = 1, mode u8
// (0 = point, 1 = family), count u32, dim u32, sample_count u32
// (0 in point mode), then 32-bit reals: per frame either the embedding, or
// the mean followed by the variance.

inline constexpr std::uint16_t kEmbeddingFormatVersion = 1;

inline void save_point_embeddings(const std::filesystem::path& path,
                                  const std::vector<Embedding>& embeddings) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os.write("RPEM", 4);
  io::write_le<std::uint16_t>(os, kEmbeddingFormatVersion);
  io::write_le<std::uint8_t>(os, 0);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(embeddings.size()));
  const std::size_t d = embeddings.empty() ? 0 : embeddings[0].size();
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  io::write_le<std::uint32_t>(os, 0);
  for (const auto& e : embeddings) {
    for (double v : e) io::write_f32(os, static_cast<float>(v));
  }
}

inline void save_family_embeddings(const std::filesystem::path& path,
                                   const std::vector<EmbeddingFamily>& fams) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os.write("RPEM", 4);
  io::write_le<std::uint16_t>(os, kEmbeddingFormatVersion);
  io::write_le<std::uint8_t>(os, 1);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(fams.size()));
  const std::size_t d = fams.empty() ? 0 : fams[0].mean.size();
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  io::write_le<std::uint32_t>(
      os, fams.empty() ? 0
                       : static_cast<std::uint32_t>(fams[0].sample_count));
  for (const auto& f : fams) {
    for (double v : f.mean) io::write_f32(os, static_cast<float>(v));
    for (double v : f.variance) io::write_f32(os, static_cast<float>(v));
  }
}

struct EmbeddingFile {
  bool is_family = false;
  std::size_t sample_count = 0;
  std::vector<Embedding> points;         // point mode
  std::vector<EmbeddingFamily> families; // family mode

  std::size_t count() const {
    return is_family ? families.size() : points.size();
  }
};

inline EmbeddingFile load_embeddings(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  io::expect_magic(is, "RPEM", "embedding file");
  const auto version = io::read_le<std::uint16_t>(is);
  if (version != kEmbeddingFormatVersion) {
    throw std::runtime_error("unsupported embedding file version");
  }
  EmbeddingFile out;
  out.is_family = io::read_le<std::uint8_t>(is) == 1;
  const auto count = io::read_le<std::uint32_t>(is);
  const auto d = io::read_le<std::uint32_t>(is);
  out.sample_count = io::read_le<std::uint32_t>(is);
  auto read_vec = [&](std::size_t len) {
    std::vector<double> v(len);
    for (auto& x : v) x = static_cast<double>(io::read_f32(is));
    return v;
  };
  for (std::uint32_t i = 0; i < count; ++i) {
    if (out.is_family) {
      EmbeddingFamily f;
      f.mean = read_vec(d);
      f.variance = read_vec(d);
      f.sample_count = out.sample_count;
      out.families.push_back(std::move(f));
    } else {
      out.points.push_back(read_vec(d));
    }
  }
  return out;
}

}  // namespace rpr
