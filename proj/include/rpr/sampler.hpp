// Mini-batch construction under the vR / vT / vTR / vTR2 strategies.
//
// Time windows are given in seconds and converted to frame offsets with
// seconds_to_frames. Rotations are applied to the polar scan before the
// Cartesian conversion.
#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpr/rng.hpp"
#include "rpr/scan.hpp"
#include "rpr/sim.hpp"

namespace rpr {

enum class Strategy { vR, vT, vTR, vTR2 };

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "vR") return Strategy::vR;
  if (s == "vT") return Strategy::vT;
  if (s == "vTR") return Strategy::vTR;
  if (s == "vTR2") return Strategy::vTR2;
  throw std::invalid_argument("unknown strategy: " + s);
}

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::vR: return "vR";
    case Strategy::vT: return "vT";
    case Strategy::vTR: return "vTR";
    case Strategy::vTR2: return "vTR2";
  }
  return "?";
}

struct SamplerConfig {
  Strategy strategy = Strategy::vTR2;
  std::size_t batch_size = 12;  // m
  double d_min_s = 2.0;
  double d_max_s = 6.0;
  // When true, augmentations of vTR2 paired negatives use offsets in
  // [K_min, K_max] as in the displayed equations, instead of [0, K_min].
  bool literal_vtr2_augmentation = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(d_min_s > 0.0 && d_min_s < d_max_s)) {
      throw std::invalid_argument("SamplerConfig: need 0 < d_min < d_max");
    }
    if (batch_size < 2) {
      throw std::invalid_argument("SamplerConfig: batch_size >= 2");
    }
    if (strategy == Strategy::vTR2 && batch_size % 2 != 0) {
      throw std::invalid_argument("SamplerConfig: vTR2 needs even batch_size");
    }
  }
};

struct Batch {
  std::vector<CartesianScan> instances;      // x_1 .. x_m
  std::vector<CartesianScan> augmentations;  // x^_1 .. x^_m
  std::vector<std::size_t> instance_indices;
  std::vector<std::size_t> augmentation_indices;
  std::vector<std::size_t> applied_rotations;  // azimuth offsets of x^_i
};

struct CartesianGeometry {
  std::size_t side = 64;
  double pixel_size = 2.0;
};

inline std::size_t seconds_to_frames(double t, double frame_period) {
  if (frame_period <= 0.0) {
    throw std::invalid_argument("seconds_to_frames: frame_period <= 0");
  }
  return static_cast<std::size_t>(t / frame_period);
}

namespace detail {

inline std::vector<std::size_t> draw_distinct(std::size_t count, std::size_t n,
                                              Rng& rng) {
  std::set<std::size_t> used;
  std::vector<std::size_t> out;
  while (out.size() < count) {
    const std::size_t i = rng.uniform_index(n);
    if (used.insert(i).second) out.push_back(i);
  }
  return out;
}

// Augmentation index at a temporal offset in [k_lo, k_hi] from base.
// Offsets run forward and are resampled (not clamped) near the trajectory
// end; when no forward offset can fit at all, the window applies backwards.
inline std::size_t draw_augmentation(std::size_t base, std::size_t k_lo,
                                     std::size_t k_hi, std::size_t n,
                                     Rng& rng) {
  const bool forwards = base + k_lo < n;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const std::size_t k = k_lo + rng.uniform_index(k_hi - k_lo + 1);
    if (forwards) {
      if (base + k < n) return base + k;
    } else if (base >= k) {
      return base - k;
    }
  }
  throw std::runtime_error("sample_batch: no valid augmentation offset");
}

}  // namespace detail

// Draws one training batch. Preconditions: the trajectory must be long
// enough that every offset window fits (|scans| > 2 * frames(d_max)).
inline Batch sample_batch(const Trajectory& traj, const SamplerConfig& cfg,
                          const CartesianGeometry& geom, Rng& rng) {
  cfg.validate();
  const std::size_t n = traj.size();
  const std::size_t k_min = seconds_to_frames(cfg.d_min_s, traj.frame_period);
  const std::size_t k_max = seconds_to_frames(cfg.d_max_s, traj.frame_period);
  if (n <= 2 * k_max) {
    throw std::invalid_argument("sample_batch: trajectory too short");
  }
  const std::size_t m = cfg.batch_size;
  const std::size_t a_count = traj.scans.front().azimuths;

  Batch batch;
  const bool rotate = cfg.strategy != Strategy::vT;

  if (cfg.strategy == Strategy::vTR2) {
    // m/2 anchors, each paired with a hard negative at offset in
    // [K_min, K_max] (random sign), all source indices distinct.
    std::set<std::size_t> used;
    const auto anchors = detail::draw_distinct(m / 2, n, rng);
    used.insert(anchors.begin(), anchors.end());
    batch.instance_indices = anchors;
    for (const std::size_t anchor : anchors) {
      std::size_t negative = n;  // invalid
      for (int attempt = 0; attempt < 1000; ++attempt) {
        const std::size_t k = k_min + rng.uniform_index(k_max - k_min + 1);
        const bool backwards = rng.uniform_index(2) == 1;
        if (backwards) {
          if (anchor < k) continue;
          negative = anchor - k;
        } else {
          if (anchor + k >= n) continue;
          negative = anchor + k;
        }
        if (used.insert(negative).second) break;
        negative = n;
      }
      if (negative == n) {
        throw std::runtime_error("sample_batch: cannot place paired negative");
      }
      batch.instance_indices.push_back(negative);
    }
  } else {
    batch.instance_indices = detail::draw_distinct(m, n, rng);
  }

  for (std::size_t slot = 0; slot < m; ++slot) {
    const std::size_t src = batch.instance_indices[slot];
    std::size_t aug = src;
    if (cfg.strategy != Strategy::vR) {
      const bool literal_window = cfg.strategy == Strategy::vTR2 &&
                                  cfg.literal_vtr2_augmentation &&
                                  slot >= m / 2;
      aug = literal_window
                ? detail::draw_augmentation(src, k_min, k_max, n, rng)
                : detail::draw_augmentation(src, 0, k_min, n, rng);
    }
    const std::size_t r = rotate ? rng.uniform_index(a_count) : 0;
    batch.augmentation_indices.push_back(aug);
    batch.applied_rotations.push_back(r);
    batch.instances.push_back(polar_to_cartesian(traj.scans[src], geom.side,
                                                 geom.pixel_size));
    const PolarScan& aug_polar = traj.scans[aug];
    batch.augmentations.push_back(polar_to_cartesian(
        r == 0 ? aug_polar : rotate_azimuth(aug_polar, r), geom.side,
        geom.pixel_size));
  }
  return batch;
}

}  // namespace rpr
