// Radar scan representations: polar power grids, Cartesian projections,
// cyclic azimuth rotation, and the .rprs scan file format.
//
// Conventions: azimuth index a corresponds to bearing 2*pi*a/A, measured
// counter-clockwise from sensor-forward (+x). Range bin b sits at radius
// b*bin_size. Power values live in [0, 1].
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpr/binio.hpp"

namespace rpr {

struct PolarScan {
  std::size_t azimuths = 0;   // A
  std::size_t bins = 0;       // B
  double bin_size = 0.0;      // metres per range bin
  double timestamp = 0.0;     // seconds
  std::vector<double> power;  // A*B, row-major by azimuth

  double at(std::size_t a, std::size_t b) const { return power[a * bins + b]; }
  double& at(std::size_t a, std::size_t b) { return power[a * bins + b]; }

  void validate() const {
    if (azimuths < 1 || bins < 1 || bin_size <= 0.0) {
      throw std::invalid_argument("PolarScan: invalid geometry");
    }
    if (power.size() != azimuths * bins) {
      throw std::invalid_argument("PolarScan: power size mismatch");
    }
    for (double p : power) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument("PolarScan: power outside [0,1]");
      }
    }
  }
};

struct CartesianScan {
  std::size_t side = 0;       // W
  double pixel_size = 0.0;    // metres per pixel
  double timestamp = 0.0;     // seconds
  std::vector<double> power;  // W*W, row-major, row 0 at +y extreme

  double at(std::size_t row, std::size_t col) const {
    return power[row * side + col];
  }
  double& at(std::size_t row, std::size_t col) {
    return power[row * side + col];
  }
};

// Cyclic shift of the azimuthal returns: output row a is input row
// (a + r) mod A. Equivalent to rotating the sensor in place by 2*pi*r/A.
inline PolarScan rotate_azimuth(const PolarScan& scan, std::size_t r) {
  const std::size_t a_count = scan.azimuths;
  r %= a_count;
  PolarScan out = scan;
  if (r == 0) return out;
  for (std::size_t a = 0; a < a_count; ++a) {
    const std::size_t src = (a + r) % a_count;
    std::copy_n(scan.power.begin() + static_cast<std::ptrdiff_t>(src * scan.bins),
                scan.bins,
                out.power.begin() + static_cast<std::ptrdiff_t>(a * scan.bins));
  }
  return out;
}

namespace detail {

// Bilinear sample of the polar grid at fractional (azimuth, bin) coordinates.
// Azimuth wraps; radii between the last bin centre and B*bin_size hold the
// last bin's value so a uniform field stays uniform over the full range disc.
inline double sample_polar(const PolarScan& scan, double az_units,
                           double bin_units) {
  const auto a_count = static_cast<double>(scan.azimuths);
  az_units = std::fmod(az_units, a_count);
  if (az_units < 0.0) az_units += a_count;
  auto a0 = static_cast<std::size_t>(az_units);
  if (a0 >= scan.azimuths) a0 = scan.azimuths - 1;
  const std::size_t a1 = (a0 + 1) % scan.azimuths;
  const double fa = az_units - static_cast<double>(a0);

  if (bin_units < 0.0) bin_units = 0.0;
  const double last = static_cast<double>(scan.bins - 1);
  if (bin_units > last) bin_units = last;
  const auto b0 = static_cast<std::size_t>(bin_units);
  const double fb = bin_units - static_cast<double>(b0);
  const std::size_t b1 = std::min(b0 + 1, scan.bins - 1);
  const double v00 = scan.at(a0, b0);
  const double v10 = scan.at(a1, b0);
  const double v01 = scan.at(a0, b1);
  const double v11 = scan.at(a1, b1);
  return (1.0 - fa) * ((1.0 - fb) * v00 + fb * v01) +
         fa * ((1.0 - fb) * v10 + fb * v11);
}

}  // namespace detail

// Projects a polar scan onto a square metric grid centred on the sensor.
// Pixel (row, col) has metric centre
//   x = (col - (W-1)/2) * pixel_size,  y = ((W-1)/2 - row) * pixel_size,
// and samples the polar grid bilinearly at (range, bearing). Pixels beyond
// the maximum range B*bin_size are zero.
inline CartesianScan polar_to_cartesian(const PolarScan& scan, std::size_t side,
                                        double pixel_size) {
  if (side < 2) throw std::invalid_argument("polar_to_cartesian: side < 2");
  if (pixel_size <= 0.0) {
    throw std::invalid_argument("polar_to_cartesian: pixel_size <= 0");
  }
  CartesianScan out;
  out.side = side;
  out.pixel_size = pixel_size;
  out.timestamp = scan.timestamp;
  out.power.assign(side * side, 0.0);
  const double centre = (static_cast<double>(side) - 1.0) / 2.0;
  const double max_range = static_cast<double>(scan.bins) * scan.bin_size;
  const double az_per_rad =
      static_cast<double>(scan.azimuths) / (2.0 * M_PI);
  for (std::size_t row = 0; row < side; ++row) {
    const double y = (centre - static_cast<double>(row)) * pixel_size;
    for (std::size_t col = 0; col < side; ++col) {
      const double x = (static_cast<double>(col) - centre) * pixel_size;
      const double range = std::hypot(x, y);
      if (range > max_range) continue;
      double bearing = std::atan2(y, x);
      if (bearing < 0.0) bearing += 2.0 * M_PI;
      out.at(row, col) = detail::sample_polar(scan, bearing * az_per_rad,
                                              range / scan.bin_size);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// .rprs scan file: magic "RPRS", version u16 = 1, A u32, B u32,
// bin_size in micrometres u32, timestamp in microseconds u64, then A*B bytes
// of power quantised as round(p * 255), row-major by azimuth.

inline constexpr std::uint16_t kScanFormatVersion = 1;

inline void write_scan(std::ostream& os, const PolarScan& scan) {
  os.write("RPRS", 4);
  io::write_le<std::uint16_t>(os, kScanFormatVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(scan.azimuths));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(scan.bins));
  io::write_le<std::uint32_t>(
      os, static_cast<std::uint32_t>(std::llround(scan.bin_size * 1e6)));
  io::write_le<std::uint64_t>(
      os, static_cast<std::uint64_t>(std::llround(scan.timestamp * 1e6)));
  std::vector<unsigned char> bytes(scan.power.size());
  for (std::size_t i = 0; i < scan.power.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(scan.power[i] * 255.0));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
}

inline PolarScan read_scan(std::istream& is) {
  io::expect_magic(is, "RPRS", "scan file");
  const auto version = io::read_le<std::uint16_t>(is);
  if (version != kScanFormatVersion) {
    throw std::runtime_error("unsupported scan file version " +
                             std::to_string(version));
  }
  PolarScan scan;
  scan.azimuths = io::read_le<std::uint32_t>(is);
  scan.bins = io::read_le<std::uint32_t>(is);
  scan.bin_size = static_cast<double>(io::read_le<std::uint32_t>(is)) * 1e-6;
  scan.timestamp = static_cast<double>(io::read_le<std::uint64_t>(is)) * 1e-6;
  if (scan.azimuths < 1 || scan.bins < 1 || scan.bin_size <= 0.0) {
    throw std::runtime_error("scan file: invalid geometry");
  }
  std::vector<unsigned char> bytes(scan.azimuths * scan.bins);
  is.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!is) throw std::runtime_error("scan file truncated");
  scan.power.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    scan.power[i] = static_cast<double>(bytes[i]) / 255.0;
  }
  return scan;
}

inline void save_scan(const std::filesystem::path& path, const PolarScan& scan) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  write_scan(os, scan);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline PolarScan load_scan(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_scan(is);
}

}  // namespace rpr
