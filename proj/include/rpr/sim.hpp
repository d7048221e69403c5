// Synthetic 2D radar world: point scatterers, route planning with repeat
// and reverse revisits, Gaussian-blob scan rendering with speckle, and the
// on-disk trajectory layout (scans/NNNNNN.rprs + poses.csv + meta.json).
//
// The circuit is a dog-bone: a two-lane corridor with a turnaround loop at
// each end. A reversed second lap runs on the other side of the road, so
// corridor poses are revisited both at the same heading (the opposite lane)
// and reversed, while turnaround poses are revisited only reversed; this
// exercises both loop-closure categories downstream.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rpr/rng.hpp"
#include "rpr/scan.hpp"

namespace rpr {

struct Scatterer {
  double x = 0.0;
  double y = 0.0;
  double reflectivity = 0.0;  // in (0, 1]
};

struct WorldMap {
  std::vector<Scatterer> scatterers;
  double extent = 0.0;  // side of the square bounding box, centred on origin
  std::uint64_t seed = 0;
};

inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // radians in [-pi, pi)

  double distance_to(const Pose& other) const {
    return std::hypot(x - other.x, y - other.y);
  }
};

struct Trajectory {
  std::vector<PolarScan> scans;
  std::vector<Pose> poses;
  double frame_period = 0.0;  // seconds

  std::size_t size() const { return scans.size(); }

  void validate() const {
    if (scans.size() != poses.size() || scans.size() < 2) {
      throw std::invalid_argument("Trajectory: need >= 2 aligned scans/poses");
    }
    for (std::size_t i = 1; i < scans.size(); ++i) {
      const double dt = scans[i].timestamp - scans[i - 1].timestamp;
      if (dt <= 0.0) {
        throw std::invalid_argument("Trajectory: timestamps not increasing");
      }
      if (std::abs(dt - frame_period) > 1e-9) {
        throw std::invalid_argument("Trajectory: non-uniform frame period");
      }
    }
  }
};

struct NoiseSpec {
  double speckle = 0.0;  // mixing weight of unit-mean exponential speckle
  double floor = 0.0;    // additive uniform noise in [0, floor]

  bool none() const { return speckle == 0.0 && floor == 0.0; }
};

enum class RouteKind { loop_repeat, loop_reverse, figure_eight };

inline RouteKind route_kind_from_string(const std::string& s) {
  if (s == "loop_repeat") return RouteKind::loop_repeat;
  if (s == "loop_reverse") return RouteKind::loop_reverse;
  if (s == "figure_eight") return RouteKind::figure_eight;
  throw std::invalid_argument("unknown route kind: " + s);
}

inline std::string to_string(RouteKind kind) {
  switch (kind) {
    case RouteKind::loop_repeat: return "loop_repeat";
    case RouteKind::loop_reverse: return "loop_reverse";
    case RouteKind::figure_eight: return "figure_eight";
  }
  return "?";
}

// Uniform scatterer field over the extent box, reflectivity uniform in
// (0.2, 1]. Deterministic for a fixed seed.
inline WorldMap generate_world(std::uint64_t seed, std::size_t n_scatterers,
                               double extent) {
  if (n_scatterers < 1) {
    throw std::invalid_argument("generate_world: need >= 1 scatterer");
  }
  Rng rng = Rng::substream(seed, stream::kWorld);
  WorldMap map;
  map.extent = extent;
  map.seed = seed;
  map.scatterers.reserve(n_scatterers);
  const double half = extent / 2.0;
  for (std::size_t i = 0; i < n_scatterers; ++i) {
    Scatterer s;
    s.x = rng.uniform(-half, half);
    s.y = rng.uniform(-half, half);
    s.reflectivity = 1.0 - 0.8 * rng.uniform();  // (0.2, 1]
    map.scatterers.push_back(s);
  }
  return map;
}

namespace detail {

// Dog-bone circuit of total arc length `length`: a two-lane corridor (the
// outbound lane at y=0 heading +x, the return lane at y=lane_sep heading
// -x) with a large turnaround loop at each end. Each turnaround swings
// outward on a tight arc, drives a near-full circle of radius `loop_r`, and
// swings back in, for a net heading change of 180 degrees and a net lateral
// displacement of one lane separation. The loops keep every pose on them
// more than a ground-truth radius away from any same-heading partner, so
// revisits there are reverse-only, while the corridor pairs lanes a few
// metres apart.
struct Track {
  static constexpr double kLaneSep = 4.0;  // corridor lane separation
  static constexpr double kSwingR = 2.0;   // swing-out arc radius
  double loop_r = 0.0;  // turnaround loop radius, scales with the circuit

  struct Segment {
    double len = 0.0;        // arc length
    double curvature = 0.0;  // dheading/ds (0 = straight line)
    double x0 = 0.0, y0 = 0.0, h0 = 0.0;  // pose at segment start
  };
  std::vector<Segment> segments;
  double total = 0.0;
  double cx = 0.0, cy = 0.0;  // bounding-box centre, subtracted in at()

  explicit Track(double length) {
    loop_r = length / 22.0;
    if (loop_r <= kLaneSep / 2.0 + 1.0) {
      throw std::invalid_argument("plan_route: circuit too short");
    }
    // Swing angle: net lateral displacement of one turnaround must equal
    // the lane separation: 2*loop_r*cos(beta) - 2*swing_r*(1-cos(beta))
    // = lane_sep.
    const double cos_beta =
        (kLaneSep / 2.0 + kSwingR) / (loop_r + kSwingR);
    const double beta = std::acos(cos_beta);
    const double turnaround =
        2.0 * kSwingR * beta + loop_r * (M_PI + 2.0 * beta);
    const double corridor = (length - 2.0 * turnaround) / 2.0;
    if (corridor <= 0.0) {
      throw std::invalid_argument("plan_route: circuit too short");
    }
    const double segs[][2] = {
        // {length, curvature}; CCW positive
        {corridor, 0.0},                                   // outbound lane
        {kSwingR * beta, -1.0 / kSwingR},                  // swing out
        {loop_r * (M_PI + 2.0 * beta), 1.0 / loop_r},      // right loop
        {kSwingR * beta, -1.0 / kSwingR},                  // swing in
        {corridor, 0.0},                                   // return lane
        {kSwingR * beta, -1.0 / kSwingR},                  // swing out
        {loop_r * (M_PI + 2.0 * beta), 1.0 / loop_r},      // left loop
        {kSwingR * beta, -1.0 / kSwingR},                  // swing in
    };
    double x = 0.0, y = 0.0, h = 0.0;
    double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
    for (const auto& sg : segs) {
      segments.push_back({sg[0], sg[1], x, y, h});
      total += sg[0];
      // advance the frame to the segment end, tracking loop extremes
      // (sampling the segment coarsely is enough for centring purposes)
      const int steps = 64;
      for (int i = 1; i <= steps; ++i) {
        const double t = sg[0] * static_cast<double>(i) / steps;
        double xe = x, ye = y;
        if (sg[1] == 0.0) {
          xe += t * std::cos(h);
          ye += t * std::sin(h);
        } else {
          xe += (std::sin(h + sg[1] * t) - std::sin(h)) / sg[1];
          ye += (std::cos(h) - std::cos(h + sg[1] * t)) / sg[1];
        }
        x_min = std::min(x_min, xe);
        x_max = std::max(x_max, xe);
        y_min = std::min(y_min, ye);
        y_max = std::max(y_max, ye);
        if (i == steps) {
          x = xe;
          y = ye;
        }
      }
      h += sg[1] * sg[0];
    }
    cx = (x_min + x_max) / 2.0;
    cy = (y_min + y_max) / 2.0;
  }

  double length() const { return total; }

  // Pose at arc-length s (s in [0, length)), centred on the origin.
  Pose at(double s) const {
    for (const Segment& sg : segments) {
      if (s < sg.len || &sg == &segments.back()) {
        Pose p{sg.x0, sg.y0, sg.h0};
        if (sg.curvature == 0.0) {
          p.x += s * std::cos(p.heading);
          p.y += s * std::sin(p.heading);
        } else {
          const double h1 = p.heading + sg.curvature * s;
          p.x += (std::sin(h1) - std::sin(p.heading)) / sg.curvature;
          p.y += (std::cos(p.heading) - std::cos(h1)) / sg.curvature;
          p.heading = h1;
        }
        p.heading = wrap_angle(p.heading);
        p.x -= cx;
        p.y -= cy;
        return p;
      }
      s -= sg.len;
    }
    return {};
  }
};

// Figure-eight: two tangent circles through the origin, traversed with
// continuous heading.
inline Pose figure_eight_at(double s, double length) {
  const double r = length / (4.0 * M_PI);
  Pose p;
  if (s < 2.0 * M_PI * r) {  // right lobe, counter-clockwise
    const double phi = s / r;
    p.x = r - r * std::cos(phi);
    p.y = r * std::sin(phi);
    p.heading = wrap_angle(M_PI / 2.0 - phi);
  } else {  // left lobe, clockwise
    const double phi = (s - 2.0 * M_PI * r) / r;
    p.x = -r + r * std::cos(phi);
    p.y = r * std::sin(phi);
    p.heading = wrap_angle(M_PI / 2.0 + phi);
  }
  return p;
}

// Small lateral in-lane jitter, phase-shifted per lap so the two traversals
// do not coincide exactly. Peak-to-peak well under 1 m.
inline Pose jittered(Pose p, double s, double length, int lap) {
  const double off =
      0.05 * std::sin(2.0 * M_PI * 5.0 * s / length + 1.3 * lap);
  p.x += -std::sin(p.heading) * off;
  p.y += std::cos(p.heading) * off;
  return p;
}

// Lateral lane offset of the reversed lap: a vehicle returning along the
// circuit drives on the other side of the road, 3 m along the left normal
// of the forward direction. The parallel path stays non-degenerate
// everywhere (swing arcs curve away from the offset side, loop arcs have
// radius well above the offset).
inline constexpr double kReverseLaneOffset = 3.0;

}  // namespace detail

// Pose sequence along the requested route. `length` is the circuit arc
// length of one lap; pose spacing is speed * frame_period along arc length.
// loop_repeat and loop_reverse traverse the circuit twice (the second lap
// repeated or reversed), figure_eight once.
inline std::vector<Pose> plan_route(RouteKind kind, double length, double speed,
                                    double frame_period) {
  if (speed <= 0.0 || frame_period <= 0.0 || length <= 0.0) {
    throw std::invalid_argument("plan_route: invalid speed/period/length");
  }
  const double spacing = speed * frame_period;
  std::vector<Pose> poses;
  if (kind == RouteKind::figure_eight) {
    const auto n = static_cast<std::size_t>(length / spacing);
    for (std::size_t i = 0; i < n; ++i) {
      poses.push_back(detail::figure_eight_at(static_cast<double>(i) * spacing,
                                              length));
    }
    return poses;
  }
  const detail::Track track(length);
  const double lap = track.length();
  const auto n = static_cast<std::size_t>(lap / spacing);
  for (std::size_t i = 0; i < n; ++i) {  // lap 1, forward
    const double s = static_cast<double>(i) * spacing;
    poses.push_back(detail::jittered(track.at(s), s, lap, 0));
  }
  for (std::size_t i = 0; i < n; ++i) {  // lap 2
    if (kind == RouteKind::loop_repeat) {
      const double s = static_cast<double>(i) * spacing;
      poses.push_back(detail::jittered(track.at(s), s, lap, 1));
    } else {
      const double s = lap - static_cast<double>(i + 1) * spacing;
      Pose p = track.at(s);
      // return lane: shifted along the interior (left) normal of the
      // forward traversal, so reversed revisits are offset laterally
      const double off = detail::kReverseLaneOffset;
      p.x += -std::sin(p.heading) * off;
      p.y += std::cos(p.heading) * off;
      p = detail::jittered(p, s, lap, 1);
      p.heading = wrap_angle(p.heading + M_PI);
      poses.push_back(p);
    }
  }
  return poses;
}

// Renders one polar scan. Each scatterer within range deposits a Gaussian
// blob (sigma_range = 2 bins, sigma_azimuth = 1.5 azimuth steps) at its
// (range, bearing) relative to the pose, scaled by reflectivity and
// 1/(1 + range/100). Speckle is multiplicative unit-mean exponential mixed
// by noise.speckle, the floor additive uniform; the result clips to [0,1].
inline PolarScan render_scan(const WorldMap& map, const Pose& pose,
                             std::size_t a_count, std::size_t b_count,
                             double bin_size, const NoiseSpec& noise,
                             Rng& rng) {
  if (a_count < 1 || b_count < 1 || bin_size <= 0.0) {
    throw std::invalid_argument("render_scan: invalid geometry");
  }
  PolarScan scan;
  scan.azimuths = a_count;
  scan.bins = b_count;
  scan.bin_size = bin_size;
  scan.power.assign(a_count * b_count, 0.0);

  const double max_range = static_cast<double>(b_count) * bin_size;
  const double sigma_az = 1.5;
  const double sigma_bin = 4.0;
  const double az_per_rad = static_cast<double>(a_count) / (2.0 * M_PI);
  // Heading in azimuth units; snapped to the grid when within 1e-9. The
  // integer part becomes an exact cyclic row shift and only the fractional
  // remainder enters the floating-point blob-centre arithmetic, so headings
  // a whole azimuth step apart render as bit-identical row rotations.
  double h_units = pose.heading * az_per_rad;
  const double h_round = std::round(h_units);
  if (std::abs(h_units - h_round) < 1e-9) h_units = h_round;
  const double h_floor = std::floor(h_units);
  const double h_frac = h_units - h_floor;
  const long a_long = static_cast<long>(a_count);
  const std::size_t row_shift = static_cast<std::size_t>(
      ((static_cast<long>(h_floor) % a_long) + a_long) % a_long);

  const auto bin_span = static_cast<long>(std::ceil(4.0 * sigma_bin));
  for (const Scatterer& sc : map.scatterers) {
    const double dx = sc.x - pose.x;
    const double dy = sc.y - pose.y;
    const double range = std::hypot(dx, dy);
    if (range >= max_range || range <= 0.0) continue;
    double bearing = std::atan2(dy, dx);
    if (bearing < 0.0) bearing += 2.0 * M_PI;
    const double mu_az = bearing * az_per_rad;  // world-frame azimuth units
    const double mu_bin = range / bin_size;
    const double amp = sc.reflectivity / (1.0 + range / 100.0);
    const auto b_lo = std::max(0L, std::lround(mu_bin) - bin_span);
    const auto b_hi = std::min(static_cast<long>(b_count) - 1,
                               std::lround(mu_bin) + bin_span);
    const double mu_eff = mu_az - h_frac;  // blob centre net of the remainder
    for (std::size_t a = 0; a < a_count; ++a) {
      // cyclic signed distance from row a (sensor frame) to the blob centre
      const std::size_t a_eff = (a + row_shift) % a_count;
      double da = static_cast<double>(a_eff) - mu_eff;
      if (da < -static_cast<double>(a_count) / 2.0) {
        da += static_cast<double>(a_count);
      } else if (da >= static_cast<double>(a_count) / 2.0) {
        da -= static_cast<double>(a_count);
      }
      if (std::abs(da) > 4.0 * sigma_az) continue;
      const double wa = std::exp(-0.5 * (da / sigma_az) * (da / sigma_az));
      for (long b = b_lo; b <= b_hi; ++b) {
        const double db = (static_cast<double>(b) - mu_bin) / sigma_bin;
        scan.at(a, static_cast<std::size_t>(b)) +=
            amp * wa * std::exp(-0.5 * db * db);
      }
    }
  }

  if (!noise.none()) {
    for (double& p : scan.power) {
      if (noise.speckle > 0.0) {
        p *= (1.0 - noise.speckle) + noise.speckle * rng.exponential();
      }
      if (noise.floor > 0.0) p += rng.uniform(0.0, noise.floor);
    }
  }
  for (double& p : scan.power) p = std::clamp(p, 0.0, 1.0);
  return scan;
}

struct SimConfig {
  std::uint64_t seed = 0;  // 0 = derive from the run-level seed
  RouteKind route = RouteKind::loop_reverse;
  std::size_t n_scatterers = 500;
  double extent = 500.0;          // metres
  double circuit_length = 880.0;  // metres per lap
  double speed = 5.0;             // m/s
  double frame_period = 0.25;     // seconds
  std::size_t azimuths = 64;
  std::size_t bins = 256;
  double bin_size = 0.5;
  NoiseSpec noise{0.35, 0.02};
  std::size_t frames = 0;  // 0 = all planned poses; otherwise truncate
};

// Full simulation: world + route + per-frame rendering. Bit-deterministic
// for a fixed config; frame i gets its own noise sub-stream.
inline Trajectory simulate(const SimConfig& cfg) {
  const WorldMap map = generate_world(cfg.seed, cfg.n_scatterers, cfg.extent);
  std::vector<Pose> poses =
      plan_route(cfg.route, cfg.circuit_length, cfg.speed, cfg.frame_period);
  if (cfg.frames > 0) {
    if (cfg.frames > poses.size()) {
      throw std::invalid_argument("simulate: route shorter than --frames");
    }
    poses.resize(cfg.frames);
  }
  Trajectory traj;
  traj.frame_period = cfg.frame_period;
  traj.poses = poses;
  traj.scans.reserve(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    Rng rng = Rng::substream(cfg.seed, stream::kNoise, i);
    PolarScan scan = render_scan(map, poses[i], cfg.azimuths, cfg.bins,
                                 cfg.bin_size, cfg.noise, rng);
    scan.timestamp =
        static_cast<double>(i) * cfg.frame_period;
    traj.scans.push_back(std::move(scan));
  }
  traj.validate();
  return traj;
}

// ---------------------------------------------------------------------------
// Trajectory directory layout

inline std::string frame_name(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu.rprs", index);
  return buf;
}

inline void save_poses_csv(const std::filesystem::path& path,
                           const std::vector<Pose>& poses,
                           const std::vector<double>& timestamps) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << "index,timestamp_s,x_m,y_m,heading_rad\n";
  char line[160];
  for (std::size_t i = 0; i < poses.size(); ++i) {
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.9f,%.9f,%.9f\n", i,
                  timestamps[i], poses[i].x, poses[i].y, poses[i].heading);
    os << line;
  }
}

inline std::vector<Pose> load_poses_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string header;
  std::getline(is, header);
  std::vector<Pose> poses;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    Pose p;
    std::size_t index;
    double t;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf", &index, &t, &p.x,
                    &p.y, &p.heading) != 5) {
      throw std::runtime_error("malformed pose line: " + line);
    }
    poses.push_back(p);
  }
  return poses;
}

inline void save_trajectory(const std::filesystem::path& dir,
                            const Trajectory& traj, const SimConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "scans");
  std::vector<double> timestamps;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    save_scan(dir / "scans" / frame_name(i), traj.scans[i]);
    timestamps.push_back(traj.scans[i].timestamp);
  }
  save_poses_csv(dir / "poses.csv", traj.poses, timestamps);
  nlohmann::json meta{{"seed", cfg.seed},
                      {"route", to_string(cfg.route)},
                      {"n_scatterers", cfg.n_scatterers},
                      {"extent_m", cfg.extent},
                      {"circuit_length_m", cfg.circuit_length},
                      {"speed_mps", cfg.speed},
                      {"frame_period_s", cfg.frame_period},
                      {"azimuths", cfg.azimuths},
                      {"bins", cfg.bins},
                      {"bin_size_m", cfg.bin_size},
                      {"noise_speckle", cfg.noise.speckle},
                      {"noise_floor", cfg.noise.floor},
                      {"frames", traj.size()}};
  std::ofstream os(dir / "meta.json");
  os << meta.dump(2) << "\n";
}

inline Trajectory load_trajectory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  Trajectory traj;
  traj.poses = load_poses_csv(dir / "poses.csv");
  traj.scans.reserve(traj.poses.size());
  for (std::size_t i = 0; i < traj.poses.size(); ++i) {
    traj.scans.push_back(load_scan(dir / "scans" / frame_name(i)));
  }
  if (traj.size() >= 2) {
    traj.frame_period = traj.scans[1].timestamp - traj.scans[0].timestamp;
  }
  traj.validate();
  return traj;
}

}  // namespace rpr
