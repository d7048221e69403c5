// Place-similarity metrics, the ring-key baseline descriptor, and the
// retrieval evaluation harness: ground-truth/distance matrices, Recall@P,
// Recall@N, F-scores, AUC, and the rpt/rev loop-closure decomposition.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rpr/embedding.hpp"
#include "rpr/scan.hpp"
#include "rpr/sim.hpp"

namespace rpr {

enum class Metric { cosine, euclidean, kl };

inline Metric metric_from_string(const std::string& s) {
  if (s == "cosine") return Metric::cosine;
  if (s == "euclidean") return Metric::euclidean;
  if (s == "kl") return Metric::kl;
  throw std::invalid_argument("unknown metric: " + s);
}

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::cosine: return "cosine";
    case Metric::euclidean: return "euclidean";
    case Metric::kl: return "kl";
  }
  return "?";
}

// rows = queries (localisation run), cols = database (map run)
struct DistanceMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  Metric metric = Metric::cosine;

  double at(std::size_t q, std::size_t c) const { return values[q * cols + c]; }
  double& at(std::size_t q, std::size_t c) { return values[q * cols + c]; }
};

enum class GtEntry : std::int8_t { negative = 0, positive = 1, ignored = 2 };

struct GroundTruthMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<GtEntry> entries;
  double boundary_m = 0.0;

  GtEntry at(std::size_t q, std::size_t c) const { return entries[q * cols + c]; }
  GtEntry& at(std::size_t q, std::size_t c) { return entries[q * cols + c]; }
};

// ---------------------------------------------------------------------------
// Similarity metrics

// Symmetrised diagonal-Gaussian KL (Jeffreys):
// 0.5 * [KL(Na||Nb) + KL(Nb||Na)] with
// KL(N1||N2) = 0.5 * sum [log(v2/v1) + (v1 + (m1-m2)^2)/v2 - 1].
inline double kl_similarity(const EmbeddingFamily& a, const EmbeddingFamily& b,
                            bool symmetrised = true) {
  if (a.mean.size() != b.mean.size()) {
    throw std::invalid_argument("kl_similarity: dimension mismatch");
  }
  double kl_ab = 0.0;
  double kl_ba = 0.0;
  for (std::size_t i = 0; i < a.mean.size(); ++i) {
    const double v1 = a.variance[i];
    const double v2 = b.variance[i];
    const double dm = a.mean[i] - b.mean[i];
    kl_ab += 0.5 * (std::log(v2 / v1) + (v1 + dm * dm) / v2 - 1.0);
    kl_ba += 0.5 * (std::log(v1 / v2) + (v2 + dm * dm) / v1 - 1.0);
  }
  return symmetrised ? 0.5 * (kl_ab + kl_ba) : kl_ab;
}

inline double vector_distance(const std::vector<double>& f,
                              const std::vector<double>& g, Metric metric) {
  if (f.size() != g.size()) {
    throw std::invalid_argument("vector_distance: dimension mismatch");
  }
  if (metric == Metric::cosine) {
    double dot = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) dot += f[i] * g[i];
    return 1.0 - dot;
  }
  if (metric == Metric::euclidean) {
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double d = f[i] - g[i];
      s += d * d;
    }
    return std::sqrt(s);
  }
  throw std::invalid_argument("vector_distance: kl needs families");
}

inline DistanceMatrix distance_matrix(const std::vector<Embedding>& queries,
                                      const std::vector<Embedding>& database,
                                      Metric metric) {
  DistanceMatrix dm;
  dm.rows = queries.size();
  dm.cols = database.size();
  dm.metric = metric;
  dm.values.resize(dm.rows * dm.cols);
  for (std::size_t q = 0; q < dm.rows; ++q) {
    for (std::size_t c = 0; c < dm.cols; ++c) {
      dm.at(q, c) = vector_distance(queries[q], database[c], metric);
    }
  }
  return dm;
}

inline DistanceMatrix distance_matrix(
    const std::vector<EmbeddingFamily>& queries,
    const std::vector<EmbeddingFamily>& database, bool symmetrised = true) {
  DistanceMatrix dm;
  dm.rows = queries.size();
  dm.cols = database.size();
  dm.metric = Metric::kl;
  dm.values.resize(dm.rows * dm.cols);
  for (std::size_t q = 0; q < dm.rows; ++q) {
    for (std::size_t c = 0; c < dm.cols; ++c) {
      dm.at(q, c) = kl_similarity(queries[q], database[c], symmetrised);
    }
  }
  return dm;
}

// ---------------------------------------------------------------------------
// Ring-key descriptor: mean-pool the polar scan to 120 x 40 with
// area-weighted averaging, then average over the 120 azimuths.

inline constexpr std::size_t kRingKeyAzimuths = 120;
inline constexpr std::size_t kRingKeyBins = 40;

namespace detail {

// Area-weighted mean pooling of `n` source cells into `m` output cells.
// Source cell i contributes to output cells overlapping [i, i+1) / (n/m).
inline void pool_1d_accumulate(std::size_t n, std::size_t m,
                               std::vector<std::vector<std::pair<std::size_t, double>>>& out) {
  out.assign(m, {});
  const double ratio = static_cast<double>(n) / static_cast<double>(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double lo = static_cast<double>(j) * ratio;
    const double hi = lo + ratio;
    for (std::size_t i = static_cast<std::size_t>(lo);
         i < n && static_cast<double>(i) < hi; ++i) {
      const double overlap =
          std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
      if (overlap > 0.0) out[j].emplace_back(i, overlap / ratio);
    }
  }
}

}  // namespace detail

using RingKey = std::vector<double>;  // length 40

inline RingKey ring_key(const PolarScan& scan) {
  std::vector<std::vector<std::pair<std::size_t, double>>> az_pool, bin_pool;
  detail::pool_1d_accumulate(scan.azimuths, kRingKeyAzimuths, az_pool);
  detail::pool_1d_accumulate(scan.bins, kRingKeyBins, bin_pool);
  // downsampled grid, then mean over azimuths
  RingKey key(kRingKeyBins, 0.0);
  for (std::size_t j = 0; j < kRingKeyBins; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < kRingKeyAzimuths; ++i) {
      double cell = 0.0;
      for (const auto& [a, wa] : az_pool[i]) {
        double row = 0.0;
        for (const auto& [b, wb] : bin_pool[j]) row += wb * scan.at(a, b);
        cell += wa * row;
      }
      acc += cell;
    }
    key[j] = acc / static_cast<double>(kRingKeyAzimuths);
  }
  return key;
}

// ---------------------------------------------------------------------------
// Ground truth

// Single boundary: positive iff planar pose distance <= boundary_m.
inline GroundTruthMatrix ground_truth_matrix(const std::vector<Pose>& queries,
                                             const std::vector<Pose>& database,
                                             double boundary_m) {
  if (boundary_m <= 0.0) {
    throw std::invalid_argument("ground_truth_matrix: boundary <= 0");
  }
  GroundTruthMatrix gt;
  gt.rows = queries.size();
  gt.cols = database.size();
  gt.boundary_m = boundary_m;
  gt.entries.resize(gt.rows * gt.cols);
  for (std::size_t q = 0; q < gt.rows; ++q) {
    for (std::size_t c = 0; c < gt.cols; ++c) {
      gt.at(q, c) = queries[q].distance_to(database[c]) <= boundary_m
                        ? GtEntry::positive
                        : GtEntry::negative;
    }
  }
  return gt;
}

// Two-boundary mode: <= inner positive, (inner, outer] ignored, > outer
// negative.
inline GroundTruthMatrix ground_truth_matrix_banded(
    const std::vector<Pose>& queries, const std::vector<Pose>& database,
    double inner_m, double outer_m) {
  if (!(0.0 < inner_m && inner_m < outer_m)) {
    throw std::invalid_argument("ground_truth_matrix_banded: bad boundaries");
  }
  GroundTruthMatrix gt = ground_truth_matrix(queries, database, inner_m);
  for (std::size_t q = 0; q < gt.rows; ++q) {
    for (std::size_t c = 0; c < gt.cols; ++c) {
      if (gt.at(q, c) == GtEntry::negative &&
          queries[q].distance_to(database[c]) <= outer_m) {
        gt.at(q, c) = GtEntry::ignored;
      }
    }
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Precision-recall machinery
//
// Prediction rule (default): the single nearest non-ignored database entry
// per query, subject to the swept distance threshold. Ignored entries are
// excluded from ranking entirely, so masked decomposition categories can
// neither be predicted nor counted. Recall is measured over queries that
// have at least one (non-ignored) positive.

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

using PrCurve = std::vector<PrPoint>;

namespace detail {

struct QueryPrediction {
  double distance = std::numeric_limits<double>::infinity();
  bool is_positive = false;
  bool valid = false;
};

inline std::size_t count_queries_with_positive(const GroundTruthMatrix& gt) {
  std::size_t n = 0;
  for (std::size_t q = 0; q < gt.rows; ++q) {
    for (std::size_t c = 0; c < gt.cols; ++c) {
      if (gt.at(q, c) == GtEntry::positive) {
        ++n;
        break;
      }
    }
  }
  return n;
}

}  // namespace detail

// Threshold sweep of the single-nearest-neighbour prediction rule. Points
// are ordered by increasing threshold. When per_pair is set every pair with
// dm <= t is a prediction instead (the paper's wording admits both).
inline PrCurve pr_curve(const DistanceMatrix& dm, const GroundTruthMatrix& gt,
                        bool per_pair = false) {
  if (dm.rows != gt.rows || dm.cols != gt.cols) {
    throw std::invalid_argument("pr_curve: shape mismatch");
  }
  const std::size_t relevant = detail::count_queries_with_positive(gt);
  PrCurve curve;
  if (per_pair) {
    // predictions are (distance, label) for every non-ignored pair
    std::vector<std::pair<double, bool>> pairs;
    std::size_t total_pos = 0;
    for (std::size_t q = 0; q < gt.rows; ++q) {
      for (std::size_t c = 0; c < gt.cols; ++c) {
        if (gt.at(q, c) == GtEntry::ignored) continue;
        const bool pos = gt.at(q, c) == GtEntry::positive;
        total_pos += pos;
        pairs.emplace_back(dm.at(q, c), pos);
      }
    }
    std::sort(pairs.begin(), pairs.end());
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      pairs[i].second ? ++tp : ++fp;
      if (i + 1 < pairs.size() && pairs[i + 1].first == pairs[i].first) continue;
      PrPoint pt;
      pt.threshold = pairs[i].first;
      pt.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      pt.recall = total_pos == 0
                      ? 0.0
                      : static_cast<double>(tp) / static_cast<double>(total_pos);
      curve.push_back(pt);
    }
    return curve;
  }

  std::vector<std::pair<double, bool>> nns;  // (nn distance, nn is positive)
  for (std::size_t q = 0; q < dm.rows; ++q) {
    detail::QueryPrediction best;
    for (std::size_t c = 0; c < dm.cols; ++c) {
      if (gt.at(q, c) == GtEntry::ignored) continue;
      if (!best.valid || dm.at(q, c) < best.distance) {
        best.valid = true;
        best.distance = dm.at(q, c);
        best.is_positive = gt.at(q, c) == GtEntry::positive;
      }
    }
    if (best.valid) nns.emplace_back(best.distance, best.is_positive);
  }
  std::sort(nns.begin(), nns.end());
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < nns.size(); ++i) {
    nns[i].second ? ++tp : ++fp;
    if (i + 1 < nns.size() && nns[i + 1].first == nns[i].first) continue;
    PrPoint pt;
    pt.threshold = nns[i].first;
    pt.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    pt.recall = relevant == 0
                    ? 0.0
                    : static_cast<double>(tp) / static_cast<double>(relevant);
    curve.push_back(pt);
  }
  return curve;
}

// Maximum recall among swept thresholds whose precision reaches P percent;
// 0 if no threshold qualifies.
inline double recall_at_p(const DistanceMatrix& dm, const GroundTruthMatrix& gt,
                          double p_percent, bool per_pair = false) {
  const PrCurve curve = pr_curve(dm, gt, per_pair);
  double best = 0.0;
  for (const PrPoint& pt : curve) {
    if (pt.precision >= p_percent / 100.0) best = std::max(best, pt.recall);
  }
  return best;
}

// Fraction of queries whose N nearest non-ignored database entries (ties
// broken by lower index) contain at least one positive, over queries that
// have at least one positive.
inline double recall_at_n(const DistanceMatrix& dm, const GroundTruthMatrix& gt,
                          std::size_t n) {
  if (n < 1) throw std::invalid_argument("recall_at_n: N >= 1");
  if (dm.rows != gt.rows || dm.cols != gt.cols) {
    throw std::invalid_argument("recall_at_n: shape mismatch");
  }
  std::size_t relevant = 0;
  std::size_t hits = 0;
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t q = 0; q < dm.rows; ++q) {
    bool has_positive = false;
    order.clear();
    for (std::size_t c = 0; c < dm.cols; ++c) {
      if (gt.at(q, c) == GtEntry::ignored) continue;
      has_positive |= gt.at(q, c) == GtEntry::positive;
      order.emplace_back(dm.at(q, c), c);
    }
    if (!has_positive) continue;
    ++relevant;
    const std::size_t take = std::min(n, order.size());
    std::partial_sort(order.begin(),
                      order.begin() + static_cast<std::ptrdiff_t>(take),
                      order.end());
    for (std::size_t i = 0; i < take; ++i) {
      if (gt.at(q, order[i].second) == GtEntry::positive) {
        ++hits;
        break;
      }
    }
  }
  return relevant == 0 ? 0.0
                       : static_cast<double>(hits) / static_cast<double>(relevant);
}

struct AggregateScores {
  double f_half = 0.0;  // F_0.5
  double f_one = 0.0;   // F_1
  double f_two = 0.0;   // F_2
  double auc = 0.0;
};

// F_beta maximised over the sweep; AUC by trapezoidal integration of the
// curve sorted by recall.
inline AggregateScores f_scores_and_auc(const PrCurve& curve) {
  if (curve.empty()) throw std::invalid_argument("f_scores_and_auc: empty");
  AggregateScores out;
  auto f_beta = [](double beta, double p, double r) {
    const double b2 = beta * beta;
    const double denom = b2 * p + r;
    return denom == 0.0 ? 0.0 : (1.0 + b2) * p * r / denom;
  };
  for (const PrPoint& pt : curve) {
    out.f_half = std::max(out.f_half, f_beta(0.5, pt.precision, pt.recall));
    out.f_one = std::max(out.f_one, f_beta(1.0, pt.precision, pt.recall));
    out.f_two = std::max(out.f_two, f_beta(2.0, pt.precision, pt.recall));
  }
  PrCurve sorted = curve;
  std::sort(sorted.begin(), sorted.end(),
            [](const PrPoint& a, const PrPoint& b) { return a.recall < b.recall; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    out.auc += (sorted[i].recall - sorted[i - 1].recall) *
               (sorted[i].precision + sorted[i - 1].precision) / 2.0;
  }
  if (sorted.size() == 1) out.auc = sorted[0].recall * sorted[0].precision;
  return out;
}

// ---------------------------------------------------------------------------
// rpt / rev decomposition

struct DecompositionMasks {
  std::vector<std::uint8_t> rpt;  // true at same-heading positives
  std::vector<std::uint8_t> rev;  // true at arbitrary-attitude positives
};

// Partition of the positives by relative heading: |wrapped difference|
// <= threshold (default 45 deg) is teach-and-repeat, otherwise revisiting.
inline DecompositionMasks decompose(const GroundTruthMatrix& gt,
                                    const std::vector<Pose>& queries,
                                    const std::vector<Pose>& database,
                                    double heading_threshold_rad = M_PI / 4.0) {
  if (gt.rows != queries.size() || gt.cols != database.size()) {
    throw std::invalid_argument("decompose: shape mismatch");
  }
  DecompositionMasks masks;
  masks.rpt.assign(gt.rows * gt.cols, 0);
  masks.rev.assign(gt.rows * gt.cols, 0);
  for (std::size_t q = 0; q < gt.rows; ++q) {
    for (std::size_t c = 0; c < gt.cols; ++c) {
      if (gt.at(q, c) != GtEntry::positive) continue;
      const double dh =
          std::abs(wrap_angle(queries[q].heading - database[c].heading));
      (dh <= heading_threshold_rad ? masks.rpt : masks.rev)[q * gt.cols + c] = 1;
    }
  }
  return masks;
}

// Ground truth for evaluating one category: positives of the other category
// become ignored, removing them and any predictions onto them.
inline GroundTruthMatrix mask_category(const GroundTruthMatrix& gt,
                                       const std::vector<std::uint8_t>& keep) {
  GroundTruthMatrix out = gt;
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    if (out.entries[i] == GtEntry::positive && !keep[i]) {
      out.entries[i] = GtEntry::ignored;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full report

struct SubReport {
  std::string name;
  double recall_at_1 = 0.0;
  std::size_t relevant_queries = 0;
};

struct EvalReport {
  std::string metric;
  std::string band_mode;  // "ignore" (25/50) or "single"
  PrCurve curve;
  std::map<int, double> recall_at_p_table;       // P percent -> recall
  std::map<int, double> recall_at_n_table;       // N -> recall
  AggregateScores aggregates;
  std::vector<SubReport> decomposition;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["metric"] = metric;
    j["band_mode"] = band_mode;
    j["recall_at_p"] = nlohmann::json::object();
    for (const auto& [p, r] : recall_at_p_table) {
      j["recall_at_p"][std::to_string(p)] = r;
    }
    j["recall_at_n"] = nlohmann::json::object();
    for (const auto& [n, r] : recall_at_n_table) {
      j["recall_at_n"][std::to_string(n)] = r;
    }
    j["f_0.5"] = aggregates.f_half;
    j["f_1"] = aggregates.f_one;
    j["f_2"] = aggregates.f_two;
    j["auc"] = aggregates.auc;
    for (const auto& sub : decomposition) {
      j["decomposition"][sub.name] = {{"recall_at_1", sub.recall_at_1},
                                      {"relevant_queries", sub.relevant_queries}};
    }
    nlohmann::json pts = nlohmann::json::array();
    for (const PrPoint& pt : curve) {
      pts.push_back({pt.threshold, pt.precision, pt.recall});
    }
    j["pr_curve"] = std::move(pts);
    return j;
  }
};

struct EvalOptions {
  double inner_boundary_m = 25.0;
  double outer_boundary_m = 50.0;
  bool ignore_band = true;  // false: single boundary at inner_boundary_m
  std::vector<int> p_list{50, 80, 95, 98, 99};
  std::size_t n_max = 25;
  bool run_decomposition = true;
  double heading_threshold_rad = M_PI / 4.0;
  bool per_pair = false;
};

inline EvalReport evaluate_retrieval(const DistanceMatrix& dm,
                                     const std::vector<Pose>& query_poses,
                                     const std::vector<Pose>& db_poses,
                                     const EvalOptions& opt = {}) {
  EvalReport report;
  report.metric = to_string(dm.metric);
  report.band_mode = opt.ignore_band ? "ignore" : "single";
  const GroundTruthMatrix gt_pr =
      opt.ignore_band
          ? ground_truth_matrix_banded(query_poses, db_poses,
                                       opt.inner_boundary_m,
                                       opt.outer_boundary_m)
          : ground_truth_matrix(query_poses, db_poses, opt.inner_boundary_m);
  const GroundTruthMatrix gt_n =
      ground_truth_matrix(query_poses, db_poses, opt.inner_boundary_m);

  report.curve = pr_curve(dm, gt_pr, opt.per_pair);
  for (int p : opt.p_list) {
    double best = 0.0;
    for (const PrPoint& pt : report.curve) {
      if (pt.precision >= static_cast<double>(p) / 100.0) {
        best = std::max(best, pt.recall);
      }
    }
    report.recall_at_p_table[p] = best;
  }
  for (std::size_t n = 1; n <= opt.n_max; ++n) {
    report.recall_at_n_table[static_cast<int>(n)] = recall_at_n(dm, gt_n, n);
  }
  if (!report.curve.empty()) {
    report.aggregates = f_scores_and_auc(report.curve);
  }
  if (opt.run_decomposition) {
    const DecompositionMasks masks =
        decompose(gt_n, query_poses, db_poses, opt.heading_threshold_rad);
    for (const auto& [name, keep] :
         {std::pair{std::string("rpt"), &masks.rpt},
          std::pair{std::string("rev"), &masks.rev}}) {
      const GroundTruthMatrix masked = mask_category(gt_n, *keep);
      SubReport sub;
      sub.name = name;
      sub.relevant_queries = detail::count_queries_with_positive(masked);
      sub.recall_at_1 = recall_at_n(dm, masked, 1);
      report.decomposition.push_back(sub);
    }
  }
  return report;
}

inline void save_pr_csv(const std::filesystem::path& path, const PrCurve& curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << "threshold,precision,recall\n";
  for (const PrPoint& pt : curve) {
    os << pt.threshold << "," << pt.precision << "," << pt.recall << "\n";
  }
}

}  // namespace rpr
