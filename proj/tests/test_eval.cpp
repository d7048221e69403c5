#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rpr/eval.hpp"
#include "rpr/rng.hpp"

using namespace rpr;

namespace {

Embedding unit2(double a, double b) {
  const double n = std::hypot(a, b);
  return {a / n, b / n};
}

PolarScan uniform_scan(std::size_t a, std::size_t b, double value) {
  PolarScan s;
  s.azimuths = a;
  s.bins = b;
  s.bin_size = 0.5;
  s.power.assign(a * b, value);
  return s;
}

DistanceMatrix make_dm(std::size_t rows, std::size_t cols,
                       const std::vector<double>& values) {
  DistanceMatrix dm;
  dm.rows = rows;
  dm.cols = cols;
  dm.values = values;
  return dm;
}

GroundTruthMatrix make_gt(std::size_t rows, std::size_t cols,
                          const std::vector<int>& entries) {
  GroundTruthMatrix gt;
  gt.rows = rows;
  gt.cols = cols;
  gt.boundary_m = 25.0;
  for (int e : entries) gt.entries.push_back(static_cast<GtEntry>(e));
  return gt;
}

// Enumeration oracle for recall_at_p with the single-nearest-neighbour rule.
double oracle_recall_at_p(const DistanceMatrix& dm, const GroundTruthMatrix& gt,
                          double p_percent) {
  // per query: nearest non-ignored entry
  struct Nn {
    double d;
    bool pos;
  };
  std::vector<Nn> nns;
  std::size_t relevant = 0;
  for (std::size_t q = 0; q < dm.rows; ++q) {
    bool has_pos = false;
    double best = 0.0;
    bool best_pos = false, found = false;
    for (std::size_t c = 0; c < dm.cols; ++c) {
      if (gt.at(q, c) == GtEntry::ignored) continue;
      has_pos |= gt.at(q, c) == GtEntry::positive;
      if (!found || dm.at(q, c) < best) {
        found = true;
        best = dm.at(q, c);
        best_pos = gt.at(q, c) == GtEntry::positive;
      }
    }
    if (has_pos) ++relevant;
    if (found) nns.push_back({best, best_pos});
  }
  double best_recall = 0.0;
  for (const Nn& t : nns) {  // sweep every attained threshold
    std::size_t tp = 0, fp = 0;
    for (const Nn& x : nns) {
      if (x.d <= t.d) x.pos ? ++tp : ++fp;
    }
    if (tp + fp == 0) continue;
    const double precision =
        static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall =
        relevant == 0 ? 0.0
                      : static_cast<double>(tp) / static_cast<double>(relevant);
    if (precision >= p_percent / 100.0) {
      best_recall = std::max(best_recall, recall);
    }
  }
  return best_recall;
}

// Enumeration oracle for recall_at_n.
double oracle_recall_at_n(const DistanceMatrix& dm, const GroundTruthMatrix& gt,
                          std::size_t n) {
  std::size_t relevant = 0, hits = 0;
  for (std::size_t q = 0; q < dm.rows; ++q) {
    std::vector<std::pair<double, std::size_t>> cand;
    bool has_pos = false;
    for (std::size_t c = 0; c < dm.cols; ++c) {
      if (gt.at(q, c) == GtEntry::ignored) continue;
      cand.emplace_back(dm.at(q, c), c);
      has_pos |= gt.at(q, c) == GtEntry::positive;
    }
    if (!has_pos) continue;
    ++relevant;
    std::sort(cand.begin(), cand.end());
    bool hit = false;
    for (std::size_t i = 0; i < std::min(n, cand.size()); ++i) {
      hit |= gt.at(q, cand[i].second) == GtEntry::positive;
    }
    hits += hit;
  }
  return relevant == 0 ? 0.0
                       : static_cast<double>(hits) /
                             static_cast<double>(relevant);
}

}  // namespace

TEST_CASE("vector distances") {
  const Embedding a = unit2(1.0, 0.0);
  const Embedding b = unit2(0.0, 1.0);
  REQUIRE(vector_distance(a, a, Metric::cosine) == 0.0);
  REQUIRE_THAT(vector_distance(a, b, Metric::cosine),
               Catch::Matchers::WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(vector_distance(a, b, Metric::euclidean),
               Catch::Matchers::WithinAbs(std::sqrt(2.0), 1e-12));
  REQUIRE_THROWS_AS(vector_distance(a, {1.0}, Metric::cosine),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(vector_distance(a, b, Metric::kl), std::invalid_argument);
}

TEST_CASE("distance_matrix matches a scalar-loop oracle") {
  Rng rng(3);
  auto random_vec = [&] {
    Embedding e(4);
    for (double& x : e) x = rng.normal();
    return e;
  };
  std::vector<Embedding> qs{random_vec(), random_vec(), random_vec()};
  std::vector<Embedding> db{random_vec(), random_vec(), qs[0]};
  const DistanceMatrix dm = distance_matrix(qs, db, Metric::euclidean);
  for (std::size_t q = 0; q < qs.size(); ++q) {
    for (std::size_t c = 0; c < db.size(); ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        s += (qs[q][k] - db[c][k]) * (qs[q][k] - db[c][k]);
      }
      REQUIRE_THAT(dm.at(q, c),
                   Catch::Matchers::WithinAbs(std::sqrt(s), 1e-12));
    }
  }
}

TEST_CASE("kl_similarity closed form and symmetry") {
  EmbeddingFamily a, b;
  a.mean = {0.0};
  a.variance = {1.0};
  a.sample_count = 24;
  b.mean = {1.0};
  b.variance = {1.0};
  b.sample_count = 24;
  SECTION("identical families give zero") {
    REQUIRE(kl_similarity(a, a) == 0.0);
  }
  SECTION("1-D closed form: mean shift 1 at unit variance gives 0.5") {
    REQUIRE_THAT(kl_similarity(a, b), Catch::Matchers::WithinAbs(0.5, 1e-9));
    REQUIRE_THAT(kl_similarity(a, b, false),
                 Catch::Matchers::WithinAbs(0.5, 1e-9));
  }
  SECTION("numerical integration of the 1-D densities agrees") {
    auto pdf = [](double x, double mu, double var) {
      return std::exp(-0.5 * (x - mu) * (x - mu) / var) /
             std::sqrt(2.0 * M_PI * var);
    };
    const double h = 1e-3;
    double kl_ab = 0.0, kl_ba = 0.0;
    for (double x = -12.0; x <= 13.0; x += h) {
      const double pa = pdf(x, 0.0, 1.0);
      const double pb = pdf(x, 1.0, 1.0);
      if (pa > 1e-300 && pb > 1e-300) {
        kl_ab += pa * std::log(pa / pb) * h;
        kl_ba += pb * std::log(pb / pa) * h;
      }
    }
    REQUIRE_THAT(kl_similarity(a, b),
                 Catch::Matchers::WithinAbs(0.5 * (kl_ab + kl_ba), 1e-3));
  }
  SECTION("symmetry and non-negativity on random families") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      EmbeddingFamily f, g;
      for (int i = 0; i < 6; ++i) {
        f.mean.push_back(rng.normal());
        g.mean.push_back(rng.normal());
        f.variance.push_back(0.1 + rng.uniform());
        g.variance.push_back(0.1 + rng.uniform());
      }
      const double fg = kl_similarity(f, g);
      REQUIRE(fg >= 0.0);
      REQUIRE_THAT(kl_similarity(g, f), Catch::Matchers::WithinAbs(fg, 1e-12));
    }
  }
  SECTION("dimension mismatch rejected") {
    EmbeddingFamily c;
    c.mean = {0.0, 0.0};
    c.variance = {1.0, 1.0};
    REQUIRE_THROWS_AS(kl_similarity(a, c), std::invalid_argument);
  }
}

TEST_CASE("ring_key basics") {
  SECTION("uniform scan maps to a constant vector") {
    const RingKey key = ring_key(uniform_scan(240, 160, 0.375));
    REQUIRE(key.size() == kRingKeyBins);
    for (double v : key) {
      REQUIRE_THAT(v, Catch::Matchers::WithinAbs(0.375, 1e-12));
    }
  }
  SECTION("support restricted to near range zeroes the far entries") {
    PolarScan s = uniform_scan(240, 160, 0.0);
    for (std::size_t a = 0; a < 240; ++a) {
      for (std::size_t b = 0; b < 40; ++b) s.at(a, b) = 0.5;  // nearest quarter
    }
    const RingKey key = ring_key(s);
    for (std::size_t j = 10; j < 40; ++j) REQUIRE(key[j] == 0.0);
    for (std::size_t j = 0; j < 10; ++j) REQUIRE(key[j] > 0.0);
  }
}

TEST_CASE("ring_key is exactly invariant under aligned azimuth shifts") {
  // A = 240 = 120 * 2, so shifts by multiples of 2 are group-aligned.
  PolarScan s = uniform_scan(240, 80, 0.0);
  Rng rng(7);
  for (double& p : s.power) p = rng.uniform();
  const RingKey base = ring_key(s);
  for (std::size_t r : {2UL, 4UL, 60UL, 238UL}) {
    const RingKey shifted = ring_key(rotate_azimuth(s, r));
    for (std::size_t j = 0; j < kRingKeyBins; ++j) {
      REQUIRE_THAT(shifted[j], Catch::Matchers::WithinAbs(base[j], 1e-12));
    }
  }
}

TEST_CASE("ring_key self-distance is small under arbitrary shifts") {
  PolarScan s = uniform_scan(64, 96, 0.0);
  for (std::size_t a = 0; a < 64; ++a) {
    for (std::size_t b = 0; b < 96; ++b) {
      s.at(a, b) = 0.5 + 0.4 * std::sin(2.0 * M_PI * a / 64.0) *
                             std::cos(3.0 * M_PI * b / 96.0);
    }
  }
  const RingKey base = ring_key(s);
  const RingKey shifted = ring_key(rotate_azimuth(s, 7));
  double d2 = 0.0, n2 = 0.0;
  for (std::size_t j = 0; j < kRingKeyBins; ++j) {
    d2 += (base[j] - shifted[j]) * (base[j] - shifted[j]);
    n2 += base[j] * base[j];
  }
  REQUIRE(std::sqrt(d2) < 0.05 * std::sqrt(n2));
}

TEST_CASE("ground_truth_matrix conventions") {
  std::vector<Pose> q{{0, 0, 0}};
  std::vector<Pose> db{{0, 0, 0}, {25.0, 0, 0}, {25.1, 0, 0}, {60.0, 0, 0}};
  const GroundTruthMatrix gt = ground_truth_matrix(q, db, 25.0);
  REQUIRE(gt.at(0, 0) == GtEntry::positive);  // co-located
  REQUIRE(gt.at(0, 1) == GtEntry::positive);  // closed boundary at 25 m
  REQUIRE(gt.at(0, 2) == GtEntry::negative);
  const GroundTruthMatrix banded = ground_truth_matrix_banded(q, db, 25.0, 50.0);
  REQUIRE(banded.at(0, 1) == GtEntry::positive);
  REQUIRE(banded.at(0, 2) == GtEntry::ignored);  // inside (25, 50]
  REQUIRE(banded.at(0, 3) == GtEntry::negative);
  REQUIRE_THROWS_AS(ground_truth_matrix(q, db, 0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(ground_truth_matrix_banded(q, db, 50.0, 25.0),
                    std::invalid_argument);
}

TEST_CASE("ground_truth_matrix matches a scalar oracle on random poses") {
  Rng rng(11);
  std::vector<Pose> q, db;
  for (int i = 0; i < 10; ++i) {
    q.push_back({rng.uniform(-50, 50), rng.uniform(-50, 50), 0.0});
    db.push_back({rng.uniform(-50, 50), rng.uniform(-50, 50), 0.0});
  }
  const GroundTruthMatrix gt = ground_truth_matrix(q, db, 30.0);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 10; ++j) {
      const double d = std::hypot(q[i].x - db[j].x, q[i].y - db[j].y);
      REQUIRE(gt.at(i, j) ==
              (d <= 30.0 ? GtEntry::positive : GtEntry::negative));
    }
  }
}

TEST_CASE("recall_at_p on perfect and inverted metrics") {
  Rng rng(13);
  std::vector<Pose> q, db;
  for (int i = 0; i < 12; ++i) {
    q.push_back({rng.uniform(0, 200), rng.uniform(0, 200), 0.0});
    db.push_back({rng.uniform(0, 200), rng.uniform(0, 200), 0.0});
  }
  const GroundTruthMatrix gt = ground_truth_matrix(q, db, 40.0);
  DistanceMatrix perfect;
  perfect.rows = perfect.cols = 12;
  perfect.values.resize(144);
  double max_d = 0.0;
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t j = 0; j < 12; ++j) {
      perfect.at(i, j) = q[i].distance_to(db[j]);
      max_d = std::max(max_d, perfect.at(i, j));
    }
  }
  for (double p : {50.0, 80.0, 95.0, 99.0}) {
    REQUIRE(recall_at_p(perfect, gt, p) == 1.0);
  }
  DistanceMatrix inverted = perfect;
  for (double& v : inverted.values) v = max_d - v;  // worst possible ranking
  REQUIRE(recall_at_p(inverted, gt, 99.0) < 0.2);
}

TEST_CASE("recall_at_p matches the enumeration oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 2 + rng.uniform_index(19);
    const std::size_t cols = 2 + rng.uniform_index(19);
    DistanceMatrix dm;
    dm.rows = rows;
    dm.cols = cols;
    GroundTruthMatrix gt;
    gt.rows = rows;
    gt.cols = cols;
    gt.boundary_m = 25.0;
    for (std::size_t i = 0; i < rows * cols; ++i) {
      dm.values.push_back(rng.uniform());
      const double u = rng.uniform();
      gt.entries.push_back(u < 0.25   ? GtEntry::positive
                           : u < 0.35 ? GtEntry::ignored
                                      : GtEntry::negative);
    }
    for (double p : {50.0, 80.0, 95.0}) {
      REQUIRE(recall_at_p(dm, gt, p) == oracle_recall_at_p(dm, gt, p));
    }
  }
}

TEST_CASE("recall_at_n properties and oracle agreement") {
  Rng rng(19);
  SECTION("hand case 4x6") {
    const DistanceMatrix dm = make_dm(
        4, 6,
        {0.1, 0.2, 0.3, 0.4, 0.5, 0.6,   //
         0.6, 0.5, 0.4, 0.3, 0.2, 0.1,   //
         0.2, 0.1, 0.6, 0.5, 0.4, 0.3,   //
         0.3, 0.3, 0.3, 0.3, 0.3, 0.3});
    const GroundTruthMatrix gt = make_gt(4, 6,
                                         {1, 0, 0, 0, 0, 0,   //
                                          1, 0, 0, 0, 0, 0,   //
                                          0, 0, 0, 0, 0, 1,   //
                                          0, 0, 0, 0, 0, 0});
    // q0: nn is its positive; q1: positive is farthest; q2: positive 3rd;
    // q3: no positive (excluded from the denominator).
    REQUIRE_THAT(recall_at_n(dm, gt, 1),
                 Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
    REQUIRE_THAT(recall_at_n(dm, gt, 5),
                 Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
    REQUIRE(recall_at_n(dm, gt, 6) == 1.0);
    for (std::size_t n = 1; n < 6; ++n) {
      REQUIRE(recall_at_n(dm, gt, n) == oracle_recall_at_n(dm, gt, n));
      REQUIRE(recall_at_n(dm, gt, n) <= recall_at_n(dm, gt, n + 1));
    }
  }
  SECTION("random instances up to 20x20") {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t rows = 2 + rng.uniform_index(19);
      const std::size_t cols = 2 + rng.uniform_index(19);
      DistanceMatrix dm;
      dm.rows = rows;
      dm.cols = cols;
      GroundTruthMatrix gt;
      gt.rows = rows;
      gt.cols = cols;
      for (std::size_t i = 0; i < rows * cols; ++i) {
        dm.values.push_back(rng.uniform());
        gt.entries.push_back(rng.uniform() < 0.3 ? GtEntry::positive
                                                 : GtEntry::negative);
      }
      double prev = 0.0;
      for (std::size_t n = 1; n <= cols; ++n) {
        const double r = recall_at_n(dm, gt, n);
        REQUIRE(r == oracle_recall_at_n(dm, gt, n));
        REQUIRE(r >= prev);  // monotone in N
        prev = r;
      }
      // positive scaling leaves the ranking, hence the result, unchanged
      DistanceMatrix scaled = dm;
      for (double& v : scaled.values) v *= 7.25;
      REQUIRE(recall_at_n(scaled, gt, 3) == recall_at_n(dm, gt, 3));
    }
  }
  SECTION("N covering the database retrieves every positive") {
    const DistanceMatrix dm = make_dm(2, 3, {0.3, 0.2, 0.1, 0.1, 0.2, 0.3});
    const GroundTruthMatrix gt = make_gt(2, 3, {1, 0, 0, 0, 0, 1});
    REQUIRE(recall_at_n(dm, gt, 3) == 1.0);
    REQUIRE_THROWS_AS(recall_at_n(dm, gt, 0), std::invalid_argument);
  }
}

TEST_CASE("f_scores_and_auc hand cases") {
  SECTION("perfect single point") {
    const AggregateScores s = f_scores_and_auc({{0.1, 1.0, 1.0}});
    REQUIRE(s.f_half == 1.0);
    REQUIRE(s.f_one == 1.0);
    REQUIRE(s.f_two == 1.0);
    REQUIRE(s.auc == 1.0);
  }
  SECTION("P = 0.5, R = 1 point") {
    const AggregateScores s = f_scores_and_auc({{0.1, 0.5, 1.0}});
    REQUIRE_THAT(s.f_one, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
    REQUIRE_THAT(s.f_two, Catch::Matchers::WithinAbs(5.0 / 6.0, 1e-12));
    REQUIRE_THAT(s.f_half, Catch::Matchers::WithinAbs(5.0 / 9.0, 1e-12));
  }
  SECTION("unit-square top edge has AUC 1") {
    const AggregateScores s =
        f_scores_and_auc({{0.0, 1.0, 0.0}, {1.0, 1.0, 1.0}});
    REQUIRE_THAT(s.auc, Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
  SECTION("empty curve rejected") {
    REQUIRE_THROWS_AS(f_scores_and_auc({}), std::invalid_argument);
  }
}

TEST_CASE("decompose splits positives by relative heading") {
  std::vector<Pose> q{{0, 0, 0.0}, {100, 0, 0.0}};
  std::vector<Pose> db{{1, 0, 0.1}, {1, 0, M_PI}, {100, 0, M_PI / 2.0}};
  const GroundTruthMatrix gt = ground_truth_matrix(q, db, 25.0);
  const DecompositionMasks masks = decompose(gt, q, db);
  REQUIRE(masks.rpt[0 * 3 + 0] == 1);  // near-identical heading
  REQUIRE(masks.rev[0 * 3 + 1] == 1);  // reversed
  REQUIRE(masks.rev[1 * 3 + 2] == 1);  // 90 degrees > 45-degree threshold
  // disjoint partition of the positives
  for (std::size_t i = 0; i < masks.rpt.size(); ++i) {
    const bool pos = gt.entries[i] == GtEntry::positive;
    REQUIRE(static_cast<int>(masks.rpt[i]) + static_cast<int>(masks.rev[i]) ==
            (pos ? 1 : 0));
  }
  // masking rev keeps only rpt positives
  const GroundTruthMatrix rpt_only = mask_category(gt, masks.rpt);
  REQUIRE(rpt_only.at(0, 0) == GtEntry::positive);
  REQUIRE(rpt_only.at(0, 1) == GtEntry::ignored);
}

TEST_CASE("evaluate_retrieval with oracle embeddings") {
  Rng rng(29);
  std::vector<Pose> q, db;
  std::vector<Embedding> qe, de;
  for (int i = 0; i < 15; ++i) {
    const Pose pq{rng.uniform(0, 300), rng.uniform(0, 300), 0.0};
    const Pose pd{rng.uniform(0, 300), rng.uniform(0, 300), 0.0};
    q.push_back(pq);
    db.push_back(pd);
    qe.push_back({pq.x, pq.y});
    de.push_back({pd.x, pd.y});
  }
  const DistanceMatrix dm = distance_matrix(qe, de, Metric::euclidean);
  EvalOptions opt;
  const EvalReport report = evaluate_retrieval(dm, q, db, opt);
  REQUIRE(report.band_mode == "ignore");
  REQUIRE(report.recall_at_n_table.at(1) == 1.0);  // perfect metric
  for (const auto& [p, r] : report.recall_at_p_table) {
    REQUIRE(r == 1.0);
  }
  REQUIRE(report.aggregates.f_one > 0.99);
  const nlohmann::json j = report.to_json();
  REQUIRE(j.contains("pr_curve"));
  REQUIRE(j.at("recall_at_n").at("1").get<double>() == 1.0);
}

TEST_CASE("pr_curve per-pair variant sweeps every pair") {
  const DistanceMatrix dm = make_dm(2, 2, {0.1, 0.9, 0.8, 0.2});
  const GroundTruthMatrix gt = make_gt(2, 2, {1, 0, 0, 1});
  const PrCurve curve = pr_curve(dm, gt, true);
  REQUIRE(curve.size() == 4);
  REQUIRE(curve.front().precision == 1.0);  // two positives rank first
  REQUIRE_THAT(curve[1].recall, Catch::Matchers::WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(curve.back().precision, Catch::Matchers::WithinAbs(0.5, 1e-12));
}
