#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "rpr/loss.hpp"
#include "rpr/rng.hpp"

using namespace rpr;

namespace {

std::vector<double> random_unit(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  double norm2 = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return v;
}

BatchEmbeddings random_batch(std::size_t m, std::size_t d, Rng& rng) {
  BatchEmbeddings be;
  for (std::size_t i = 0; i < m; ++i) {
    be.instances.push_back(random_unit(d, rng));
    be.augmentations.push_back(random_unit(d, rng));
  }
  return be;
}

// Brute-force oracle: direct softmax evaluation without log-space tricks.
double oracle_objective(const BatchEmbeddings& be, double tau) {
  const std::size_t m = be.size();
  auto softmax_at = [&](const std::vector<double>& g, std::size_t i) {
    double denom = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      denom += std::exp(detail::dot(be.instances[k], g) / tau);
    }
    return std::exp(detail::dot(be.instances[i], g) / tau) / denom;
  };
  double j = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    j -= std::log(softmax_at(be.augmentations[i], i));
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t jj = 0; jj < m; ++jj) {
      if (i == jj) continue;
      j -= std::log(1.0 - softmax_at(be.instances[jj], i));
    }
  }
  return j;
}

}  // namespace

TEST_CASE("single-instance batch is trivial") {
  Rng rng(1);
  BatchEmbeddings be;
  const auto f = random_unit(6, rng);
  be.instances.push_back(f);
  be.augmentations.push_back(f);
  REQUIRE(augmentation_probability(be, 0, 0.5) == 1.0);
  const ObjectiveBreakdown obj = batch_objective(be, 0.5);
  REQUIRE(obj.objective == 0.0);
  REQUIRE(obj.instance_term == 0.0);
  REQUIRE(obj.confusion_term == 0.0);
}

TEST_CASE("two orthonormal instances at tau = 1 match hand computation") {
  BatchEmbeddings be;
  be.instances = {{1.0, 0.0}, {0.0, 1.0}};
  be.augmentations = {{1.0, 0.0}, {0.0, 1.0}};
  const double e = std::exp(1.0);
  REQUIRE_THAT(augmentation_probability(be, 0, 1.0),
               Catch::Matchers::WithinAbs(e / (e + 1.0), 1e-12));
  REQUIRE_THAT(instance_confusion_probability(be, 0, 1, 1.0),
               Catch::Matchers::WithinAbs(1.0 / (1.0 + e), 1e-12));
  const ObjectiveBreakdown obj = batch_objective(be, 1.0);
  const double expected =
      -2.0 * std::log(e / (e + 1.0)) - 2.0 * std::log(1.0 - 1.0 / (1.0 + e));
  REQUIRE_THAT(obj.objective, Catch::Matchers::WithinAbs(expected, 1e-12));
  REQUIRE_THAT(obj.instance_term,
               Catch::Matchers::WithinAbs(-2.0 * std::log(e / (e + 1.0)), 1e-12));
}

TEST_CASE("recognition probabilities are a normalised softmax") {
  Rng rng(5);
  const BatchEmbeddings be = random_batch(5, 8, rng);
  for (std::size_t i = 0; i < 5; ++i) {
    double total = 0.0;
    for (std::size_t target = 0; target < 5; ++target) {
      const auto s =
          detail::scores_against(be.instances, be.augmentations[i], 0.7);
      total += std::exp(s[target] - detail::log_sum_exp(s));
    }
    REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-12));
    const double p = augmentation_probability(be, i, 0.7);
    REQUIRE(p > 0.0);
    REQUIRE(p <= 1.0);
  }
  REQUIRE_THROWS_AS(instance_confusion_probability(be, 2, 2, 1.0),
                    std::invalid_argument);
}

TEST_CASE("self term dominates for orthogonal instances") {
  BatchEmbeddings be;
  be.instances = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  be.augmentations = be.instances;
  for (std::size_t j = 0; j < 4; ++j) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (i == j) continue;
      // dominance: P(i|x_j) < softmax self term at j
      const auto s = detail::scores_against(be.instances, be.instances[j], 0.5);
      const double p_self = std::exp(s[j] - detail::log_sum_exp(s));
      REQUIRE(instance_confusion_probability(be, i, j, 0.5) < p_self);
    }
  }
}

TEST_CASE("probabilities depend only on pairwise inner products") {
  // Apply a random rotation (orthogonal map) to every embedding; all inner
  // products, hence all probabilities and the objective, must be unchanged.
  Rng rng(9);
  const std::size_t d = 6;
  BatchEmbeddings be = random_batch(4, d, rng);

  // Gram-Schmidt on a random matrix -> orthonormal basis Q
  std::vector<std::vector<double>> q;
  for (std::size_t r = 0; r < d; ++r) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    for (const auto& u : q) {
      const double proj = detail::dot(u, v);
      for (std::size_t i = 0; i < d; ++i) v[i] -= proj * u[i];
    }
    double n = std::sqrt(detail::dot(v, v));
    for (double& x : v) x /= n;
    q.push_back(v);
  }
  auto rotate = [&](const std::vector<double>& v) {
    std::vector<double> out(d);
    for (std::size_t r = 0; r < d; ++r) out[r] = detail::dot(q[r], v);
    return out;
  };
  BatchEmbeddings rotated;
  for (std::size_t i = 0; i < be.size(); ++i) {
    rotated.instances.push_back(rotate(be.instances[i]));
    rotated.augmentations.push_back(rotate(be.augmentations[i]));
  }
  for (std::size_t i = 0; i < be.size(); ++i) {
    REQUIRE_THAT(augmentation_probability(rotated, i, 0.3),
                 Catch::Matchers::WithinAbs(
                     augmentation_probability(be, i, 0.3), 1e-12));
  }
  REQUIRE_THAT(batch_objective(rotated, 0.3).objective,
               Catch::Matchers::WithinRel(batch_objective(be, 0.3).objective,
                                          1e-12));
}

TEST_CASE("batch_objective matches the brute-force oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + rng.uniform_index(5);  // 2..6
    const double tau = 0.5 + rng.uniform() * 1.5;
    const BatchEmbeddings be = random_batch(m, 8, rng);
    const double ours = batch_objective(be, tau).objective;
    const double oracle = oracle_objective(be, tau);
    REQUIRE_THAT(ours, Catch::Matchers::WithinRel(oracle, 1e-10));
    REQUIRE(ours > 0.0);  // unattainable lower bound for m >= 2
  }
}

TEST_CASE("objective is invariant under joint permutation") {
  Rng rng(23);
  const BatchEmbeddings be = random_batch(5, 8, rng);
  const double base = batch_objective(be, 0.4).objective;
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  BatchEmbeddings permuted;
  for (std::size_t i : perm) {
    permuted.instances.push_back(be.instances[i]);
    permuted.augmentations.push_back(be.augmentations[i]);
  }
  REQUIRE_THAT(batch_objective(permuted, 0.4).objective,
               Catch::Matchers::WithinRel(base, 1e-12));
}

TEST_CASE("objective decreases as an augmentation approaches its instance") {
  Rng rng(31);
  BatchEmbeddings be = random_batch(4, 8, rng);
  const double before = batch_objective(be, 0.5).objective;
  // move f^_0 along the geodesic towards f_0
  for (std::size_t i = 0; i < 8; ++i) {
    be.augmentations[0][i] =
        0.7 * be.augmentations[0][i] + 0.3 * be.instances[0][i];
  }
  const double n = std::sqrt(detail::dot(be.augmentations[0], be.augmentations[0]));
  for (double& x : be.augmentations[0]) x /= n;
  REQUIRE(batch_objective(be, 0.5).objective < before);
}

TEST_CASE("objective_gradient matches central finite differences") {
  Rng rng(41);
  const double tau = 0.1;
  const double h = 1e-5;
  BatchEmbeddings be = random_batch(4, 8, rng);
  const ObjectiveGradient grad = objective_gradient(be, tau);
  double worst = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t v = 0; v < 8; ++v) {
      for (int which = 0; which < 2; ++which) {
        auto& slot = which == 0 ? be.instances[i] : be.augmentations[i];
        const double saved = slot[v];
        slot[v] = saved + h;
        const double hi = batch_objective(be, tau).objective;
        slot[v] = saved - h;
        const double lo = batch_objective(be, tau).objective;
        slot[v] = saved;
        const double fd = (hi - lo) / (2.0 * h);
        const double an =
            which == 0 ? grad.d_instances[i][v] : grad.d_augmentations[i][v];
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
        worst = std::max(worst, std::abs(fd - an) / denom);
      }
    }
  }
  REQUIRE(worst < 1e-5);
}

TEST_CASE("gradient descent separates near-identical instances") {
  Rng rng(53);
  const std::size_t m = 4, d = 8;
  const auto base = random_unit(d, rng);
  BatchEmbeddings be;
  for (std::size_t i = 0; i < m; ++i) {
    auto f = base;
    for (double& x : f) x += 0.01 * rng.normal();
    const double n = std::sqrt(detail::dot(f, f));
    for (double& x : f) x /= n;
    be.instances.push_back(f);
    be.augmentations.push_back(f);
  }
  auto mean_pairwise_dot = [&](const BatchEmbeddings& b) {
    double s = 0.0;
    std::size_t c = 0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i + 1; j < m; ++j) {
        s += detail::dot(b.instances[i], b.instances[j]);
        ++c;
      }
    }
    return s / static_cast<double>(c);
  };
  const double before = mean_pairwise_dot(be);
  const ObjectiveGradient grad = objective_gradient(be, 0.5);
  const double eta = 0.01;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t v = 0; v < d; ++v) {
      be.instances[i][v] -= eta * grad.d_instances[i][v];
    }
    const double n = std::sqrt(detail::dot(be.instances[i], be.instances[i]));
    for (double& x : be.instances[i]) x /= n;
  }
  REQUIRE(mean_pairwise_dot(be) < before);
}

TEST_CASE("temperature floor is enforced") {
  LossConfig cfg;
  REQUIRE_NOTHROW(cfg.validate());
  cfg.temperature = 5e-5;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("BatchEmbeddings validation") {
  BatchEmbeddings be;
  be.instances = {{1.0, 0.0}};
  be.augmentations = {{0.5, 0.5}};  // not unit-norm
  REQUIRE_THROWS_AS(be.validate(), std::invalid_argument);
  be.augmentations = {{0.0, 1.0}};
  REQUIRE_NOTHROW(be.validate());
  be.augmentations.push_back({1.0, 0.0});
  REQUIRE_THROWS_AS(be.validate(), std::invalid_argument);
}
