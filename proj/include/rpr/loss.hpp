// Temperature-scaled instance-discrimination objective over a batch of
// instance/augmentation embedding pairs, with its analytic gradient.
//
// For embeddings f_1..f_m and augmentation embeddings f^_1..f^_m:
//   P(i|x^_i) = softmax_k(f_k . f^_i / tau) at k = i
//   P(i|x_j)  = softmax_k(f_k . f_j / tau) at k = i,  j != i
//   J = -sum_i log P(i|x^_i) - sum_i sum_{j!=i} log(1 - P(i|x_j))
// All terms are evaluated in log-space; the complement log(1 - P) is a
// complementary log-sum-exp, so nothing cancels as P -> 1.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace rpr {

struct LossConfig {
  double temperature = 0.1;

  void validate() const {
    if (!(temperature >= 1e-4)) {
      throw std::invalid_argument("LossConfig: temperature must be >= 1e-4");
    }
  }
};

struct BatchEmbeddings {
  std::vector<std::vector<double>> instances;      // F, m unit vectors
  std::vector<std::vector<double>> augmentations;  // F^, m unit vectors

  std::size_t size() const { return instances.size(); }
  std::size_t dim() const { return instances.empty() ? 0 : instances[0].size(); }

  void validate() const {
    if (instances.empty() || instances.size() != augmentations.size()) {
      throw std::invalid_argument("BatchEmbeddings: mismatched sizes");
    }
    for (const auto* family : {&instances, &augmentations}) {
      for (const auto& f : *family) {
        if (f.size() != dim()) {
          throw std::invalid_argument("BatchEmbeddings: mismatched dims");
        }
        double norm2 = 0.0;
        for (double v : f) norm2 += v * v;
        if (std::abs(std::sqrt(norm2) - 1.0) > 1e-5) {
          throw std::invalid_argument("BatchEmbeddings: not unit-norm");
        }
      }
    }
  }
};

struct ObjectiveBreakdown {
  double objective = 0.0;        // J
  double instance_term = 0.0;    // -sum_i log P(i|x^_i)
  double confusion_term = 0.0;   // -sum_i sum_{j!=i} log(1 - P(i|x_j))
};

struct ObjectiveGradient {
  std::vector<std::vector<double>> d_instances;      // dJ/df_i
  std::vector<std::vector<double>> d_augmentations;  // dJ/df^_i
};

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double log_sum_exp(const std::vector<double>& v) {
  const double hi = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - hi);
  return hi + std::log(s);
}

// Column j of F^T . G / tau, i.e. scores s_k = f_k . g / tau for all k.
inline std::vector<double> scores_against(
    const std::vector<std::vector<double>>& fs, const std::vector<double>& g,
    double tau) {
  std::vector<double> s(fs.size());
  for (std::size_t k = 0; k < fs.size(); ++k) s[k] = dot(fs[k], g) / tau;
  return s;
}

}  // namespace detail

// Eq.-1 style recognition probability of augmentation i as instance i.
inline double augmentation_probability(const BatchEmbeddings& be,
                                       std::size_t i, double tau) {
  const auto s = detail::scores_against(be.instances, be.augmentations[i], tau);
  return std::exp(s[i] - detail::log_sum_exp(s));
}

// Probability of instance j being recognised as instance i, i != j.
inline double instance_confusion_probability(const BatchEmbeddings& be,
                                             std::size_t i, std::size_t j,
                                             double tau) {
  if (i == j) {
    throw std::invalid_argument("instance_confusion_probability: i == j");
  }
  const auto s = detail::scores_against(be.instances, be.instances[j], tau);
  return std::exp(s[i] - detail::log_sum_exp(s));
}

inline ObjectiveBreakdown batch_objective(const BatchEmbeddings& be,
                                          double tau) {
  const std::size_t m = be.size();
  ObjectiveBreakdown out;
  std::vector<double> masked;
  masked.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto s =
        detail::scores_against(be.instances, be.augmentations[i], tau);
    out.instance_term -= s[i] - detail::log_sum_exp(s);
  }
  for (std::size_t j = 0; j < m; ++j) {
    const auto t = detail::scores_against(be.instances, be.instances[j], tau);
    const double lse_all = detail::log_sum_exp(t);
    for (std::size_t i = 0; i < m; ++i) {
      if (i == j) continue;
      // log(1 - P(i|x_j)) = lse over k != i minus lse over all k
      masked.clear();
      for (std::size_t k = 0; k < m; ++k) {
        if (k != i) masked.push_back(t[k]);
      }
      out.confusion_term -= detail::log_sum_exp(masked) - lse_all;
    }
  }
  out.objective = out.instance_term + out.confusion_term;
  return out;
}

// Exact dJ/df_i and dJ/df^_i (upstream of any embedding normalisation).
inline ObjectiveGradient objective_gradient(const BatchEmbeddings& be,
                                            double tau) {
  const std::size_t m = be.size();
  const std::size_t d = be.dim();
  ObjectiveGradient grad;
  grad.d_instances.assign(m, std::vector<double>(d, 0.0));
  grad.d_augmentations.assign(m, std::vector<double>(d, 0.0));

  auto axpy = [d](double a, const std::vector<double>& x,
                  std::vector<double>& y) {
    for (std::size_t v = 0; v < d; ++v) y[v] += a * x[v];
  };

  // Instance terms: -log softmax at k = i over scores f_k . f^_i / tau.
  for (std::size_t i = 0; i < m; ++i) {
    const auto s =
        detail::scores_against(be.instances, be.augmentations[i], tau);
    const double lse = detail::log_sum_exp(s);
    for (std::size_t k = 0; k < m; ++k) {
      const double g = std::exp(s[k] - lse) - (k == i ? 1.0 : 0.0);
      axpy(g / tau, be.augmentations[i], grad.d_instances[k]);
      axpy(g / tau, be.instances[k], grad.d_augmentations[i]);
    }
  }

  // Confusion terms over scores t_kj = f_k . f_j / tau. For each (i, j):
  // d/dt_kj [-log(1 - P(i|x_j))] = q_kj - r_kj where q is the softmax over
  // all k and r the softmax over k != i (zero at k = i).
  for (std::size_t j = 0; j < m; ++j) {
    const auto t = detail::scores_against(be.instances, be.instances[j], tau);
    const double lse_all = detail::log_sum_exp(t);
    std::vector<double> q(m);
    for (std::size_t k = 0; k < m; ++k) q[k] = std::exp(t[k] - lse_all);
    std::vector<double> dt(m, 0.0);
    std::vector<double> masked;
    for (std::size_t i = 0; i < m; ++i) {
      if (i == j) continue;
      masked.clear();
      for (std::size_t k = 0; k < m; ++k) {
        if (k != i) masked.push_back(t[k]);
      }
      const double lse_masked = detail::log_sum_exp(masked);
      for (std::size_t k = 0; k < m; ++k) {
        const double r = k == i ? 0.0 : std::exp(t[k] - lse_masked);
        dt[k] += q[k] - r;
      }
    }
    for (std::size_t k = 0; k < m; ++k) {
      if (dt[k] == 0.0) continue;
      axpy(dt[k] / tau, be.instances[j], grad.d_instances[k]);
      axpy(dt[k] / tau, be.instances[k], grad.d_instances[j]);
    }
  }
  return grad;
}

}  // namespace rpr
