// Run orchestration: the training loop over sampled batches, embedding
// extraction for whole trajectories, and the ring-key baseline path.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <thread>
#include <vector>

#include "rpr/config.hpp"
#include "rpr/encoder.hpp"
#include "rpr/eval.hpp"
#include "rpr/loss.hpp"
#include "rpr/sampler.hpp"
#include "rpr/sim.hpp"

namespace rpr {

namespace detail {

inline void parallel_for(std::size_t count, std::size_t threads,
                         const std::function<void(std::size_t)>& body) {
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += threads) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

struct TrainResult {
  EncoderParams params;
  std::vector<double> epoch_mean_loss;
};

// Trains the encoder on a trajectory with the configured batch strategy.
// One epoch is one expected pass over the trajectory's source frames:
// floor(|scans| / sources-per-batch) optimiser steps, where a batch draws
// batch_size fresh source frames, except vTR2 whose batches pair each of
// batch_size/2 sources with a hard negative. Deterministic for a fixed
// config.
inline TrainResult train_model(const RunConfig& cfg, const Trajectory& traj) {
  cfg.sampler.validate();
  EncoderConfig enc_cfg = cfg.encoder;
  enc_cfg.input_side = cfg.cartesian.side;
  TrainResult result;
  result.params = init_params(enc_cfg);
  AdamState adam;
  Rng sampler_rng = Rng::substream(cfg.sampler.seed, stream::kSampler);
  Rng dropout_rng = Rng::substream(cfg.encoder.seed, stream::kDropout);

  const std::size_t m = cfg.sampler.batch_size;
  const std::size_t sources_per_batch =
      cfg.sampler.strategy == Strategy::vTR2 ? m / 2 : m;
  const std::size_t steps_per_epoch = traj.size() / sources_per_batch;
  if (steps_per_epoch == 0) {
    throw std::invalid_argument("train_model: trajectory too short");
  }
  for (std::size_t epoch = 0; epoch < cfg.training.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t step_i = 0; step_i < steps_per_epoch; ++step_i) {
      const Batch batch =
          sample_batch(traj, cfg.sampler, cfg.cartesian, sampler_rng);

      BatchEmbeddings be;
      std::vector<ActivationCache> inst_caches, aug_caches;
      for (std::size_t i = 0; i < m; ++i) {
        ForwardResult fwd = forward(result.params, batch.instances[i],
                                    ForwardMode::train, &dropout_rng);
        be.instances.push_back(std::move(fwd.embedding));
        inst_caches.push_back(std::move(fwd.cache));
      }
      for (std::size_t i = 0; i < m; ++i) {
        ForwardResult fwd = forward(result.params, batch.augmentations[i],
                                    ForwardMode::train, &dropout_rng);
        be.augmentations.push_back(std::move(fwd.embedding));
        aug_caches.push_back(std::move(fwd.cache));
      }

      const ObjectiveBreakdown obj = batch_objective(be, cfg.loss.temperature);
      if (!std::isfinite(obj.objective)) {
        throw std::runtime_error("train_model: non-finite loss");
      }
      loss_sum += obj.objective;

      const ObjectiveGradient grad = objective_gradient(be, cfg.loss.temperature);
      std::vector<double> param_grads(result.params.values.size(), 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        const auto gi =
            backward(result.params, inst_caches[i], grad.d_instances[i]);
        const auto ga =
            backward(result.params, aug_caches[i], grad.d_augmentations[i]);
        for (std::size_t k = 0; k < param_grads.size(); ++k) {
          param_grads[k] += gi[k] + ga[k];
        }
      }
      step(result.params, param_grads, adam, cfg.training.learning_rate);
    }
    result.epoch_mean_loss.push_back(loss_sum /
                                     static_cast<double>(steps_per_epoch));
  }
  return result;
}

// Deterministic point embeddings (eval mode) for frames [begin, end).
inline std::vector<Embedding> embed_points(const EncoderParams& params,
                                           const Trajectory& traj,
                                           const CartesianGeometry& geom,
                                           std::size_t begin, std::size_t end,
                                           std::size_t threads = 1) {
  std::vector<Embedding> out(end - begin);
  detail::parallel_for(end - begin, threads, [&](std::size_t i) {
    const CartesianScan scan = polar_to_cartesian(
        traj.scans[begin + i], geom.side, geom.pixel_size);
    out[i] = forward(params, scan, ForwardMode::eval).embedding;
  });
  return out;
}

// Embedding families via T stochastic forwards per frame, one dropout
// sub-stream per frame so the result is independent of thread count.
inline std::vector<EmbeddingFamily> embed_families(
    const EncoderParams& params, const Trajectory& traj,
    const CartesianGeometry& geom, std::size_t begin, std::size_t end,
    std::size_t samples, std::uint64_t seed, std::size_t threads = 1) {
  std::vector<EmbeddingFamily> out(end - begin);
  detail::parallel_for(end - begin, threads, [&](std::size_t i) {
    const CartesianScan scan = polar_to_cartesian(
        traj.scans[begin + i], geom.side, geom.pixel_size);
    Rng rng = Rng::substream(seed, stream::kDropout, begin + i);
    out[i] = forward_family(params, scan, samples, rng);
  });
  return out;
}

inline std::vector<RingKey> ring_keys(const Trajectory& traj, std::size_t begin,
                                      std::size_t end,
                                      std::size_t threads = 1) {
  std::vector<RingKey> out(end - begin);
  detail::parallel_for(end - begin, threads, [&](std::size_t i) {
    out[i] = ring_key(traj.scans[begin + i]);
  });
  return out;
}

}  // namespace rpr
