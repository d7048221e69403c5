// Structured run configuration: one JSON document with sections for world,
// route, scan geometry, sampler, encoder, loss, training, inference and
// evaluation. Every output directory receives a resolved copy.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rpr/encoder.hpp"
#include "rpr/eval.hpp"
#include "rpr/loss.hpp"
#include "rpr/sampler.hpp"
#include "rpr/sim.hpp"

namespace rpr {

inline constexpr const char* kToolkitVersion = "rpr 0.1.0";

struct TrainingConfig {
  std::size_t epochs = 10;
  double learning_rate = 3e-4;
};

struct InferenceConfig {
  std::size_t samples = 24;  // T
  Metric metric = Metric::cosine;
};

struct RunConfig {
  std::uint64_t seed = 1;
  SimConfig sim;
  CartesianGeometry cartesian;
  SamplerConfig sampler;
  EncoderConfig encoder;
  LossConfig loss;
  TrainingConfig training;
  InferenceConfig inference;
  EvalOptions evaluation;

  // Propagates the top-level seed into the per-module seeds that have not
  // been set explicitly.
  void resolve_seeds() {
    if (sim.seed == 0) sim.seed = seed;
    if (sampler.seed == 0) sampler.seed = seed;
    if (encoder.seed == 0) encoder.seed = seed;
  }
};

namespace detail {

template <typename T>
void get_if_present(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  detail::get_if_present(j, "seed", cfg.seed);
  if (j.contains("world")) {
    const auto& w = j.at("world");
    detail::get_if_present(w, "seed", cfg.sim.seed);
    detail::get_if_present(w, "n_scatterers", cfg.sim.n_scatterers);
    detail::get_if_present(w, "extent_m", cfg.sim.extent);
    detail::get_if_present(w, "noise_speckle", cfg.sim.noise.speckle);
    detail::get_if_present(w, "noise_floor", cfg.sim.noise.floor);
  }
  if (j.contains("route")) {
    const auto& r = j.at("route");
    if (r.contains("kind")) {
      cfg.sim.route = route_kind_from_string(r.at("kind").get<std::string>());
    }
    detail::get_if_present(r, "circuit_length_m", cfg.sim.circuit_length);
    detail::get_if_present(r, "speed_mps", cfg.sim.speed);
    detail::get_if_present(r, "frame_period_s", cfg.sim.frame_period);
    detail::get_if_present(r, "frames", cfg.sim.frames);
  }
  if (j.contains("geometry")) {
    const auto& g = j.at("geometry");
    detail::get_if_present(g, "azimuths", cfg.sim.azimuths);
    detail::get_if_present(g, "bins", cfg.sim.bins);
    detail::get_if_present(g, "bin_size_m", cfg.sim.bin_size);
    detail::get_if_present(g, "cartesian_side", cfg.cartesian.side);
    detail::get_if_present(g, "cartesian_pixel_m", cfg.cartesian.pixel_size);
  }
  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    if (s.contains("strategy")) {
      cfg.sampler.strategy =
          strategy_from_string(s.at("strategy").get<std::string>());
    }
    detail::get_if_present(s, "batch_size", cfg.sampler.batch_size);
    detail::get_if_present(s, "d_min_s", cfg.sampler.d_min_s);
    detail::get_if_present(s, "d_max_s", cfg.sampler.d_max_s);
    detail::get_if_present(s, "literal_vtr2_augmentation",
                           cfg.sampler.literal_vtr2_augmentation);
    detail::get_if_present(s, "seed", cfg.sampler.seed);
  }
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    detail::get_if_present(e, "widths", cfg.encoder.widths);
    detail::get_if_present(e, "kernel", cfg.encoder.kernel);
    detail::get_if_present(e, "pool", cfg.encoder.pool);
    detail::get_if_present(e, "embedding_dim", cfg.encoder.embedding_dim);
    detail::get_if_present(e, "dropout_rate", cfg.encoder.dropout_rate);
    detail::get_if_present(e, "seed", cfg.encoder.seed);
  }
  if (j.contains("loss")) {
    detail::get_if_present(j.at("loss"), "temperature", cfg.loss.temperature);
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    detail::get_if_present(t, "epochs", cfg.training.epochs);
    detail::get_if_present(t, "learning_rate", cfg.training.learning_rate);
  }
  if (j.contains("inference")) {
    const auto& i = j.at("inference");
    detail::get_if_present(i, "samples", cfg.inference.samples);
    if (i.contains("metric")) {
      cfg.inference.metric =
          metric_from_string(i.at("metric").get<std::string>());
    }
  }
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    detail::get_if_present(e, "inner_boundary_m", cfg.evaluation.inner_boundary_m);
    detail::get_if_present(e, "outer_boundary_m", cfg.evaluation.outer_boundary_m);
    detail::get_if_present(e, "ignore_band", cfg.evaluation.ignore_band);
    detail::get_if_present(e, "p_list", cfg.evaluation.p_list);
    detail::get_if_present(e, "n_max", cfg.evaluation.n_max);
    detail::get_if_present(e, "decompose", cfg.evaluation.run_decomposition);
    if (e.contains("heading_threshold_deg")) {
      cfg.evaluation.heading_threshold_rad =
          e.at("heading_threshold_deg").get<double>() * M_PI / 180.0;
    }
    detail::get_if_present(e, "per_pair", cfg.evaluation.per_pair);
  }
  cfg.encoder.input_side = cfg.cartesian.side;
  cfg.resolve_seeds();
  return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["toolkit"] = kToolkitVersion;
  j["seed"] = cfg.seed;
  j["world"] = {{"seed", cfg.sim.seed},
                {"n_scatterers", cfg.sim.n_scatterers},
                {"extent_m", cfg.sim.extent},
                {"noise_speckle", cfg.sim.noise.speckle},
                {"noise_floor", cfg.sim.noise.floor}};
  j["route"] = {{"kind", to_string(cfg.sim.route)},
                {"circuit_length_m", cfg.sim.circuit_length},
                {"speed_mps", cfg.sim.speed},
                {"frame_period_s", cfg.sim.frame_period},
                {"frames", cfg.sim.frames}};
  j["geometry"] = {{"azimuths", cfg.sim.azimuths},
                   {"bins", cfg.sim.bins},
                   {"bin_size_m", cfg.sim.bin_size},
                   {"cartesian_side", cfg.cartesian.side},
                   {"cartesian_pixel_m", cfg.cartesian.pixel_size}};
  j["sampler"] = {{"strategy", to_string(cfg.sampler.strategy)},
                  {"batch_size", cfg.sampler.batch_size},
                  {"d_min_s", cfg.sampler.d_min_s},
                  {"d_max_s", cfg.sampler.d_max_s},
                  {"literal_vtr2_augmentation",
                   cfg.sampler.literal_vtr2_augmentation},
                  {"seed", cfg.sampler.seed}};
  j["encoder"] = {{"widths", cfg.encoder.widths},
                  {"kernel", cfg.encoder.kernel},
                  {"pool", cfg.encoder.pool},
                  {"embedding_dim", cfg.encoder.embedding_dim},
                  {"dropout_rate", cfg.encoder.dropout_rate},
                  {"seed", cfg.encoder.seed}};
  j["loss"] = {{"temperature", cfg.loss.temperature}};
  j["training"] = {{"epochs", cfg.training.epochs},
                   {"learning_rate", cfg.training.learning_rate}};
  j["inference"] = {{"samples", cfg.inference.samples},
                    {"metric", to_string(cfg.inference.metric)}};
  j["evaluation"] = {
      {"inner_boundary_m", cfg.evaluation.inner_boundary_m},
      {"outer_boundary_m", cfg.evaluation.outer_boundary_m},
      {"ignore_band", cfg.evaluation.ignore_band},
      {"p_list", cfg.evaluation.p_list},
      {"n_max", cfg.evaluation.n_max},
      {"decompose", cfg.evaluation.run_decomposition},
      {"heading_threshold_deg",
       cfg.evaluation.heading_threshold_rad * 180.0 / M_PI},
      {"per_pair", cfg.evaluation.per_pair}};
  return j;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  nlohmann::json j;
  is >> j;
  return run_config_from_json(j);
}

inline void save_run_config(const std::filesystem::path& path,
                            const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write config " + path.string());
  os << run_config_to_json(cfg).dump(2) << "\n";
}

}  // namespace rpr
