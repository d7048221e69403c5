// Command-line entry point: simulate, train, embed, evaluate, baseline.
//
// Exit codes: 0 success, 1 validation/configuration error, 2 I/O error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rpr/config.hpp"
#include "rpr/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::uint64_t seed = 0;  // 0 = keep config value
  std::size_t threads = 1;
};

rpr::RunConfig resolve_config(const CommonFlags& flags) {
  rpr::RunConfig cfg;
  if (!flags.config_path.empty()) {
    cfg = rpr::load_run_config(flags.config_path);
  } else {
    cfg.resolve_seeds();
  }
  if (flags.seed != 0) {
    cfg.seed = flags.seed;
    cfg.sim.seed = flags.seed;
    cfg.sampler.seed = flags.seed;
    cfg.encoder.seed = flags.seed;
  }
  cfg.encoder.input_side = cfg.cartesian.side;
  return cfg;
}

void write_resolved_config(const fs::path& out_dir, const rpr::RunConfig& cfg) {
  fs::create_directories(out_dir);
  rpr::save_run_config(out_dir / "config.json", cfg);
}

std::pair<std::size_t, std::size_t> parse_range(const std::string& spec,
                                                std::size_t total) {
  if (spec.empty()) return {0, total};
  const auto colon = spec.find(':');
  if (colon == std::string::npos) {
    throw std::invalid_argument("range must be start:end");
  }
  const std::size_t begin = std::stoul(spec.substr(0, colon));
  const std::size_t end = std::stoul(spec.substr(colon + 1));
  if (begin >= end || end > total) {
    throw std::invalid_argument("range out of bounds");
  }
  return {begin, end};
}

int cmd_simulate(const CommonFlags& flags, const std::string& out_dir,
                 std::size_t frames) {
  rpr::RunConfig cfg = resolve_config(flags);
  if (frames > 0) cfg.sim.frames = frames;
  const rpr::Trajectory traj = rpr::simulate(cfg.sim);
  rpr::save_trajectory(out_dir, traj, cfg.sim);
  write_resolved_config(out_dir, cfg);
  std::cout << "simulated " << traj.size() << " frames -> " << out_dir << "\n";
  return 0;
}

int cmd_train(const CommonFlags& flags, const std::string& traj_dir,
              const std::string& out_dir) {
  rpr::RunConfig cfg = resolve_config(flags);
  const rpr::Trajectory traj = rpr::load_trajectory(traj_dir);
  const rpr::TrainResult result = rpr::train_model(cfg, traj);
  fs::create_directories(out_dir);
  rpr::save_checkpoint(fs::path(out_dir) / "encoder.rpck", result.params);
  std::ofstream log(fs::path(out_dir) / "loss.csv");
  log << "epoch,mean_loss\n";
  for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e) {
    log << (e + 1) << "," << result.epoch_mean_loss[e] << "\n";
  }
  write_resolved_config(out_dir, cfg);
  std::cout << "trained " << rpr::to_string(cfg.sampler.strategy) << " for "
            << cfg.training.epochs << " epochs -> " << out_dir << "\n";
  return 0;
}

int cmd_embed(const CommonFlags& flags, const std::string& checkpoint,
              const std::string& traj_dir, const std::string& mode,
              const std::string& range, const std::string& out_file) {
  rpr::RunConfig cfg = resolve_config(flags);
  const rpr::EncoderParams params = rpr::load_checkpoint(checkpoint);
  const rpr::Trajectory traj = rpr::load_trajectory(traj_dir);
  if (params.config.input_side != cfg.cartesian.side) {
    throw std::invalid_argument(
        "checkpoint input side does not match configured Cartesian side");
  }
  const auto [begin, end] = parse_range(range, traj.size());
  if (mode == "point") {
    rpr::save_point_embeddings(
        out_file, rpr::embed_points(params, traj, cfg.cartesian, begin, end,
                                    flags.threads));
  } else if (mode == "family") {
    rpr::save_family_embeddings(
        out_file,
        rpr::embed_families(params, traj, cfg.cartesian, begin, end,
                            cfg.inference.samples, cfg.seed, flags.threads));
  } else {
    throw std::invalid_argument("mode must be point or family");
  }
  std::cout << "embedded frames [" << begin << ", " << end << ") -> "
            << out_file << "\n";
  return 0;
}

std::vector<rpr::Pose> load_pose_range(const std::string& csv,
                                       const std::string& range) {
  std::vector<rpr::Pose> poses = rpr::load_poses_csv(csv);
  const auto [begin, end] = parse_range(range, poses.size());
  return {poses.begin() + static_cast<std::ptrdiff_t>(begin),
          poses.begin() + static_cast<std::ptrdiff_t>(end)};
}

int cmd_evaluate(const CommonFlags& flags, const std::string& map_emb,
                 const std::string& query_emb, const std::string& map_poses_csv,
                 const std::string& query_poses_csv,
                 const std::string& map_range, const std::string& query_range,
                 const std::string& out_dir, bool dump_dm) {
  rpr::RunConfig cfg = resolve_config(flags);
  const rpr::EmbeddingFile map_file = rpr::load_embeddings(map_emb);
  const rpr::EmbeddingFile query_file = rpr::load_embeddings(query_emb);
  const std::vector<rpr::Pose> db_poses =
      load_pose_range(map_poses_csv, map_range);
  const std::vector<rpr::Pose> q_poses =
      load_pose_range(query_poses_csv, query_range);
  if (map_file.count() != db_poses.size() ||
      query_file.count() != q_poses.size()) {
    throw std::invalid_argument("embedding/pose counts do not align");
  }

  rpr::DistanceMatrix dm;
  if (cfg.inference.metric == rpr::Metric::kl) {
    if (!map_file.is_family || !query_file.is_family) {
      throw std::invalid_argument("kl metric needs family embeddings");
    }
    dm = rpr::distance_matrix(query_file.families, map_file.families);
  } else {
    if (map_file.is_family || query_file.is_family) {
      throw std::invalid_argument(
          "cosine/euclidean metrics need point embeddings");
    }
    dm = rpr::distance_matrix(query_file.points, map_file.points,
                              cfg.inference.metric);
  }

  const rpr::EvalReport report =
      rpr::evaluate_retrieval(dm, q_poses, db_poses, cfg.evaluation);
  fs::create_directories(out_dir);
  {
    std::ofstream os(fs::path(out_dir) / "report.json");
    os << report.to_json().dump(2) << "\n";
  }
  rpr::save_pr_csv(fs::path(out_dir) / "pr.csv", report.curve);
  if (dump_dm) {
    std::ofstream os(fs::path(out_dir) / "distance_matrix.csv");
    for (std::size_t q = 0; q < dm.rows; ++q) {
      for (std::size_t c = 0; c < dm.cols; ++c) {
        os << dm.at(q, c) << (c + 1 < dm.cols ? ',' : '\n');
      }
    }
  }
  write_resolved_config(out_dir, cfg);
  std::cout << "recall@1 = " << report.recall_at_n_table.at(1) << ", auc = "
            << report.aggregates.auc << " -> " << out_dir << "\n";
  return 0;
}

int cmd_baseline(const CommonFlags& flags, const std::string& traj_dir,
                 const std::string& map_range, const std::string& query_range,
                 const std::string& out_dir) {
  rpr::RunConfig cfg = resolve_config(flags);
  const rpr::Trajectory traj = rpr::load_trajectory(traj_dir);
  const auto [mb, me] = parse_range(map_range, traj.size());
  const auto [qb, qe] = parse_range(query_range, traj.size());
  const auto db_keys = rpr::ring_keys(traj, mb, me, flags.threads);
  const auto q_keys = rpr::ring_keys(traj, qb, qe, flags.threads);
  const rpr::DistanceMatrix dm =
      rpr::distance_matrix(q_keys, db_keys, rpr::Metric::euclidean);
  const std::vector<rpr::Pose> db_poses(
      traj.poses.begin() + static_cast<std::ptrdiff_t>(mb),
      traj.poses.begin() + static_cast<std::ptrdiff_t>(me));
  const std::vector<rpr::Pose> q_poses(
      traj.poses.begin() + static_cast<std::ptrdiff_t>(qb),
      traj.poses.begin() + static_cast<std::ptrdiff_t>(qe));
  const rpr::EvalReport report =
      rpr::evaluate_retrieval(dm, q_poses, db_poses, cfg.evaluation);
  fs::create_directories(out_dir);
  {
    std::ofstream os(fs::path(out_dir) / "report.json");
    os << report.to_json().dump(2) << "\n";
  }
  rpr::save_pr_csv(fs::path(out_dir) / "pr.csv", report.curve);
  write_resolved_config(out_dir, cfg);
  std::cout << "ring-key recall@1 = " << report.recall_at_n_table.at(1)
            << " -> " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"radar place recognition toolkit"};
  app.require_subcommand(1);

  CommonFlags flags;
  app.add_option("--config", flags.config_path, "path to a run config JSON");
  app.add_option("--seed", flags.seed, "override the top-level seed");
  app.add_option("--threads", flags.threads, "worker threads for pure stages");

  auto* sim = app.add_subcommand("simulate", "render a synthetic trajectory");
  std::string sim_out;
  std::size_t sim_frames = 0;
  sim->add_option("--out", sim_out, "output trajectory directory")->required();
  sim->add_option("--frames", sim_frames, "emit exactly this many scans");

  auto* train = app.add_subcommand("train", "train the encoder");
  std::string train_traj, train_out;
  train->add_option("--traj", train_traj, "trajectory directory")->required();
  train->add_option("--out", train_out, "output directory")->required();

  auto* embed = app.add_subcommand("embed", "extract embeddings");
  std::string embed_ckpt, embed_traj, embed_mode = "point", embed_range,
              embed_out;
  embed->add_option("--checkpoint", embed_ckpt)->required();
  embed->add_option("--traj", embed_traj)->required();
  embed->add_option("--mode", embed_mode, "point or family");
  embed->add_option("--range", embed_range, "frame range start:end");
  embed->add_option("--out", embed_out)->required();

  auto* eval = app.add_subcommand("evaluate", "score retrieval quality");
  std::string ev_map, ev_query, ev_map_poses, ev_query_poses, ev_map_range,
      ev_query_range, ev_out;
  bool ev_dump = false;
  eval->add_option("--map", ev_map, "map embedding file")->required();
  eval->add_option("--query", ev_query, "query embedding file")->required();
  eval->add_option("--map-poses", ev_map_poses)->required();
  eval->add_option("--query-poses", ev_query_poses)->required();
  eval->add_option("--map-range", ev_map_range);
  eval->add_option("--query-range", ev_query_range);
  eval->add_option("--out", ev_out)->required();
  eval->add_flag("--dump-distance-matrix", ev_dump);

  auto* base = app.add_subcommand("baseline", "ring-key baseline evaluation");
  std::string base_traj, base_map_range, base_query_range, base_out;
  base->add_option("--traj", base_traj)->required();
  base->add_option("--map-range", base_map_range);
  base->add_option("--query-range", base_query_range);
  base->add_option("--out", base_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(flags, sim_out, sim_frames);
    if (train->parsed()) return cmd_train(flags, train_traj, train_out);
    if (embed->parsed()) {
      return cmd_embed(flags, embed_ckpt, embed_traj, embed_mode, embed_range,
                       embed_out);
    }
    if (eval->parsed()) {
      return cmd_evaluate(flags, ev_map, ev_query, ev_map_poses,
                          ev_query_poses, ev_map_range, ev_query_range, ev_out,
                          ev_dump);
    }
    if (base->parsed()) {
      return cmd_baseline(flags, base_traj, base_map_range, base_query_range,
                          base_out);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
