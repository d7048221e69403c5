// The embedding function: a small convolutional network with a dropout
// layer, hand-implemented forward and backward passes, an Adam optimiser,
// and stochastic inference for embedding families.
//
// Architecture: per stage conv (same padding) -> ReLU -> average pool,
// then global average pool -> dropout -> linear -> L2 normalisation.
// Dropout is active in train and stochastic modes and bypassed in eval.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "rpr/binio.hpp"
#include "rpr/embedding.hpp"
#include "rpr/rng.hpp"
#include "rpr/scan.hpp"

namespace rpr {

struct EncoderConfig {
  std::size_t input_side = 64;            // W
  std::vector<std::size_t> widths{8, 16, 32};
  std::size_t kernel = 3;
  std::size_t pool = 2;
  std::size_t embedding_dim = 64;         // d
  double dropout_rate = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (widths.empty()) throw std::invalid_argument("EncoderConfig: no widths");
    if (embedding_dim < 2) {
      throw std::invalid_argument("EncoderConfig: embedding_dim >= 2");
    }
    if (kernel % 2 == 0 || kernel < 1) {
      throw std::invalid_argument("EncoderConfig: kernel must be odd");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw std::invalid_argument("EncoderConfig: dropout_rate in [0,1)");
    }
    std::size_t side = input_side;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (pool < 1 || side % pool != 0 || side / pool == 0) {
        throw std::invalid_argument("EncoderConfig: side not divisible by pool");
      }
      side /= pool;
    }
  }

  bool operator==(const EncoderConfig&) const = default;
};

// Flat parameter block. Declaration order (also the checkpoint order):
// per stage conv weights [out][in][k][k] then bias [out]; finally the
// linear weights [d][c_last] and bias [d].
struct ParamLayout {
  std::vector<std::size_t> stage_w;
  std::vector<std::size_t> stage_b;
  std::size_t linear_w = 0;
  std::size_t linear_b = 0;
  std::size_t total = 0;

  explicit ParamLayout(const EncoderConfig& cfg) {
    std::size_t off = 0;
    std::size_t in_ch = 1;
    for (std::size_t w : cfg.widths) {
      stage_w.push_back(off);
      off += w * in_ch * cfg.kernel * cfg.kernel;
      stage_b.push_back(off);
      off += w;
      in_ch = w;
    }
    linear_w = off;
    off += cfg.embedding_dim * in_ch;
    linear_b = off;
    off += cfg.embedding_dim;
    total = off;
  }
};

struct EncoderParams {
  EncoderConfig config;
  std::vector<double> values;
  std::uint64_t version = 0;
};

// Fan-in scaled uniform initialisation, deterministic for the config seed.
inline EncoderParams init_params(const EncoderConfig& cfg) {
  cfg.validate();
  const ParamLayout layout(cfg);
  EncoderParams p;
  p.config = cfg;
  p.values.assign(layout.total, 0.0);
  Rng rng = Rng::substream(cfg.seed, stream::kInit);
  std::size_t in_ch = 1;
  for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
    const std::size_t fan_in = in_ch * cfg.kernel * cfg.kernel;
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    const std::size_t count = cfg.widths[s] * fan_in;
    for (std::size_t i = 0; i < count; ++i) {
      p.values[layout.stage_w[s] + i] = rng.uniform(-bound, bound);
    }
    in_ch = cfg.widths[s];
  }
  const double bound = std::sqrt(1.0 / static_cast<double>(in_ch));
  for (std::size_t i = 0; i < cfg.embedding_dim * in_ch; ++i) {
    p.values[layout.linear_w + i] = rng.uniform(-bound, bound);
  }
  return p;
}

enum class ForwardMode { train, eval, stochastic };

// Activations retained by a train-mode forward, needed for backward.
struct ActivationCache {
  std::uint64_t params_version = 0;
  std::vector<std::vector<double>> stage_inputs;  // input to each conv
  std::vector<std::vector<double>> pre_acts;      // conv outputs pre-ReLU
  std::vector<double> dropout_mask;               // inverted scaling
  std::vector<double> dropped;                    // input to the linear layer
  std::vector<double> pre_norm;                   // z
};

struct ForwardResult {
  Embedding embedding;           // L2-normalised
  std::vector<double> pre_norm;  // z, before normalisation
  ActivationCache cache;         // filled in train mode only
};

namespace detail {

inline void conv_same(const double* in, std::size_t in_ch, std::size_t side,
                      const double* w, const double* b, std::size_t out_ch,
                      std::size_t k, double* out) {
  const auto pad = static_cast<long>(k / 2);
  const auto s = static_cast<long>(side);
  for (std::size_t o = 0; o < out_ch; ++o) {
    double* dst = out + o * side * side;
    for (long x = 0; x < s; ++x) {
      for (long y = 0; y < s; ++y) dst[x * s + y] = b[o];
    }
    for (std::size_t c = 0; c < in_ch; ++c) {
      const double* src = in + c * side * side;
      const double* ker = w + (o * in_ch + c) * k * k;
      for (long u = 0; u < static_cast<long>(k); ++u) {
        const long dx = u - pad;
        for (long v = 0; v < static_cast<long>(k); ++v) {
          const long dy = v - pad;
          const double wk = ker[u * static_cast<long>(k) + v];
          const long x0 = std::max(0L, -dx);
          const long x1 = std::min(s, s - dx);
          const long y0 = std::max(0L, -dy);
          const long y1 = std::min(s, s - dy);
          for (long x = x0; x < x1; ++x) {
            const double* srow = src + (x + dx) * s + dy;
            double* drow = dst + x * s;
            for (long y = y0; y < y1; ++y) drow[y] += wk * srow[y];
          }
        }
      }
    }
  }
}

inline void avg_pool(const double* in, std::size_t ch, std::size_t side,
                     std::size_t p, double* out) {
  const std::size_t os = side / p;
  const double inv = 1.0 / static_cast<double>(p * p);
  for (std::size_t c = 0; c < ch; ++c) {
    const double* src = in + c * side * side;
    double* dst = out + c * os * os;
    for (std::size_t x = 0; x < os; ++x) {
      for (std::size_t y = 0; y < os; ++y) {
        double s = 0.0;
        for (std::size_t u = 0; u < p; ++u) {
          for (std::size_t v = 0; v < p; ++v) {
            s += src[(x * p + u) * side + y * p + v];
          }
        }
        dst[x * os + y] = s * inv;
      }
    }
  }
}

}  // namespace detail

// One forward pass. `rng` is consumed only when dropout is active
// (train/stochastic modes with dropout_rate > 0). The activation cache is
// retained only in train mode.
inline ForwardResult forward(const EncoderParams& params,
                             const CartesianScan& scan, ForwardMode mode,
                             Rng* rng = nullptr) {
  const EncoderConfig& cfg = params.config;
  if (scan.side != cfg.input_side) {
    throw std::invalid_argument("forward: scan side != encoder input side");
  }
  const ParamLayout layout(cfg);
  const bool keep_cache = mode == ForwardMode::train;
  const bool dropout_active =
      mode != ForwardMode::eval && cfg.dropout_rate > 0.0;
  if (dropout_active && rng == nullptr) {
    throw std::invalid_argument("forward: dropout requires an rng");
  }

  ForwardResult res;
  ActivationCache& cache = res.cache;
  cache.params_version = params.version;

  std::vector<double> act = scan.power;  // 1 channel, W x W
  std::size_t side = cfg.input_side;
  std::size_t in_ch = 1;
  for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
    const std::size_t out_ch = cfg.widths[s];
    if (keep_cache) cache.stage_inputs.push_back(act);
    std::vector<double> pre(out_ch * side * side);
    detail::conv_same(act.data(), in_ch, side,
                      params.values.data() + layout.stage_w[s],
                      params.values.data() + layout.stage_b[s], out_ch,
                      cfg.kernel, pre.data());
    if (keep_cache) cache.pre_acts.push_back(pre);
    for (double& v : pre) v = v > 0.0 ? v : 0.0;
    const std::size_t pooled_side = side / cfg.pool;
    std::vector<double> pooled(out_ch * pooled_side * pooled_side);
    detail::avg_pool(pre.data(), out_ch, side, cfg.pool, pooled.data());
    act = std::move(pooled);
    side = pooled_side;
    in_ch = out_ch;
  }

  // global average pool
  std::vector<double> gap(in_ch);
  const double inv_area = 1.0 / static_cast<double>(side * side);
  for (std::size_t c = 0; c < in_ch; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < side * side; ++i) s += act[c * side * side + i];
    gap[c] = s * inv_area;
  }

  // dropout (inverted scaling)
  std::vector<double> mask(in_ch, 1.0);
  if (dropout_active) {
    const double keep = 1.0 - cfg.dropout_rate;
    for (double& m : mask) {
      m = rng->uniform() < cfg.dropout_rate ? 0.0 : 1.0 / keep;
    }
  }
  std::vector<double> dropped(in_ch);
  for (std::size_t c = 0; c < in_ch; ++c) dropped[c] = gap[c] * mask[c];

  // linear head
  std::vector<double> z(cfg.embedding_dim);
  const double* lw = params.values.data() + layout.linear_w;
  const double* lb = params.values.data() + layout.linear_b;
  for (std::size_t d = 0; d < cfg.embedding_dim; ++d) {
    double s = lb[d];
    const double* row = lw + d * in_ch;
    for (std::size_t c = 0; c < in_ch; ++c) s += row[c] * dropped[c];
    z[d] = s;
  }
  res.pre_norm = z;
  res.embedding = l2_normalized(z);
  if (keep_cache) {
    cache.dropout_mask = std::move(mask);
    cache.dropped = std::move(dropped);
    cache.pre_norm = res.pre_norm;
  }
  return res;
}

// T stochastic forwards; family statistics on pre-normalisation outputs,
// variance unbiased and floored at kVarianceFloor.
inline EmbeddingFamily forward_family(const EncoderParams& params,
                                      const CartesianScan& scan, std::size_t T,
                                      Rng& rng) {
  if (T < 2) throw std::invalid_argument("forward_family: T >= 2");
  const std::size_t d = params.config.embedding_dim;
  EmbeddingFamily fam;
  fam.sample_count = T;
  fam.mean.assign(d, 0.0);
  fam.variance.assign(d, 0.0);
  std::vector<std::vector<double>> samples;
  samples.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    samples.push_back(
        forward(params, scan, ForwardMode::stochastic, &rng).pre_norm);
    for (std::size_t i = 0; i < d; ++i) fam.mean[i] += samples.back()[i];
  }
  for (double& m : fam.mean) m /= static_cast<double>(T);
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < d; ++i) {
      const double dev = s[i] - fam.mean[i];
      fam.variance[i] += dev * dev;
    }
  }
  for (double& v : fam.variance) {
    v = std::max(v / static_cast<double>(T - 1), kVarianceFloor);
  }
  return fam;
}

// Exact gradients of the L2-normalised output w.r.t. all parameters,
// chain-ruled through normalisation, dropout, pooling, ReLU and the convs.
inline std::vector<double> backward(const EncoderParams& params,
                                    const ActivationCache& cache,
                                    const std::vector<double>& grad_embedding) {
  if (cache.params_version != params.version) {
    throw std::invalid_argument("backward: stale activation cache");
  }
  const EncoderConfig& cfg = params.config;
  const ParamLayout layout(cfg);
  std::vector<double> grads(layout.total, 0.0);

  // through L2 normalisation: dz = (g - (f.g) f) / |z|
  const std::size_t d = cfg.embedding_dim;
  const double norm = l2_norm(cache.pre_norm);
  std::vector<double> f(d);
  for (std::size_t i = 0; i < d; ++i) f[i] = cache.pre_norm[i] / norm;
  double fg = 0.0;
  for (std::size_t i = 0; i < d; ++i) fg += f[i] * grad_embedding[i];
  std::vector<double> dz(d);
  for (std::size_t i = 0; i < d; ++i) {
    dz[i] = (grad_embedding[i] - fg * f[i]) / norm;
  }

  // linear head
  const std::size_t c_last = cfg.widths.back();
  const double* lw = params.values.data() + layout.linear_w;
  std::vector<double> d_dropped(c_last, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    grads[layout.linear_b + i] += dz[i];
    for (std::size_t c = 0; c < c_last; ++c) {
      grads[layout.linear_w + i * c_last + c] += dz[i] * cache.dropped[c];
      d_dropped[c] += lw[i * c_last + c] * dz[i];
    }
  }

  // dropout then global average pool
  std::size_t side = cfg.input_side;
  for (std::size_t s = 0; s < cfg.widths.size(); ++s) side /= cfg.pool;
  std::vector<double> d_act(c_last * side * side);
  for (std::size_t c = 0; c < c_last; ++c) {
    const double g = d_dropped[c] * cache.dropout_mask[c] /
                     static_cast<double>(side * side);
    for (std::size_t i = 0; i < side * side; ++i) {
      d_act[c * side * side + i] = g;
    }
  }

  // stages in reverse
  for (std::size_t s = cfg.widths.size(); s-- > 0;) {
    const std::size_t out_ch = cfg.widths[s];
    const std::size_t in_ch = s == 0 ? 1 : cfg.widths[s - 1];
    const std::size_t conv_side = side * cfg.pool;

    // average pool backward
    std::vector<double> d_pre(out_ch * conv_side * conv_side);
    const double inv = 1.0 / static_cast<double>(cfg.pool * cfg.pool);
    for (std::size_t c = 0; c < out_ch; ++c) {
      for (std::size_t x = 0; x < conv_side; ++x) {
        for (std::size_t y = 0; y < conv_side; ++y) {
          d_pre[(c * conv_side + x) * conv_side + y] =
              d_act[(c * side + x / cfg.pool) * side + y / cfg.pool] * inv;
        }
      }
    }
    // ReLU backward
    const std::vector<double>& pre = cache.pre_acts[s];
    for (std::size_t i = 0; i < d_pre.size(); ++i) {
      if (pre[i] <= 0.0) d_pre[i] = 0.0;
    }
    // conv backward
    const std::vector<double>& input = cache.stage_inputs[s];
    double* dw = grads.data() + layout.stage_w[s];
    double* db = grads.data() + layout.stage_b[s];
    const double* w = params.values.data() + layout.stage_w[s];
    std::vector<double> d_in(in_ch * conv_side * conv_side, 0.0);
    const auto pad = static_cast<long>(cfg.kernel / 2);
    const auto cs = static_cast<long>(conv_side);
    for (std::size_t o = 0; o < out_ch; ++o) {
      const double* g_out = d_pre.data() + o * conv_side * conv_side;
      for (long i = 0; i < cs * cs; ++i) db[o] += g_out[i];
      for (std::size_t c = 0; c < in_ch; ++c) {
        const double* in_map = input.data() + c * conv_side * conv_side;
        double* d_in_map = d_in.data() + c * conv_side * conv_side;
        const double* ker = w + (o * in_ch + c) * cfg.kernel * cfg.kernel;
        double* d_ker = dw + (o * in_ch + c) * cfg.kernel * cfg.kernel;
        for (long u = 0; u < static_cast<long>(cfg.kernel); ++u) {
          const long dx = u - pad;
          for (long v = 0; v < static_cast<long>(cfg.kernel); ++v) {
            const long dy = v - pad;
            const long x0 = std::max(0L, -dx);
            const long x1 = std::min(cs, cs - dx);
            const long y0 = std::max(0L, -dy);
            const long y1 = std::min(cs, cs - dy);
            double wg = 0.0;
            const double wk = ker[u * static_cast<long>(cfg.kernel) + v];
            for (long x = x0; x < x1; ++x) {
              const double* in_row = in_map + (x + dx) * cs + dy;
              double* d_in_row = d_in_map + (x + dx) * cs + dy;
              const double* g_row = g_out + x * cs;
              for (long y = y0; y < y1; ++y) {
                wg += g_row[y] * in_row[y];
                d_in_row[y] += g_row[y] * wk;
              }
            }
            d_ker[u * static_cast<long>(cfg.kernel) + v] += wg;
          }
        }
      }
    }
    d_act = std::move(d_in);
    side = conv_side;
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One adaptive-moment step. Non-finite gradients are rejected with no
// parameter change; the version counter increments on success.
inline void step(EncoderParams& params, const std::vector<double>& grads,
                 AdamState& state, double lr = 3e-4) {
  if (grads.size() != params.values.size()) {
    throw std::invalid_argument("step: gradient shape mismatch");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw std::runtime_error("step: non-finite gradient");
  }
  if (state.m.empty()) {
    state.m.assign(grads.size(), 0.0);
    state.v.assign(grads.size(), 0.0);
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] =
        state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params.values[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    if (!std::isfinite(params.values[i])) {
      throw std::runtime_error("step: non-finite parameter");
    }
  }
  ++params.version;
}

// ---------------------------------------------------------------------------
// Checkpoint file: magic "RPCK", version u16 = 1, serialised EncoderConfig,
// then the flat parameter array as little-endian 32-bit reals in
// declaration order.

inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path,
                            const EncoderParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  const EncoderConfig& cfg = params.config;
  os.write("RPCK", 4);
  io::write_le<std::uint16_t>(os, kCheckpointFormatVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.input_side));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.widths.size()));
  for (std::size_t w : cfg.widths) {
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w));
  }
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.kernel));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.pool));
  io::write_le<std::uint32_t>(os,
                              static_cast<std::uint32_t>(cfg.embedding_dim));
  io::write_f32(os, static_cast<float>(cfg.dropout_rate));
  io::write_le<std::uint64_t>(os, cfg.seed);
  for (double v : params.values) io::write_f32(os, static_cast<float>(v));
}

inline EncoderParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  io::expect_magic(is, "RPCK", "checkpoint");
  const auto version = io::read_le<std::uint16_t>(is);
  if (version != kCheckpointFormatVersion) {
    throw std::runtime_error("unsupported checkpoint version");
  }
  EncoderConfig cfg;
  cfg.input_side = io::read_le<std::uint32_t>(is);
  const auto n_stages = io::read_le<std::uint32_t>(is);
  cfg.widths.clear();
  for (std::uint32_t i = 0; i < n_stages; ++i) {
    cfg.widths.push_back(io::read_le<std::uint32_t>(is));
  }
  cfg.kernel = io::read_le<std::uint32_t>(is);
  cfg.pool = io::read_le<std::uint32_t>(is);
  cfg.embedding_dim = io::read_le<std::uint32_t>(is);
  cfg.dropout_rate = static_cast<double>(io::read_f32(is));
  cfg.seed = io::read_le<std::uint64_t>(is);
  cfg.validate();
  EncoderParams params;
  params.config = cfg;
  const ParamLayout layout(cfg);
  params.values.resize(layout.total);
  for (double& v : params.values) v = static_cast<double>(io::read_f32(is));
  if (!is) throw std::runtime_error("checkpoint truncated");
  return params;
}

}  // namespace rpr
