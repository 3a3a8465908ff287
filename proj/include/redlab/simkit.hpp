#pragma once

// Toy multi-encoder model with controllable information overlap.
//
// A latent vector z ~ N(0, I_C) plays the image. Each task labels z by the sign pattern of
// a few random linear functionals of its relevant channels. Each encoder sees only its
// visible channels, maps them linearly to a T x d token grid and adds observation noise.
// Token grids are fused (sequence append, channel concat, shared MLP, or cross-attention
// with learnable queries), mean-pooled, and fed to a tanh MLP with one softmax output
// layer per task. A masked encoder's grid is replaced by zeros before fusion.
//
// Conventions: token grids are (tokens x dim); activations are row vectors; weights map
// rows on the right (y = x W + b).

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <fmt/core.h>

#include "redlab/core.hpp"

namespace redlab::sim {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Rng = std::mt19937_64;

/// splitmix64 finalizer over (seed, tag); used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace stream {
inline constexpr std::uint64_t world = 1, encoders = 2, model = 3, train = 4, eval = 5, gradcheck = 6;
}

inline Matrix random_normal(int rows, int cols, double stddev, Rng& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  Matrix m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = d(rng);
  return m;
}

// ---------------------------------------------------------------------------
// World

struct TaskSpec {
  std::string name;
  Category category = Category::general;
  std::vector<int> channels;
  int classes = 4;
};

struct Task {
  TaskSpec spec;
  Matrix functionals;  // log2(classes) x |channels|, orthonormal rows

  int label(const Vector& z) const {
    int code = 0;
    for (int j = 0; j < functionals.rows(); ++j) {
      double v = 0.0;
      for (std::size_t c = 0; c < spec.channels.size(); ++c)
        v += functionals(j, static_cast<int>(c)) * z(spec.channels[c]);
      if (v > 0.0) code |= 1 << j;
    }
    return code;
  }
};

struct SimWorld {
  int channels = 16;
  double noise = 0.0;
  std::vector<Task> tasks;

  static SimWorld create(int channels, double noise, const std::vector<TaskSpec>& specs, std::uint64_t seed) {
    if (channels < 1) throw ConfigError("world needs at least one channel");
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("observation noise must be >= 0");
    if (specs.empty()) throw ConfigError("world needs at least one task");
    SimWorld w;
    w.channels = channels;
    w.noise = noise;
    Rng rng(mix_seed(seed, stream::world));
    for (const auto& s : specs) {
      if (s.channels.empty()) throw ConfigError(fmt::format("task '{}' has no relevant channels", s.name));
      for (int c : s.channels)
        if (c < 0 || c >= channels)
          throw ConfigError(fmt::format("task '{}' channel {} outside [0, {})", s.name, c, channels));
      if (s.classes < 2 || !std::has_single_bit(static_cast<unsigned>(s.classes)))
        throw ConfigError(fmt::format("task '{}': class count {} must be a power of two >= 2", s.name, s.classes));
      for (const auto& t : w.tasks)
        if (t.spec.name == s.name) throw ConfigError(fmt::format("duplicate task name '{}'", s.name));
      int bits = std::countr_zero(static_cast<unsigned>(s.classes));
      int m = static_cast<int>(s.channels.size());
      if (bits > m)
        throw ConfigError(fmt::format("task '{}': {} classes need at least {} relevant channels", s.name, s.classes, bits));
      // Orthonormal functionals make the sign bits independent, so classes are equiprobable.
      Matrix f = random_normal(bits, m, 1.0, rng);
      for (int j = 0; j < bits; ++j) {
        for (int k = 0; k < j; ++k) f.row(j) -= f.row(j).dot(f.row(k)) * f.row(k);
        f.row(j).normalize();
      }
      w.tasks.push_back({s, std::move(f)});
    }
    return w;
  }

  Vector sample_latent(Rng& rng) const {
    std::normal_distribution<double> d;
    Vector z(channels);
    for (int c = 0; c < channels; ++c) z(c) = d(rng);
    return z;
  }

  std::vector<int> labels(const Vector& z) const {
    std::vector<int> out;
    for (const auto& t : tasks) out.push_back(t.label(z));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Encoders

struct EncoderSpec {
  std::string name;
  std::vector<int> visible;  // channels this encoder can see
  int tokens = 4;
  int dim = 8;
  bool frozen = true;
  Matrix weights;  // (tokens * dim) x C; columns outside `visible` are zero

  int input_channels() const { return static_cast<int>(weights.cols()); }

  /// Weights ~ N(0, 1/|visible|) on visible columns.
  static EncoderSpec random(std::string name, std::vector<int> visible, int tokens, int dim, int channels,
                            Rng& rng, bool frozen = true) {
    if (visible.empty()) throw ConfigError(fmt::format("encoder '{}' sees no channels", name));
    if (tokens < 1 || dim < 1) throw ConfigError(fmt::format("encoder '{}' needs tokens, dim >= 1", name));
    EncoderSpec e{std::move(name), std::move(visible), tokens, dim, frozen, Matrix::Zero(tokens * dim, channels)};
    double stddev = 1.0 / std::sqrt(static_cast<double>(e.visible.size()));
    std::normal_distribution<double> d(0.0, stddev);
    for (int c : e.visible) {
      if (c < 0 || c >= channels)
        throw ConfigError(fmt::format("encoder '{}' channel {} outside [0, {})", e.name, c, channels));
      for (int r = 0; r < tokens * dim; ++r) e.weights(r, c) = d(rng);
    }
    return e;
  }

  Vector visible_part(const Vector& z) const {
    if (z.size() != input_channels())
      throw PreconditionError(fmt::format("encoder '{}' expects {} channels, got {}", name, input_channels(), z.size()));
    Vector out = Vector::Zero(z.size());
    for (int c : visible) out(c) = z(c);
    return out;
  }
};

/// tokens = weights * (z restricted to visible channels) + sigma * unit_noise.
inline Matrix encode(const EncoderSpec& spec, const Vector& z, double sigma, const Matrix& unit_noise) {
  Vector flat = spec.weights * spec.visible_part(z);
  Matrix grid(spec.tokens, spec.dim);
  for (int t = 0; t < spec.tokens; ++t)
    for (int j = 0; j < spec.dim; ++j) grid(t, j) = flat(t * spec.dim + j);
  if (sigma != 0.0) {
    if (unit_noise.rows() != spec.tokens || unit_noise.cols() != spec.dim)
      throw PreconditionError("noise grid shape mismatch");
    grid += sigma * unit_noise;
  }
  return grid;
}

inline Matrix encode(const EncoderSpec& spec, const Vector& z, double sigma, Rng& rng) {
  Matrix noise = sigma != 0.0 ? random_normal(spec.tokens, spec.dim, 1.0, rng) : Matrix();
  return encode(spec, z, sigma, noise);
}

/// Masking replaces an encoder's output with an all-zero grid of the same shape.
inline Matrix mask(const Matrix& tokens) { return Matrix::Zero(tokens.rows(), tokens.cols()); }

// ---------------------------------------------------------------------------
// Fusion

enum class FusionStrategy { sequence_append, channel_concat, shared_mlp, cross_attention };

inline std::string_view to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::sequence_append: return "sequence_append";
    case FusionStrategy::channel_concat: return "channel_concat";
    case FusionStrategy::shared_mlp: return "shared_mlp";
    case FusionStrategy::cross_attention: return "cross_attention";
  }
  return "?";
}

inline std::optional<FusionStrategy> parse_fusion(std::string_view s) {
  for (auto f : {FusionStrategy::sequence_append, FusionStrategy::channel_concat, FusionStrategy::shared_mlp,
                 FusionStrategy::cross_attention})
    if (s == to_string(f)) return f;
  return std::nullopt;
}

struct FusionSpec {
  FusionStrategy strategy = FusionStrategy::channel_concat;
  int mlp_hidden = 16;  // shared_mlp: hidden width of the two-layer map
  int mlp_dim = 8;      // shared_mlp: common output dim d
  int queries = 4;      // cross_attention: m
  int key_dim = 8;      // cross_attention
  int value_dim = 8;    // cross_attention
};

struct FusionParams {
  Matrix mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // shared_mlp
  Matrix queries;                         // cross_attention (m x key_dim)
  std::vector<Matrix> keys, values;       // cross_attention, per encoder (dim_e x key/value dim)
};

struct HeadSpec {
  std::vector<int> hidden{32};
};

struct HeadParams {
  std::vector<Matrix> hidden_w, hidden_b;  // b is 1 x width
  std::vector<Matrix> out_w, out_b;        // one per task
};

enum class ParamGroup { encoders, fusion, head };

inline std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::encoders: return "encoders";
    case ParamGroup::fusion: return "fusion";
    case ParamGroup::head: return "head";
  }
  return "?";
}

struct Model {
  std::vector<EncoderSpec> encoders;
  FusionSpec fusion;
  HeadSpec head;
  FusionParams fusion_params;
  HeadParams head_params;
  std::vector<int> task_classes;

  int encoder_count() const { return static_cast<int>(encoders.size()); }
};

/// Width of the fused (and pooled) token representation.
inline int fused_dim(const std::vector<EncoderSpec>& encoders, const FusionSpec& f) {
  switch (f.strategy) {
    case FusionStrategy::sequence_append: return encoders.front().dim;
    case FusionStrategy::channel_concat: {
      int d = 0;
      for (const auto& e : encoders) d += e.dim;
      return d;
    }
    case FusionStrategy::shared_mlp: return f.mlp_dim;
    case FusionStrategy::cross_attention: return f.value_dim;
  }
  return 0;
}

inline void validate_fusion(const std::vector<EncoderSpec>& encoders, const FusionSpec& f) {
  if (encoders.empty()) throw ConfigError("model needs at least one encoder");
  if (static_cast<int>(encoders.size()) > kMaxEncoders) throw ConfigError("too many encoders");
  auto same = [&](auto member) {
    for (const auto& e : encoders)
      if (e.*member != encoders.front().*member) return false;
    return true;
  };
  switch (f.strategy) {
    case FusionStrategy::sequence_append:
    case FusionStrategy::shared_mlp:
      if (!same(&EncoderSpec::dim))
        throw ConfigError(fmt::format("{} requires equal token dims", to_string(f.strategy)));
      break;
    case FusionStrategy::channel_concat:
      if (!same(&EncoderSpec::tokens)) throw ConfigError("channel_concat requires equal token counts");
      break;
    case FusionStrategy::cross_attention: break;
  }
  if (f.strategy == FusionStrategy::shared_mlp && (f.mlp_hidden < 1 || f.mlp_dim < 1))
    throw ConfigError("shared_mlp widths must be >= 1");
  if (f.strategy == FusionStrategy::cross_attention && (f.queries < 1 || f.key_dim < 1 || f.value_dim < 1))
    throw ConfigError("cross_attention sizes must be >= 1");
}

/// Fresh model with N(0, 1/fan_in) fusion and head weights and zero biases.
inline Model make_model(const SimWorld& world, std::vector<EncoderSpec> encoders, const FusionSpec& fusion,
                        const HeadSpec& head, std::uint64_t seed) {
  validate_fusion(encoders, fusion);
  for (const auto& e : encoders)
    if (e.input_channels() != world.channels)
      throw ConfigError(fmt::format("encoder '{}' expects {} channels, world has {}", e.name, e.input_channels(),
                                    world.channels));
  for (int w : head.hidden)
    if (w < 1) throw ConfigError("head widths must be >= 1");

  Model m;
  m.encoders = std::move(encoders);
  m.fusion = fusion;
  m.head = head;
  Rng rng(mix_seed(seed, stream::model));
  auto init = [&](int fan_in, int fan_out) {
    return random_normal(fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
  };
  auto& fp = m.fusion_params;
  if (fusion.strategy == FusionStrategy::shared_mlp) {
    int din = m.encoders.front().dim;
    fp.mlp_w1 = init(din, fusion.mlp_hidden);
    fp.mlp_b1 = Matrix::Zero(1, fusion.mlp_hidden);
    fp.mlp_w2 = init(fusion.mlp_hidden, fusion.mlp_dim);
    fp.mlp_b2 = Matrix::Zero(1, fusion.mlp_dim);
  } else if (fusion.strategy == FusionStrategy::cross_attention) {
    fp.queries = random_normal(fusion.queries, fusion.key_dim, 1.0, rng);
    for (const auto& e : m.encoders) {
      fp.keys.push_back(init(e.dim, fusion.key_dim));
      fp.values.push_back(init(e.dim, fusion.value_dim));
    }
  }
  int width = fused_dim(m.encoders, fusion);
  for (int h : head.hidden) {
    m.head_params.hidden_w.push_back(init(width, h));
    m.head_params.hidden_b.push_back(Matrix::Zero(1, h));
    width = h;
  }
  for (const auto& t : world.tasks) {
    m.task_classes.push_back(t.spec.classes);
    m.head_params.out_w.push_back(init(width, t.spec.classes));
    m.head_params.out_b.push_back(Matrix::Zero(1, t.spec.classes));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass

/// Intermediate values kept for the backward pass.
struct ForwardCache {
  EncoderSubset active;
  std::vector<Vector> encoder_inputs;  // z restricted to visible channels
  std::vector<Matrix> grids;           // after masking
  std::vector<Matrix> mlp_hidden;      // shared_mlp: tanh activations per encoder
  Matrix keys, values, attention;      // cross_attention
  Matrix fused;
  std::vector<RowVector> activations;  // [pooled, hidden_1, ..., hidden_L]
  std::vector<RowVector> probs;        // per task
};

inline RowVector softmax(const RowVector& logits) {
  RowVector e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// Fuses per-encoder grids (masked grids already zeroed). Fills cache fields if given.
inline Matrix fuse(const FusionSpec& spec, const FusionParams& params, const std::vector<Matrix>& grids,
                   ForwardCache* cache = nullptr) {
  if (grids.empty()) throw PreconditionError("fuse needs at least one grid");
  switch (spec.strategy) {
    case FusionStrategy::sequence_append: {
      Eigen::Index rows = 0;
      for (const auto& g : grids) {
        if (g.cols() != grids.front().cols()) throw PreconditionError("sequence_append: token dims differ");
        rows += g.rows();
      }
      Matrix out(rows, grids.front().cols());
      Eigen::Index r = 0;
      for (const auto& g : grids) {
        out.middleRows(r, g.rows()) = g;
        r += g.rows();
      }
      return out;
    }
    case FusionStrategy::channel_concat: {
      Eigen::Index cols = 0;
      for (const auto& g : grids) {
        if (g.rows() != grids.front().rows()) throw PreconditionError("channel_concat: token counts differ");
        cols += g.cols();
      }
      Matrix out(grids.front().rows(), cols);
      Eigen::Index c = 0;
      for (const auto& g : grids) {
        out.middleCols(c, g.cols()) = g;
        c += g.cols();
      }
      return out;
    }
    case FusionStrategy::shared_mlp: {
      Eigen::Index rows = 0;
      for (const auto& g : grids) {
        if (g.cols() != params.mlp_w1.rows()) throw PreconditionError("shared_mlp: token dim mismatch");
        rows += g.rows();
      }
      Matrix out(rows, params.mlp_w2.cols());
      Eigen::Index r = 0;
      if (cache) cache->mlp_hidden.clear();
      for (const auto& g : grids) {
        Matrix h = ((g * params.mlp_w1).rowwise() + params.mlp_b1.row(0)).array().tanh().matrix();
        out.middleRows(r, g.rows()) = (h * params.mlp_w2).rowwise() + params.mlp_b2.row(0);
        r += g.rows();
        if (cache) cache->mlp_hidden.push_back(std::move(h));
      }
      return out;
    }
    case FusionStrategy::cross_attention: {
      if (params.keys.size() != grids.size()) throw PreconditionError("cross_attention: one key map per encoder");
      Eigen::Index rows = 0;
      for (std::size_t e = 0; e < grids.size(); ++e) {
        if (grids[e].cols() != params.keys[e].rows()) throw PreconditionError("cross_attention: token dim mismatch");
        rows += grids[e].rows();
      }
      Matrix keys(rows, params.queries.cols()), values(rows, params.values.front().cols());
      Eigen::Index r = 0;
      for (std::size_t e = 0; e < grids.size(); ++e) {
        keys.middleRows(r, grids[e].rows()) = grids[e] * params.keys[e];
        values.middleRows(r, grids[e].rows()) = grids[e] * params.values[e];
        r += grids[e].rows();
      }
      double scale = 1.0 / std::sqrt(static_cast<double>(params.queries.cols()));
      Matrix logits = params.queries * keys.transpose() * scale;
      Matrix attn(logits.rows(), logits.cols());
      for (Eigen::Index q = 0; q < logits.rows(); ++q) attn.row(q) = softmax(logits.row(q));
      Matrix out = attn * values;
      if (cache) {
        cache->keys = std::move(keys);
        cache->values = std::move(values);
        cache->attention = std::move(attn);
      }
      return out;
    }
  }
  throw PreconditionError("unknown fusion strategy");
}

/// Core forward pass given the latent, per-encoder unit noise and the active subset.
inline ForwardCache forward_cached(const Model& model, const Vector& z, double sigma,
                                   const std::vector<Matrix>& unit_noise, EncoderSubset active) {
  const int n = model.encoder_count();
  if (active.encoder_count() != n) throw PreconditionError("subset size does not match encoder count");
  ForwardCache c;
  c.active = active;
  for (int e = 0; e < n; ++e) {
    const auto& spec = model.encoders[e];
    c.encoder_inputs.push_back(spec.visible_part(z));
    if (active.contains(e)) {
      c.grids.push_back(encode(spec, z, sigma, sigma != 0.0 ? unit_noise.at(e) : Matrix()));
    } else {
      c.grids.push_back(Matrix::Zero(spec.tokens, spec.dim));
    }
  }
  c.fused = fuse(model.fusion, model.fusion_params, c.grids, &c);
  RowVector x = c.fused.colwise().mean();
  c.activations.push_back(x);
  const auto& hp = model.head_params;
  for (std::size_t l = 0; l < hp.hidden_w.size(); ++l) {
    x = ((x * hp.hidden_w[l]) + hp.hidden_b[l]).array().tanh().matrix();
    c.activations.push_back(x);
  }
  for (std::size_t t = 0; t < hp.out_w.size(); ++t) c.probs.push_back(softmax(x * hp.out_w[t] + hp.out_b[t]));
  return c;
}

/// One observation: latent, unit noise per encoder, and task labels.
struct Sample {
  Vector z;
  std::vector<Matrix> noise;
  std::vector<int> labels;
};

/// Noise is drawn for every encoder regardless of masking, so a given stream yields the
/// same observations for every subset.
inline Sample draw_sample(const SimWorld& world, const Model& model, Rng& rng) {
  Sample s;
  s.z = world.sample_latent(rng);
  for (const auto& e : model.encoders) s.noise.push_back(random_normal(e.tokens, e.dim, 1.0, rng));
  s.labels = world.labels(s.z);
  return s;
}

/// Class probabilities per task for one latent; inactive encoders are masked.
inline std::vector<RowVector> forward(const Model& model, const SimWorld& world, EncoderSubset subset,
                                      const Vector& z, Rng& rng) {
  if (z.size() != world.channels)
    throw PreconditionError(fmt::format("latent has {} channels, world has {}", z.size(), world.channels));
  std::vector<Matrix> noise;
  for (const auto& e : model.encoders) noise.push_back(random_normal(e.tokens, e.dim, 1.0, rng));
  return forward_cached(model, z, world.noise, noise, subset).probs;
}

inline std::vector<RowVector> forward(const Model& model, const SimWorld& world, EncoderSubset subset,
                                      const Sample& sample) {
  return forward_cached(model, sample.z, world.noise, sample.noise, subset).probs;
}

}  // namespace redlab::sim
