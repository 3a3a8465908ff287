#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "redlab/simkit.hpp"

namespace redlab::sim {

inline constexpr double kProbabilityFloor = 1e-12;

/// Cross-entropy -log p[label] with p clamped below at 1e-12.
inline double loss(const RowVector& probs, int label) {
  if (label < 0 || label >= probs.size())
    throw PreconditionError(fmt::format("label {} outside [0, {})", label, probs.size()));
  return -std::log(std::max(probs(label), kProbabilityFloor));
}

/// Mean cross-entropy over tasks.
inline double sample_loss(const std::vector<RowVector>& probs, const std::vector<int>& labels) {
  double s = 0.0;
  for (std::size_t t = 0; t < probs.size(); ++t) s += loss(probs[t], labels.at(t));
  return s / static_cast<double>(probs.size());
}

// ---------------------------------------------------------------------------
// Parameter views

/// Gradient storage mirroring the model's trainable tensors.
struct Gradients {
  std::vector<Matrix> encoders;
  FusionParams fusion;
  HeadParams head;
};

struct TensorRef {
  ParamGroup group;
  std::string name;
  Matrix* value;
};

namespace detail {

template <class Enc, class Fusion, class Head>
std::vector<TensorRef> collect(Enc&& encoder_at, std::size_t n_enc, Fusion& f, Head& h) {
  std::vector<TensorRef> out;
  for (std::size_t e = 0; e < n_enc; ++e)
    out.push_back({ParamGroup::encoders, fmt::format("encoder[{}].weights", e), &encoder_at(e)});
  auto add = [&](ParamGroup g, std::string name, Matrix& m) {
    if (m.size() > 0) out.push_back({g, std::move(name), &m});
  };
  add(ParamGroup::fusion, "fusion.mlp_w1", f.mlp_w1);
  add(ParamGroup::fusion, "fusion.mlp_b1", f.mlp_b1);
  add(ParamGroup::fusion, "fusion.mlp_w2", f.mlp_w2);
  add(ParamGroup::fusion, "fusion.mlp_b2", f.mlp_b2);
  add(ParamGroup::fusion, "fusion.queries", f.queries);
  for (std::size_t e = 0; e < f.keys.size(); ++e) add(ParamGroup::fusion, fmt::format("fusion.keys[{}]", e), f.keys[e]);
  for (std::size_t e = 0; e < f.values.size(); ++e)
    add(ParamGroup::fusion, fmt::format("fusion.values[{}]", e), f.values[e]);
  for (std::size_t l = 0; l < h.hidden_w.size(); ++l) {
    add(ParamGroup::head, fmt::format("head.hidden[{}].w", l), h.hidden_w[l]);
    add(ParamGroup::head, fmt::format("head.hidden[{}].b", l), h.hidden_b[l]);
  }
  for (std::size_t t = 0; t < h.out_w.size(); ++t) {
    add(ParamGroup::head, fmt::format("head.out[{}].w", t), h.out_w[t]);
    add(ParamGroup::head, fmt::format("head.out[{}].b", t), h.out_b[t]);
  }
  return out;
}

}  // namespace detail

inline std::vector<TensorRef> tensors(Model& m) {
  return detail::collect([&](std::size_t e) -> Matrix& { return m.encoders[e].weights; }, m.encoders.size(),
                         m.fusion_params, m.head_params);
}

inline std::vector<TensorRef> tensors(Gradients& g) {
  return detail::collect([&](std::size_t e) -> Matrix& { return g.encoders[e]; }, g.encoders.size(), g.fusion,
                         g.head);
}

inline Gradients zero_gradients(const Model& m) {
  Gradients g;
  for (const auto& e : m.encoders) g.encoders.push_back(Matrix::Zero(e.weights.rows(), e.weights.cols()));
  auto zero = [](const Matrix& x) { return Matrix::Zero(x.rows(), x.cols()).eval(); };
  const auto& f = m.fusion_params;
  g.fusion.mlp_w1 = zero(f.mlp_w1);
  g.fusion.mlp_b1 = zero(f.mlp_b1);
  g.fusion.mlp_w2 = zero(f.mlp_w2);
  g.fusion.mlp_b2 = zero(f.mlp_b2);
  g.fusion.queries = zero(f.queries);
  for (const auto& k : f.keys) g.fusion.keys.push_back(zero(k));
  for (const auto& v : f.values) g.fusion.values.push_back(zero(v));
  const auto& h = m.head_params;
  for (const auto& x : h.hidden_w) g.head.hidden_w.push_back(zero(x));
  for (const auto& x : h.hidden_b) g.head.hidden_b.push_back(zero(x));
  for (const auto& x : h.out_w) g.head.out_w.push_back(zero(x));
  for (const auto& x : h.out_b) g.head.out_b.push_back(zero(x));
  return g;
}

// ---------------------------------------------------------------------------
// Backward pass

/// Deliberate corruptions of the backward pass, used to confirm grad_check catches them.
enum class BackwardFault {
  none,
  output_layer,      // negated output-layer gradients
  hidden_layer,      // negated tanh derivative in the head trunk
  pooling,           // negated gradient flowing from the pooled vector into fused tokens
  fusion_mlp,        // negated tanh derivative inside the shared MLP
  attention_softmax, // negated softmax Jacobian correction term
  encoder,           // negated encoder weight gradients
};

/// Accumulates scale * d(sample_loss)/d(params) into grads.
inline void backward(const Model& model, const ForwardCache& c, const std::vector<int>& labels, double scale,
                     Gradients& grads, BackwardFault fault = BackwardFault::none) {
  const auto& hp = model.head_params;
  const std::size_t n_tasks = hp.out_w.size();
  const double task_scale = scale / static_cast<double>(n_tasks);
  const double out_sign = fault == BackwardFault::output_layer ? -1.0 : 1.0;

  const RowVector& top = c.activations.back();
  RowVector dx = RowVector::Zero(top.size());
  for (std::size_t t = 0; t < n_tasks; ++t) {
    RowVector dlogits = c.probs[t];
    dlogits(labels.at(t)) -= 1.0;
    // Clamped probabilities have zero gradient through the log.
    if (c.probs[t](labels[t]) < kProbabilityFloor) dlogits.setZero();
    dlogits *= task_scale;
    grads.head.out_w[t].noalias() += out_sign * top.transpose() * dlogits;
    grads.head.out_b[t] += out_sign * dlogits;
    dx.noalias() += dlogits * hp.out_w[t].transpose();
  }

  for (std::size_t l = hp.hidden_w.size(); l-- > 0;) {
    const RowVector& a = c.activations[l + 1];
    RowVector deriv = (1.0 - a.array().square()).matrix();
    if (fault == BackwardFault::hidden_layer) deriv = -deriv;
    RowVector da = dx.cwiseProduct(deriv);
    grads.head.hidden_w[l].noalias() += c.activations[l].transpose() * da;
    grads.head.hidden_b[l] += da;
    dx = da * hp.hidden_w[l].transpose();
  }

  // Mean pooling: every fused token receives dx / rows.
  double pool_sign = fault == BackwardFault::pooling ? -1.0 : 1.0;
  const Eigen::Index rows = c.fused.rows();
  Matrix dfused = Matrix::Ones(rows, 1) * (dx * (pool_sign / static_cast<double>(rows)));

  const int n = model.encoder_count();
  std::vector<Matrix> dgrids(n);
  const auto& fp = model.fusion_params;
  switch (model.fusion.strategy) {
    case FusionStrategy::sequence_append: {
      Eigen::Index r = 0;
      for (int e = 0; e < n; ++e) {
        dgrids[e] = dfused.middleRows(r, c.grids[e].rows());
        r += c.grids[e].rows();
      }
      break;
    }
    case FusionStrategy::channel_concat: {
      Eigen::Index col = 0;
      for (int e = 0; e < n; ++e) {
        dgrids[e] = dfused.middleCols(col, c.grids[e].cols());
        col += c.grids[e].cols();
      }
      break;
    }
    case FusionStrategy::shared_mlp: {
      Eigen::Index r = 0;
      for (int e = 0; e < n; ++e) {
        const Matrix& h = c.mlp_hidden[e];
        Matrix dy = dfused.middleRows(r, h.rows());
        r += h.rows();
        grads.fusion.mlp_w2.noalias() += h.transpose() * dy;
        grads.fusion.mlp_b2 += dy.colwise().sum();
        Matrix deriv = (1.0 - h.array().square()).matrix();
        if (fault == BackwardFault::fusion_mlp) deriv = -deriv;
        Matrix dpre = (dy * fp.mlp_w2.transpose()).cwiseProduct(deriv);
        grads.fusion.mlp_w1.noalias() += c.grids[e].transpose() * dpre;
        grads.fusion.mlp_b1 += dpre.colwise().sum();
        dgrids[e] = dpre * fp.mlp_w1.transpose();
      }
      break;
    }
    case FusionStrategy::cross_attention: {
      const Matrix& attn = c.attention;
      Matrix dattn = dfused * c.values.transpose();  // m x N
      Matrix dvalues = attn.transpose() * dfused;    // N x v
      Vector row_dot = (attn.cwiseProduct(dattn)).rowwise().sum();
      double corr = fault == BackwardFault::attention_softmax ? -1.0 : 1.0;
      Matrix dlogits = attn.cwiseProduct(dattn - corr * row_dot * RowVector::Ones(attn.cols()));
      double inv = 1.0 / std::sqrt(static_cast<double>(fp.queries.cols()));
      grads.fusion.queries.noalias() += inv * dlogits * c.keys;
      Matrix dkeys = inv * dlogits.transpose() * fp.queries;  // N x a
      Eigen::Index r = 0;
      for (int e = 0; e < n; ++e) {
        const Matrix& g = c.grids[e];
        auto dk = dkeys.middleRows(r, g.rows());
        auto dv = dvalues.middleRows(r, g.rows());
        grads.fusion.keys[e].noalias() += g.transpose() * dk;
        grads.fusion.values[e].noalias() += g.transpose() * dv;
        dgrids[e] = dk * fp.keys[e].transpose() + dv * fp.values[e].transpose();
        r += g.rows();
      }
      break;
    }
  }

  // Masked grids are constants, so only active encoders receive weight gradients.
  double enc_sign = fault == BackwardFault::encoder ? -1.0 : 1.0;
  for (int e = 0; e < n; ++e) {
    if (!c.active.contains(e)) continue;
    const auto& spec = model.encoders[e];
    Vector dflat(spec.tokens * spec.dim);
    for (int t = 0; t < spec.tokens; ++t)
      for (int j = 0; j < spec.dim; ++j) dflat(t * spec.dim + j) = dgrids[e](t, j);
    grads.encoders[e].noalias() += enc_sign * dflat * c.encoder_inputs[e].transpose();
  }
}

// ---------------------------------------------------------------------------
// Batches

/// A sample together with the subset of encoders left active for it.
struct BatchItem {
  Sample sample;
  EncoderSubset active;
};

using Batch = std::vector<BatchItem>;

/// Draws a batch; each encoder is independently dropped with probability `dropout`.
inline Batch draw_batch(const SimWorld& world, const Model& model, int size, double dropout, Rng& rng) {
  Batch b;
  b.reserve(size);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = model.encoder_count();
  for (int i = 0; i < size; ++i) {
    Sample s = draw_sample(world, model, rng);
    std::uint32_t bits = 0;
    for (int e = 0; e < n; ++e)
      if (!(u(rng) < dropout)) bits |= 1u << e;
    b.push_back({std::move(s), EncoderSubset(bits, n)});
  }
  return b;
}

inline double batch_loss(const Model& model, const SimWorld& world, const Batch& batch) {
  double total = 0.0;
  for (const auto& item : batch) {
    auto c = forward_cached(model, item.sample.z, world.noise, item.sample.noise, item.active);
    total += sample_loss(c.probs, item.sample.labels);
  }
  return total / static_cast<double>(batch.size());
}

/// Mean loss over the batch and its gradient with respect to every parameter.
inline double batch_gradient(const Model& model, const SimWorld& world, const Batch& batch, Gradients& grads,
                             BackwardFault fault = BackwardFault::none) {
  grads = zero_gradients(model);
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& item : batch) {
    auto c = forward_cached(model, item.sample.z, world.noise, item.sample.noise, item.active);
    total += sample_loss(c.probs, item.sample.labels);
    backward(model, c, item.sample.labels, scale, grads, fault);
  }
  return total * scale;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckOptions {
  int min_samples = 100;
  double step = 1e-4;
  std::uint64_t seed = 0;
  BackwardFault fault = BackwardFault::none;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::string worst_parameter;
  int checked = 0;
  bool passed = false;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Central finite differences on sampled parameters, spread evenly over all tensors.
inline GradCheckResult grad_check(const Model& model, const SimWorld& world, const Batch& batch, double tolerance,
                                  const GradCheckOptions& opt = {}) {
  if (batch.empty()) throw PreconditionError("grad_check needs a non-empty batch");
  Model work = model;
  auto params = tensors(work);
  for (const auto& p : params)
    if (!p.value->allFinite()) throw NumericalError(fmt::format("parameter {} is not finite", p.name));

  Gradients grads;
  batch_gradient(work, world, batch, grads, opt.fault);
  auto grad_refs = tensors(grads);

  Rng rng(mix_seed(opt.seed, stream::gradcheck));
  const int per_tensor =
      std::max(1, (opt.min_samples + static_cast<int>(params.size()) - 1) / static_cast<int>(params.size()));
  GradCheckResult r;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& value = *params[p].value;
    const Matrix& grad = *grad_refs[p].value;
    if (!grad.allFinite()) throw NumericalError(fmt::format("non-finite gradient in {}", params[p].name));
    std::uniform_int_distribution<Eigen::Index> pick(0, value.size() - 1);
    for (int s = 0; s < per_tensor; ++s) {
      Eigen::Index idx = pick(rng);
      double saved = value.data()[idx];
      value.data()[idx] = saved + opt.step;
      double up = batch_loss(work, world, batch);
      value.data()[idx] = saved - opt.step;
      double down = batch_loss(work, world, batch);
      value.data()[idx] = saved;
      double numeric = (up - down) / (2.0 * opt.step);
      double analytic = grad.data()[idx];
      if (!std::isfinite(numeric) || !std::isfinite(analytic))
        throw NumericalError(fmt::format("non-finite gradient at {}[{}]", params[p].name, idx));
      double err = relative_error(analytic, numeric);
      r.max_absolute_error = std::max(r.max_absolute_error, std::abs(analytic - numeric));
      if (err > r.max_relative_error || r.checked == 0) {
        r.max_relative_error = err;
        r.worst_parameter = fmt::format("{}[{}]", params[p].name, idx);
      }
      ++r.checked;
    }
  }
  r.passed = r.max_relative_error < tolerance;
  return r;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  int batch_size = 32;
  int steps = 2000;
  double encoder_dropout = 0.3;
  std::uint64_t seed = 1;
  bool train_head = true;
  bool train_fusion = true;
  bool train_encoders = false;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (!(encoder_dropout >= 0.0 && encoder_dropout < 1.0)) throw ConfigError("encoder dropout must be in [0, 1)");
  }
};

struct TrainResult {
  Model model;
  std::vector<double> losses;  // mean mini-batch loss per step, before the update
};

inline TrainResult train(Model model, const SimWorld& world, const TrainConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, stream::train));
  auto params = tensors(model);
  std::vector<bool> trainable;
  for (const auto& p : params) {
    switch (p.group) {
      case ParamGroup::head: trainable.push_back(cfg.train_head); break;
      case ParamGroup::fusion: trainable.push_back(cfg.train_fusion); break;
      case ParamGroup::encoders: {
        int e = static_cast<int>(trainable.size());
        trainable.push_back(cfg.train_encoders && !model.encoders[e].frozen);
        break;
      }
    }
  }
  std::vector<Matrix> velocity;
  for (const auto& p : params) velocity.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));

  TrainResult result;
  result.losses.reserve(cfg.steps);
  Gradients grads;
  for (int step = 0; step < cfg.steps; ++step) {
    Batch batch = draw_batch(world, model, cfg.batch_size, cfg.encoder_dropout, rng);
    double l = batch_gradient(model, world, batch, grads);
    if (!std::isfinite(l)) throw NumericalError(fmt::format("training diverged at step {} (loss {})", step, l));
    result.losses.push_back(l);
    if (cfg.learning_rate == 0.0) continue;
    auto grad_refs = tensors(grads);
    for (std::size_t p = 0; p < params.size(); ++p) {
      if (!trainable[p]) continue;
      velocity[p] = cfg.momentum * velocity[p] - cfg.learning_rate * *grad_refs[p].value;
      *params[p].value += velocity[p];
    }
  }
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Accuracy per task on n_samples fresh draws. The stream depends only on the seed, so
/// every subset is scored on the same observations.
inline std::vector<double> evaluate(const Model& model, const SimWorld& world, EncoderSubset subset, int n_samples,
                                    std::uint64_t seed) {
  if (n_samples < 1) throw PreconditionError("n_samples must be >= 1");
  Rng rng(mix_seed(seed, stream::eval));
  std::vector<long> correct(world.tasks.size(), 0);
  for (int i = 0; i < n_samples; ++i) {
    Sample s = draw_sample(world, model, rng);
    auto probs = forward(model, world, subset, s);
    for (std::size_t t = 0; t < probs.size(); ++t) {
      Eigen::Index best;
      probs[t].maxCoeff(&best);
      if (best == s.labels[t]) ++correct[t];
    }
  }
  std::vector<double> acc;
  for (long c : correct) acc.push_back(static_cast<double>(c) / n_samples);
  return acc;
}

}  // namespace redlab::sim
