#pragma once

#include "cogfactor/model.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace cogfactor {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment accumulators for one parameter block. Each block keeps its own
/// step count so blocks that are updated only some of the time (study heads
/// under dataset cycling) get the bias correction matching their history.
struct AdamSlot {
  Matrix m;
  Matrix v;
  std::int64_t t = 0;
};

struct AdamState {
  AdamConfig cfg;
  std::vector<AdamSlot> slots;

  AdamState() = default;
  explicit AdamState(AdamConfig c) : cfg(c) {}

  std::size_t add_slot(Eigen::Index rows, Eigen::Index cols) {
    slots.push_back({Matrix::Zero(rows, cols), Matrix::Zero(rows, cols), 0});
    return slots.size() - 1;
  }
};

/// One bias-corrected Adam update of `param` in place.
inline void adam_step(AdamState& state, std::size_t slot, Eigen::Ref<Matrix> param,
                      const Eigen::Ref<const Matrix>& grad) {
  require(slot < state.slots.size(), ErrorCode::InvalidArgument, "unknown Adam slot");
  AdamSlot& s = state.slots[slot];
  require(param.rows() == grad.rows() && param.cols() == grad.cols() && s.m.rows() == param.rows() &&
              s.m.cols() == param.cols(),
          ErrorCode::ShapeMismatch, "Adam parameter/gradient/moment shapes differ");
  require(grad.allFinite(), ErrorCode::NonFiniteGradient, "gradient contains NaN or inf");
  const auto& c = state.cfg;
  ++s.t;
  s.m = c.beta1 * s.m + (1.0 - c.beta1) * grad;
  s.v = c.beta2 * s.v + (1.0 - c.beta2) * grad.cwiseAbs2();
  const double m_corr = 1.0 - std::pow(c.beta1, static_cast<double>(s.t));
  const double v_corr = 1.0 - std::pow(c.beta2, static_cast<double>(s.t));
  param.array() -= c.lr * (s.m.array() / m_corr) / ((s.v.array() / v_corr).sqrt() + c.eps);
}

struct TrainConfig {
  std::int64_t batch_size = 256;
  std::int64_t max_iterations = 3000;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double dropout_rate = 0.75;
  double l2 = 0.0;

  void validate() const {
    require(batch_size >= 1, ErrorCode::InvalidConfig, "batch_size must be >= 1");
    require(max_iterations >= 0, ErrorCode::InvalidConfig, "max_iterations must be >= 0");
    require(lr > 0.0, ErrorCode::InvalidConfig, "lr must be > 0");
    require(l2 >= 0.0, ErrorCode::InvalidConfig, "l2 must be >= 0");
    check_rate(dropout_rate);
  }
};

struct Batch {
  std::size_t position = 0;  // index into the scheduler's registration order
  std::vector<std::int64_t> indices;
};

/// Round-robin over studies; each study draws from its own reshuffled index
/// stream without replacement, dropping the tail of a pass that cannot fill a
/// whole batch. Studies smaller than one batch are sampled with replacement.
class CyclicScheduler {
 public:
  CyclicScheduler(std::vector<std::int64_t> study_sizes, std::int64_t batch_size)
      : batch_size_(batch_size) {
    require(batch_size >= 1, ErrorCode::InvalidConfig, "batch_size must be >= 1");
    require(!study_sizes.empty(), ErrorCode::EmptyStudy, "no studies registered");
    streams_.reserve(study_sizes.size());
    for (std::size_t i = 0; i < study_sizes.size(); ++i) {
      require(study_sizes[i] >= 1, ErrorCode::EmptyStudy, "study " + std::to_string(i) + " has no samples");
      Stream s;
      s.order.resize(static_cast<std::size_t>(study_sizes[i]));
      std::iota(s.order.begin(), s.order.end(), std::int64_t{0});
      s.cursor = s.order.size();  // forces a shuffle on first use
      streams_.push_back(std::move(s));
    }
  }

  std::size_t studies() const { return streams_.size(); }
  std::int64_t batch_size() const { return batch_size_; }

  Batch next_batch(Rng& rng) {
    Batch b;
    b.position = next_;
    next_ = (next_ + 1) % streams_.size();
    Stream& s = streams_[b.position];
    const auto n = static_cast<std::int64_t>(s.order.size());
    b.indices.resize(static_cast<std::size_t>(batch_size_));
    if (n < batch_size_) {
      std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
      for (auto& i : b.indices) i = pick(rng);
      return b;
    }
    if (s.cursor + static_cast<std::size_t>(batch_size_) > s.order.size()) {
      std::shuffle(s.order.begin(), s.order.end(), rng);
      s.cursor = 0;
    }
    std::copy_n(s.order.begin() + static_cast<std::ptrdiff_t>(s.cursor), batch_size_, b.indices.begin());
    s.cursor += static_cast<std::size_t>(batch_size_);
    return b;
  }

 private:
  struct Stream {
    std::vector<std::int64_t> order;
    std::size_t cursor = 0;
  };

  std::int64_t batch_size_;
  std::vector<Stream> streams_;
  std::size_t next_ = 0;
};

/// Reduced samples and labels of one study, bound to a model head.
struct TrainSet {
  StudyId study;
  const Matrix& samples;
  const Labels& labels;
};

struct TraceEntry {
  std::int64_t iteration = 0;
  StudyId study = 0;
  double loss = 0.0;
};

using StepCallback = std::function<void(const TraceEntry&)>;

/// Dataset-cycling Adam training. Every step draws one study's batch and a
/// fresh latent mask, then updates W'_e and that study's head only.
inline std::vector<TraceEntry> train(FactoredModel& model, const std::vector<TrainSet>& sets,
                                     const TrainConfig& cfg, Rng& rng, const StepCallback& on_step = {}) {
  cfg.validate();
  std::vector<TraceEntry> trace;
  if (cfg.max_iterations == 0) return trace;
  require(!sets.empty(), ErrorCode::EmptyStudy, "no training sets");

  std::vector<std::int64_t> sizes;
  for (const auto& s : sets) {
    model.head(s.study);
    require(s.samples.cols() == model.input_dim(), ErrorCode::ShapeMismatch,
            "training samples for '" + model.head(s.study).name + "' are not g-dimensional");
    require(static_cast<Eigen::Index>(s.labels.size()) == s.samples.rows(), ErrorCode::ShapeMismatch,
            "labels/samples length mismatch");
    sizes.push_back(s.samples.rows());
  }
  CyclicScheduler sched(std::move(sizes), cfg.batch_size);

  AdamState adam(AdamConfig{.lr = cfg.lr});
  const std::size_t embed_slot = adam.add_slot(model.embedding.rows(), model.embedding.cols());
  std::vector<std::size_t> w_slot(model.heads.size()), b_slot(model.heads.size());
  for (std::size_t h = 0; h < model.heads.size(); ++h) {
    w_slot[h] = adam.add_slot(model.heads[h].weights.rows(), model.heads[h].weights.cols());
    b_slot[h] = adam.add_slot(model.heads[h].bias.size(), 1);
  }

  trace.reserve(static_cast<std::size_t>(cfg.max_iterations));
  for (std::int64_t it = 0; it < cfg.max_iterations; ++it) {
    const Batch batch = sched.next_batch(rng);
    const TrainSet& set = sets[batch.position];
    const Matrix z = gather_rows(set.samples, batch.indices);
    const Labels y = gather(set.labels, batch.indices);
    const DropoutMask mask = sample_mask(model.latent_dim(), cfg.dropout_rate, rng);
    auto lg = loss_and_grad(model, set.study, z, y, &mask, cfg.l2);

    adam_step(adam, embed_slot, model.embedding, lg.grad.embedding);
    Head& head = model.heads[set.study];
    adam_step(adam, w_slot[set.study], head.weights, lg.grad.head_weights[set.study]);
    adam_step(adam, b_slot[set.study], head.bias, lg.grad.head_bias[set.study]);

    trace.push_back({it, set.study, lg.loss});
    if (on_step) on_step(trace.back());
  }
  return trace;
}

/// Single-study Adam for the plain baselines. Studies no larger than one
/// batch are fitted with full-batch gradients.
inline std::vector<TraceEntry> train_plain(PlainModel& model, const Matrix& x, const Labels& labels,
                                           const PlainPenalty& penalty, const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<TraceEntry> trace;
  if (cfg.max_iterations == 0) return trace;
  require(static_cast<Eigen::Index>(labels.size()) == x.rows(), ErrorCode::ShapeMismatch,
          "labels/samples length mismatch");
  require(x.rows() >= 1, ErrorCode::EmptyStudy, "no training samples");
  const bool full_batch = x.rows() <= cfg.batch_size;
  CyclicScheduler sched({x.rows()}, cfg.batch_size);
  AdamState adam(AdamConfig{.lr = cfg.lr});
  const auto w_slot = adam.add_slot(model.weights.rows(), model.weights.cols());
  const auto b_slot = adam.add_slot(model.bias.size(), 1);
  trace.reserve(static_cast<std::size_t>(cfg.max_iterations));
  for (std::int64_t it = 0; it < cfg.max_iterations; ++it) {
    if (full_batch) {
      auto lg = plain_loss_and_grad(model, x, labels, penalty, rng);
      adam_step(adam, w_slot, model.weights, lg.grad.weights);
      adam_step(adam, b_slot, model.bias, lg.grad.bias);
      trace.push_back({it, 0, lg.loss});
      continue;
    }
    const Batch batch = sched.next_batch(rng);
    const Matrix xb = gather_rows(x, batch.indices);
    const Labels yb = gather(labels, batch.indices);
    auto lg = plain_loss_and_grad(model, xb, yb, penalty, rng);
    adam_step(adam, w_slot, model.weights, lg.grad.weights);
    adam_step(adam, b_slot, model.bias, lg.grad.bias);
    trace.push_back({it, 0, lg.loss});
  }
  return trace;
}

}  // namespace cogfactor
