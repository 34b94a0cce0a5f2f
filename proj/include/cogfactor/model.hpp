#pragma once

// Factored multinomial classifier.
//
// Each study d is scored as softmax(W'_d^T M W'_e^T z + b_d), where z is a
// reduced sample (length g), W'_e (g x l) is shared by every study, W'_d
// (l x k_d) and b_d belong to study d, and M is an inverted-dropout mask on
// the latent representation (absent at inference time). The loss is the
// batch-mean cross-entropy plus lambda/2 times the squared Frobenius norm of
// the weight matrices W'_e and W'_d; biases are not penalized.

#include "cogfactor/core.hpp"

#include <optional>
#include <variant>

namespace cogfactor {

using StudyId = std::size_t;

struct Head {
  std::string name;
  std::vector<std::string> condition_names;
  Matrix weights;  // l x k_d
  Vector bias;     // k_d

  Eigen::Index classes() const { return bias.size(); }
};

struct FactoredModel {
  Matrix embedding;  // g x l
  std::vector<Head> heads;
  double dropout_rate = 0.0;

  FactoredModel() = default;
  FactoredModel(Eigen::Index input_dim, Eigen::Index latent_dim, double rate)
      : embedding(Matrix::Zero(input_dim, latent_dim)), dropout_rate(rate) {
    require(input_dim >= 1 && latent_dim >= 1, ErrorCode::InvalidArgument, "model dims must be >= 1");
    require(rate >= 0.0 && rate < 1.0, ErrorCode::InvalidRate, "dropout rate must lie in [0, 1)");
  }

  Eigen::Index input_dim() const { return embedding.rows(); }
  Eigen::Index latent_dim() const { return embedding.cols(); }
  std::size_t studies() const { return heads.size(); }

  StudyId add_study(std::string name, std::vector<std::string> condition_names) {
    require(!condition_names.empty(), ErrorCode::InvalidArgument, "study '" + name + "' has no conditions");
    const auto k = static_cast<Eigen::Index>(condition_names.size());
    heads.push_back({std::move(name), std::move(condition_names), Matrix::Zero(latent_dim(), k),
                     Vector::Zero(k)});
    return heads.size() - 1;
  }

  const Head& head(StudyId id) const {
    require(id < heads.size(), ErrorCode::UnknownStudy, "study id " + std::to_string(id));
    return heads[id];
  }
  Head& head(StudyId id) {
    require(id < heads.size(), ErrorCode::UnknownStudy, "study id " + std::to_string(id));
    return heads[id];
  }

  StudyId study_index(std::string_view name) const {
    for (std::size_t i = 0; i < heads.size(); ++i)
      if (heads[i].name == name) return i;
    throw Error(ErrorCode::UnknownStudy, std::string(name));
  }

  bool all_finite() const {
    if (!embedding.allFinite()) return false;
    for (const auto& h : heads)
      if (!h.weights.allFinite() || !h.bias.allFinite()) return false;
    return true;
  }
};

/// Glorot-uniform weights, zero biases.
inline void glorot_uniform(Matrix& w, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> dist(-a, a);
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
}

inline void initialize(FactoredModel& model, Rng& rng) {
  glorot_uniform(model.embedding, rng);
  for (auto& h : model.heads) {
    glorot_uniform(h.weights, rng);
    h.bias.setZero();
  }
}

struct DropoutMask {
  Vector keep;  // entries in {0, 1}
  double scale = 1.0;

  static DropoutMask identity(Eigen::Index l) { return {Vector::Ones(l), 1.0}; }
};

inline void check_rate(double rate) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::InvalidRate,
          "dropout rate " + std::to_string(rate) + " outside [0, 1)");
}

/// Independent Bernoulli(1 - rate) keep flags with inverted scaling 1/(1 - rate).
inline DropoutMask sample_mask(Eigen::Index l, double rate, Rng& rng) {
  check_rate(rate);
  DropoutMask m{Vector(l), 1.0 / (1.0 - rate)};
  std::bernoulli_distribution keep(1.0 - rate);
  for (Eigen::Index i = 0; i < l; ++i) m.keep[i] = keep(rng) ? 1.0 : 0.0;
  return m;
}

template <typename Derived>
Vector softmax_probs(const Eigen::MatrixBase<Derived>& scores) {
  const double shift = scores.maxCoeff();
  Vector e = (scores.derived().array() - shift).exp().matrix();
  return e / e.sum();
}

/// Row-wise softmax with max-shift.
inline Matrix softmax_rows(const Matrix& scores) {
  Matrix p(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double shift = scores.row(i).maxCoeff();
    p.row(i) = (scores.row(i).array() - shift).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

namespace detail {

inline void check_input(const FactoredModel& model, const Matrix& z) {
  require(z.cols() == model.input_dim(), ErrorCode::ShapeMismatch,
          "reduced samples " + shape_str(z.rows(), z.cols()) + " vs g=" +
              std::to_string(model.input_dim()));
}

inline Matrix latent(const FactoredModel& model, const Matrix& z, const DropoutMask* mask) {
  Matrix h = z * model.embedding;
  if (mask != nullptr) {
    require(mask->keep.size() == model.latent_dim(), ErrorCode::ShapeMismatch, "mask length != l");
    h = h * (mask->keep * mask->scale).asDiagonal();
  }
  return h;
}

}  // namespace detail

inline Matrix scores(const FactoredModel& model, StudyId study, const Matrix& z,
                     const DropoutMask* mask = nullptr) {
  const Head& head = model.head(study);
  detail::check_input(model, z);
  Matrix s = detail::latent(model, z, mask) * head.weights;
  s.rowwise() += head.bias.transpose();
  return s;
}

/// Class probabilities (n x k_d). Passing a mask selects training mode.
inline Matrix forward(const FactoredModel& model, StudyId study, const Matrix& z,
                      const DropoutMask* mask = nullptr) {
  return softmax_rows(scores(model, study, z, mask));
}

inline Matrix forward(const FactoredModel& model, StudyId study, const Matrix& z, const DropoutMask& mask) {
  return forward(model, study, z, &mask);
}

inline void check_labels(const Labels& labels, Eigen::Index rows, Eigen::Index classes) {
  require(static_cast<Eigen::Index>(labels.size()) == rows, ErrorCode::ShapeMismatch,
          std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " samples");
  for (auto c : labels)
    require(c >= 0 && c < classes, ErrorCode::LabelOutOfRange,
            "label " + std::to_string(c) + " not in [0, " + std::to_string(classes) + ")");
}

/// Mean over rows of -log p[label].
inline double cross_entropy(const Matrix& probs, const Labels& labels) {
  check_labels(labels, probs.rows(), probs.cols());
  if (labels.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    total -= std::log(probs(static_cast<Eigen::Index>(i), labels[i]));
  return total / static_cast<double>(labels.size());
}

/// Gradient container shaped like the model; heads other than the scored one stay zero.
struct FactoredGradient {
  Matrix embedding;
  std::vector<Matrix> head_weights;
  std::vector<Vector> head_bias;
};

struct FactoredLossGrad {
  double loss = 0.0;
  FactoredGradient grad;
};

namespace detail {

/// (P - Y) / n, the derivative of mean cross-entropy with respect to scores.
inline Matrix score_residual(Matrix probs, const Labels& labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) probs(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
  return probs / static_cast<double>(std::max<std::size_t>(labels.size(), 1));
}

}  // namespace detail

inline FactoredLossGrad loss_and_grad(const FactoredModel& model, StudyId study, const Matrix& z,
                                      const Labels& labels, const DropoutMask* mask, double l2 = 0.0) {
  require(l2 >= 0.0, ErrorCode::InvalidArgument, "l2 strength must be >= 0");
  const Head& head = model.head(study);
  detail::check_input(model, z);
  check_labels(labels, z.rows(), head.classes());

  const Matrix h = detail::latent(model, z, mask);
  Matrix s = h * head.weights;
  s.rowwise() += head.bias.transpose();
  const Matrix probs = softmax_rows(s);

  FactoredLossGrad out;
  out.loss = cross_entropy(probs, labels) +
             0.5 * l2 * (model.embedding.squaredNorm() + head.weights.squaredNorm());

  const Matrix resid = detail::score_residual(probs, labels);
  Matrix d_latent = resid * head.weights.transpose();
  if (mask != nullptr) d_latent = d_latent * (mask->keep * mask->scale).asDiagonal();

  auto& g = out.grad;
  g.embedding = z.transpose() * d_latent + l2 * model.embedding;
  g.head_weights.reserve(model.heads.size());
  g.head_bias.reserve(model.heads.size());
  for (const auto& other : model.heads) {
    g.head_weights.push_back(Matrix::Zero(other.weights.rows(), other.weights.cols()));
    g.head_bias.push_back(Vector::Zero(other.bias.size()));
  }
  g.head_weights[study] = h.transpose() * resid + l2 * head.weights;
  g.head_bias[study] = resid.colwise().sum().transpose();
  return out;
}

inline FactoredLossGrad loss_and_grad(const FactoredModel& model, StudyId study, const Matrix& z,
                                      const Labels& labels, const DropoutMask& mask, double l2 = 0.0) {
  return loss_and_grad(model, study, z, labels, &mask, l2);
}

// ---------------------------------------------------------------------------
// Plain (unfactored) multinomial baselines.

struct PlainModel {
  Matrix weights;  // input_dim x k
  Vector bias;     // k

  PlainModel() = default;
  PlainModel(Eigen::Index input_dim, Eigen::Index classes)
      : weights(Matrix::Zero(input_dim, classes)), bias(Vector::Zero(classes)) {}

  Eigen::Index input_dim() const { return weights.rows(); }
  Eigen::Index classes() const { return bias.size(); }
};

struct L2Penalty {
  double lambda = 0.0;
};
struct InputDropout {
  double rate = 0.0;
};
using PlainPenalty = std::variant<L2Penalty, InputDropout>;

struct PlainGradient {
  Matrix weights;
  Vector bias;
};

struct PlainLossGrad {
  double loss = 0.0;
  PlainGradient grad;
};

inline Matrix plain_scores(const PlainModel& model, const Matrix& x) {
  require(x.cols() == model.input_dim(), ErrorCode::ShapeMismatch,
          "samples " + shape_str(x.rows(), x.cols()) + " vs input dim " + std::to_string(model.input_dim()));
  Matrix s = x * model.weights;
  s.rowwise() += model.bias.transpose();
  return s;
}

inline Matrix plain_forward(const PlainModel& model, const Matrix& x) {
  return softmax_rows(plain_scores(model, x));
}

/// Cross-entropy with either an l2 penalty on W or inverted-dropout corruption of the inputs.
inline PlainLossGrad plain_loss_and_grad(const PlainModel& model, const Matrix& x, const Labels& labels,
                                         const PlainPenalty& penalty, Rng& rng) {
  check_labels(labels, x.rows(), model.classes());
  double lambda = 0.0;
  std::optional<Matrix> corrupted;
  if (const auto* l2 = std::get_if<L2Penalty>(&penalty)) {
    require(l2->lambda >= 0.0, ErrorCode::InvalidArgument, "l2 strength must be >= 0");
    lambda = l2->lambda;
  } else {
    const double rate = std::get<InputDropout>(penalty).rate;
    check_rate(rate);
    if (rate > 0.0) {
      std::bernoulli_distribution keep(1.0 - rate);
      const double scale = 1.0 / (1.0 - rate);
      corrupted = x;
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j)
          (*corrupted)(i, j) = keep(rng) ? x(i, j) * scale : 0.0;
    }
  }
  const Matrix& input = corrupted ? *corrupted : x;
  const Matrix probs = plain_forward(model, input);
  PlainLossGrad out;
  out.loss = cross_entropy(probs, labels) + 0.5 * lambda * model.weights.squaredNorm();
  const Matrix resid = detail::score_residual(probs, labels);
  out.grad.weights = input.transpose() * resid + lambda * model.weights;
  out.grad.bias = resid.colwise().sum().transpose();
  return out;
}

}  // namespace cogfactor
