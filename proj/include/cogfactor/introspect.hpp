#pragma once

#include "cogfactor/model.hpp"
#include "cogfactor/projection.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace cogfactor {

/// Voxel-space classifier W_g W'_e W'_d for one study (p x k_d), plus its bias.
struct ClassificationMaps {
  std::string study;
  Matrix maps;
  Vector bias;
  std::vector<std::string> condition_names;

  /// Scores for raw samples (n x p).
  Matrix scores(const Matrix& raw) const {
    require(raw.cols() == maps.rows(), ErrorCode::ShapeMismatch, "raw samples do not match map voxel count");
    Matrix s = raw * maps;
    s.rowwise() += bias.transpose();
    return s;
  }
};

inline ClassificationMaps collapse(const FactoredModel& model, const ProjectionOperator& op, StudyId study) {
  const Head& head = model.head(study);
  require(op.total_dim() == model.input_dim(), ErrorCode::ShapeMismatch,
          "projection width " + std::to_string(op.total_dim()) + " != model input " +
              std::to_string(model.input_dim()));
  const Matrix latent_maps = model.embedding * head.weights;  // g x k_d
  Matrix maps(op.voxels(), head.classes());
  maps.setZero();
  for (const auto& b : op.blocks()) maps.noalias() += b.weights * latent_maps.middleRows(b.offset, b.width);
  return {head.name, std::move(maps), head.bias, head.condition_names};
}

struct KMeansResult {
  Matrix centroids;                 // k x g
  std::vector<std::int64_t> assignments;
  std::vector<double> objective;    // within-cluster sum of squares after each assignment step
  int iterations = 0;
  bool converged = false;

  double inertia() const { return objective.empty() ? 0.0 : objective.back(); }

  std::vector<std::int64_t> cluster_sizes() const {
    std::vector<std::int64_t> sizes(static_cast<std::size_t>(centroids.rows()), 0);
    for (auto a : assignments) ++sizes[static_cast<std::size_t>(a)];
    return sizes;
  }
};

namespace detail {

inline std::vector<std::size_t> kmeanspp_seeds(const Matrix& z, Eigen::Index k, Rng& rng) {
  const auto n = static_cast<std::size_t>(z.rows());
  std::vector<std::size_t> seeds;
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  seeds.push_back(first(rng));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (z.row(static_cast<Eigen::Index>(i)) - z.row(static_cast<Eigen::Index>(seeds[0]))).squaredNorm();
  while (static_cast<Eigen::Index>(seeds.size()) < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      std::discrete_distribution<std::size_t> by_distance(d2.begin(), d2.end());
      pick = by_distance(rng);
    } else {
      // every point coincides with a seed; take the next unused index
      while (std::find(seeds.begin(), seeds.end(), pick) != seeds.end()) ++pick;
    }
    seeds.push_back(pick);
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (z.row(static_cast<Eigen::Index>(i)) - z.row(static_cast<Eigen::Index>(pick))).squaredNorm());
  }
  return seeds;
}

/// Assigns each row to its nearest centroid (lowest index on ties); returns
/// the within-cluster sum of squares and fills per-point distances.
inline double assign(const Matrix& z, const Matrix& centroids, std::vector<std::int64_t>& labels,
                     std::vector<double>& dist) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::int64_t arg = 0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = (z.row(i) - centroids.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        arg = c;
      }
    }
    labels[static_cast<std::size_t>(i)] = arg;
    dist[static_cast<std::size_t>(i)] = best;
    total += best;
  }
  return total;
}

inline KMeansResult lloyd(const Matrix& z, Eigen::Index k, int max_iter, Rng& rng) {
  const auto n = static_cast<std::size_t>(z.rows());
  KMeansResult r;
  const auto seeds = kmeanspp_seeds(z, k, rng);
  r.centroids = Matrix(k, z.cols());
  for (Eigen::Index c = 0; c < k; ++c) r.centroids.row(c) = z.row(static_cast<Eigen::Index>(seeds[static_cast<std::size_t>(c)]));
  r.assignments.assign(n, -1);
  std::vector<std::int64_t> labels(n);
  std::vector<double> dist(n);

  for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
    const double obj = assign(z, r.centroids, labels, dist);
    r.objective.push_back(obj);
    if (labels == r.assignments) {
      r.converged = true;
      break;
    }
    r.assignments = labels;

    Matrix sums = Matrix::Zero(k, z.cols());
    std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(labels[i]) += z.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(labels[i])];
    }
    std::vector<bool> taken(n, false);
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        r.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // empty cluster: move it onto the point farthest from its centroid
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i)
        if (!taken[i] && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      taken[far] = true;
      r.centroids.row(c) = z.row(static_cast<Eigen::Index>(far));
    }
  }
  // max_iter reached without a final assignment pass after the last update
  if (!r.converged && r.iterations > 0) {
    r.objective.push_back(assign(z, r.centroids, labels, dist));
    r.assignments = labels;
  }
  return r;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs.
inline KMeansResult kmeans(const Matrix& z, Eigen::Index k, std::uint64_t seed, int max_iter = 300,
                           int restarts = 10) {
  require(k >= 1, ErrorCode::InvalidArgument, "k must be >= 1");
  require(z.rows() >= k, ErrorCode::TooFewSamples,
          std::to_string(z.rows()) + " samples for " + std::to_string(k) + " clusters");
  require(max_iter >= 1 && restarts >= 1, ErrorCode::InvalidArgument, "max_iter and restarts must be >= 1");
  Rng rng(seed);
  KMeansResult best;
  for (int run = 0; run < restarts; ++run) {
    KMeansResult r = detail::lloyd(z, k, max_iter, rng);
    if (run == 0 || r.inertia() < best.inertia()) best = std::move(r);
  }
  return best;
}

struct LatentTemplate {
  std::size_t cluster = 0;
  std::int64_t size = 0;
  Vector centroid;                      // g
  Vector image;                         // p, scale-averaged back-projection
  std::vector<Vector> probabilities;    // one distribution per study head
};

/// Back-projects each centroid to voxel space and scores it with every head;
/// templates come out sorted by cluster size, largest first.
inline std::vector<LatentTemplate> make_templates(const FactoredModel& model, const ProjectionOperator& op,
                                                  const std::vector<Dictionary>& dicts, const Matrix& centroids,
                                                  const std::vector<std::int64_t>& sizes = {}) {
  require(centroids.cols() == model.input_dim() && centroids.cols() == op.total_dim(), ErrorCode::ShapeMismatch,
          "centroid width " + std::to_string(centroids.cols()) + " != g");
  require(sizes.empty() || static_cast<Eigen::Index>(sizes.size()) == centroids.rows(), ErrorCode::ShapeMismatch,
          "cluster size list does not match centroid count");
  std::vector<LatentTemplate> out;
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    LatentTemplate t;
    t.cluster = static_cast<std::size_t>(c);
    t.size = sizes.empty() ? 0 : sizes[static_cast<std::size_t>(c)];
    t.centroid = centroids.row(c).transpose();
    t.image = reconstruct(op, dicts, t.centroid);
    const Vector latent = model.embedding.transpose() * t.centroid;
    for (const auto& h : model.heads)
      t.probabilities.push_back(softmax_probs(h.weights.transpose() * latent + h.bias));
    out.push_back(std::move(t));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.size > b.size; });
  return out;
}

}  // namespace cogfactor
