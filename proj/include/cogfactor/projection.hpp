#pragma once

// Fixed first-layer reduction: orthogonal projection of samples onto one or
// several sparse nonnegative spatial dictionaries. Each scale contributes a
// block W_s = D_s (D_s^T D_s)^{-1}; blocks are concatenated in input order.

#include "cogfactor/core.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SparseCore>

#include <utility>

namespace cogfactor {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

inline constexpr double kDefaultRcond = 1e-10;

/// Spatial dictionary: p voxels x g_s components, nonnegative, no empty column.
class Dictionary {
 public:
  Dictionary() = default;

  Dictionary(std::string name, SparseMatrix components)
      : name_(std::move(name)), components_(std::move(components)) {
    components_.makeCompressed();
    validate();
  }

  static Dictionary from_dense(std::string name, const Matrix& dense) {
    return Dictionary(std::move(name), dense.sparseView());
  }

  /// Coordinate triplets; duplicate (row, col) entries are summed.
  static Dictionary from_triplets(std::string name, Eigen::Index voxels, Eigen::Index components,
                                  const std::vector<Triplet>& triplets) {
    for (const auto& t : triplets)
      require(t.row() >= 0 && t.row() < voxels && t.col() >= 0 && t.col() < components,
              ErrorCode::ShapeMismatch, "triplet index outside " + shape_str(voxels, components));
    SparseMatrix m(voxels, components);
    m.setFromTriplets(triplets.begin(), triplets.end());
    return Dictionary(std::move(name), std::move(m));
  }

  const std::string& name() const { return name_; }
  const SparseMatrix& components() const { return components_; }
  Eigen::Index voxels() const { return components_.rows(); }
  Eigen::Index size() const { return components_.cols(); }
  Matrix dense() const { return Matrix(components_); }

 private:
  void validate() const {
    require(components_.rows() > 0 && components_.cols() > 0, ErrorCode::InvalidArgument,
            "dictionary '" + name_ + "' is empty");
    for (Eigen::Index j = 0; j < components_.outerSize(); ++j) {
      bool nonzero = false;
      for (SparseMatrix::InnerIterator it(components_, j); it; ++it) {
        require(std::isfinite(it.value()) && it.value() >= 0.0, ErrorCode::InvalidArgument,
                "dictionary '" + name_ + "' has a negative or non-finite entry");
        nonzero = nonzero || it.value() > 0.0;
      }
      require(nonzero, ErrorCode::InvalidArgument,
              "dictionary '" + name_ + "' component " + std::to_string(j) + " is all zero");
    }
  }

  std::string name_;
  SparseMatrix components_;
};

/// W = D (D^T D)^{-1}, so that D^T W = I. Throws GramSingular when the
/// reciprocal condition estimate of the Gram matrix falls below `rcond`.
inline Matrix compute_projection(const Dictionary& dict, double rcond = kDefaultRcond) {
  require(rcond > 0.0, ErrorCode::InvalidArgument, "rcond must be positive");
  const SparseMatrix& d = dict.components();
  const Matrix gram = Matrix(d.transpose() * d);
  Eigen::LLT<Matrix> llt(gram);
  const double rc = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
  if (!(rc >= rcond))
    throw Error(ErrorCode::GramSingular, "dictionary '" + dict.name() + "' Gram rcond " +
                                             std::to_string(rc) + " < " + std::to_string(rcond));
  return llt.solve(Matrix(d.transpose())).transpose();
}

struct ScaleBlock {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index width = 0;
  Matrix weights;  // p x width
};

/// Concatenation of per-scale projection blocks. Immutable once assembled.
class ProjectionOperator {
 public:
  ProjectionOperator() = default;

  explicit ProjectionOperator(std::vector<ScaleBlock> blocks) : blocks_(std::move(blocks)) {
    require(!blocks_.empty(), ErrorCode::InvalidArgument, "projection needs at least one block");
    voxels_ = blocks_.front().weights.rows();
    Eigen::Index offset = 0;
    for (auto& b : blocks_) {
      require(b.weights.rows() == voxels_, ErrorCode::ShapeMismatch,
              "block '" + b.name + "' has " + std::to_string(b.weights.rows()) + " voxels, expected " +
                  std::to_string(voxels_));
      b.offset = offset;
      b.width = b.weights.cols();
      offset += b.width;
    }
    total_dim_ = offset;
  }

  Eigen::Index voxels() const { return voxels_; }
  Eigen::Index total_dim() const { return total_dim_; }
  std::size_t scales() const { return blocks_.size(); }
  const std::vector<ScaleBlock>& blocks() const { return blocks_; }

  /// Full p x g matrix W_g.
  Matrix matrix() const {
    Matrix w(voxels_, total_dim_);
    for (const auto& b : blocks_) w.middleCols(b.offset, b.width) = b.weights;
    return w;
  }

 private:
  std::vector<ScaleBlock> blocks_;
  Eigen::Index voxels_ = 0;
  Eigen::Index total_dim_ = 0;
};

inline ProjectionOperator assemble_multiscale(const std::vector<Dictionary>& dicts,
                                              double rcond = kDefaultRcond) {
  require(!dicts.empty(), ErrorCode::InvalidArgument, "no dictionaries given");
  for (const auto& d : dicts)
    require(d.voxels() == dicts.front().voxels(), ErrorCode::ShapeMismatch,
            "dictionary '" + d.name() + "' has p=" + std::to_string(d.voxels()) + ", expected p=" +
                std::to_string(dicts.front().voxels()));
  std::vector<ScaleBlock> blocks;
  blocks.reserve(dicts.size());
  for (const auto& d : dicts) blocks.push_back({d.name(), 0, 0, compute_projection(d, rcond)});
  return ProjectionOperator(std::move(blocks));
}

/// Row i of the result is [W_1^T x_i ; ... ; W_S^T x_i].
inline Matrix project(const ProjectionOperator& op, const Matrix& samples) {
  require(samples.cols() == op.voxels(), ErrorCode::ShapeMismatch,
          "samples " + shape_str(samples.rows(), samples.cols()) + " vs p=" +
              std::to_string(op.voxels()));
  Matrix out(samples.rows(), op.total_dim());
  for (const auto& b : op.blocks()) out.middleCols(b.offset, b.width).noalias() = samples * b.weights;
  return out;
}

/// Scale-averaged back-projection t = (1/S) sum_s D_s y^(s).
inline Vector reconstruct(const ProjectionOperator& op, const std::vector<Dictionary>& dicts,
                          const Vector& loadings) {
  require(loadings.size() == op.total_dim(), ErrorCode::ShapeMismatch,
          "loadings length " + std::to_string(loadings.size()) + " vs g=" +
              std::to_string(op.total_dim()));
  require(dicts.size() == op.scales(), ErrorCode::ShapeMismatch,
          "operator has " + std::to_string(op.scales()) + " scales, got " +
              std::to_string(dicts.size()) + " dictionaries");
  Vector t = Vector::Zero(op.voxels());
  for (std::size_t s = 0; s < dicts.size(); ++s) {
    const auto& b = op.blocks()[s];
    require(dicts[s].voxels() == op.voxels() && dicts[s].size() == b.width, ErrorCode::ShapeMismatch,
            "dictionary '" + dicts[s].name() + "' does not match block " + std::to_string(s));
    t += dicts[s].components() * loadings.segment(b.offset, b.width);
  }
  return t / static_cast<double>(dicts.size());
}

}  // namespace cogfactor
