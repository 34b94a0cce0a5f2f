#include "cogfactor/projection.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace cogfactor;

namespace {

Dictionary toy_dictionary() {
  Matrix d(3, 2);
  d << 1, 0, 1, 0, 0, 1;
  return Dictionary::from_dense("toy", d);
}

// Random nonnegative dictionary built from disjoint supports plus a little overlap.
Dictionary random_dictionary(Rng& rng, Eigen::Index p, Eigen::Index g, const std::string& name = "rand") {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Matrix d = Matrix::Zero(p, g);
  for (Eigen::Index i = 0; i < p; ++i) {
    d(i, i % g) = u(rng);
    if (u(rng) < 0.2) d(i, (i + 1) % g) = 0.3 * u(rng);
  }
  return Dictionary::from_dense(name, d);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

}  // namespace

TEST(Projection, HandInvertedGram) {
  const Matrix w = compute_projection(toy_dictionary());
  Matrix expected(3, 2);
  expected << 0.5, 0, 0.5, 0, 0, 1;
  EXPECT_LT((w - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Projection, OrthonormalColumnsAreFixed) {
  Matrix d = Matrix::Zero(6, 3);
  d(0, 0) = d(1, 0) = std::sqrt(0.5);
  d(2, 1) = 1.0;
  d(3, 2) = 0.6;
  d(4, 2) = 0.8;
  const Matrix w = compute_projection(Dictionary::from_dense("on", d));
  EXPECT_LT((w - d).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Projection, DuplicatedColumnIsSingular) {
  Matrix d(3, 2);
  d << 1, 1, 2, 2, 0, 0;
  EXPECT_EQ(code_of([&] { compute_projection(Dictionary::from_dense("dup", d)); }), ErrorCode::GramSingular);
}

TEST(Projection, DictionaryInvariants) {
  Matrix neg(2, 1);
  neg << 1, -1;
  EXPECT_EQ(code_of([&] { Dictionary::from_dense("neg", neg); }), ErrorCode::InvalidArgument);
  Matrix empty_col(2, 2);
  empty_col << 1, 0, 1, 0;
  EXPECT_EQ(code_of([&] { Dictionary::from_dense("zero", empty_col); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { Dictionary::from_triplets("oob", 2, 2, {{2, 0, 1.0}}); }), ErrorCode::ShapeMismatch);
}

TEST(Projection, TripletDuplicatesAreSummed) {
  const auto d = Dictionary::from_triplets("t", 3, 2, {{0, 0, 0.5}, {0, 0, 0.5}, {1, 0, 1.0}, {2, 1, 1.0}});
  EXPECT_EQ(d.dense(), toy_dictionary().dense());
}

TEST(Projection, LeftInverseOnRandomDictionaries) {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const Eigen::Index g = 2 + static_cast<Eigen::Index>(rng() % 10);
    const Eigen::Index p = g * (1 + static_cast<Eigen::Index>(rng() % 5));
    const auto d = random_dictionary(rng, p, g);
    const Matrix w = compute_projection(d);
    EXPECT_EQ(w.rows(), p);
    EXPECT_EQ(w.cols(), g);
    const Matrix dtw = d.dense().transpose() * w;
    EXPECT_LE((dtw - Matrix::Identity(g, g)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Projection, MultiscaleWidthsAddUp) {
  Rng rng(3);
  std::vector<Dictionary> dicts;
  for (Eigen::Index g : {16, 64, 512}) dicts.push_back(random_dictionary(rng, 1024, g, "s" + std::to_string(g)));
  const auto op = assemble_multiscale(dicts);
  EXPECT_EQ(op.total_dim(), 592);
  EXPECT_EQ(op.blocks()[1].offset, 16);
  EXPECT_EQ(op.blocks()[2].offset, 80);
}

TEST(Projection, SingleScaleMatchesComputeProjection) {
  const auto op = assemble_multiscale({toy_dictionary()});
  EXPECT_EQ(op.matrix(), compute_projection(toy_dictionary()));
}

TEST(Projection, MismatchedVoxelsRejected) {
  Rng rng(5);
  std::vector<Dictionary> dicts = {random_dictionary(rng, 100, 4), random_dictionary(rng, 99, 4)};
  EXPECT_EQ(code_of([&] { assemble_multiscale(dicts); }), ErrorCode::ShapeMismatch);
}

TEST(Projection, ProjectMatchesNaiveProduct) {
  Rng rng(9);
  std::normal_distribution<double> n01;
  Matrix d = Matrix::Zero(8, 2);
  d.topRows(3) = toy_dictionary().dense();
  d(5, 0) = 0.5;
  d(7, 1) = 2.0;
  const auto dict = Dictionary::from_dense("pad", d);
  const auto op = assemble_multiscale({dict});
  Matrix x(5, 8);
  for (auto& v : x.reshaped()) v = n01(rng);
  const Matrix w = compute_projection(dict);
  EXPECT_LT((project(op, x) - oracle::matmul(x, w)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(project(op, Matrix::Zero(4, 8)).isZero(0.0));
  EXPECT_EQ(code_of([&] { project(op, Matrix::Zero(2, 7)); }), ErrorCode::ShapeMismatch);
}

TEST(Projection, SpanLoadingsRecovered) {
  Matrix d = Matrix::Zero(4, 2);
  d(0, 0) = d(1, 0) = std::sqrt(0.5);
  d(3, 1) = 1.0;
  const auto op = assemble_multiscale({Dictionary::from_dense("on", d)});
  Vector a(2);
  a << 1.5, -2.0;
  const Matrix x = (d * a).transpose();
  EXPECT_LT((project(op, x).row(0).transpose() - a).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Projection, ProjectIsLinear) {
  Rng rng(21);
  std::normal_distribution<double> n01;
  const auto op = assemble_multiscale({random_dictionary(rng, 40, 5, "a"), random_dictionary(rng, 40, 10, "b")});
  for (int trial = 0; trial < 10; ++trial) {
    Matrix x(6, 40), y(6, 40);
    for (auto& v : x.reshaped()) v = n01(rng);
    for (auto& v : y.reshaped()) v = n01(rng);
    const double a = n01(rng), b = n01(rng);
    const Matrix lhs = project(op, a * x + b * y);
    const Matrix rhs = a * project(op, x) + b * project(op, y);
    EXPECT_LE((lhs - rhs).norm(), 1e-10 * std::max(1.0, rhs.norm()));
  }
}

TEST(Projection, ReconstructTwoScaleToy) {
  Matrix d2(3, 1);
  d2 << 1, 1, 1;
  const std::vector<Dictionary> dicts = {toy_dictionary(), Dictionary::from_dense("flat", d2)};
  const auto op = assemble_multiscale(dicts);
  Vector y(3);
  y << 2, -1, 4;
  Vector expected(3);
  // scale 1: [2, 2, -1]; scale 2: [4, 4, 4]; averaged.
  expected << 3, 3, 1.5;
  EXPECT_LT((reconstruct(op, dicts, y) - expected).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_TRUE(reconstruct(op, dicts, Vector::Zero(3)).isZero(0.0));
  EXPECT_EQ(code_of([&] { reconstruct(op, dicts, Vector::Zero(2)); }), ErrorCode::ShapeMismatch);
}

TEST(Projection, ReconstructOrthonormalUnitLoading) {
  Matrix d = Matrix::Zero(4, 2);
  d(0, 0) = 0.6;
  d(1, 0) = 0.8;
  d(2, 1) = 1.0;
  const std::vector<Dictionary> dicts = {Dictionary::from_dense("on", d)};
  const auto op = assemble_multiscale(dicts);
  EXPECT_EQ(reconstruct(op, dicts, Vector::Unit(2, 0)), d.col(0));
}

TEST(Projection, SingleScaleIdempotentOnSpan) {
  Rng rng(17);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<Dictionary> dicts = {random_dictionary(rng, 30, 6)};
    const auto op = assemble_multiscale(dicts);
    Matrix x(1, 30);
    for (auto& v : x.reshaped()) v = n01(rng);
    const Matrix y = project(op, x);
    const Vector back = reconstruct(op, dicts, y.row(0).transpose());
    const Matrix again = project(op, back.transpose());
    EXPECT_LT((again - y).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, y.cwiseAbs().maxCoeff()));
  }
}

TEST(Projection, BlockOrderIsPermutationCovariant) {
  Rng rng(23);
  const auto a = random_dictionary(rng, 50, 3, "a"), b = random_dictionary(rng, 50, 7, "b"),
             c = random_dictionary(rng, 50, 5, "c");
  const auto abc = assemble_multiscale({a, b, c});
  const auto cab = assemble_multiscale({c, a, b});
  EXPECT_EQ(abc.total_dim(), cab.total_dim());
  EXPECT_EQ(cab.blocks()[0].name, "c");
  EXPECT_EQ(cab.blocks()[1].offset, 5);
  EXPECT_EQ(cab.blocks()[2].offset, 8);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& blk = abc.blocks()[i];
    const auto it = std::find_if(cab.blocks().begin(), cab.blocks().end(),
                                 [&](const ScaleBlock& o) { return o.name == blk.name; });
    ASSERT_NE(it, cab.blocks().end());
    EXPECT_EQ(it->weights, blk.weights);
  }
}
