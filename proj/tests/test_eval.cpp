#include "cogfactor/eval.hpp"

#include <gtest/gtest.h>

using namespace cogfactor;

namespace {

SynthConfig tiny_config() {
  SynthConfig cfg;
  cfg.voxels = 120;
  cfg.latent_dim = 6;
  cfg.subject_rank = 2;
  cfg.dictionary_sizes = {6, 24};
  cfg.studies = {{"t", 3, 8, 1}, {"u", 4, 6, 1}, {"v", 4, 10, 1}};
  cfg.seed = 4;
  return cfg;
}

ExperimentConfig fast_config() {
  ExperimentConfig cfg;
  cfg.train.max_iterations = 40;
  cfg.train.batch_size = 16;
  cfg.baseline_iterations = 30;
  cfg.latent_dim = 8;
  cfg.l2_grid = {1e-3, 1.0};
  cfg.input_dropout_grid = {0.0, 0.5};
  cfg.inner_folds = 2;
  return cfg;
}

// Two conditions far apart on the first two coordinates; every subject has one sample of each.
StudyDataset separable(const std::string& name, int subjects) {
  StudyDataset ds;
  ds.name = name;
  ds.condition_names = {"left", "right"};
  ds.samples = Matrix::Zero(2 * subjects, 4);
  Rng rng(static_cast<std::uint64_t>(subjects));
  std::normal_distribution<double> n(0.0, 0.05);
  for (int s = 0; s < subjects; ++s)
    for (int c = 0; c < 2; ++c) {
      const auto row = 2 * s + c;
      ds.samples(row, 0) = (c == 0 ? 5.0 : -5.0) + n(rng);
      ds.samples(row, 1) = (c == 0 ? -5.0 : 5.0) + n(rng);
      ds.samples(row, 2) = n(rng);
      ds.labels.push_back(c);
      ds.subjects.push_back(s);
    }
  return ds;
}

ProjectionOperator identity_projection(Eigen::Index p) {
  return assemble_multiscale({Dictionary::from_dense("id", Matrix::Identity(p, p))});
}

}  // namespace

TEST(Accuracy, ArgmaxWithLowestIndexTies) {
  Matrix p(4, 3);
  p << 0.5, 0.3, 0.2,  //
      0.4, 0.4, 0.2,   // tie, picks 0
      0.1, 0.1, 0.8,   //
      0.2, 0.7, 0.1;
  EXPECT_DOUBLE_EQ(accuracy(p, {0, 0, 2, 0}), 0.75);
  EXPECT_DOUBLE_EQ(accuracy(p, {0, 1, 2, 1}), 0.75);
  EXPECT_THROW(accuracy(p, {0, 0, 3, 0}), Error);
}

TEST(Ablation, TwentyFoldsGiveTwentyRecordsPerVariant) {
  const auto data = generate_synthetic(tiny_config());
  const auto op = assemble_multiscale(data.truth.dictionaries);
  const auto rep = run_ablation(data.studies, op, "t", fast_config(), {4}, 20);
  ASSERT_EQ(rep.records.size(), 20u);
  for (int f = 0; f < 20; ++f) {
    EXPECT_EQ(rep.records[static_cast<std::size_t>(f)].fold, f);
    EXPECT_EQ(rep.records[static_cast<std::size_t>(f)].fold_seed, static_cast<std::uint64_t>(f));
  }
}

TEST(Ablation, TrivialSeparableDataIsPerfect) {
  const std::vector<StudyDataset> studies = {separable("easy", 8)};
  auto cfg = fast_config();
  cfg.baseline_iterations = 200;
  cfg.train.lr = 1e-2;
  const auto rep = run_ablation(studies, identity_projection(4), "easy", cfg, {1}, 5);
  ASSERT_EQ(rep.records.size(), 5u);
  for (const auto& r : rep.records) {
    EXPECT_EQ(r.variant, 1);
    EXPECT_EQ(r.test_accuracy, 1.0);
    EXPECT_EQ(r.train_subjects, 4);
  }
}

TEST(Ablation, AllVariantsRecordedAndInRange) {
  const auto data = generate_synthetic(tiny_config());
  const auto op = assemble_multiscale(data.truth.dictionaries);
  const auto rep = run_ablation(data.studies, op, "t", fast_config(), {1, 2, 3, 4, 5, 6}, 2);
  ASSERT_EQ(rep.records.size(), 12u);
  for (const auto& r : rep.records) {
    EXPECT_GE(r.test_accuracy, 0.0);
    EXPECT_LE(r.test_accuracy, 1.0);
    EXPECT_GE(r.variant, 1);
    EXPECT_LE(r.variant, 6);
    EXPECT_GE(r.wall_time, 0.0);
  }
  const auto rows = summarize(rep);
  EXPECT_EQ(rows.size(), 6u);
  for (const auto& row : rows) EXPECT_EQ(row.folds, 2u);
}

TEST(Ablation, MissingAuxiliary) {
  const std::vector<StudyDataset> studies = {separable("only", 6)};
  try {
    run_ablation(studies, identity_projection(4), "only", fast_config(), {5}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingAuxiliary);
  }
  EXPECT_THROW(run_ablation(studies, identity_projection(4), "other", fast_config(), {4}, 1), Error);
  EXPECT_THROW(run_ablation(studies, identity_projection(4), "only", fast_config(), {7}, 1), Error);
}

TEST(Ablation, DeterministicAndParallelIndependent) {
  const auto data = generate_synthetic(tiny_config());
  const auto op = assemble_multiscale(data.truth.dictionaries);
  auto cfg = fast_config();
  const auto a = run_ablation(data.studies, op, "t", cfg, {2, 4, 6}, 3);
  const auto b = run_ablation(data.studies, op, "t", cfg, {2, 4, 6}, 3);
  cfg.jobs = 3;
  const auto c = run_ablation(data.studies, op, "t", cfg, {6, 4, 2}, 3);
  ASSERT_EQ(a.records.size(), c.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].key(), b.records[i].key());
    EXPECT_EQ(a.records[i].test_accuracy, b.records[i].test_accuracy);
    EXPECT_EQ(a.records[i].key(), c.records[i].key());
    EXPECT_EQ(a.records[i].test_accuracy, c.records[i].test_accuracy);
    EXPECT_EQ(a.records[i].selected_penalty, c.records[i].selected_penalty);
  }
}

TEST(LearningCurve, RecordsPerGridPoint) {
  const auto data = generate_synthetic(tiny_config());
  const auto op = assemble_multiscale(data.truth.dictionaries);
  std::vector<StudyDataset> reduced;
  for (const auto& ds : data.studies) reduced.push_back(project_dataset(op, ds));
  const auto rep = learning_curve(reduced, "t", {1, 2, 4}, fast_config(), 2);
  EXPECT_EQ(rep.records.size(), 3u * 2u * 2u);
  for (const auto& r : rep.records) EXPECT_TRUE(r.variant == 4 || r.variant == 6);
  EXPECT_TRUE(learning_curve(reduced, "t", {}, fast_config(), 2).records.empty());
  try {
    learning_curve(reduced, "t", {5}, fast_config(), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewSubjects);
  }
}

TEST(Multiscale, IdenticalProjectionsGiveIdenticalArms) {
  const auto data = generate_synthetic(tiny_config());
  const auto op = assemble_multiscale(data.truth.dictionaries);
  const auto rep = multiscale_benchmark(data.studies, op, op, "t", fast_config(), 3);
  ASSERT_EQ(rep.records.size(), 6u);
  const auto diffs = paired_differences(
      rep, [](const auto& r) { return r.projection == "multiscale"; },
      [](const auto& r) { return r.projection == "single"; });
  ASSERT_EQ(diffs.size(), 3u);
  for (double d : diffs) EXPECT_EQ(d, 0.0);
}

TEST(Summary, MeanAndStddev) {
  ExperimentReport rep;
  for (int f = 0; f < 4; ++f) {
    ExperimentRecord r;
    r.variant = 2;
    r.target = "x";
    r.fold = f;
    r.test_accuracy = 0.5 + 0.1 * f;
    rep.records.push_back(r);
  }
  const auto rows = summarize(rep);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NEAR(rows[0].mean, 0.65, 1e-15);
  EXPECT_NEAR(rows[0].stddev, std::sqrt(0.05 / 3.0), 1e-15);
}

TEST(ExperimentConfig, Validation) {
  ExperimentConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.latent_dim, 100);
  EXPECT_EQ(cfg.l2_grid.size(), 9u);
  cfg.test_fraction = 1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.jobs = 0;
  EXPECT_THROW(cfg.validate(), Error);
}
