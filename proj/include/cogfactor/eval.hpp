#pragma once

// Accuracy measurement and the experiment harnesses: six-variant ablation,
// learning curves over target train size, and the single- vs multi-scale
// projection benchmark. Every fold draws a fresh subject split of every
// study from seed = base_seed + fold; all models compared within a fold are
// scored on the same held-out subjects of the target study.

#include "cogfactor/data.hpp"
#include "cogfactor/optim.hpp"

#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <thread>

namespace cogfactor {

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
inline double accuracy(const Matrix& probs, const Labels& labels) {
  check_labels(labels, probs.rows(), probs.cols());
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < probs.cols(); ++j)
      if (probs(i, j) > probs(i, best)) best = j;
    if (best == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline double accuracy(const FactoredModel& model, StudyId study, const Matrix& z, const Labels& labels) {
  return accuracy(forward(model, study, z), labels);
}

inline double accuracy(const PlainModel& model, const Matrix& x, const Labels& labels) {
  return accuracy(plain_forward(model, x), labels);
}

struct ExperimentRecord {
  int variant = 0;
  std::string target;
  std::string projection = "default";
  std::int64_t train_subjects = 0;
  int fold = 0;
  std::uint64_t fold_seed = 0;
  double test_accuracy = 0.0;
  double selected_penalty = 0.0;  // lambda or input-dropout rate chosen by inner CV (variants 1-3)
  double wall_time = 0.0;         // seconds

  auto key() const { return std::tie(target, projection, train_subjects, variant, fold); }
};

struct ExperimentReport {
  std::vector<ExperimentRecord> records;
  std::string config_hash;
  std::string timestamp;

  void sort() {
    std::stable_sort(records.begin(), records.end(),
                     [](const auto& a, const auto& b) { return a.key() < b.key(); });
  }
};

struct ExperimentConfig {
  TrainConfig train;                        // factored variants 4-6
  std::int64_t baseline_iterations = 600;   // Adam steps for variants 1-3
  std::int64_t latent_dim = 100;
  double test_fraction = 0.5;
  std::uint64_t base_seed = 0;
  std::vector<double> l2_grid = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0};
  std::vector<double> input_dropout_grid = {0.0, 0.25, 0.5, 0.75, 0.9};
  int inner_folds = 3;
  int jobs = 1;

  void validate() const {
    train.validate();
    require(baseline_iterations >= 0, ErrorCode::InvalidConfig, "baseline_iterations must be >= 0");
    require(latent_dim >= 1, ErrorCode::InvalidConfig, "latent_dim must be >= 1");
    require(test_fraction > 0.0 && test_fraction < 1.0, ErrorCode::InvalidConfig, "test_fraction must lie in (0, 1)");
    require(!l2_grid.empty() && !input_dropout_grid.empty(), ErrorCode::InvalidConfig, "empty penalty grid");
    require(inner_folds >= 2, ErrorCode::InvalidConfig, "inner_folds must be >= 2");
    require(jobs >= 1, ErrorCode::InvalidConfig, "jobs must be >= 1");
  }
};

namespace detail {

/// splitmix64 finaliser; derives independent stream seeds from (seed, salt).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Runs job(i) for i in [0, n) on up to `jobs` threads.
template <typename Job>
void parallel_for(std::size_t n, int jobs, Job&& job) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::size_t find_study(const std::vector<StudyDataset>& studies, const std::string& name) {
  for (std::size_t i = 0; i < studies.size(); ++i)
    if (studies[i].name == name) return i;
  throw Error(ErrorCode::UnknownStudy, name);
}

/// Study with most subjects other than `target` (first one on ties).
inline std::size_t largest_auxiliary(const std::vector<StudyDataset>& studies, std::size_t target) {
  std::size_t best = studies.size();
  std::size_t best_subjects = 0;
  for (std::size_t i = 0; i < studies.size(); ++i) {
    if (i == target) continue;
    const auto n = studies[i].distinct_subjects().size();
    if (best == studies.size() || n > best_subjects) {
      best = i;
      best_subjects = n;
    }
  }
  require(best != studies.size(), ErrorCode::MissingAuxiliary, "no auxiliary study available");
  return best;
}

inline std::vector<TrainTest> split_all(const std::vector<StudyDataset>& studies, double fraction,
                                        std::uint64_t fold_seed) {
  std::vector<TrainTest> out;
  out.reserve(studies.size());
  for (std::size_t i = 0; i < studies.size(); ++i)
    out.push_back(split_by_subject(studies[i], fraction, mix_seed(fold_seed, 100 + i)));
  return out;
}

/// Trains a fresh factored model on the train halves of `members` (first is
/// the target) and returns the target's held-out accuracy.
inline double fit_factored(const std::vector<const TrainTest*>& members, const ExperimentConfig& cfg,
                           std::uint64_t seed) {
  const auto& target = *members.front();
  FactoredModel model(target.train.dim(), cfg.latent_dim, cfg.train.dropout_rate);
  for (const auto* m : members) model.add_study(m->train.name, m->train.condition_names);
  Rng rng(seed);
  initialize(model, rng);
  std::vector<TrainSet> sets;
  for (std::size_t i = 0; i < members.size(); ++i)
    sets.push_back({i, members[i]->train.samples, members[i]->train.labels});
  train(model, sets, cfg.train, rng);
  return accuracy(model, 0, target.test.samples, target.test.labels);
}

inline double fit_plain(const StudyDataset& train_ds, const StudyDataset& eval_ds, const PlainPenalty& penalty,
                        const ExperimentConfig& cfg, std::uint64_t seed) {
  PlainModel model(train_ds.dim(), train_ds.classes());
  TrainConfig tc = cfg.train;
  tc.max_iterations = cfg.baseline_iterations;
  Rng rng(seed);
  train_plain(model, train_ds.samples, train_ds.labels, penalty, tc, rng);
  return accuracy(model, eval_ds.samples, eval_ds.labels);
}

/// Inner subject-level K-fold selection of the penalty; ties keep the earlier grid value.
inline PlainPenalty select_penalty(const StudyDataset& train_ds, const std::vector<PlainPenalty>& grid,
                                   const ExperimentConfig& cfg, std::uint64_t seed) {
  auto subjects = train_ds.distinct_subjects();
  const auto folds = std::min<std::size_t>(static_cast<std::size_t>(cfg.inner_folds), subjects.size());
  if (grid.size() == 1 || folds < 2) return grid.front();
  Rng rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  std::vector<TrainTest> inner;
  for (std::size_t f = 0; f < folds; ++f) {
    std::set<std::int64_t> held, kept;
    for (std::size_t i = 0; i < subjects.size(); ++i) (i % folds == f ? held : kept).insert(subjects[i]);
    inner.push_back({train_ds.select_subjects(kept), train_ds.select_subjects(held)});
  }
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double score = 0.0;
    for (std::size_t f = 0; f < folds; ++f)
      score += fit_plain(inner[f].train, inner[f].test, grid[g], cfg, mix_seed(seed, 1 + f));
    if (score > best_score) {
      best_score = score;
      best = g;
    }
  }
  return grid[best];
}

inline double penalty_value(const PlainPenalty& p) {
  return std::visit([](const auto& v) -> double {
    if constexpr (std::is_same_v<std::decay_t<decltype(v)>, L2Penalty>) return v.lambda;
    else return v.rate;
  }, p);
}

}  // namespace detail

/// Six ablation variants on one target study:
///   1 raw samples + l2, 2 projected + l2, 3 projected + input dropout,
///   4 factored single-study, 5 factored target + largest auxiliary study,
///   6 factored target + every other study.
inline ExperimentReport run_ablation(const std::vector<StudyDataset>& raw, const ProjectionOperator& op,
                                     const std::string& target_name, const ExperimentConfig& cfg,
                                     const std::vector<int>& variants, int folds) {
  cfg.validate();
  require(folds >= 0, ErrorCode::InvalidConfig, "folds must be >= 0");
  for (int v : variants) require(v >= 1 && v <= 6, ErrorCode::InvalidConfig, "variant must lie in [1, 6]");
  const std::size_t target = detail::find_study(raw, target_name);
  const bool wants_aux = std::any_of(variants.begin(), variants.end(), [](int v) { return v >= 5; });
  const std::size_t aux = wants_aux ? detail::largest_auxiliary(raw, target) : 0;
  const bool wants_reduced = std::any_of(variants.begin(), variants.end(), [](int v) { return v >= 2; });
  for (const auto& ds : raw) ds.validate();

  std::vector<StudyDataset> reduced;
  if (wants_reduced)
    for (const auto& ds : raw) reduced.push_back(project_dataset(op, ds));

  std::vector<std::vector<ExperimentRecord>> per_fold(static_cast<std::size_t>(folds));
  detail::parallel_for(per_fold.size(), cfg.jobs, [&](std::size_t f) {
    const std::uint64_t fold_seed = cfg.base_seed + f;
    std::vector<TrainTest> red_split;
    if (wants_reduced) red_split = detail::split_all(reduced, cfg.test_fraction, fold_seed);
    // same salt as split_all, so raw and reduced target splits hold the same subjects
    const TrainTest raw_target =
        split_by_subject(raw[target], cfg.test_fraction, detail::mix_seed(fold_seed, 100 + target));

    for (int v : variants) {
      detail::Stopwatch clock;
      ExperimentRecord rec;
      rec.variant = v;
      rec.target = target_name;
      rec.fold = static_cast<int>(f);
      rec.fold_seed = fold_seed;
      const std::uint64_t seed = detail::mix_seed(fold_seed, 1000 + static_cast<std::uint64_t>(v));
      const auto n_train = raw_target.train.distinct_subjects().size();
      rec.train_subjects = static_cast<std::int64_t>(n_train);
      if (v <= 3) {
        const TrainTest& tt = v == 1 ? raw_target : red_split[target];
        std::vector<PlainPenalty> grid;
        if (v == 3)
          for (double r : cfg.input_dropout_grid) grid.push_back(InputDropout{r});
        else
          for (double l : cfg.l2_grid) grid.push_back(L2Penalty{l});
        const PlainPenalty chosen = detail::select_penalty(tt.train, grid, cfg, detail::mix_seed(seed, 7));
        rec.selected_penalty = detail::penalty_value(chosen);
        rec.test_accuracy = detail::fit_plain(tt.train, tt.test, chosen, cfg, seed);
      } else {
        std::vector<const TrainTest*> members{&red_split[target]};
        if (v == 5) members.push_back(&red_split[aux]);
        if (v == 6)
          for (std::size_t i = 0; i < red_split.size(); ++i)
            if (i != target) members.push_back(&red_split[i]);
        rec.test_accuracy = detail::fit_factored(members, cfg, seed);
      }
      rec.wall_time = clock.seconds();
      per_fold[f].push_back(rec);
    }
  });

  ExperimentReport report;
  for (auto& recs : per_fold) report.records.insert(report.records.end(), recs.begin(), recs.end());
  report.sort();
  return report;
}

/// Variant 4 vs variant 6 while the target's training half is subsampled to
/// each grid size; the test half of each fold is fixed across grid points.
inline ExperimentReport learning_curve(const std::vector<StudyDataset>& reduced, const std::string& target_name,
                                       const std::vector<std::int64_t>& subject_grid, const ExperimentConfig& cfg,
                                       int folds) {
  cfg.validate();
  ExperimentReport report;
  if (subject_grid.empty() || folds <= 0) return report;
  const std::size_t target = detail::find_study(reduced, target_name);
  for (const auto& ds : reduced) ds.validate();

  std::vector<std::vector<ExperimentRecord>> per_fold(static_cast<std::size_t>(folds));
  detail::parallel_for(per_fold.size(), cfg.jobs, [&](std::size_t f) {
    const std::uint64_t fold_seed = cfg.base_seed + f;
    const auto split = detail::split_all(reduced, cfg.test_fraction, fold_seed);
    const auto available = static_cast<std::int64_t>(split[target].train.distinct_subjects().size());
    for (auto n : subject_grid)
      require(n >= 1 && n <= available, ErrorCode::TooFewSubjects,
              "grid point " + std::to_string(n) + " exceeds " + std::to_string(available) + " training subjects");
    for (auto n : subject_grid) {
      TrainTest sub = split[target];
      sub.train = subsample_subjects(split[target].train, n, detail::mix_seed(fold_seed, 5000 + n));
      for (int v : {4, 6}) {
        detail::Stopwatch clock;
        std::vector<const TrainTest*> members{&sub};
        if (v == 6)
          for (std::size_t i = 0; i < split.size(); ++i)
            if (i != target) members.push_back(&split[i]);
        ExperimentRecord rec;
        rec.variant = v;
        rec.target = target_name;
        rec.train_subjects = n;
        rec.fold = static_cast<int>(f);
        rec.fold_seed = fold_seed;
        rec.test_accuracy = detail::fit_factored(
            members, cfg, detail::mix_seed(fold_seed, 2000 + 10 * static_cast<std::uint64_t>(n) + v));
        rec.wall_time = clock.seconds();
        per_fold[f].push_back(rec);
      }
    }
  });
  for (auto& recs : per_fold) report.records.insert(report.records.end(), recs.begin(), recs.end());
  report.sort();
  return report;
}

/// Variant 6 under a single-scale and a multi-scale projection, paired per fold.
inline ExperimentReport multiscale_benchmark(const std::vector<StudyDataset>& raw, const ProjectionOperator& single,
                                             const ProjectionOperator& multiscale, const std::string& target_name,
                                             const ExperimentConfig& cfg, int folds) {
  cfg.validate();
  require(single.voxels() == multiscale.voxels(), ErrorCode::ShapeMismatch,
          "single- and multi-scale projections differ in voxel count");
  const std::size_t target = detail::find_study(raw, target_name);
  const std::pair<const char*, const ProjectionOperator*> arms[] = {{"single", &single},
                                                                     {"multiscale", &multiscale}};
  std::vector<std::vector<StudyDataset>> reduced(2);
  for (std::size_t a = 0; a < 2; ++a)
    for (const auto& ds : raw) reduced[a].push_back(project_dataset(*arms[a].second, ds));

  std::vector<std::vector<ExperimentRecord>> per_fold(static_cast<std::size_t>(std::max(folds, 0)));
  detail::parallel_for(per_fold.size(), cfg.jobs, [&](std::size_t f) {
    const std::uint64_t fold_seed = cfg.base_seed + f;
    for (std::size_t a = 0; a < 2; ++a) {
      detail::Stopwatch clock;
      const auto split = detail::split_all(reduced[a], cfg.test_fraction, fold_seed);
      std::vector<const TrainTest*> members{&split[target]};
      for (std::size_t i = 0; i < split.size(); ++i)
        if (i != target) members.push_back(&split[i]);
      ExperimentRecord rec;
      rec.variant = 6;
      rec.target = target_name;
      rec.projection = arms[a].first;
      rec.train_subjects = static_cast<std::int64_t>(split[target].train.distinct_subjects().size());
      rec.fold = static_cast<int>(f);
      rec.fold_seed = fold_seed;
      // same seed for both arms: identical projections give identical accuracies
      rec.test_accuracy = detail::fit_factored(members, cfg, detail::mix_seed(fold_seed, 3006));
      rec.wall_time = clock.seconds();
      per_fold[f].push_back(rec);
    }
  });
  ExperimentReport report;
  for (auto& recs : per_fold) report.records.insert(report.records.end(), recs.begin(), recs.end());
  report.sort();
  return report;
}

struct SummaryRow {
  std::string target;
  std::string projection;
  std::int64_t train_subjects = 0;
  int variant = 0;
  std::size_t folds = 0;
  double mean = 0.0;
  double stddev = 0.0;
};

/// Mean and sample standard deviation of accuracy per (target, projection, train size, variant).
inline std::vector<SummaryRow> summarize(const ExperimentReport& report) {
  std::map<std::tuple<std::string, std::string, std::int64_t, int>, std::vector<double>> groups;
  for (const auto& r : report.records)
    groups[{r.target, r.projection, r.train_subjects, r.variant}].push_back(r.test_accuracy);
  std::vector<SummaryRow> rows;
  for (const auto& [key, accs] : groups) {
    SummaryRow row{std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key), accs.size()};
    for (double a : accs) row.mean += a;
    row.mean /= static_cast<double>(accs.size());
    for (double a : accs) row.stddev += (a - row.mean) * (a - row.mean);
    row.stddev = accs.size() > 1 ? std::sqrt(row.stddev / static_cast<double>(accs.size() - 1)) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

/// Per-fold paired differences (a - b) between two record selectors, matched on fold.
template <typename SelectA, typename SelectB>
std::vector<double> paired_differences(const ExperimentReport& report, SelectA&& a, SelectB&& b) {
  std::map<int, double> va, vb;
  for (const auto& r : report.records) {
    if (a(r)) va[r.fold] = r.test_accuracy;
    if (b(r)) vb[r.fold] = r.test_accuracy;
  }
  std::vector<double> out;
  for (const auto& [fold, acc] : va)
    if (auto it = vb.find(fold); it != vb.end()) out.push_back(acc - it->second);
  return out;
}

}  // namespace cogfactor
