#pragma once

#include "cogfactor/model.hpp"
#include "cogfactor/projection.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace cogfactor {

enum class Representation { Raw, Reduced };

inline std::string_view to_string(Representation r) {
  return r == Representation::Raw ? "raw" : "reduced";
}

/// Samples of one study with condition labels and subject ids.
struct StudyDataset {
  std::string name;
  Representation representation = Representation::Raw;
  Matrix samples;  // n x dim
  Labels labels;
  std::vector<std::int64_t> subjects;
  std::vector<std::string> condition_names;

  Eigen::Index size() const { return samples.rows(); }
  Eigen::Index dim() const { return samples.cols(); }
  Eigen::Index classes() const { return static_cast<Eigen::Index>(condition_names.size()); }

  std::vector<std::int64_t> distinct_subjects() const {
    std::set<std::int64_t> s(subjects.begin(), subjects.end());
    return {s.begin(), s.end()};
  }

  void validate() const {
    require(static_cast<Eigen::Index>(labels.size()) == samples.rows() &&
                static_cast<Eigen::Index>(subjects.size()) == samples.rows(),
            ErrorCode::ShapeMismatch, "dataset '" + name + "': labels/subjects length != n");
    require(!condition_names.empty(), ErrorCode::InvalidArgument, "dataset '" + name + "' has no conditions");
    check_labels(labels, samples.rows(), classes());
  }

  /// Keeps the rows whose subject is in `keep`, preserving order.
  StudyDataset select_subjects(const std::set<std::int64_t>& keep) const {
    std::vector<std::int64_t> rows;
    for (std::size_t i = 0; i < subjects.size(); ++i)
      if (keep.count(subjects[i]) != 0) rows.push_back(static_cast<std::int64_t>(i));
    StudyDataset out{name, representation, gather_rows(samples, rows), gather(labels, rows),
                     gather(subjects, rows), condition_names};
    return out;
  }
};

inline StudyDataset project_dataset(const ProjectionOperator& op, const StudyDataset& ds) {
  require(ds.representation == Representation::Raw, ErrorCode::InvalidArgument,
          "dataset '" + ds.name + "' is already reduced");
  StudyDataset out = ds;
  out.samples = project(op, ds.samples);
  out.representation = Representation::Reduced;
  return out;
}

struct SubjectSplit {
  std::vector<std::int64_t> train_subjects;
  std::vector<std::int64_t> test_subjects;
  std::uint64_t seed = 0;
};

/// Random partition of subjects; the test side gets ceil(fraction * n)
/// subjects, capped at n - 1 so both sides stay non-empty.
inline SubjectSplit make_subject_split(const std::vector<std::int64_t>& subjects, double fraction,
                                       std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, ErrorCode::InvalidArgument, "split fraction must lie in (0, 1)");
  require(subjects.size() >= 2, ErrorCode::TooFewSubjects,
          "need at least 2 subjects, got " + std::to_string(subjects.size()));
  std::vector<std::int64_t> order = subjects;
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = order.size();
  const auto n_test = std::min<std::size_t>(
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-12)), n - 1);
  SubjectSplit split;
  split.seed = seed;
  split.test_subjects.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.train_subjects.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(split.test_subjects.begin(), split.test_subjects.end());
  std::sort(split.train_subjects.begin(), split.train_subjects.end());
  return split;
}

struct TrainTest {
  StudyDataset train;
  StudyDataset test;
};

inline TrainTest split_by_subject(const StudyDataset& ds, double fraction, std::uint64_t seed) {
  const auto split = make_subject_split(ds.distinct_subjects(), fraction, seed);
  return {ds.select_subjects({split.train_subjects.begin(), split.train_subjects.end()}),
          ds.select_subjects({split.test_subjects.begin(), split.test_subjects.end()})};
}

inline StudyDataset subsample_subjects(const StudyDataset& ds, std::int64_t n_subjects, std::uint64_t seed) {
  auto subjects = ds.distinct_subjects();
  require(n_subjects >= 1 && n_subjects <= static_cast<std::int64_t>(subjects.size()),
          ErrorCode::TooFewSubjects,
          "requested " + std::to_string(n_subjects) + " of " + std::to_string(subjects.size()) + " subjects");
  Rng rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  subjects.resize(static_cast<std::size_t>(n_subjects));
  return ds.select_subjects({subjects.begin(), subjects.end()});
}

// ---------------------------------------------------------------------------
// Synthetic multi-study generator.
//
// Voxels sit on a line. Scale 0 is a set of overlapping hat functions that
// cover every voxel; finer scales are flat blocks covering the central part
// of their cell, leaving gaps that only coarser scales see. Each column of
// the generative basis U mixes a few atoms from every scale, so the signal
// has structure at all scales. Subject offsets live in a low-rank subspace
// of the latent space shared by every study.

struct SynthStudy {
  std::string name;
  std::int64_t conditions = 8;
  std::int64_t subjects = 20;
  std::int64_t samples_per_condition = 1;
};

struct SynthConfig {
  std::int64_t voxels = 2000;
  std::int64_t latent_dim = 20;
  std::vector<SynthStudy> studies = {
      {"study0", 8, 20, 1}, {"study1", 12, 40, 1}, {"study2", 16, 40, 1}, {"study3", 23, 50, 1}};
  double subject_noise = 1.0;
  std::int64_t subject_rank = 5;  // dimension of the shared nuisance subspace
  double trial_noise = 0.5;
  double shared_fraction = 0.7;
  std::uint64_t seed = 0;
  std::vector<std::int64_t> dictionary_sizes = {16, 64};  // coarse to fine
  double signal_scale = 2.5;
  std::int64_t atoms_per_scale = 2;
  double fine_coverage = 0.6;

  void validate() const {
    require(voxels >= 1 && latent_dim >= 1, ErrorCode::InvalidConfig, "dims must be >= 1");
    require(!studies.empty(), ErrorCode::InvalidConfig, "no studies");
    for (const auto& s : studies)
      require(s.conditions >= 1 && s.subjects >= 1 && s.samples_per_condition >= 1, ErrorCode::InvalidConfig,
              "study '" + s.name + "' has a non-positive size");
    require(subject_noise >= 0.0 && trial_noise >= 0.0 && signal_scale > 0.0, ErrorCode::InvalidConfig,
            "noise levels must be >= 0 and signal_scale > 0");
    require(shared_fraction >= 0.0 && shared_fraction <= 1.0, ErrorCode::InvalidConfig,
            "shared_fraction must lie in [0, 1]");
    require(!dictionary_sizes.empty(), ErrorCode::InvalidConfig, "need at least one dictionary scale");
    for (auto g : dictionary_sizes)
      require(g >= 1 && g <= voxels, ErrorCode::InvalidConfig, "dictionary size must lie in [1, voxels]");
    require(subject_rank >= 1 && subject_rank <= latent_dim, ErrorCode::InvalidConfig,
            "subject_rank must lie in [1, latent_dim]");
    require(atoms_per_scale >= 1, ErrorCode::InvalidConfig, "atoms_per_scale must be >= 1");
    require(fine_coverage > 0.0 && fine_coverage <= 1.0, ErrorCode::InvalidConfig,
            "fine_coverage must lie in (0, 1]");
  }
};

struct SynthTruth {
  Matrix basis;                               // p x g_true, signal_scale folded in
  Matrix nuisance;                            // g_true x subject_rank, orthonormal columns
  std::vector<Matrix> condition_latents;      // per study, k_d x g_true (unit rows)
  std::vector<Matrix> subject_offsets;        // per study, n_subjects x g_true
  std::vector<std::vector<std::int64_t>> pool_index;  // per study/condition; -1 for private
  std::vector<Dictionary> dictionaries;       // coarse to fine
};

struct SynthData {
  std::vector<StudyDataset> studies;
  SynthTruth truth;
};

namespace detail {

inline Vector unit_gaussian(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  const double norm = v.norm();
  return norm > 0.0 ? Vector(v / norm) : Vector(Vector::Unit(n, 0));
}

/// Hat functions centred on cell centres with half-width one cell.
inline Dictionary hat_dictionary(std::string name, std::int64_t voxels, std::int64_t atoms) {
  const double cell = static_cast<double>(voxels) / static_cast<double>(atoms);
  std::vector<Triplet> trips;
  for (std::int64_t j = 0; j < atoms; ++j) {
    const double centre = (static_cast<double>(j) + 0.5) * cell;
    for (std::int64_t v = 0; v < voxels; ++v) {
      const double w = 1.0 - std::abs(static_cast<double>(v) + 0.5 - centre) / cell;
      if (w > 0.0) trips.emplace_back(v, j, w);
    }
  }
  return Dictionary::from_triplets(std::move(name), voxels, atoms, trips);
}

/// Flat blocks over the central `coverage` fraction of each cell (at least one voxel).
inline Dictionary block_dictionary(std::string name, std::int64_t voxels, std::int64_t atoms, double coverage) {
  const double cell = static_cast<double>(voxels) / static_cast<double>(atoms);
  std::vector<Triplet> trips;
  for (std::int64_t j = 0; j < atoms; ++j) {
    const double lo_cell = static_cast<double>(j) * cell;
    const double margin = 0.5 * (1.0 - coverage) * cell;
    auto lo = static_cast<std::int64_t>(std::ceil(lo_cell + margin - 1e-9));
    auto hi = static_cast<std::int64_t>(std::floor(lo_cell + cell - margin - 1e-9));
    lo = std::clamp<std::int64_t>(lo, 0, voxels - 1);
    hi = std::clamp<std::int64_t>(hi, lo, voxels - 1);
    for (std::int64_t v = lo; v <= hi; ++v) trips.emplace_back(v, j, 1.0);
  }
  return Dictionary::from_triplets(std::move(name), voxels, atoms, trips);
}

}  // namespace detail

inline std::vector<Dictionary> synthetic_dictionaries(const SynthConfig& cfg) {
  std::vector<Dictionary> dicts;
  for (std::size_t s = 0; s < cfg.dictionary_sizes.size(); ++s) {
    const auto g = cfg.dictionary_sizes[s];
    std::string name = "scale" + std::to_string(s) + "_" + std::to_string(g);
    dicts.push_back(s == 0 ? detail::hat_dictionary(std::move(name), cfg.voxels, g)
                           : detail::block_dictionary(std::move(name), cfg.voxels, g, cfg.fine_coverage));
  }
  return dicts;
}

inline SynthData generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal;
  SynthData out;
  SynthTruth& truth = out.truth;
  const auto p = cfg.voxels;
  const auto gt = cfg.latent_dim;

  truth.dictionaries = synthetic_dictionaries(cfg);
  std::vector<Matrix> atoms;
  for (const auto& d : truth.dictionaries) {
    Matrix a = d.dense();
    a.colwise().normalize();
    atoms.push_back(std::move(a));
  }

  truth.basis = Matrix::Zero(p, gt);
  for (Eigen::Index c = 0; c < gt; ++c) {
    for (const auto& a : atoms) {
      std::uniform_int_distribution<Eigen::Index> pick(0, a.cols() - 1);
      for (std::int64_t k = 0; k < cfg.atoms_per_scale; ++k) truth.basis.col(c) += normal(rng) * a.col(pick(rng));
    }
    const double norm = truth.basis.col(c).norm();
    if (norm > 0.0) truth.basis.col(c) *= cfg.signal_scale / norm;
  }

  {
    Matrix gauss(gt, cfg.subject_rank);
    for (Eigen::Index j = 0; j < gauss.cols(); ++j)
      for (Eigen::Index i = 0; i < gauss.rows(); ++i) gauss(i, j) = normal(rng);
    Eigen::HouseholderQR<Matrix> qr(gauss);
    truth.nuisance = qr.householderQ() * Matrix::Identity(gt, cfg.subject_rank);
  }

  std::int64_t pool_size = 0;
  for (const auto& s : cfg.studies) pool_size = std::max(pool_size, s.conditions);
  std::vector<Vector> pool;
  for (std::int64_t i = 0; i < pool_size; ++i) pool.push_back(detail::unit_gaussian(gt, rng));

  for (const auto& spec : cfg.studies) {
    const auto k = spec.conditions;
    const auto n_shared = std::min<std::int64_t>(
        static_cast<std::int64_t>(std::llround(cfg.shared_fraction * static_cast<double>(k))), pool_size);
    std::vector<std::int64_t> pool_ids(static_cast<std::size_t>(pool_size));
    std::iota(pool_ids.begin(), pool_ids.end(), std::int64_t{0});
    std::shuffle(pool_ids.begin(), pool_ids.end(), rng);

    Matrix means(k, gt);
    std::vector<std::int64_t> origin(static_cast<std::size_t>(k), -1);
    StudyDataset ds;
    ds.name = spec.name;
    for (std::int64_t c = 0; c < k; ++c) {
      if (c < n_shared) {
        origin[static_cast<std::size_t>(c)] = pool_ids[static_cast<std::size_t>(c)];
        means.row(c) = pool[static_cast<std::size_t>(origin[static_cast<std::size_t>(c)])].transpose();
        ds.condition_names.push_back("concept" + std::to_string(origin[static_cast<std::size_t>(c)]));
      } else {
        means.row(c) = detail::unit_gaussian(gt, rng).transpose();
        ds.condition_names.push_back(spec.name + "_cond" + std::to_string(c));
      }
    }

    Matrix coeffs(spec.subjects, cfg.subject_rank);
    for (Eigen::Index s = 0; s < coeffs.rows(); ++s)
      for (Eigen::Index j = 0; j < coeffs.cols(); ++j)
        coeffs(s, j) = cfg.subject_noise * normal(rng) / std::sqrt(static_cast<double>(cfg.subject_rank));
    Matrix offsets = coeffs * truth.nuisance.transpose();

    const auto n = spec.subjects * k * spec.samples_per_condition;
    ds.samples.resize(n, p);
    Eigen::Index row = 0;
    for (std::int64_t s = 0; s < spec.subjects; ++s) {
      for (std::int64_t c = 0; c < k; ++c) {
        const Vector clean = truth.basis * (means.row(c) + offsets.row(s)).transpose();
        for (std::int64_t r = 0; r < spec.samples_per_condition; ++r, ++row) {
          for (Eigen::Index v = 0; v < p; ++v) ds.samples(row, v) = clean[v] + cfg.trial_noise * normal(rng);
          ds.labels.push_back(c);
          ds.subjects.push_back(s);
        }
      }
    }
    truth.condition_latents.push_back(std::move(means));
    truth.subject_offsets.push_back(std::move(offsets));
    truth.pool_index.push_back(std::move(origin));
    out.studies.push_back(std::move(ds));
  }
  return out;
}

}  // namespace cogfactor
