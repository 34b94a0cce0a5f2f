#pragma once

// On-disk layouts built on NDT tensors plus JSON manifests.
//
//   dataset dir     manifest.json, X.ndt (n x dim f64), labels.ndt, subjects.ndt (i64)
//   dictionary      <stem>.ndt (dense p x g_s f64, or COO nnz x 3 rows of row/col/value)
//                   + <stem>.json {name, p, g_s, format: "dense" | "coo", file}
//   checkpoint dir  manifest.json {l, r, g, studies: [{name, k_d, condition_names, ...}]},
//                   embedding.ndt, head<i>_weights.ndt, head<i>_bias.ndt
//
// Every file is written to a temporary sibling first and renamed into place.

#include "cogfactor/data.hpp"
#include "cogfactor/eval.hpp"
#include "cogfactor/introspect.hpp"
#include "cogfactor/tensor_io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <sstream>

namespace cogfactor::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline void atomic_write(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(os), ErrorCode::IoError, "cannot open " + tmp.string());
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    require(static_cast<bool>(os), ErrorCode::IoError, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void atomic_write_tensor(const fs::path& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  atomic_write(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

inline void atomic_write_json(const fs::path& path, const json& j) { atomic_write(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::IoError, "cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

/// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Datasets

inline void write_dataset(const fs::path& dir, const StudyDataset& ds) {
  ds.validate();
  fs::create_directories(dir);
  atomic_write_tensor(dir / "X.ndt", matrix_to_tensor(ds.samples));
  atomic_write_tensor(dir / "labels.ndt", make_tensor<std::int64_t>({ds.labels.size()}, ds.labels));
  atomic_write_tensor(dir / "subjects.ndt", make_tensor<std::int64_t>({ds.subjects.size()}, ds.subjects));
  json m;
  m["name"] = ds.name;
  m["n"] = ds.size();
  m["dim"] = ds.dim();
  m["representation"] = std::string(to_string(ds.representation));
  m["condition_names"] = ds.condition_names;
  m["files"] = {{"X", "X.ndt"}, {"labels", "labels.ndt"}, {"subjects", "subjects.ndt"}};
  atomic_write_json(dir / "manifest.json", m);
}

inline StudyDataset read_dataset(const fs::path& dir) {
  const json m = read_json(dir / "manifest.json");
  StudyDataset ds;
  try {
    ds.name = m.at("name").get<std::string>();
    const auto rep = m.at("representation").get<std::string>();
    require(rep == "raw" || rep == "reduced", ErrorCode::InvalidConfig, "representation must be raw or reduced");
    ds.representation = rep == "raw" ? Representation::Raw : Representation::Reduced;
    ds.condition_names = m.at("condition_names").get<std::vector<std::string>>();
    const auto& files = m.at("files");
    ds.samples = read_matrix(dir / files.at("X").get<std::string>());
    ds.labels = read_int64(dir / files.at("labels").get<std::string>());
    ds.subjects = read_int64(dir / files.at("subjects").get<std::string>());
    require(ds.size() == m.at("n").get<Eigen::Index>() && ds.dim() == m.at("dim").get<Eigen::Index>(),
            ErrorCode::ShapeMismatch, "manifest n/dim disagree with X.ndt in " + dir.string());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, (dir / "manifest.json").string() + ": " + e.what());
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Dictionaries

enum class DictFormat { Dense, Coo };

inline void write_dictionary(const fs::path& stem, const Dictionary& d, DictFormat format = DictFormat::Dense) {
  fs::path tensor_path = stem;
  tensor_path.replace_extension(".ndt");
  fs::path sidecar = stem;
  sidecar.replace_extension(".json");
  if (format == DictFormat::Dense) {
    atomic_write_tensor(tensor_path, matrix_to_tensor(d.dense()));
  } else {
    const auto& c = d.components();
    Matrix coo(c.nonZeros(), 3);
    Eigen::Index r = 0;
    for (Eigen::Index j = 0; j < c.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(c, j); it; ++it, ++r)
        coo.row(r) << static_cast<double>(it.row()), static_cast<double>(it.col()), it.value();
    atomic_write_tensor(tensor_path, matrix_to_tensor(coo));
  }
  atomic_write_json(sidecar, {{"name", d.name()},
                              {"p", d.voxels()},
                              {"g_s", d.size()},
                              {"format", format == DictFormat::Dense ? "dense" : "coo"},
                              {"file", tensor_path.filename().string()}});
}

/// Accepts the sidecar (.json) or the tensor (.ndt); a tensor without a
/// sidecar is read as a dense matrix named after the file stem.
inline Dictionary read_dictionary(const fs::path& path) {
  fs::path sidecar = path;
  sidecar.replace_extension(".json");
  if (!fs::exists(sidecar)) {
    require(path.extension() == ".ndt", ErrorCode::IoError, "no dictionary at " + path.string());
    return Dictionary::from_dense(path.stem().string(), read_matrix(path));
  }
  const json m = read_json(sidecar);
  try {
    const auto name = m.at("name").get<std::string>();
    const auto p = m.at("p").get<Eigen::Index>();
    const auto g = m.at("g_s").get<Eigen::Index>();
    const auto format = m.at("format").get<std::string>();
    fs::path tensor_path = sidecar.parent_path() / m.value("file", sidecar.stem().string() + ".ndt");
    const Matrix t = read_matrix(tensor_path);
    if (format == "dense") {
      require(t.rows() == p && t.cols() == g, ErrorCode::ShapeMismatch,
              "dictionary tensor " + shape_str(t.rows(), t.cols()) + " vs sidecar " + shape_str(p, g));
      return Dictionary::from_dense(name, t);
    }
    require(format == "coo", ErrorCode::InvalidConfig, "unknown dictionary format '" + format + "'");
    require(t.cols() == 3, ErrorCode::ShapeMismatch, "COO dictionary tensor must have 3 columns");
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(t.rows()));
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      trips.emplace_back(static_cast<Eigen::Index>(t(i, 0)), static_cast<Eigen::Index>(t(i, 1)), t(i, 2));
    return Dictionary::from_triplets(name, p, g, trips);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, sidecar.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

inline void write_checkpoint(const fs::path& dir, const FactoredModel& model) {
  fs::create_directories(dir);
  atomic_write_tensor(dir / "embedding.ndt", matrix_to_tensor(model.embedding));
  json studies = json::array();
  for (std::size_t i = 0; i < model.heads.size(); ++i) {
    const auto& h = model.heads[i];
    const std::string w = "head" + std::to_string(i) + "_weights.ndt";
    const std::string b = "head" + std::to_string(i) + "_bias.ndt";
    atomic_write_tensor(dir / w, matrix_to_tensor(h.weights));
    atomic_write_tensor(dir / b, make_tensor<double>({static_cast<std::uint64_t>(h.bias.size())},
                                                     std::span<const double>(h.bias.data(), h.bias.size())));
    studies.push_back({{"name", h.name},
                       {"k_d", h.classes()},
                       {"condition_names", h.condition_names},
                       {"weights", w},
                       {"bias", b}});
  }
  atomic_write_json(dir / "manifest.json", {{"l", model.latent_dim()},
                                            {"r", model.dropout_rate},
                                            {"g", model.input_dim()},
                                            {"embedding", "embedding.ndt"},
                                            {"studies", studies}});
}

inline FactoredModel read_checkpoint(const fs::path& dir) {
  const json m = read_json(dir / "manifest.json");
  try {
    FactoredModel model(m.at("g").get<Eigen::Index>(), m.at("l").get<Eigen::Index>(), m.at("r").get<double>());
    model.embedding = read_matrix(dir / m.value("embedding", "embedding.ndt"));
    require(model.embedding.rows() == m.at("g").get<Eigen::Index>() &&
                model.embedding.cols() == m.at("l").get<Eigen::Index>(),
            ErrorCode::ShapeMismatch, "embedding tensor does not match manifest g/l");
    for (const auto& s : m.at("studies")) {
      const auto id = model.add_study(s.at("name").get<std::string>(),
                                      s.at("condition_names").get<std::vector<std::string>>());
      Head& h = model.heads[id];
      h.weights = read_matrix(dir / s.at("weights").get<std::string>());
      h.bias = read_vector(dir / s.at("bias").get<std::string>());
      require(h.weights.rows() == model.latent_dim() && h.weights.cols() == s.at("k_d").get<Eigen::Index>() &&
                  h.bias.size() == h.weights.cols(),
              ErrorCode::ShapeMismatch, "head '" + h.name + "' tensors do not match manifest");
    }
    require(model.all_finite(), ErrorCode::InvalidArgument, "checkpoint contains non-finite parameters");
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, (dir / "manifest.json").string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reports and traces

inline std::string report_csv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "variant,target,projection,train_subjects,fold,fold_seed,test_accuracy,selected_penalty\n";
  for (const auto& r : report.records)
    os << r.variant << ',' << r.target << ',' << r.projection << ',' << r.train_subjects << ',' << r.fold << ','
       << r.fold_seed << ',' << format_double(r.test_accuracy) << ',' << format_double(r.selected_penalty) << '\n';
  return os.str();
}

/// Deterministic part of a report: records and per-group summaries. Wall
/// times and the timestamp live in the separate timings document.
inline json report_json(const ExperimentReport& report) {
  json recs = json::array();
  for (const auto& r : report.records)
    recs.push_back({{"variant", r.variant},
                    {"target", r.target},
                    {"projection", r.projection},
                    {"train_subjects", r.train_subjects},
                    {"fold", r.fold},
                    {"fold_seed", r.fold_seed},
                    {"test_accuracy", r.test_accuracy},
                    {"selected_penalty", r.selected_penalty}});
  json summary = json::array();
  for (const auto& s : summarize(report))
    summary.push_back({{"target", s.target},
                       {"projection", s.projection},
                       {"train_subjects", s.train_subjects},
                       {"variant", s.variant},
                       {"folds", s.folds},
                       {"mean_accuracy", s.mean},
                       {"std_accuracy", s.stddev}});
  return {{"metadata", {{"config_hash", report.config_hash}}}, {"records", recs}, {"summary", summary}};
}

inline json timings_json(const ExperimentReport& report) {
  json t = json::array();
  for (const auto& r : report.records)
    t.push_back({{"variant", r.variant},
                 {"target", r.target},
                 {"projection", r.projection},
                 {"train_subjects", r.train_subjects},
                 {"fold", r.fold},
                 {"wall_time", r.wall_time}});
  return {{"timestamp", report.timestamp}, {"config_hash", report.config_hash}, {"records", t}};
}

inline void write_report(const fs::path& dir, const ExperimentReport& report) {
  atomic_write(dir / "report.csv", report_csv(report));
  atomic_write_json(dir / "report.json", report_json(report));
  atomic_write_json(dir / "timings.json", timings_json(report));
}

inline std::string trace_csv(const std::vector<TraceEntry>& trace, const FactoredModel& model) {
  std::ostringstream os;
  os << "iteration,study,loss\n";
  for (const auto& e : trace) os << e.iteration << ',' << model.head(e.study).name << ',' << format_double(e.loss) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Introspection outputs

inline void write_maps(const fs::path& dir, const ClassificationMaps& maps) {
  fs::create_directories(dir);
  atomic_write_tensor(dir / (maps.study + "_maps.ndt"), matrix_to_tensor(maps.maps));
  atomic_write_json(dir / (maps.study + "_maps.json"), {{"study", maps.study},
                                                        {"p", maps.maps.rows()},
                                                        {"k_d", maps.maps.cols()},
                                                        {"condition_names", maps.condition_names},
                                                        {"bias", std::vector<double>(maps.bias.begin(), maps.bias.end())},
                                                        {"file", maps.study + "_maps.ndt"}});
}

/// templates.json holds per-cluster metadata and, per study, the conditions
/// ranked by probability; template j's image is t_<j>.ndt.
inline void write_templates(const fs::path& dir, const std::vector<LatentTemplate>& templates,
                            const FactoredModel& model, std::size_t top = 5) {
  fs::create_directories(dir);
  json out = json::array();
  for (std::size_t rank = 0; rank < templates.size(); ++rank) {
    const auto& t = templates[rank];
    char name[32];
    std::snprintf(name, sizeof(name), "t_%03zu.ndt", rank);
    atomic_write_tensor(dir / name, make_tensor<double>({static_cast<std::uint64_t>(t.image.size())},
                                                        std::span<const double>(t.image.data(), t.image.size())));
    json per_study = json::array();
    for (std::size_t s = 0; s < t.probabilities.size(); ++s) {
      const Vector& p = t.probabilities[s];
      std::vector<Eigen::Index> order(static_cast<std::size_t>(p.size()));
      std::iota(order.begin(), order.end(), Eigen::Index{0});
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] > p[b]; });
      json ranked = json::array();
      for (std::size_t i = 0; i < std::min(top, order.size()); ++i)
        ranked.push_back({{"condition", model.heads[s].condition_names[static_cast<std::size_t>(order[i])]},
                          {"probability", p[order[i]]}});
      per_study.push_back({{"study", model.heads[s].name}, {"top_conditions", ranked},
                           {"probabilities", std::vector<double>(p.begin(), p.end())}});
    }
    out.push_back({{"rank", rank}, {"cluster", t.cluster}, {"size", t.size}, {"image", name},
                   {"centroid", std::vector<double>(t.centroid.begin(), t.centroid.end())},
                   {"studies", per_study}});
  }
  atomic_write_json(dir / "templates.json", {{"templates", out}});
}

}  // namespace cogfactor::io
