#include "cogfactor/io.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace cogfactor;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "cogfactor_io" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.voxels = 60;
  cfg.latent_dim = 5;
  cfg.subject_rank = 2;
  cfg.dictionary_sizes = {4, 12};
  cfg.studies = {{"a", 3, 4, 1}, {"b", 4, 5, 2}};
  return cfg;
}

}  // namespace

TEST(Io, DatasetRoundTrip) {
  const auto data = generate_synthetic(small_config());
  const auto dir = fresh_dir("dataset");
  io::write_dataset(dir / "b", data.studies[1]);
  const auto back = io::read_dataset(dir / "b");
  EXPECT_EQ(back.name, "b");
  EXPECT_EQ(back.samples, data.studies[1].samples);
  EXPECT_EQ(back.labels, data.studies[1].labels);
  EXPECT_EQ(back.subjects, data.studies[1].subjects);
  EXPECT_EQ(back.condition_names, data.studies[1].condition_names);
  EXPECT_EQ(back.representation, Representation::Raw);
  const auto manifest = io::read_json(dir / "b" / "manifest.json");
  EXPECT_EQ(manifest.at("n").get<int>(), 40);
  EXPECT_EQ(manifest.at("representation"), "raw");
  EXPECT_FALSE(fs::exists(dir / "b" / "X.ndt.tmp"));
}

TEST(Io, DatasetWritesAreByteStable) {
  const auto data = generate_synthetic(small_config());
  const auto a = fresh_dir("stable_a"), b = fresh_dir("stable_b");
  io::write_dataset(a, data.studies[0]);
  io::write_dataset(b, generate_synthetic(small_config()).studies[0]);
  for (const char* f : {"manifest.json", "X.ndt", "labels.ndt", "subjects.ndt"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Io, DictionaryDenseAndCoo) {
  const auto dicts = synthetic_dictionaries(small_config());
  const auto dir = fresh_dir("dict");
  io::write_dictionary(dir / "dense", dicts[1], io::DictFormat::Dense);
  io::write_dictionary(dir / "coo", dicts[1], io::DictFormat::Coo);
  const auto d1 = io::read_dictionary(dir / "dense.json");
  const auto d2 = io::read_dictionary(dir / "coo.ndt");
  EXPECT_EQ(d1.dense(), dicts[1].dense());
  EXPECT_EQ(d2.dense(), dicts[1].dense());
  EXPECT_EQ(d1.name(), dicts[1].name());
  const auto sidecar = io::read_json(dir / "coo.json");
  EXPECT_EQ(sidecar.at("format"), "coo");
  EXPECT_EQ(sidecar.at("p").get<int>(), 60);
  EXPECT_EQ(sidecar.at("g_s").get<int>(), 12);

  // a bare tensor without a sidecar reads as dense
  write_matrix(dir / "bare.ndt", dicts[0].dense());
  EXPECT_EQ(io::read_dictionary(dir / "bare.ndt").dense(), dicts[0].dense());
  EXPECT_THROW(io::read_dictionary(dir / "missing.json"), Error);
}

TEST(Io, CheckpointRoundTrip) {
  Rng rng(3);
  FactoredModel m(7, 4, 0.75);
  m.add_study("one", {"a", "b"});
  m.add_study("two", {"x", "y", "z"});
  initialize(m, rng);
  m.heads[1].bias << 0.1, -0.2, 0.3;
  const auto dir = fresh_dir("ckpt");
  io::write_checkpoint(dir, m);
  const auto back = io::read_checkpoint(dir);
  EXPECT_EQ(back.embedding, m.embedding);
  EXPECT_EQ(back.dropout_rate, 0.75);
  ASSERT_EQ(back.heads.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.heads[i].name, m.heads[i].name);
    EXPECT_EQ(back.heads[i].condition_names, m.heads[i].condition_names);
    EXPECT_EQ(back.heads[i].weights, m.heads[i].weights);
    EXPECT_EQ(back.heads[i].bias, m.heads[i].bias);
  }
  const auto manifest = io::read_json(dir / "manifest.json");
  EXPECT_EQ(manifest.at("l").get<int>(), 4);
  EXPECT_EQ(manifest.at("g").get<int>(), 7);
  EXPECT_EQ(manifest.at("studies")[1].at("k_d").get<int>(), 3);
}

TEST(Io, CorruptManifestIsReported) {
  const auto dir = fresh_dir("corrupt");
  io::atomic_write(dir / "manifest.json", "{ not json");
  try {
    io::read_checkpoint(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
  }
  try {
    io::read_dataset(dir / "nowhere");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
}

TEST(Io, ReportFormatsOmitTiming) {
  ExperimentReport rep;
  rep.config_hash = "abc";
  rep.timestamp = "2020-01-01T00:00:00Z";
  ExperimentRecord r;
  r.variant = 4;
  r.target = "t";
  r.train_subjects = 10;
  r.fold = 2;
  r.fold_seed = 2;
  r.test_accuracy = 0.1;
  r.wall_time = 3.5;
  rep.records.push_back(r);
  const auto csv = io::report_csv(rep);
  EXPECT_EQ(csv,
            "variant,target,projection,train_subjects,fold,fold_seed,test_accuracy,selected_penalty\n"
            "4,t,default,10,2,2,0.10000000000000001,0\n");
  const auto j = io::report_json(rep);
  EXPECT_EQ(j.at("metadata").at("config_hash"), "abc");
  EXPECT_FALSE(j.dump().find("wall_time") != std::string::npos);
  EXPECT_FALSE(j.dump().find("2020") != std::string::npos);
  const auto t = io::timings_json(rep);
  EXPECT_EQ(t.at("records")[0].at("wall_time").get<double>(), 3.5);
}

TEST(Io, TraceCsvUsesStudyNames) {
  FactoredModel m(2, 2, 0.0);
  m.add_study("alpha", {"a", "b"});
  m.add_study("beta", {"a", "b"});
  const std::vector<TraceEntry> trace = {{0, 0, 0.5}, {1, 1, 0.25}};
  EXPECT_EQ(io::trace_csv(trace, m), "iteration,study,loss\n0,alpha,0.5\n1,beta,0.25\n");
}

TEST(Io, TemplatesAndMapsFiles) {
  Rng rng(4);
  const auto dicts = synthetic_dictionaries(small_config());
  const auto op = assemble_multiscale(dicts);
  FactoredModel m(op.total_dim(), 3, 0.0);
  m.add_study("a", {"c0", "c1", "c2"});
  initialize(m, rng);
  const auto dir = fresh_dir("introspect");
  io::write_maps(dir, collapse(m, op, 0));
  EXPECT_EQ(read_matrix(dir / "a_maps.ndt").rows(), 60);
  Matrix centroids = Matrix::Zero(2, op.total_dim());
  centroids(1, 0) = 1.0;
  const auto templates = make_templates(m, op, dicts, centroids, {1, 4});
  io::write_templates(dir, templates, m, 2);
  const auto j = io::read_json(dir / "templates.json");
  ASSERT_EQ(j.at("templates").size(), 2u);
  EXPECT_EQ(j.at("templates")[0].at("size").get<int>(), 4);
  EXPECT_EQ(j.at("templates")[0].at("studies")[0].at("top_conditions").size(), 2u);
  EXPECT_EQ(read_vector(dir / "t_000.ndt"), templates[0].image);
}

TEST(Io, HashIsStable) {
  EXPECT_EQ(io::fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(io::fnv1a_hex("a"), "af63dc4c8601ec8c");
}
