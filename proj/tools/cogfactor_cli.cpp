// cogfactor command-line driver.
//
// Every subcommand writes under --out DIR and echoes its resolved parameters
// to DIR/config.json. Parameter precedence: flags > --config JSON > defaults,
// with COGFACTOR_SEED replacing the built-in default seed. Failures print one
// JSON object on stderr and exit with status 2.

#include "cogfactor/cogfactor.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>

using namespace cogfactor;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

/// Options of one subcommand, mirrored into a flat JSON object.
class Params {
 public:
  explicit Params(CLI::App* app) : app_(app) {}

  template <typename T>
  CLI::Option* add(const std::string& key, T& var, const std::string& help, bool is_path = false) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    CLI::Option* opt = app_->add_option(flag, var, help)->capture_default_str();
    if constexpr (requires { var.push_back(var.front()); } && !std::is_same_v<T, std::string>) opt->delimiter(',');
    entries_.push_back({key, opt, is_path, [&var](const json& j) { var = j.get<T>(); },
                        [&var](json& out, const std::string& k) { out[k] = var; }});
    return opt;
  }

  /// Fills options not given on the command line from the config file.
  void resolve(const std::string& config_path) {
    if (config_path.empty()) return;
    const json cfg = io::read_json(config_path);
    require(cfg.is_object(), ErrorCode::InvalidConfig, config_path + ": expected a JSON object");
    for (const auto& [key, value] : cfg.items()) {
      if (key == "command") continue;
      const auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == key; });
      require(it != entries_.end(), ErrorCode::InvalidConfig, config_path + ": unknown key '" + key + "'");
      if (it->opt->count() > 0) continue;
      try {
        it->load(value);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, config_path + ": key '" + key + "': " + e.what());
      }
    }
  }

  json dump(const std::string& command) const {
    json out;
    out["command"] = command;
    for (const auto& e : entries_) e.save(out, e.key);
    return out;
  }

  /// Hash of the non-path parameters, so relocated inputs and outputs keep the same hash.
  std::string hash(const std::string& command) const {
    json out;
    out["command"] = command;
    for (const auto& e : entries_)
      if (!e.is_path) e.save(out, e.key);
    return io::fnv1a_hex(out.dump());
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* opt;
    bool is_path;
    std::function<void(const json&)> load;
    std::function<void(json&, const std::string&)> save;
  };
  CLI::App* app_;
  std::vector<Entry> entries_;
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("COGFACTOR_SEED"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const auto v = std::strtoull(env, &end, 10);
    require(end != nullptr && *end == '\0', ErrorCode::InvalidConfig,
            std::string("COGFACTOR_SEED is not an unsigned integer: ") + env);
    return v;
  }
  return 0;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void require_exists(const std::string& path, const std::string& what) {
  require(!path.empty(), ErrorCode::InvalidConfig, what + " path is required");
  require(fs::exists(path), ErrorCode::IoError, what + " not found: " + path);
}

/// A dataset directory, a directory of dataset directories, or a gen-synth/project output root.
std::vector<StudyDataset> load_datasets(const std::string& path) {
  require_exists(path, "data");
  fs::path root(path);
  if (fs::exists(root / "manifest.json")) return {io::read_dataset(root)};
  if (fs::is_directory(root / "datasets")) root /= "datasets";
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  require(!dirs.empty(), ErrorCode::IoError, "no datasets under " + path);
  std::vector<StudyDataset> out;
  for (const auto& d : dirs) out.push_back(io::read_dataset(d));
  return out;
}

/// Sidecar or tensor paths; a directory contributes its *.json sidecars in name order.
std::vector<Dictionary> load_dictionaries(const std::vector<std::string>& paths) {
  std::vector<Dictionary> out;
  for (const auto& p : paths) {
    require_exists(p, "dictionary");
    if (!fs::is_directory(p)) {
      out.push_back(io::read_dictionary(p));
      continue;
    }
    std::vector<fs::path> sidecars;
    for (const auto& entry : fs::directory_iterator(p))
      if (entry.path().extension() == ".json") sidecars.push_back(entry.path());
    std::sort(sidecars.begin(), sidecars.end());
    require(!sidecars.empty(), ErrorCode::IoError, "no dictionary sidecars in " + p);
    for (const auto& s : sidecars) out.push_back(io::read_dictionary(s));
  }
  return out;
}

std::vector<StudyDataset> reduce_all(const std::vector<StudyDataset>& data, const std::vector<std::string>& dict_paths) {
  const bool all_reduced = std::all_of(data.begin(), data.end(),
                                       [](const auto& d) { return d.representation == Representation::Reduced; });
  if (all_reduced) return data;
  require(!dict_paths.empty(), ErrorCode::InvalidConfig, "raw datasets need --dict to be projected");
  const auto op = assemble_multiscale(load_dictionaries(dict_paths));
  std::vector<StudyDataset> out;
  for (const auto& ds : data)
    out.push_back(ds.representation == Representation::Reduced ? ds : project_dataset(op, ds));
  return out;
}

std::vector<StudyDataset> require_raw(const std::vector<StudyDataset>& data) {
  for (const auto& ds : data)
    require(ds.representation == Representation::Raw, ErrorCode::InvalidArgument,
            "dataset '" + ds.name + "' is reduced; this command needs raw samples");
  return data;
}

std::string smallest_study(const std::vector<StudyDataset>& data) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < data.size(); ++i)
    if (data[i].distinct_subjects().size() < data[best].distinct_subjects().size()) best = i;
  return data[best].name;
}

SynthStudy parse_study(const std::string& spec) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto colon = spec.find(':', start);
    parts.push_back(spec.substr(start, colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  require(parts.size() == 3 || parts.size() == 4, ErrorCode::InvalidConfig,
          "study spec '" + spec + "' is not name:conditions:subjects[:samples_per_condition]");
  try {
    return {parts[0], std::stoll(parts[1]), std::stoll(parts[2]), parts.size() == 4 ? std::stoll(parts[3]) : 1};
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, "study spec '" + spec + "' has a non-integer field");
  }
}

std::string format_study(const SynthStudy& s) {
  return s.name + ":" + std::to_string(s.conditions) + ":" + std::to_string(s.subjects) + ":" +
         std::to_string(s.samples_per_condition);
}

/// Shared training flags of the factored model.
struct TrainFlags {
  std::int64_t iterations = 3000;
  std::int64_t batch_size = 256;
  std::int64_t latent_dim = 100;
  double dropout = 0.75;
  double lr = 1e-3;
  double l2 = 0.0;

  void add(Params& p) {
    p.add("iterations", iterations, "Adam steps of the factored model");
    p.add("batch_size", batch_size, "samples per batch");
    p.add("latent_dim", latent_dim, "latent dimension l");
    p.add("dropout", dropout, "latent dropout rate r");
    p.add("lr", lr, "Adam learning rate");
    p.add("l2", l2, "l2 penalty on the factored weights");
  }

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig c;
    c.max_iterations = iterations;
    c.batch_size = batch_size;
    c.dropout_rate = dropout;
    c.lr = lr;
    c.l2 = l2;
    c.seed = seed;
    return c;
  }
};

/// Shared flags of the experiment harnesses.
struct ExperimentFlags {
  TrainFlags train;
  std::int64_t baseline_iterations = 600;
  double test_fraction = 0.5;
  std::vector<double> l2_grid = ExperimentConfig{}.l2_grid;
  std::vector<double> dropout_grid = ExperimentConfig{}.input_dropout_grid;
  int inner_folds = 3;
  int folds = 20;

  void add(Params& p) {
    train.add(p);
    p.add("baseline_iterations", baseline_iterations, "Adam steps of the plain baselines (variants 1-3)");
    p.add("test_fraction", test_fraction, "fraction of subjects held out per fold");
    p.add("l2_grid", l2_grid, "l2 grid for variants 1-2");
    p.add("dropout_grid", dropout_grid, "input-dropout grid for variant 3");
    p.add("inner_folds", inner_folds, "inner subject folds for penalty selection");
    p.add("folds", folds, "outer folds");
  }

  ExperimentConfig config(std::uint64_t seed, int jobs) const {
    ExperimentConfig c;
    c.train = train.config(seed);
    c.baseline_iterations = baseline_iterations;
    c.latent_dim = train.latent_dim;
    c.test_fraction = test_fraction;
    c.base_seed = seed;
    c.l2_grid = l2_grid;
    c.input_dropout_grid = dropout_grid;
    c.inner_folds = inner_folds;
    c.jobs = jobs;
    return c;
  }
};

struct Command {
  CLI::App* app = nullptr;
  std::unique_ptr<Params> params;
  std::string out;
  std::string config;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::function<void(Command&)> run;

  void begin() {
    params->resolve(config);
    require(!out.empty(), ErrorCode::InvalidConfig, "--out is required");
    require(jobs >= 1, ErrorCode::InvalidConfig, "--jobs must be >= 1");
    fs::create_directories(out);
  }

  void echo_config() const { io::atomic_write_json(fs::path(out) / "config.json", params->dump(app->get_name())); }

  void log(const std::string& msg) const { std::cerr << "[" << app->get_name() << "] " << msg << "\n"; }
};

Command& add_command(CLI::App& root, std::vector<std::unique_ptr<Command>>& cmds, const std::string& name,
                     const std::string& description, bool with_jobs) {
  auto cmd = std::make_unique<Command>();
  cmd->app = root.add_subcommand(name, description);
  cmd->params = std::make_unique<Params>(cmd->app);
  cmd->seed = default_seed();
  cmd->params->add("out", cmd->out, "output directory", true)->required();
  cmd->app->add_option("--config", cmd->config, "JSON file of parameters; flags take precedence");
  cmd->params->add("seed", cmd->seed, "random seed (default from COGFACTOR_SEED, else 0)");
  if (with_jobs) cmd->params->add("jobs", cmd->jobs, "worker threads for independent folds", true);
  cmds.push_back(std::move(cmd));
  return *cmds.back();
}

void write_report(const Command& c, ExperimentReport report) {
  report.config_hash = c.params->hash(c.app->get_name());
  report.timestamp = utc_timestamp();
  io::write_report(c.out, report);
  for (const auto& s : summarize(report)) {
    std::ostringstream os;
    os << "target=" << s.target << " projection=" << s.projection << " n=" << s.train_subjects
       << " variant=" << s.variant << " mean=" << s.mean << " sd=" << s.stddev << " folds=" << s.folds;
    c.log(os.str());
  }
}

// ---------------------------------------------------------------------------

void setup_gen_synth(CLI::App& root, std::vector<std::unique_ptr<Command>>& cmds) {
  auto& c = add_command(root, cmds, "gen-synth", "Generate synthetic multi-study data and its dictionaries", false);
  auto s = std::make_shared<SynthConfig>();
  auto studies = std::make_shared<std::vector<std::string>>();
  for (const auto& st : s->studies) studies->push_back(format_study(st));
  auto& p = *c.params;
  p.add("voxels", s->voxels, "voxel count p");
  p.add("latent_dim", s->latent_dim, "generative latent dimension");
  p.add("studies", *studies, "studies as name:conditions:subjects[:samples_per_condition]");
  p.add("subject_noise", s->subject_noise, "subject offset scale");
  p.add("subject_rank", s->subject_rank, "rank of the subject offset subspace");
  p.add("trial_noise", s->trial_noise, "per-sample voxel noise");
  p.add("shared_fraction", s->shared_fraction, "fraction of conditions drawn from the shared pool");
  p.add("signal_scale", s->signal_scale, "norm of each generative basis column");
  p.add("dictionary_sizes", s->dictionary_sizes, "components per dictionary scale, coarse to fine");
  p.add("atoms_per_scale", s->atoms_per_scale, "atoms mixed into each basis column per scale");
  p.add("fine_coverage", s->fine_coverage, "fraction of each cell covered by fine-scale atoms");
  c.run = [s, studies](Command& c) {
    s->studies.clear();
    for (const auto& spec : *studies) s->studies.push_back(parse_study(spec));
    s->seed = c.seed;
    c.echo_config();
    const auto data = generate_synthetic(*s);
    const fs::path out(c.out);
    for (const auto& ds : data.studies) io::write_dataset(out / "datasets" / ds.name, ds);
    for (const auto& d : data.truth.dictionaries) io::write_dictionary(out / "dictionaries" / d.name(), d);
    c.log("wrote " + std::to_string(data.studies.size()) + " datasets and " +
          std::to_string(data.truth.dictionaries.size()) + " dictionaries");
  };
}

void setup_project(CLI::App& root, std::vector<std::unique_ptr<Command>>& cmds) {
  auto& c = add_command(root, cmds, "project", "Project raw datasets onto multi-scale dictionary loadings", false);
  auto data = std::make_shared<std::string>();
  auto dicts = std::make_shared<std::vector<std::string>>();
  c.params->add("data", *data, "raw dataset directory", true);
  c.params->add("dict", *dicts, "dictionary sidecars/tensors or directories, coarse to fine", true);
  c.run = [data, dicts](Command& c) {
    require_exists(*data, "data");
    require(!dicts->empty(), ErrorCode::InvalidConfig, "--dict is required");
    for (const auto& d : *dicts) require_exists(d, "dictionary");
    c.echo_config();
    const auto raw = require_raw(load_datasets(*data));
    const auto op = assemble_multiscale(load_dictionaries(*dicts));
    json blocks = json::array();
    for (const auto& b : op.blocks()) blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"width", b.width}});
    for (const auto& ds : raw) io::write_dataset(fs::path(c.out) / "datasets" / ds.name, project_dataset(op, ds));
    io::atomic_write_json(fs::path(c.out) / "projection.json",
                          {{"p", op.voxels()}, {"g", op.total_dim()}, {"blocks", blocks}});
    c.log("projected " + std::to_string(raw.size()) + " datasets to g=" + std::to_string(op.total_dim()));
  };
}

void setup_train(CLI::App& root, std::vector<std::unique_ptr<Command>>& cmds) {
  auto& c = add_command(root, cmds, "train", "Train the factored model on every given study", false);
  auto data = std::make_shared<std::string>();
  auto dicts = std::make_shared<std::vector<std::string>>();
  auto flags = std::make_shared<TrainFlags>();
  auto studies = std::make_shared<std::vector<std::string>>();
  auto log_every = std::make_shared<std::int64_t>(500);
  c.params->add("data", *data, "dataset directory (reduced, or raw with --dict)", true);
  c.params->add("dict", *dicts, "dictionaries used when the data is raw", true);
  c.params->add("studies", *studies, "subset of study names (default: all)");
  c.params->add("log_every", *log_every, "log one loss line every N iterations (0: never)");
  flags->add(*c.params);
  c.run = [=](Command& c) {
    require_exists(*data, "data");
    c.echo_config();
    auto all = reduce_all(load_datasets(*data), *dicts);
    std::vector<StudyDataset> chosen;
    if (studies->empty()) {
      chosen = all;
    } else {
      for (const auto& name : *studies) chosen.push_back(all[detail::find_study(all, name)]);
    }
    FactoredModel model(chosen.front().dim(), flags->latent_dim, flags->dropout);
    for (const auto& ds : chosen) {
      ds.validate();
      model.add_study(ds.name, ds.condition_names);
    }
    Rng rng(c.seed);
    initialize(model, rng);
    std::vector<TrainSet> sets;
    for (std::size_t i = 0; i < chosen.size(); ++i) sets.push_back({i, chosen[i].samples, chosen[i].labels});
    const auto trace = train(model, sets, flags->config(c.seed), rng, [&](const TraceEntry& e) {
      if (*log_every > 0 && (e.iteration + 1) % *log_every == 0)
        c.log("iteration " + std::to_string(e.iteration + 1) + " study " + model.heads[e.study].name +
              " loss " + io::format_double(e.loss));
    });
    io::write_checkpoint(fs::path(c.out) / "checkpoint", model);
    io::atomic_write(fs::path(c.out) / "trace.csv", io::trace_csv(trace, model));
    c.log("trained " + std::to_string(trace.size()) + " iterations on " + std::to_string(chosen.size()) + " studies");
  };
}

void setup_evaluate(CLI::App& root, std::vector<std::unique_ptr<Command>>& cmds) {
  auto& c = add_command(root, cmds, "evaluate", "Accuracy of a checkpoint on datasets whose names match its heads", false);
  auto ckpt = std::make_shared<std::string>();
  auto data = std::make_shared<std::string>();
  auto dicts = std::make_shared<std::vector<std::string>>();
  c.params->add("checkpoint", *ckpt, "checkpoint directory", true);
  c.params->add("data", *data, "dataset directory (reduced, or raw with --dict)", true);
  c.params->add("dict", *dicts, "dictionaries used when the data is raw", true);
  c.run = [=](Command& c) {
    require_exists(*ckpt, "checkpoint");
    require_exists(*data, "data");
    c.echo_config();
    const auto model = io::read_checkpoint(*ckpt);
    const auto sets = reduce_all(load_datasets(*data), *dicts);
    json results = json::array();
    for (const auto& ds : sets) {
      const StudyId id = model.study_index(ds.name);
      const double acc = accuracy(model, id, ds.samples, ds.labels);
      results.push_back({{"study", ds.name}, {"n", ds.size()}, {"accuracy", acc}});
      c.log(ds.name + " accuracy " + io::format_double(acc));
    }
    io::atomic_write_json(fs::path(c.out) / "evaluation.json", {{"results", results}});
  };
}

void setup_ablate(CLI::App& root, std::vector<std::unique_ptr<Command>>& cmds) {
  auto& c = add_command(root, cmds, "ablate", "Six-variant ablation on one target study", true);
  auto data = std::make_shared<std::string>();
  auto dicts = std::make_shared<std::vector<std::string>>();
  auto target = std::make_shared<std::string>();
  auto variants = std::make_shared<std::vector<int>>(std::vector<int>{1, 2, 3, 4, 5, 6});
  auto flags = std::make_shared<ExperimentFlags>();
  c.params->add("data", *data, "raw dataset directory", true);
  c.params->add("dict", *dicts, "dictionaries, coarse to fine", true);
  c.params->add("target", *target, "target study (default: the one with fewest subjects)");
  c.params->add("variants", *variants, "variants to run, from 1-6");
  flags->add(*c.params);
  c.run = [=](Command& c) {
    require_exists(*data, "data");
    require(!dicts->empty(), ErrorCode::InvalidConfig, "--dict is required");
    const auto raw = require_raw(load_datasets(*data));
    if (target->empty()) *target = smallest_study(raw);
    c.echo_config();
    const auto op = assemble_multiscale(load_dictionaries(*dicts));
    write_report(c, run_ablation(raw, op, *target, flags->config(c.seed, c.jobs), *variants, flags->folds));
  };
}

void setup_curves(CLI::App& root, std::vector<std::unique_ptr<Command>>& cmds) {
  auto& c = add_command(root, cmds, "curves", "Transfer gain (variant 6 - variant 4) against target train size", true);
  auto data = std::make_shared<std::string>();
  auto dicts = std::make_shared<std::vector<std::string>>();
  auto target = std::make_shared<std::string>();
  auto grid = std::make_shared<std::vector<std::int64_t>>();
  auto flags = std::make_shared<ExperimentFlags>();
  c.params->add("data", *data, "dataset directory (reduced, or raw with --dict)", true);
  c.params->add("dict", *dicts, "dictionaries used when the data is raw", true);
  c.params->add("target", *target, "target study (default: the one with most subjects)");
  c.params->add("grid", *grid, "train-subject counts (default: 5, 10, 20 and all train subjects)");
  flags->add(*c.params);
  c.run = [=](Command& c) {
    require_exists(*data, "data");
    const auto reduced = reduce_all(load_datasets(*data), *dicts);
    if (target->empty()) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < reduced.size(); ++i)
        if (reduced[i].distinct_subjects().size() > reduced[best].distinct_subjects().size()) best = i;
      *target = reduced[best].name;
    }
    const auto& tds = reduced[detail::find_study(reduced, *target)];
    const auto n = static_cast<std::int64_t>(tds.distinct_subjects().size());
    const auto n_train = n - std::min<std::int64_t>(
                                 static_cast<std::int64_t>(std::ceil(flags->test_fraction * n - 1e-12)), n - 1);
    if (grid->empty()) {
      for (const std::int64_t g : std::vector<std::int64_t>{5, 10, 20, n_train})
        if (g <= n_train) grid->push_back(g);
      std::sort(grid->begin(), grid->end());
      grid->erase(std::unique(grid->begin(), grid->end()), grid->end());
    }
    c.echo_config();
    write_report(c, learning_curve(reduced, *target, *grid, flags->config(c.seed, c.jobs), flags->folds));
  };
}

void setup_multiscale(CLI::App& root, std::vector<std::unique_ptr<Command>>& cmds) {
  auto& c = add_command(root, cmds, "multiscale", "Variant 6 under single- vs multi-scale projection", true);
  auto data = std::make_shared<std::string>();
  auto dicts = std::make_shared<std::vector<std::string>>();
  auto single = std::make_shared<std::vector<std::string>>();
  auto target = std::make_shared<std::string>();
  auto flags = std::make_shared<ExperimentFlags>();
  c.params->add("data", *data, "raw dataset directory", true);
  c.params->add("dict", *dicts, "multi-scale dictionaries, coarse to fine", true);
  c.params->add("single_dict", *single, "single-scale dictionary (default: the finest of --dict)", true);
  c.params->add("target", *target, "target study (default: the one with fewest subjects)");
  flags->add(*c.params);
  c.run = [=](Command& c) {
    require_exists(*data, "data");
    require(!dicts->empty(), ErrorCode::InvalidConfig, "--dict is required");
    const auto raw = require_raw(load_datasets(*data));
    if (target->empty()) *target = smallest_study(raw);
    c.echo_config();
    const auto multi = load_dictionaries(*dicts);
    const auto single_dicts = single->empty() ? std::vector<Dictionary>{multi.back()} : load_dictionaries(*single);
    write_report(c, multiscale_benchmark(raw, assemble_multiscale(single_dicts), assemble_multiscale(multi), *target,
                                         flags->config(c.seed, c.jobs), flags->folds));
  };
}

void setup_introspect(CLI::App& root, std::vector<std::unique_ptr<Command>>& cmds) {
  auto& c = add_command(root, cmds, "introspect", "Collapsed classification maps and latent k-means templates", false);
  auto ckpt = std::make_shared<std::string>();
  auto data = std::make_shared<std::string>();
  auto dicts = std::make_shared<std::vector<std::string>>();
  auto clusters = std::make_shared<std::int64_t>(50);
  auto restarts = std::make_shared<int>(10);
  auto max_iter = std::make_shared<int>(300);
  auto top = std::make_shared<std::size_t>(5);
  c.params->add("checkpoint", *ckpt, "checkpoint directory", true);
  c.params->add("data", *data, "dataset directory clustered in projected space", true);
  c.params->add("dict", *dicts, "dictionaries the checkpoint was trained on, coarse to fine", true);
  c.params->add("clusters", *clusters, "k-means clusters");
  c.params->add("restarts", *restarts, "k-means++ restarts");
  c.params->add("max_iter", *max_iter, "Lloyd iterations per restart");
  c.params->add("top", *top, "conditions listed per study and template");
  c.run = [=](Command& c) {
    require_exists(*ckpt, "checkpoint");
    require_exists(*data, "data");
    require(!dicts->empty(), ErrorCode::InvalidConfig, "--dict is required");
    c.echo_config();
    const auto model = io::read_checkpoint(*ckpt);
    const auto dict_list = load_dictionaries(*dicts);
    const auto op = assemble_multiscale(dict_list);
    const auto reduced = reduce_all(load_datasets(*data), *dicts);
    for (StudyId s = 0; s < model.studies(); ++s) io::write_maps(fs::path(c.out) / "maps", collapse(model, op, s));

    Eigen::Index rows = 0;
    for (const auto& ds : reduced) {
      require(ds.dim() == op.total_dim(), ErrorCode::ShapeMismatch, "dataset '" + ds.name + "' is not g-dimensional");
      rows += ds.size();
    }
    Matrix z(rows, op.total_dim());
    Eigen::Index at = 0;
    for (const auto& ds : reduced) {
      z.middleRows(at, ds.size()) = ds.samples;
      at += ds.size();
    }
    const auto km = kmeans(z, *clusters, c.seed, *max_iter, *restarts);
    const auto templates = make_templates(model, op, dict_list, km.centroids, km.cluster_sizes());
    io::write_templates(fs::path(c.out) / "templates", templates, model, *top);
    c.log("wrote maps for " + std::to_string(model.studies()) + " studies and " + std::to_string(templates.size()) +
          " templates (inertia " + io::format_double(km.inertia()) + ")");
  };
}

void fail(const std::string& code, const std::string& message, const std::string& command) {
  json err = {{"error", code}, {"message", message}};
  if (!command.empty()) err["command"] = command;
  std::cerr << err.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cogfactor: multi-study factored decoding of brain maps"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::vector<std::unique_ptr<Command>> cmds;
  std::string active;
  try {
    setup_gen_synth(app, cmds);
    setup_project(app, cmds);
    setup_train(app, cmds);
    setup_evaluate(app, cmds);
    setup_ablate(app, cmds);
    setup_curves(app, cmds);
    setup_multiscale(app, cmds);
    setup_introspect(app, cmds);
  } catch (const Error& e) {
    fail(std::string(to_string(e.code())), e.what(), "");
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("UsageError", e.what(), "");
    return 2;
  }
  try {
    for (auto& c : cmds) {
      if (!c->app->parsed()) continue;
      active = c->app->get_name();
      c->begin();
      c->run(*c);
    }
  } catch (const Error& e) {
    fail(std::string(to_string(e.code())), e.what(), active);
    return 2;
  } catch (const std::exception& e) {
    fail("InternalError", e.what(), active);
    return 2;
  }
  return 0;
}
