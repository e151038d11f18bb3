// tomoheight: command-line recipes over the library.
#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Core>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tomoheight/fileio.hpp"
#include "tomoheight/geosplit.hpp"
#include "tomoheight/hpo.hpp"
#include "tomoheight/metrics.hpp"
#include "tomoheight/recon.hpp"
#include "tomoheight/synth.hpp"
#include "tomoheight/tabular.hpp"
#include "tomoheight/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tomoheight;

namespace {

/// Removes every output path it created unless `commit()` runs first.
class OutputGuard {
 public:
  OutputGuard() = default;
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;
  ~OutputGuard() {
    if (committed_) return;
    for (auto it = created_.rbegin(); it != created_.rend(); ++it) {
      std::error_code ec;
      fs::remove_all(*it, ec);
    }
  }

  /// Registers a file about to be written.
  fs::path file(const fs::path& path) {
    if (!fs::exists(path)) created_.push_back(path);
    if (path.has_parent_path()) dir(path.parent_path());
    return path;
  }

  /// Creates `path` (and missing parents) if needed.
  fs::path dir(const fs::path& path) {
    if (path.empty() || fs::exists(path)) return path;
    dir(path.parent_path());
    fs::create_directory(path);
    created_.push_back(path);
    return path;
  }

  void write(const fs::path& path, std::string_view bytes) { fileio::write_file(file(path), bytes); }
  void commit() { committed_ = true; }

 private:
  std::vector<fs::path> created_;
  bool committed_ = false;
};

json read_json(const fs::path& path) {
  const std::string text = fileio::read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, path.string() + ": " + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) fail(Errc::ConfigError, where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) fail(Errc::ConfigError, "unknown key '" + key + "' in " + where);
  }
}

std::set<std::string> keys_of(const json& j) {
  std::set<std::string> out;
  for (const auto& [key, value] : j.items()) out.insert(key);
  return out;
}

const json* section(const json& cfg, const char* name) {
  auto it = cfg.find(name);
  return it == cfg.end() ? nullptr : &*it;
}

json to_json(const synth::SceneParams& p) {
  return {{"seed", p.seed},
          {"nx", p.nx},
          {"ny", p.ny},
          {"height_lo_m", p.height_lo_m},
          {"height_hi_m", p.height_hi_m},
          {"correlation_length_px", p.correlation_length_px},
          {"ground_amp", p.ground_amp},
          {"canopy_amp", p.canopy_amp},
          {"ground_sigma_m", p.ground_sigma_m},
          {"canopy_sigma_m", p.canopy_sigma_m},
          {"noise_rel", p.noise_rel},
          {"gap_fraction", p.gap_fraction}};
}

std::set<std::string> scene_keys() {
  std::set<std::string> keys = keys_of(to_json(synth::SceneParams{}));
  keys.insert({"band", "pols"});
  return keys;
}

/// Loads an experiment document; top-level sections are scene, split, tabular, cnn, sweep and
/// outputs. An empty path yields an empty document.
json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  json cfg = read_json(path);
  check_keys(cfg, {"scene", "split", "tabular", "cnn", "sweep", "outputs"}, "config");
  if (const json* s = section(cfg, "split")) check_keys(*s, keys_of(trainer::to_json(geosplit::SplitSpec{})), "split");
  if (const json* c = section(cfg, "cnn")) {
    check_keys(*c, {"train", "model", "pols"}, "cnn");
    if (const json* t = section(*c, "train")) check_keys(*t, keys_of(trainer::to_json(trainer::TrainConfig{})), "cnn.train");
    if (const json* m = section(*c, "model")) check_keys(*m, keys_of(volnet::to_json(volnet::ModelSpec{})), "cnn.model");
  }
  if (const json* t = section(cfg, "tabular")) check_keys(*t, {"include_xy", "pols"}, "tabular");
  if (const json* s = section(cfg, "sweep")) check_keys(*s, {"space", "options", "objective"}, "sweep");
  if (const json* o = section(cfg, "outputs")) check_keys(*o, {"heatmaps"}, "outputs");
  if (const json* s = section(cfg, "scene")) check_keys(*s, scene_keys(), "scene");
  return cfg;
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

struct SceneRecipe {
  synth::SceneParams params;
  BandId band = BandId::P;
  PolarizationSet pols{Polarization::HH, Polarization::HV, Polarization::VV};
};

SceneRecipe scene_recipe(const json& cfg) {
  SceneRecipe r;
  const json* s = section(cfg, "scene");
  if (!s) return r;
  try {
    read_opt(*s, "seed", r.params.seed);
    read_opt(*s, "nx", r.params.nx);
    read_opt(*s, "ny", r.params.ny);
    read_opt(*s, "height_lo_m", r.params.height_lo_m);
    read_opt(*s, "height_hi_m", r.params.height_hi_m);
    read_opt(*s, "correlation_length_px", r.params.correlation_length_px);
    read_opt(*s, "ground_amp", r.params.ground_amp);
    read_opt(*s, "canopy_amp", r.params.canopy_amp);
    read_opt(*s, "ground_sigma_m", r.params.ground_sigma_m);
    read_opt(*s, "canopy_sigma_m", r.params.canopy_sigma_m);
    read_opt(*s, "noise_rel", r.params.noise_rel);
    read_opt(*s, "gap_fraction", r.params.gap_fraction);
    if (s->contains("band")) r.band = parse_band(s->at("band").get<std::string>());
    if (s->contains("pols")) r.pols = parse_polarization_set(s->at("pols").get<std::string>());
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, std::string("scene: ") + e.what());
  }
  return r;
}

std::vector<double> parse_numbers(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size()) {
      fail(Errc::BadSpec, std::string(what) + ": '" + item + "' is not a number");
    }
    out.push_back(v);
  }
  return out;
}

/// Positive integer from TOMOHEIGHT_THREADS; 0 when unset.
Index thread_cap() {
  const char* env = std::getenv("TOMOHEIGHT_THREADS");
  if (!env || !*env) return 0;
  Index n = 0;
  const std::string_view s(env);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
  if (ec != std::errc() || ptr != s.data() + s.size() || n < 1) {
    fail(Errc::ConfigError, "TOMOHEIGHT_THREADS must be a positive integer");
  }
  return n;
}

std::string canonical_backbone(const std::string& s) {
  if (s == "model1" || s == "Model1") return "Model1";
  if (s == "model2" || s == "Model2") return "Model2";
  if (s == "model3" || s == "Model3") return "Model3";
  fail(Errc::ConfigError, "unknown model '" + s + "'");
}

std::string canonical_collapse(const std::string& s) {
  if (s == "conv" || s == "ConvZ") return "ConvZ";
  if (s == "gap" || s == "GapZ") return "GapZ";
  if (s == "progressive" || s == "ProgressiveZ") return "ProgressiveZ";
  fail(Errc::ConfigError, "unknown collapse head '" + s + "'");
}

AlignedScene restrict_pols(AlignedScene scene, const std::optional<PolarizationSet>& pols) {
  if (!pols || *pols == scene.cube.pols) return scene;
  scene.cube = select_polarizations(scene.cube, *pols);
  return scene;
}

// ---- synth ------------------------------------------------------------------------------------

struct SynthArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void cmd_synth(const SynthArgs& a) {
  const json cfg = load_config(a.config);
  SceneRecipe r = scene_recipe(cfg);
  if (a.seed) r.params.seed = *a.seed;
  const AlignedScene scene = synth::gen_scene(r.params, r.band, r.pols);

  OutputGuard guard;
  const fs::path dir = guard.dir(a.out);
  guard.file(dir / fileio::kSceneCubeFile);
  guard.file(dir / fileio::kSceneChmFile);
  fileio::write_scene(scene, dir);
  json meta = to_json(r.params);
  meta["band"] = to_string(r.band);
  meta["pols"] = to_string(r.pols);
  guard.write(dir / "scene.json", meta.dump(2) + "\n");
  guard.commit();
  std::cout << "scene " << scene.nx() << "x" << scene.ny() << " " << to_string(r.band) << " "
            << to_string(r.pols) << " -> " << dir.string() << "\n";
}

// ---- split ------------------------------------------------------------------------------------

struct SplitArgs {
  std::string config;
  std::string scene;
  Index nx = 0;
  Index ny = 0;
  std::string strategy = "quadrant";
  std::string ratios;
  std::string orientation = "along-range";
  std::string test_origin;
  bool ratio_exact = false;
  bool tabular = false;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void cmd_split(const SplitArgs& a) {
  const json cfg = load_config(a.config);
  geosplit::SplitSpec spec;
  if (const json* s = section(cfg, "split")) {
    spec = trainer::split_spec_from_json(*s);
  } else {
    const auto strategy = geosplit::parse_strategy(a.strategy);
    if (strategy == geosplit::Strategy::Quadrant) {
      spec = a.tabular ? geosplit::SplitSpec::tabular_quadrant() : geosplit::SplitSpec::cnn_quadrant();
    } else if (strategy == geosplit::Strategy::Square) {
      spec = geosplit::SplitSpec::square();
    } else {
      spec = geosplit::SplitSpec::swath(0.2, geosplit::parse_orientation(a.orientation));
    }
    if (!a.ratios.empty()) {
      const auto r = parse_numbers(a.ratios, "--ratios");
      if (r.size() != 3) fail(Errc::BadSpec, "--ratios needs train,val,test");
      spec.ratios = {r[0], r[1], r[2]};
    }
    if (!a.test_origin.empty()) {
      const auto o = parse_numbers(a.test_origin, "--test-origin");
      if (o.size() != 2) fail(Errc::BadSpec, "--test-origin needs x,y");
      spec.test_origin = geosplit::PixelCoord{static_cast<Index>(o[0]), static_cast<Index>(o[1])};
    }
    spec.ratio_exact = a.ratio_exact;
  }
  if (a.seed) spec.seed = *a.seed;
  geosplit::validate(spec);

  Index nx = a.nx;
  Index ny = a.ny;
  if (!a.scene.empty()) {
    const auto chm = fileio::read_chm(fs::path(a.scene) / fileio::kSceneChmFile);
    nx = chm.nx;
    ny = chm.ny;
  }
  if (nx <= 0 || ny <= 0) fail(Errc::ConfigError, "give --scene or positive --nx and --ny");

  const SplitAssignment split = geosplit::make_split(nx, ny, spec);
  OutputGuard guard;
  guard.write(a.out, fileio::encode_split(split));
  guard.commit();
  const auto leak = geosplit::leakage_report(split);
  std::cout << "train " << split.count(SplitLabel::Train) << " val " << split.count(SplitLabel::Val) << " test "
            << split.count(SplitLabel::Test) << " excluded " << split.count(SplitLabel::Excluded) << " disjoint "
            << (leak.disjoint ? "yes" : "no") << "\n";
}

// ---- tabular ----------------------------------------------------------------------------------

struct TabularArgs {
  std::string config;
  std::string scene;
  std::string split;
  std::string include_xy = "both";
  std::vector<std::string> pols;
  std::string strategy = "quadrant";
  std::string runs;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void cmd_tabular(TabularArgs a) {
  const json cfg = load_config(a.config);
  if (const json* t = section(cfg, "tabular")) {
    try {
      if (t->contains("include_xy")) {
        const json& v = t->at("include_xy");
        a.include_xy = v.is_boolean() ? (v.get<bool>() ? "true" : "false") : v.get<std::string>();
      }
      if (a.pols.empty()) read_opt(*t, "pols", a.pols);
    } catch (const json::exception& e) {
      fail(Errc::ConfigError, std::string("tabular: ") + e.what());
    }
  }
  std::vector<bool> xy_settings;
  if (a.include_xy == "true") {
    xy_settings = {true};
  } else if (a.include_xy == "false") {
    xy_settings = {false};
  } else if (a.include_xy == "both") {
    xy_settings = {true, false};
  } else {
    fail(Errc::ConfigError, "--include-xy must be true, false or both");
  }

  const AlignedScene scene = fileio::read_scene(a.scene);
  const SplitAssignment split = fileio::read_split(a.split);
  std::vector<PolarizationSet> sets;
  for (const auto& p : a.pols) sets.push_back(parse_polarization_set(p));
  if (sets.empty()) {
    for (auto p : scene.cube.pols) sets.push_back({p});
    if (scene.cube.pols.size() > 1) sets.push_back(scene.cube.pols);
  }

  const auto strategy = geosplit::parse_strategy(a.strategy);
  const std::uint64_t seed = a.seed.value_or(0);
  std::vector<tabular::TabularRun> runs;
  for (const auto& pols : sets) {
    for (bool xy : xy_settings) {
      runs.push_back(tabular::run_tabular(scene, pols, split, strategy, xy, tabular::default_candidates(), seed));
      const auto& r = runs.back();
      std::cout << to_string(pols) << (xy ? " +xy " : " -xy ") << r.model << " val " << r.val_mae << " test "
                << r.test.mae_m << "\n";
    }
  }
  OutputGuard guard;
  guard.write(a.out, tabular::strategy_table_csv(runs));
  if (!a.runs.empty()) guard.write(a.runs, tabular::runs_csv(runs));
  guard.commit();
}

// ---- train ------------------------------------------------------------------------------------

struct CnnArgs {
  std::string config;
  std::string model;
  std::string collapse;
  std::optional<Index> w;
  std::optional<Index> base_width;
  std::optional<double> lr;
  std::optional<Index> batch_size;
  std::optional<Index> epochs;
  std::optional<Index> patience;
  std::optional<std::string> pols;
  bool db = false;
  std::optional<std::uint64_t> seed;
};

struct CnnSetup {
  trainer::ExperimentConfig cfg;
  std::optional<PolarizationSet> pols;
};

/// Resolves the cnn section and flag overrides for a scene with `channels` channels.
CnnSetup cnn_setup(const json& doc, const CnnArgs& a, const PolarizationSet& scene_pols) {
  CnnSetup out;
  json train = json::object();
  json model = json::object();
  if (const json* c = section(doc, "cnn")) {
    if (const json* t = section(*c, "train")) train = *t;
    if (const json* m = section(*c, "model")) model = *m;
    if (c->contains("pols")) {
      try {
        out.pols = parse_polarization_set(c->at("pols").get<std::string>());
      } catch (const json::exception& e) {
        fail(Errc::ConfigError, std::string("cnn.pols: ") + e.what());
      }
    }
  }
  if (a.pols) out.pols = parse_polarization_set(*a.pols);
  const Index channels = static_cast<Index>(out.pols ? out.pols->size() : scene_pols.size());

  if (!a.model.empty()) model["backbone"] = canonical_backbone(a.model);
  if (!a.collapse.empty()) model["collapse"] = canonical_collapse(a.collapse);
  if (a.base_width) model["base_width"] = *a.base_width;
  model["in_channels"] = channels;
  try {
    const auto backbone = volnet::parse_backbone(model.value("backbone", std::string("Model2")));
    const auto collapse = volnet::parse_collapse(model.value("collapse", std::string("GapZ")));
    json full = volnet::to_json(volnet::ModelSpec::defaults(backbone, collapse, channels));
    full.update(model);
    out.cfg.model = volnet::model_spec_from_json(full);
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, std::string("cnn.model: ") + e.what());
  }

  if (a.w) train["patch_w"] = *a.w;
  if (a.lr) train["learning_rate"] = *a.lr;
  if (a.batch_size) train["batch_size"] = *a.batch_size;
  if (a.epochs) train["max_epochs"] = *a.epochs;
  if (a.patience) train["patience_epochs"] = *a.patience;
  if (a.db) train["use_db_transform"] = true;
  if (a.seed) train["seed"] = *a.seed;
  if (a.epochs && !a.patience && !train.contains("patience_epochs")) {
    train["patience_epochs"] = std::min<Index>(*a.epochs, trainer::TrainConfig{}.patience_epochs);
  }
  out.cfg.train = trainer::train_config_from_json(train);
  if (const json* s = section(doc, "split")) out.cfg.split = trainer::split_spec_from_json(*s);
  if (a.seed) out.cfg.split.seed = *a.seed;
  return out;
}

struct TrainArgs {
  CnnArgs cnn;
  std::string scene;
  std::string split;
  std::string out;
};

std::string metrics_csv(const std::vector<MetricsReport>& reports) {
  std::string out = metrics::csv_header() + "\n";
  for (const auto& r : reports) out += metrics::csv_row(r) + "\n";
  return out;
}

void cmd_train(const TrainArgs& a) {
  const json doc = load_config(a.cnn.config);
  const AlignedScene full = fileio::read_scene(a.scene);
  const CnnSetup setup = cnn_setup(doc, a.cnn, full.cube.pols);
  const AlignedScene scene = restrict_pols(full, setup.pols);
  const SplitAssignment split =
      a.split.empty() ? geosplit::make_split(scene.nx(), scene.ny(), setup.cfg.split) : fileio::read_split(a.split);

  const auto result = trainer::run_experiment(scene, split, setup.cfg, [](const trainer::EpochRecord& r) {
    std::cout << "epoch " << r.epoch << " train_mse " << r.train_mse << " val_mae " << r.val_mae << "\n";
  });

  OutputGuard guard;
  const fs::path dir = guard.dir(a.out);
  volnet::save_checkpoint(result.model, guard.file(dir / "model.tmdl"), result.checkpoint_meta());
  guard.write(dir / "history.csv", trainer::history_csv(result.history));
  guard.write(dir / "metrics.csv", metrics_csv(result.reports));
  json summary = {{"config", trainer::to_json(setup.cfg)},
                  {"band", to_string(result.band)},
                  {"pols", to_string(result.pols)},
                  {"best_epoch", result.best_epoch},
                  {"best_val_mae", result.best_val_mae},
                  {"baseline_test_mae", result.baseline_test_mae}};
  guard.write(dir / "run.json", summary.dump(2) + "\n");
  guard.commit();
  for (const auto& r : result.reports) {
    std::cout << to_string(r.split) << " mae " << r.mae_m << " rmse " << r.rmse_m << " r2 " << r.r2 << "\n";
  }
  std::cout << "baseline test mae " << result.baseline_test_mae << "\n";
}

// ---- sweep ------------------------------------------------------------------------------------

struct SweepArgs {
  CnnArgs cnn;
  std::string space;
  std::string objective;
  std::string scene;
  std::string split;
  std::optional<Index> budget;
  std::optional<double> warmup;
  std::optional<Index> jobs;
  std::string out;
};

void cmd_sweep(const SweepArgs& a) {
  const json doc = load_config(a.cnn.config);
  const json* sec = section(doc, "sweep");

  hpo::SearchSpace space = hpo::default_space();
  if (!a.space.empty()) {
    space = hpo::search_space_from_json(read_json(a.space));
  } else if (sec && sec->contains("space")) {
    space = hpo::search_space_from_json(sec->at("space"));
  }
  hpo::SweepOptions options;
  if (sec && sec->contains("options")) options = hpo::sweep_options_from_json(sec->at("options"));
  if (a.budget) options.budget = *a.budget;
  if (a.warmup) options.warmup_fraction = *a.warmup;
  if (a.jobs) options.jobs = *a.jobs;
  if (a.cnn.seed) options.seed = *a.cnn.seed;
  const Index cap = thread_cap();
  options.threads = cap > 0 ? std::min(options.jobs, cap) : options.jobs;
  options.validate();

  std::string objective = a.objective;
  if (objective.empty()) objective = sec && sec->contains("objective") ? sec->at("objective").get<std::string>() : "train";

  hpo::Objective f;
  std::optional<AlignedScene> scene;
  std::optional<SplitAssignment> split;
  CnnSetup setup;
  if (objective == "quadratic") {
    const auto names = space.names();
    if (std::find(names.begin(), names.end(), "learning_rate") == names.end()) {
      fail(Errc::ConfigError, "the quadratic objective needs a learning_rate dimension");
    }
    f = [&space](const hpo::Point& p) {
      const auto names = space.names();
      const auto i = std::find(names.begin(), names.end(), "learning_rate") - names.begin();
      const double l = std::log10(std::get<double>(p[static_cast<std::size_t>(i)]));
      return (l + 3.0) * (l + 3.0);
    };
  } else if (objective == "train") {
    if (a.scene.empty()) fail(Errc::ConfigError, "the train objective needs --scene");
    const AlignedScene full = fileio::read_scene(a.scene);
    setup = cnn_setup(doc, a.cnn, full.cube.pols);
    scene = restrict_pols(full, setup.pols);
    split = a.split.empty() ? geosplit::make_split(scene->nx(), scene->ny(), setup.cfg.split)
                            : fileio::read_split(a.split);
    f = [&](const hpo::Point& p) {
      const auto cfg = hpo::apply(p, space, setup.cfg);
      return trainer::run_experiment(*scene, *split, cfg).best_val_mae;
    };
  } else {
    fail(Errc::ConfigError, "--objective must be train or quadratic");
  }

  const auto result = hpo::sweep(space, f, options);

  OutputGuard guard;
  const fs::path dir = guard.dir(a.out);
  guard.write(dir / "trials.csv", hpo::trials_csv(space, result.trials));
  json summary = {{"space", hpo::to_json(space)},
                  {"options", hpo::to_json(options)},
                  {"objective", objective},
                  {"best", hpo::to_json(result.best, space)}};
  guard.write(dir / "sweep.json", summary.dump(2) + "\n");
  guard.commit();
  std::cout << "best trial " << result.best.id << " value " << *result.best.value << "\n";
}

// ---- reconstruct ------------------------------------------------------------------------------

struct ReconArgs {
  std::string config;
  std::string checkpoint;
  std::string scene;
  std::string split;
  std::optional<Index> stride;
  Index batch_size = 8;
  bool heatmaps = true;
  std::string out;
};

void cmd_reconstruct(ReconArgs a) {
  const json doc = load_config(a.config);
  if (const json* o = section(doc, "outputs")) read_opt(*o, "heatmaps", a.heatmaps);

  auto [model, meta] = volnet::load_checkpoint(a.checkpoint);
  trainer::Preprocessor pre;
  Index w = 0;
  PolarizationSet pols;
  BandId band = BandId::P;
  try {
    pre = trainer::Preprocessor::from_json(meta.at("preprocessor"));
    w = meta.at("patch_w").get<Index>();
    pols = parse_polarization_set(meta.at("pols").get<std::string>());
    band = parse_band(meta.at("band").get<std::string>());
  } catch (const json::exception& e) {
    fail(Errc::HeaderParse, std::string("checkpoint metadata: ") + e.what());
  }
  const AlignedScene full = fileio::read_scene(a.scene);
  if (full.cube.band != band) fail(Errc::ShapeMismatch, "checkpoint was trained on another band");
  const AlignedScene scene = restrict_pols(full, pols);
  const Index stride = a.stride.value_or(w);

  const auto map = recon::reconstruct(model, scene.cube, w, stride, pre, a.batch_size);
  const auto chm = recon::to_chm(map, scene.cube.az_spacing_m, scene.cube.rng_spacing_m);

  OutputGuard guard;
  const fs::path dir = guard.dir(a.out);
  fileio::write_chm(chm, guard.file(dir / "prediction.chm"));
  std::vector<MetricsReport> reports;
  json info = {{"method", map.method()},
               {"patch_w", w},
               {"stride", stride},
               {"band", to_string(band)},
               {"pols", to_string(pols)},
               {"uncovered", map.uncovered.count()}};

  std::optional<SplitAssignment> split;
  if (!a.split.empty()) split = fileio::read_split(a.split);
  const auto all = recon::error_map(map, scene.chm, band, pols);
  info["mae_all"] = all.report.mae_m;
  info["mean_signed_error_all"] = all.mean_signed_error_m;
  guard.write(dir / "error.herr", recon::encode_error_grid(all.error_m));
  if (split) {
    for (auto label : {SplitLabel::Train, SplitLabel::Val, SplitLabel::Test}) {
      if (split->count(label) == 0) continue;
      reports.push_back(recon::error_map(map, scene.chm, band, pols, &*split, label).report);
    }
    guard.write(dir / "metrics.csv", metrics_csv(reports));
  }
  if (a.heatmaps) {
    guard.write(dir / "prediction.pgm", recon::heatmap_pgm(map.heights_m, map.uncovered));
    guard.write(dir / "prediction_mask.pgm", recon::mask_pgm(map.uncovered));
    guard.write(dir / "truth.pgm", recon::heatmap_pgm(scene.chm.heights_m, scene.chm.nodata));
    guard.write(dir / "error.pgm", recon::error_pgm(all.error_m));
  }
  guard.write(dir / "recon.json", info.dump(2) + "\n");
  guard.commit();
  std::cout << map.method() << " stride " << stride << " uncovered " << map.uncovered.count() << " mae "
            << all.report.mae_m << "\n";
}

// ---- report -----------------------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

void cmd_report(const ReportArgs& a) {
  std::vector<MetricsReport> reports;
  for (const auto& path : a.inputs) {
    for (auto& r : metrics::parse_csv(fileio::read_file(path))) reports.push_back(std::move(r));
  }
  if (reports.empty()) fail(Errc::EmptyInput, "no metrics rows in the inputs");
  const auto rows = recon::band_report(reports);
  OutputGuard guard;
  guard.write(a.out, recon::band_report_csv(rows));
  guard.commit();
  std::cout << rows.size() << " rows -> " << a.out << "\n";
}

void add_seed(CLI::App* cmd, std::optional<std::uint64_t>& seed) {
  cmd->add_option("--seed", seed, "Seed for every random component of this run (overrides config seeds)");
}

void add_cnn_flags(CLI::App* cmd, CnnArgs& a) {
  cmd->add_option("--config", a.config, "Experiment config JSON");
  cmd->add_option("--model", a.model, "Backbone: model1, model2, model3 (default model2)");
  cmd->add_option("--collapse", a.collapse, "Collapse head: conv, gap, progressive (default gap)");
  cmd->add_option("--W", a.w, "Patch width: 16, 32 or 64 (default 16)");
  cmd->add_option("--base-width", a.base_width, "First-level channel width (backbone default)");
  cmd->add_option("--lr", a.lr, "Adam learning rate (default 1e-4)");
  cmd->add_option("--batch-size", a.batch_size, "Patches per step (default 8)");
  cmd->add_option("--epochs", a.epochs, "Maximum epochs (default 150)");
  cmd->add_option("--patience", a.patience, "Early-stopping patience in epochs (default 15)");
  cmd->add_option("--pols", a.pols, "Polarization subset, e.g. HV or HH+HV+VV (default: all in scene)");
  cmd->add_flag("--db", a.db, "Apply the dB transform before scaling");
  add_seed(cmd, a.seed);
}

int run(int argc, char** argv) {
  CLI::App app{"Canopy height estimation from TomoSAR cubes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "tomoheight 1.0.0");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic scene (cube + CHM)");
  synth_cmd->add_option("--config", synth_args.config, "Config JSON with a scene section");
  synth_cmd->add_option("--out", synth_args.out, "Output scene directory")->required();
  add_seed(synth_cmd, synth_args.seed);

  SplitArgs split_args;
  auto* split_cmd = app.add_subcommand("split", "Write a geographic split file");
  split_cmd->add_option("--config", split_args.config, "Config JSON with a split section");
  split_cmd->add_option("--scene", split_args.scene, "Scene directory supplying the extent");
  split_cmd->add_option("--nx", split_args.nx, "Azimuth extent when no scene is given");
  split_cmd->add_option("--ny", split_args.ny, "Range extent when no scene is given");
  split_cmd->add_option("--strategy", split_args.strategy, "quadrant, square or swath")->capture_default_str();
  split_cmd->add_option("--ratios", split_args.ratios, "train,val,test fractions (strategy default)");
  split_cmd->add_option("--orientation", split_args.orientation, "Swath orientation: along-range or along-azimuth")
      ->capture_default_str();
  split_cmd->add_option("--test-origin", split_args.test_origin, "Square test corner x,y (centred by default)");
  split_cmd->add_flag("--ratio-exact", split_args.ratio_exact, "Quadrant: match ratios with a boundary strip");
  split_cmd->add_flag("--tabular", split_args.tabular, "Quadrant: 3 train / 1 test layout");
  split_cmd->add_option("--out", split_args.out, "Output split file")->required();
  add_seed(split_cmd, split_args.seed);

  TabularArgs tab_args;
  auto* tab_cmd = app.add_subcommand("tabular", "Per-pixel regression baselines by strategy");
  tab_cmd->add_option("--config", tab_args.config, "Config JSON with a tabular section");
  tab_cmd->add_option("--scene", tab_args.scene, "Scene directory")->required();
  tab_cmd->add_option("--split", tab_args.split, "Split file")->required();
  tab_cmd->add_option("--include-xy", tab_args.include_xy, "true, false or both")->capture_default_str();
  tab_cmd->add_option("--pols", tab_args.pols, "Polarization sets (default: each channel and the union)");
  tab_cmd->add_option("--strategy", tab_args.strategy, "Strategy column for the rows")->capture_default_str();
  tab_cmd->add_option("--runs", tab_args.runs, "Optional per-run CSV");
  tab_cmd->add_option("--out", tab_args.out, "Strategy comparison CSV")->required();
  add_seed(tab_cmd, tab_args.seed);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a 3D U-Net and evaluate it");
  add_cnn_flags(train_cmd, train_args.cnn);
  train_cmd->add_option("--scene", train_args.scene, "Scene directory")->required();
  train_cmd->add_option("--split", train_args.split, "Split file (default: config split, 2/1/1 quadrants)");
  train_cmd->add_option("--out", train_args.out, "Run directory")->required();

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "Bayesian hyperparameter search");
  add_cnn_flags(sweep_cmd, sweep_args.cnn);
  sweep_cmd->add_option("--space", sweep_args.space, "Search space JSON (default: lr, batch size, epochs)");
  sweep_cmd->add_option("--objective", sweep_args.objective, "train or quadratic (default train)");
  sweep_cmd->add_option("--scene", sweep_args.scene, "Scene directory (train objective)");
  sweep_cmd->add_option("--split", sweep_args.split, "Split file (train objective)");
  sweep_cmd->add_option("--budget", sweep_args.budget, "Number of trials (default 30)");
  sweep_cmd->add_option("--warmup", sweep_args.warmup, "Warmup fraction (default 0.2)");
  sweep_cmd->add_option("--jobs", sweep_args.jobs, "Parallel trials per batch (default 1)");
  sweep_cmd->add_option("--out", sweep_args.out, "Sweep directory")->required();

  ReconArgs recon_args;
  auto* recon_cmd = app.add_subcommand("reconstruct", "Stitch a full-scene height map");
  recon_cmd->add_option("--config", recon_args.config, "Config JSON with an outputs section");
  recon_cmd->add_option("--checkpoint", recon_args.checkpoint, "Checkpoint file")->required();
  recon_cmd->add_option("--scene", recon_args.scene, "Scene directory")->required();
  recon_cmd->add_option("--split", recon_args.split, "Split file for per-label metrics");
  recon_cmd->add_option("--stride", recon_args.stride, "Tile stride (default W)");
  recon_cmd->add_option("--batch-size", recon_args.batch_size, "Patches per forward")->capture_default_str();
  recon_cmd->add_option("--heatmaps", recon_args.heatmaps, "Write PGM heatmaps")->capture_default_str();
  recon_cmd->add_option("--out", recon_args.out, "Output directory")->required();

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "Band/polarization comparison table");
  report_cmd->add_option("--inputs", report_args.inputs, "metrics.csv files")->required();
  report_cmd->add_option("--out", report_args.out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << errc_name(Errc::ConfigError) << ": " << e.what() << "\n";
    return errc_exit_code(Errc::ConfigError);
  }

  try {
    if (const Index cap = thread_cap(); cap > 0) Eigen::setNbThreads(static_cast<int>(cap));
    if (*synth_cmd) cmd_synth(synth_args);
    if (*split_cmd) cmd_split(split_args);
    if (*tab_cmd) cmd_tabular(tab_args);
    if (*train_cmd) cmd_train(train_args);
    if (*sweep_cmd) cmd_sweep(sweep_args);
    if (*recon_cmd) cmd_reconstruct(recon_args);
    if (*report_cmd) cmd_report(report_args);
  } catch (const Error& e) {
    std::cerr << e.name() << ": " << e.what() << "\n";
    return errc_exit_code(e.code());
  } catch (const json::exception& e) {
    std::cerr << errc_name(Errc::ConfigError) << ": " << e.what() << "\n";
    return errc_exit_code(Errc::ConfigError);
  } catch (const fs::filesystem_error& e) {
    std::cerr << errc_name(Errc::Io) << ": " << e.what() << "\n";
    return errc_exit_code(Errc::Io);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
