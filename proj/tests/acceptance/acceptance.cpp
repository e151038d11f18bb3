// Acceptance gate: one PASS/FAIL line per criterion. Pass criterion numbers to run a subset.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tomoheight/fileio.hpp"
#include "tomoheight/geosplit.hpp"
#include "tomoheight/hpo.hpp"
#include "tomoheight/metrics.hpp"
#include "tomoheight/random.hpp"
#include "tomoheight/recon.hpp"
#include "tomoheight/synth.hpp"
#include "tomoheight/tabular.hpp"
#include "tomoheight/trainer.hpp"
#include "tomoheight/volnet/model.hpp"
#include "../support/gradcheck.hpp"

using namespace tomoheight;
using volnet::Backbone;
using volnet::Collapse;

namespace {

// Tolerances and budgets.
constexpr double kMetricRelTol = 1e-12;
constexpr double kScalerRangeTol = 1e-6;
constexpr double kScalerInverseTol = 1e-9;
constexpr double kBudgetTol = 0.15;
constexpr double kGradRelTol = 1e-3;
constexpr double kGradStep = 1e-3;
constexpr double kOverfitReduction = 0.90;
constexpr Index kOverfitSteps = 500;
constexpr double kE2eBaselineRatio = 0.75;
constexpr double kE2eMaxMae = 4.0;
constexpr Index kE2eEpochs = 40;
constexpr Index kE2eDeterminismEpochs = 3;
constexpr double kTabularImprovement = 0.25;
constexpr double kHpoFactor = 3.0;
constexpr int kRoundtripSeeds = 100;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double limit_s;
  std::function<Outcome()> run;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream out;
  out.precision(digits);
  out << v;
  return out.str();
}

const PolarizationSet kUnion{Polarization::HH, Polarization::HV, Polarization::VV};

AlignedScene e2e_scene() {
  synth::SceneParams p;
  p.nx = 64;
  p.ny = 64;
  p.noise_rel = 0.1;
  p.seed = 0;
  return synth::gen_scene(p, BandId::P, kUnion);
}

// ---- 1 ----------------------------------------------------------------------------------------

bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1e-300});
}

Outcome metric_oracle() {
  Rng rng(101);
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(200));
    Eigen::VectorXd p(n), t(n);
    for (Index i = 0; i < n; ++i) {
      t[i] = rng.uniform(0.0, 40.0);
      p[i] = t[i] + rng.normal() * 3.0;
    }
    long double abs_sum = 0, sq_sum = 0, mean = 0;
    for (Index i = 0; i < n; ++i) {
      const long double d = static_cast<long double>(p[i]) - t[i];
      abs_sum += std::fabs(d);
      sq_sum += d * d;
      mean += t[i];
    }
    mean /= n;
    long double ss_tot = 0;
    for (Index i = 0; i < n; ++i) ss_tot += (t[i] - mean) * (t[i] - mean);
    const double mae = static_cast<double>(abs_sum / n);
    const double rmse = static_cast<double>(std::sqrt(sq_sum / n));
    const double r2 = static_cast<double>(1.0L - sq_sum / ss_tot);
    if (!close_rel(metrics::mae(p, t), mae, kMetricRelTol) || !close_rel(metrics::rmse(p, t), rmse, kMetricRelTol) ||
        !close_rel(metrics::r2(p, t), r2, kMetricRelTol)) {
      ++bad;
    }
  }
  return {bad == 0, std::to_string(1000 - bad) + "/1000 instances agree"};
}

// ---- 2 ----------------------------------------------------------------------------------------

double round2(double v) { return std::round(v * 100.0) / 100.0; }

Outcome normalized_arithmetic() {
  const double p = round2(metrics::normalized_mae(3.06, BandId::P));
  const double lbi = round2(metrics::normalized_mae(3.07, BandId::LBi));
  const double lmono = metrics::normalized_mae(2.82, BandId::LMono);
  const auto& reg = band_registry();
  auto row_is = [&](BandId b, double wl, double rng_res, double az_res, double vert, int passes) {
    for (const auto& m : reg) {
      if (m.band == b) {
        return m.wavelength_m == wl && m.slant_range_res_m == rng_res && m.azimuth_res_m == az_res &&
               m.vertical_res_m == vert && m.num_passes == passes;
      }
    }
    return false;
  };
  const bool registry = row_is(BandId::P, 0.69, 5.0, 1.0, 3.0, 28) && row_is(BandId::LMono, 0.22, 3.0, 0.55, 1.3, 30) &&
                        row_is(BandId::LBi, 0.22, 3.0, 0.55, 2.3, 30);
  const bool pass = p == 1.02 && lbi == 1.33 && registry;
  return {pass, "P " + fmt(p, 3) + ", L-Bi " + fmt(lbi, 3) + ", registry " + (registry ? "ok" : "mismatch") +
                    "; L-Mono 2.82 m gives " + fmt(lmono, 4)};
}

// ---- 3 ----------------------------------------------------------------------------------------

Outcome split_correctness() {
  Rng rng(303);
  int ok = 0;
  std::string first_failure;
  for (int c = 0; c < 200; ++c) {
    const Index nx = 16 + static_cast<Index>(rng.below(185));
    const Index ny = 16 + static_cast<Index>(rng.below(185));
    const int kind = static_cast<int>(rng.below(4));
    geosplit::SplitSpec spec;
    if (kind == 0) {
      const double test = rng.uniform(0.1, 0.4);
      const double val = rng.uniform() < 0.5 ? 0.0 : rng.uniform(0.05, 0.2);
      spec = geosplit::SplitSpec::swath(test, rng.uniform() < 0.5 ? geosplit::Orientation::AlongRange
                                                                  : geosplit::Orientation::AlongAzimuth);
      spec.ratios = {1.0 - test - val, val, test};
    } else if (kind == 1) {
      const double test = rng.uniform(0.05, 0.25);
      const double val = rng.uniform() < 0.5 ? 0.0 : rng.uniform(0.05, 0.1);
      spec = geosplit::SplitSpec::square(test);
      spec.ratios = {1.0 - test - val, val, test};
    } else if (kind == 2) {
      spec = geosplit::SplitSpec::tabular_quadrant();
    } else {
      spec = geosplit::SplitSpec::cnn_quadrant();
      const double val = rng.uniform(0.15, 0.35);
      spec.ratios = {0.5, val, 0.5 - val};
      spec.ratio_exact = true;
    }
    const auto a = geosplit::make_split(nx, ny, spec);
    const Index n = nx * ny;
    bool good = a.count(SplitLabel::Train) + a.count(SplitLabel::Val) + a.count(SplitLabel::Test) == n &&
                a.count(SplitLabel::Excluded) == 0;
    if (kind == 2) {
      const Index hx = nx / 2;
      const Index hy = ny / 2;
      const auto train = static_cast<std::uint8_t>(SplitLabel::Train);
      const auto test = static_cast<std::uint8_t>(SplitLabel::Test);
      good = good && (a.labels.block(0, 0, hx, hy) == train).all() && (a.labels.block(0, hy, hx, ny - hy) == train).all() &&
             (a.labels.block(hx, 0, nx - hx, hy) == train).all() &&
             (a.labels.block(hx, hy, nx - hx, ny - hy) == test).all();
    } else {
      // One row or column of the scene.
      const double slack = static_cast<double>(std::max(nx, ny));
      const double want[3] = {spec.ratios.train, spec.ratios.val, spec.ratios.test};
      const SplitLabel labels[3] = {SplitLabel::Train, SplitLabel::Val, SplitLabel::Test};
      for (int l = 0; l < 3; ++l) {
        good = good && std::abs(static_cast<double>(a.count(labels[l])) - want[l] * static_cast<double>(n)) <= slack;
      }
    }
    if (good) {
      ++ok;
    } else if (first_failure.empty()) {
      first_failure = " (first failure: case " + std::to_string(c) + ", " + std::string(geosplit::to_string(spec.strategy)) +
                      " " + std::to_string(nx) + "x" + std::to_string(ny) + ")";
    }
  }
  return {ok == 200, std::to_string(ok) + "/200 cases" + first_failure};
}

// ---- 4 ----------------------------------------------------------------------------------------

Outcome scaler_properties() {
  auto scene = e2e_scene();
  const auto split = geosplit::make_split(64, 64, geosplit::SplitSpec::cnn_quadrant());
  const auto pre = trainer::fit_preprocessor(scene.cube, split, false);

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  double worst_inverse = 0.0;
  for (Index x = 0; x < 64; ++x) {
    for (Index y = 0; y < 64; ++y) {
      if (split.at(x, y) != SplitLabel::Train) continue;
      for (Index k = 0; k < scene.cube.nz; ++k) {
        for (Index p = 0; p < scene.cube.num_pols(); ++p) {
          const double v = scene.cube.at(p, x, y, k);
          const double s = pre.apply(v, p);
          lo = std::min(lo, s);
          hi = std::max(hi, s);
          worst_inverse = std::max(worst_inverse, std::abs(pre.scaler.inverse(s, p) - v) / std::max(std::abs(v), 1e-300));
        }
      }
    }
  }
  const bool range = std::abs(lo) <= kScalerRangeTol && std::abs(hi - 1.0) <= kScalerRangeTol;
  const bool inverse = worst_inverse <= kScalerInverseTol;

  // Refit on the Train voxels alone, then poison the Test voxels and refit again.
  metrics::MinMaxAccumulator acc(scene.cube.num_pols());
  for (Index x = 0; x < 64; ++x) {
    for (Index y = 0; y < 64; ++y) {
      if (split.at(x, y) != SplitLabel::Train) continue;
      for (Index k = 0; k < scene.cube.nz; ++k) {
        for (Index p = 0; p < scene.cube.num_pols(); ++p) acc.add(p, scene.cube.at(p, x, y, k));
      }
    }
  }
  const auto refit = acc.finish();
  for (Index x = 0; x < 64; ++x) {
    for (Index y = 0; y < 64; ++y) {
      if (split.at(x, y) == SplitLabel::Test) scene.cube.at(0, x, y, 0) = 1e6F;
    }
  }
  const auto poisoned = trainer::fit_preprocessor(scene.cube, split, false);
  const bool leakage = (refit.min() == pre.scaler.min()).all() && (refit.max() == pre.scaler.max()).all() &&
                       (poisoned.scaler.max() == pre.scaler.max()).all();
  return {range && inverse && leakage, "train range [" + fmt(lo, 3) + ", " + fmt(hi, 10) + "], inverse rel err " +
                                           fmt(worst_inverse, 3) + ", leakage guard " + (leakage ? "ok" : "broken")};
}

// ---- 5 ----------------------------------------------------------------------------------------

Outcome architecture_budgets() {
  const Index m1 = volnet::Model<float>(volnet::ModelSpec::defaults(Backbone::Model1)).parameter_count();
  const Index m2 = volnet::Model<float>(volnet::ModelSpec::defaults(Backbone::Model2)).parameter_count();
  const Index m3 = volnet::Model<float>(volnet::ModelSpec::defaults(Backbone::Model3)).parameter_count();
  auto within = [](Index n, double target) { return std::abs(static_cast<double>(n) - target) <= kBudgetTol * target; };
  const bool budgets = within(m1, 21e6) && within(m2, 1.3e6) && within(m3, 1.2e6);

  Rng rng(505);
  bool heads = true;
  for (auto kind : {Collapse::ConvZ, Collapse::GapZ, Collapse::ProgressiveZ}) {
    volnet::CollapseHead<float> head(kind, 6, volnet::kPatchDepth);
    head.init(rng);
    volnet::Volume<float> v(6, {16, 16, volnet::kPatchDepth});
    for (Index i = 0; i < v.data.size(); ++i) v.data.data()[i] = static_cast<float>(rng.normal());
    const auto out = head.forward({v});
    heads = heads && out[0].channels() == 1 && out[0].shape == volnet::Shape3{16, 16, 1};
    auto spec = volnet::ModelSpec::defaults(Backbone::Model2, kind, 3);
    spec.base_width = 8;
    volnet::Model<float> model(spec, 7);
    volnet::Volume<float> in(3, {16, 16, volnet::kPatchDepth});
    for (Index i = 0; i < in.data.size(); ++i) in.data.data()[i] = static_cast<float>(rng.uniform());
    const auto maps = model.predict({in});
    heads = heads && maps[0].rows() == 16 && maps[0].cols() == 16;
  }

  volnet::CollapseHead<float> gap(Collapse::GapZ, 8, volnet::kPatchDepth);
  gap.init(rng);
  volnet::Volume<float> v(8, {16, 16, volnet::kPatchDepth});
  for (Index i = 0; i < v.data.size(); ++i) v.data.data()[i] = static_cast<float>(rng.normal());
  std::vector<Index> perm(volnet::kPatchDepth);
  std::iota(perm.begin(), perm.end(), Index{0});
  rng.shuffle(perm.begin(), perm.end());
  volnet::Volume<float> permuted(8, v.shape);
  for (Index x = 0; x < 16; ++x) {
    for (Index y = 0; y < 16; ++y) {
      for (Index z = 0; z < volnet::kPatchDepth; ++z) {
        permuted.data.col(v.shape.index(x, y, z)) = v.data.col(v.shape.index(x, y, perm[static_cast<std::size_t>(z)]));
      }
    }
  }
  const bool invariant = (gap.forward({v})[0].data.array() == gap.forward({permuted})[0].data.array()).all();

  return {budgets && heads && invariant, "Model1 " + std::to_string(m1) + ", Model2 " + std::to_string(m2) + ", Model3 " +
                                             std::to_string(m3) + "; heads " + (heads ? "ok" : "bad") +
                                             "; GapZ permutation " + (invariant ? "exact" : "differs")};
}

// ---- 6 ----------------------------------------------------------------------------------------

Outcome gradient_check() {
  Rng rng(6);
  volnet::Batch<double> batch;
  volnet::Volume<double> v(3, {16, 16, volnet::kPatchDepth});
  for (Index i = 0; i < v.data.size(); ++i) v.data.data()[i] = rng.normal();
  batch.push_back(v);
  std::vector<volnet::Mat<double>> targets{volnet::Mat<double>(16, 16)};
  for (Index i = 0; i < targets[0].size(); ++i) targets[0].data()[i] = rng.normal();
  auto spec = volnet::ModelSpec::defaults(Backbone::Model2, Collapse::GapZ, 3);
  spec.base_width = 4;
  volnet::Model<double> model(spec, 21);
  testing::rescale_for_finite_differences(model, 1e4);
  const volnet::Pass pass{false, true, nullptr};
  Rng pick(30);
  const auto r = testing::finite_difference_check(model, batch, targets, pass, kGradStep, 50, pick);
  return {r.samples == 50 && r.worst_relative_error < kGradRelTol,
          std::to_string(r.samples) + " parameters, worst relative error " + fmt(r.worst_relative_error, 3) + " (" +
              r.worst_parameter + ")"};
}

// ---- 7 ----------------------------------------------------------------------------------------

Outcome overfit() {
  synth::SceneParams p;
  p.seed = 4;
  const auto scene = synth::gen_scene(p, BandId::P, kUnion);
  const SplitAssignment all(64, 64, SplitLabel::Train);
  const auto pre = trainer::fit_preprocessor(scene.cube, all, false);
  const auto ds = trainer::make_patches(scene, all, SplitLabel::Train, 16, 16, pre);
  const volnet::Batch<float> inputs(ds.inputs.begin(), ds.inputs.begin() + 4);
  const std::vector<volnet::Mat<float>> targets(ds.targets.begin(), ds.targets.begin() + 4);
  double mean = 0.0;
  for (const auto& t : targets) mean += t.mean() / 4.0;

  volnet::Model<float> model(volnet::ModelSpec::defaults(Backbone::Model2, Collapse::GapZ, 3), 3);
  model.set_output_bias(static_cast<float>(mean));
  trainer::Adam opt(1e-3);
  Rng rng(9);
  const double initial = trainer::train_step(model, opt, inputs, targets, rng);
  double last = initial;
  Index steps = 1;
  while (steps < kOverfitSteps && last > (1.0 - kOverfitReduction) * initial) {
    last = trainer::train_step(model, opt, inputs, targets, rng);
    ++steps;
  }
  return {last <= (1.0 - kOverfitReduction) * initial,
          "train MSE " + fmt(initial) + " -> " + fmt(last) + " in " + std::to_string(steps) + " steps"};
}

// ---- 8 ----------------------------------------------------------------------------------------

trainer::ExperimentConfig e2e_config(Index epochs) {
  trainer::ExperimentConfig cfg;
  cfg.model = volnet::ModelSpec::defaults(Backbone::Model2, Collapse::GapZ, 3);
  cfg.split = geosplit::SplitSpec::cnn_quadrant();
  cfg.train.learning_rate = 1e-3;
  cfg.train.batch_size = 4;
  cfg.train.max_epochs = epochs;
  cfg.train.patience_epochs = epochs;
  cfg.train.seed = 0;
  return cfg;
}

Outcome end_to_end() {
  const auto scene = e2e_scene();
  const auto result = trainer::run_experiment(scene, e2e_config(kE2eEpochs));
  const double test = result.reports.at(2).mae_m;
  const double baseline = result.baseline_test_mae;
  const bool accuracy = test <= kE2eBaselineRatio * baseline && test <= kE2eMaxMae;

  // Rerun the first epochs and compare the shared history bit for bit.
  const auto again = trainer::run_experiment(scene, e2e_config(kE2eDeterminismEpochs));
  bool deterministic = again.history.size() == static_cast<std::size_t>(kE2eDeterminismEpochs);
  for (std::size_t i = 0; deterministic && i < again.history.size(); ++i) {
    deterministic = again.history[i].train_mse == result.history[i].train_mse &&
                    again.history[i].val_mae == result.history[i].val_mae;
  }
  return {accuracy && deterministic, "test MAE " + fmt(test) + " m vs baseline " + fmt(baseline) + " m (ratio " +
                                         fmt(test / baseline, 3) + "), best epoch " + std::to_string(result.best_epoch) +
                                         ", rerun " + (deterministic ? "identical" : "differs")};
}

// ---- 9 ----------------------------------------------------------------------------------------

Outcome tabular_pipeline() {
  const auto scene = e2e_scene();
  const auto split = geosplit::make_split(64, 64, geosplit::SplitSpec::tabular_quadrant());
  const std::uint64_t seed = 0;

  // Mean-of-train baseline on the same holdout rows the pipeline validates on.
  const auto rows = tabular::flatten(scene, kUnion, false, split, SplitLabel::Train);
  const auto holdout = tabular::random_holdout(rows, 0.2, seed);
  const double mean = holdout.train.target.mean();
  const double baseline = (holdout.val.target.array() - mean).abs().mean();

  std::vector<tabular::TabularRun> runs;
  for (bool xy : {true, false}) {
    runs.push_back(tabular::run_tabular(scene, kUnion, split, geosplit::Strategy::Quadrant, xy,
                                        tabular::default_candidates(), seed));
  }
  const auto& no_xy = runs[1];
  const bool beats = no_xy.val_mae <= (1.0 - kTabularImprovement) * baseline;
  const std::string csv = tabular::strategy_table_csv(runs);
  const std::string header = "pol,square_xy,square_no_xy,swath_xy,swath_no_xy,quadrant_xy,quadrant_no_xy\n";
  const bool table = csv.rfind(header, 0) == 0 && std::count(csv.begin(), csv.end(), '\n') == 2 &&
                     csv.find("HH+HV+VV,,,,,") != std::string::npos;
  return {beats && table, "val MAE " + fmt(no_xy.val_mae) + " m (" + no_xy.model + ") vs baseline " + fmt(baseline) +
                              " m; with XY " + fmt(runs[0].val_mae) + " m; strategy table " + (table ? "ok" : "malformed")};
}

// ---- 10 ---------------------------------------------------------------------------------------

Outcome hpo_quadratic() {
  const hpo::SearchSpace space{{hpo::Continuous{"learning_rate", 1e-5, 1e-1, hpo::Scale::Log}}};
  auto f = [](const hpo::Point& p) {
    const double l = std::log10(std::get<double>(p[0]));
    return (l + 3.0) * (l + 3.0);
  };
  double grid_best = std::numeric_limits<double>::infinity();
  double grid_lr = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double lr = std::pow(10.0, -5.0 + 4.0 * i / 49.0);
    if (f({lr}) < grid_best) {
      grid_best = f({lr});
      grid_lr = lr;
    }
  }
  int hits = 0;
  double worst = 1.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    hpo::SweepOptions o;
    o.budget = 30;
    o.seed = seed;
    const auto r = hpo::sweep(space, f, o);
    const double lr = std::get<double>(r.best.point[0]);
    const double factor = std::max(lr / grid_lr, grid_lr / lr);
    worst = std::max(worst, factor);
    if (factor <= kHpoFactor) ++hits;
  }
  return {hits == 5, std::to_string(hits) + "/5 seeds within x3 of the grid optimum (worst factor " + fmt(worst, 3) + ")"};
}

// ---- 11 ---------------------------------------------------------------------------------------

Outcome reconstruction() {
  auto spec = volnet::ModelSpec::defaults(Backbone::Model2, Collapse::GapZ, 3);
  spec.base_width = 8;
  volnet::Model<float> model(spec, 11);
  model.set_output_bias(25.0F);

  synth::SceneParams p;
  p.seed = 11;
  const auto scene = synth::gen_scene(p, BandId::P, kUnion);
  const auto pre = trainer::fit_preprocessor(scene.cube, SplitAssignment(64, 64, SplitLabel::Train), false);
  const auto map = recon::reconstruct(model, scene.cube, 16, 16, pre);
  bool identical = (map.coverage == 1).all();
  for (Index x0 = 0; identical && x0 < 64; x0 += 16) {
    for (Index y0 = 0; identical && y0 < 64; y0 += 16) {
      const auto single = model.predict({trainer::extract_patch(scene.cube, {x0, y0}, 16, pre)});
      const Eigen::ArrayXXf placed = map.heights_m.block(x0, y0, 16, 16);
      identical = std::memcmp(placed.data(), single[0].data(), 256 * sizeof(float)) == 0;
    }
  }

  synth::SceneParams p70 = p;
  p70.nx = 70;
  p70.ny = 70;
  const auto scene70 = synth::gen_scene(p70, BandId::P, kUnion);
  const auto pre70 = trainer::fit_preprocessor(scene70.cube, SplitAssignment(70, 70, SplitLabel::Train), false);
  const auto map70 = recon::reconstruct(model, scene70.cube, 16, 16, pre70);
  bool margins = true;
  for (Index x = 0; x < 70; ++x) {
    for (Index y = 0; y < 70; ++y) margins = margins && map70.uncovered(x, y) == (x >= 64 || y >= 64);
  }

  volnet::Model<float> constant(spec, 12);
  constant.visit([](volnet::Parameter<float>& q) {
    if (q.name == "head.proj.weight") q.value.setZero();
  });
  constant.set_output_bias(13.5F);
  const auto half = recon::reconstruct(constant, scene.cube, 16, 8, pre);
  const bool flat = half.uncovered.count() == 0 && (half.heights_m == 13.5F).all();

  return {identical && margins && flat, std::string("stride W ") + (identical ? "bit-identical" : "differs") +
                                            "; 70x70 margins " + (margins ? "uncovered" : "wrong") + " (" +
                                            std::to_string(map70.uncovered.count()) + " px); constant model at W/2 " +
                                            (flat ? "constant" : "not constant")};
}

// ---- 12 ---------------------------------------------------------------------------------------

Outcome roundtrips() {
  int cubes = 0, chms = 0, splits = 0, checkpoints = 0;
  for (int seed = 0; seed < kRoundtripSeeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) + 1200);

    PolarizationSet pols;
    for (auto p : kAllPolarizations) {
      if (rng.uniform() < 0.6) pols.push_back(p);
    }
    if (pols.empty()) pols.push_back(Polarization::VV);
    const Index nz = 1 + static_cast<Index>(rng.below(40));
    Eigen::ArrayXd z = Eigen::ArrayXd::LinSpaced(nz, rng.uniform(-10, 0), rng.uniform(30, 60));
    TomoCube cube(kAllBands[rng.below(3)], pols, 1 + static_cast<Index>(rng.below(8)),
                  1 + static_cast<Index>(rng.below(8)), z);
    for (Index i = 0; i < cube.intensity.size(); ++i) cube.intensity[i] = static_cast<float>(rng.uniform() * 1e4);
    if (bitwise_equal(cube, fileio::decode_cube(fileio::encode_cube(cube)))) ++cubes;

    CanopyHeightMap chm(1 + static_cast<Index>(rng.below(12)), 1 + static_cast<Index>(rng.below(12)));
    for (Index x = 0; x < chm.nx; ++x) {
      for (Index y = 0; y < chm.ny; ++y) {
        if (rng.uniform() < 0.2) {
          chm.set_nodata(x, y);
        } else {
          chm.heights_m(x, y) = static_cast<float>(rng.uniform(0, 45));
        }
      }
    }
    if (bitwise_equal(chm, fileio::decode_chm(fileio::encode_chm(chm)))) ++chms;

    SplitAssignment split(1 + static_cast<Index>(rng.below(12)), 1 + static_cast<Index>(rng.below(12)));
    constexpr std::array<SplitLabel, 4> labels{SplitLabel::Train, SplitLabel::Val, SplitLabel::Test,
                                               SplitLabel::Excluded};
    for (Index x = 0; x < split.nx; ++x) {
      for (Index y = 0; y < split.ny; ++y) split.set(x, y, labels[rng.below(4)]);
    }
    if (split == fileio::decode_split(fileio::encode_split(split))) ++splits;

    constexpr std::array<Backbone, 3> backbones{Backbone::Model1, Backbone::Model2, Backbone::Model3};
    constexpr std::array<Collapse, 3> heads{Collapse::ConvZ, Collapse::GapZ, Collapse::ProgressiveZ};
    auto spec = volnet::ModelSpec::defaults(backbones[rng.below(3)], heads[rng.below(3)],
                                            1 + static_cast<Index>(rng.below(3)));
    spec.base_width = 4;
    spec.batch_norm = rng.uniform() < 0.7;
    volnet::Model<float> model(spec, rng.below(1000));
    const nlohmann::json meta = {{"seed", seed}, {"pols", to_string(pols)}};
    const auto [back, back_meta] = volnet::decode_checkpoint(volnet::encode_checkpoint(model, meta));
    if (back.spec() == spec && volnet::parameters_equal(model, back) && back_meta == meta) ++checkpoints;
  }
  const bool pass = cubes == kRoundtripSeeds && chms == kRoundtripSeeds && splits == kRoundtripSeeds &&
                    checkpoints == kRoundtripSeeds;
  return {pass, "cube " + std::to_string(cubes) + ", CHM " + std::to_string(chms) + ", split " +
                    std::to_string(splits) + ", checkpoint " + std::to_string(checkpoints) + " of " +
                    std::to_string(kRoundtripSeeds)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "metric oracle equivalence", 5, metric_oracle},
      {2, "normalized MAE arithmetic", 1, normalized_arithmetic},
      {3, "split correctness", 10, split_correctness},
      {4, "scaler properties", 60, scaler_properties},
      {5, "architecture budgets", 60, architecture_budgets},
      {6, "gradient correctness", 120, gradient_check},
      {7, "optimization sanity", 300, overfit},
      {8, "synthetic end-to-end", 900, end_to_end},
      {9, "tabular pipeline", 600, tabular_pipeline},
      {10, "hpo quadratic", 30, hpo_quadratic},
      {11, "reconstruction", 60, reconstruction},
      {12, "format roundtrips", 30, roundtrips},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && !wanted.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const Error& e) {
      o = {false, std::string(e.name()) + ": " + e.what()};
    } catch (const std::exception& e) {
      o = {false, e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::printf("%s %2d %s: %s; %.1f s (limit %.0f s)%s\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.detail.c_str(), secs, c.limit_s, in_time ? "" : " over time");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
