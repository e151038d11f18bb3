#include "tomoheight/tabular.hpp"
#include "tomoheight/random.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

namespace tomoheight::tabular {

std::vector<std::string> feature_names(const PolarizationSet& pols, Index nz, bool include_xy) {
  std::vector<std::string> names;
  if (include_xy) {
    names.push_back("x");
    names.push_back("y");
  }
  for (auto p : pols) {
    for (Index k = 1; k <= nz; ++k) names.push_back(std::string(to_string(p)) + "_z" + std::to_string(k));
  }
  return names;
}

TabularDataset flatten(const AlignedScene& scene, const PolarizationSet& pols, bool include_xy,
                       const SplitAssignment& split, SplitLabel label, const metrics::MinMaxScaler& scaler) {
  const TomoCube& cube = scene.cube;
  if (split.nx != scene.nx() || split.ny != scene.ny()) fail(Errc::DimensionMismatch, "split and scene extents differ");
  std::vector<Index> channels;
  for (auto p : pols) {
    const auto idx = cube.pol_index(p);
    if (!idx) fail(Errc::DimensionMismatch, "cube has no " + std::string(to_string(p)) + " channel");
    channels.push_back(*idx);
  }
  if (scaler.fitted() && scaler.channels() != static_cast<Index>(pols.size())) {
    fail(Errc::SchemaMismatch, "scaler channel count differs from polarization count");
  }

  std::vector<Index> pixels;
  for (Index x = 0; x < scene.nx(); ++x) {
    for (Index y = 0; y < scene.ny(); ++y) {
      if (split.at(x, y) == label && scene.chm.valid(x, y)) pixels.push_back(x * scene.ny() + y);
    }
  }
  if (pixels.empty()) fail(Errc::EmptySelection, "no usable pixels labelled " + std::string(to_string(label)));

  TabularDataset ds;
  ds.feature_names = feature_names(pols, cube.nz, include_xy);
  const Index offset = include_xy ? 2 : 0;
  ds.features.resize(static_cast<Index>(pixels.size()), static_cast<Index>(ds.feature_names.size()));
  ds.target.resize(static_cast<Index>(pixels.size()));
  const double sx = scene.nx() > 1 ? 1.0 / static_cast<double>(scene.nx() - 1) : 0.0;
  const double sy = scene.ny() > 1 ? 1.0 / static_cast<double>(scene.ny() - 1) : 0.0;
  for (Index r = 0; r < static_cast<Index>(pixels.size()); ++r) {
    const Index x = pixels[static_cast<std::size_t>(r)] / scene.ny();
    const Index y = pixels[static_cast<std::size_t>(r)] % scene.ny();
    if (include_xy) {
      ds.features(r, 0) = static_cast<double>(x) * sx;
      ds.features(r, 1) = static_cast<double>(y) * sy;
    }
    for (std::size_t c = 0; c < channels.size(); ++c) {
      const auto prof = cube.profile(channels[c], x, y);
      for (Index k = 0; k < cube.nz; ++k) {
        const double v = prof[k];
        ds.features(r, offset + static_cast<Index>(c) * cube.nz + k) =
            scaler.fitted() ? scaler.transform(v, static_cast<Index>(c)) : v;
      }
    }
    ds.target[r] = scene.chm.heights_m(x, y);
  }
  ds.pixels = std::move(pixels);
  return ds;
}

TabularDataset take_rows(const TabularDataset& ds, const std::vector<Index>& rows) {
  TabularDataset out;
  out.feature_names = ds.feature_names;
  out.features.resize(static_cast<Index>(rows.size()), ds.cols());
  out.target.resize(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Index>(i)) = ds.features.row(rows[i]);
    out.target[static_cast<Index>(i)] = ds.target[rows[i]];
    out.pixels.push_back(ds.pixels[static_cast<std::size_t>(rows[i])]);
  }
  return out;
}

std::string to_csv(const TabularDataset& ds) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const auto& n : ds.feature_names) out << n << ',';
  out << "target\n";
  for (Index r = 0; r < ds.rows(); ++r) {
    for (Index c = 0; c < ds.cols(); ++c) out << ds.features(r, c) << ',';
    out << ds.target[r] << '\n';
  }
  return out.str();
}

std::string describe(const RegressorKind& kind) {
  std::ostringstream out;
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RidgeParams>) {
          out << "ridge(lambda=" << p.lambda << ")";
        } else if constexpr (std::is_same_v<T, KnnParams>) {
          out << "knn(k=" << p.k << ")";
        } else {
          out << "gbt(trees=" << p.n_trees << ",depth=" << p.max_depth << ",lr=" << p.learning_rate
              << ",min_leaf=" << p.min_leaf << ")";
        }
      },
      kind);
  return out.str();
}

Eigen::VectorXd Regressor::predict(const TabularDataset& ds) const {
  if (ds.feature_names != schema_) fail(Errc::SchemaMismatch, "feature columns differ from the training schema");
  return predict_rows(ds.features);
}

RidgeRegressor::RidgeRegressor(const RidgeParams& p, const TabularDataset& train)
    : Regressor(p, train.feature_names) {
  const Eigen::RowVectorXd mean_x = train.features.colwise().mean();
  const double mean_y = train.target.mean();
  const Eigen::MatrixXd xc = train.features.rowwise() - mean_x;
  const Eigen::VectorXd yc = train.target.array() - mean_y;
  if (p.lambda == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xc);
    if (qr.rank() < xc.cols()) fail(Errc::SingularSystem, "rank-deficient features with lambda = 0");
    w_ = qr.solve(yc);
  } else {
    Eigen::MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += p.lambda;
    w_ = gram.ldlt().solve(xc.transpose() * yc);
  }
  b_ = mean_y - mean_x.dot(w_);
}

Eigen::VectorXd RidgeRegressor::predict_rows(const Eigen::MatrixXd& x) const {
  return (x * w_).array() + b_;
}

KnnRegressor::KnnRegressor(const KnnParams& p, const TabularDataset& train)
    : Regressor(p, train.feature_names), k_(p.k), x_(train.features), y_(train.target) {}

Eigen::VectorXd KnnRegressor::predict_rows(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(x_.rows()));
  for (Index q = 0; q < x.rows(); ++q) {
    const Eigen::VectorXd d = (x_.rowwise() - x.row(q)).rowwise().squaredNorm();
    for (Index i = 0; i < x_.rows(); ++i) dist[static_cast<std::size_t>(i)] = {d[i], i};
    std::partial_sort(dist.begin(), dist.begin() + k_, dist.end());
    double sum = 0.0;
    for (Index i = 0; i < k_; ++i) sum += y_[dist[static_cast<std::size_t>(i)].second];
    out[q] = sum / static_cast<double>(k_);
  }
  return out;
}

namespace {

using Tree = GbtRegressor::Tree;

double tree_value(const Tree& tree, const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Index n = 0;
  while (tree[static_cast<std::size_t>(n)].feature >= 0) {
    const auto& node = tree[static_cast<std::size_t>(n)];
    n = row[node.feature] <= node.threshold ? node.left : node.right;
  }
  return tree[static_cast<std::size_t>(n)].value;
}

struct SplitCandidate {
  double gain = 0.0;
  Index feature = -1;
  double threshold = 0.0;
};

/// Level-wise exact split search: one pass per feature over the presorted row order updates
/// every open node at once.
Tree grow_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& residual, const std::vector<std::vector<Index>>& order,
               const GbtParams& p) {
  const Index n = x.rows();
  Tree tree(1);
  std::vector<Index> node_of(static_cast<std::size_t>(n), 0);
  std::vector<Index> open{0};

  auto leaf_stats = [&](const std::vector<Index>& nodes) {
    std::map<Index, std::pair<double, Index>> stats;
    for (Index node : nodes) stats[node] = {0.0, 0};
    for (Index r = 0; r < n; ++r) {
      auto it = stats.find(node_of[static_cast<std::size_t>(r)]);
      if (it == stats.end()) continue;
      it->second.first += residual[r];
      ++it->second.second;
    }
    return stats;
  };

  for (Index depth = 0; depth < p.max_depth && !open.empty(); ++depth) {
    const auto totals = leaf_stats(open);
    std::map<Index, std::size_t> slot;
    for (std::size_t i = 0; i < open.size(); ++i) slot[open[i]] = i;
    std::vector<SplitCandidate> best(open.size());

    std::vector<double> left_sum(open.size());
    std::vector<Index> left_n(open.size());
    std::vector<double> last(open.size());
    for (Index f = 0; f < x.cols(); ++f) {
      std::fill(left_sum.begin(), left_sum.end(), 0.0);
      std::fill(left_n.begin(), left_n.end(), 0);
      for (Index r : order[static_cast<std::size_t>(f)]) {
        const auto it = slot.find(node_of[static_cast<std::size_t>(r)]);
        if (it == slot.end()) continue;
        const std::size_t s = it->second;
        const double v = x(r, f);
        const auto& [sum, count] = totals.at(open[s]);
        if (left_n[s] >= p.min_leaf && count - left_n[s] >= p.min_leaf && v > last[s]) {
          const double ls = left_sum[s];
          const auto ln = static_cast<double>(left_n[s]);
          const auto rn = static_cast<double>(count - left_n[s]);
          const double gain = ls * ls / ln + (sum - ls) * (sum - ls) / rn - sum * sum / static_cast<double>(count);
          if (gain > best[s].gain + 1e-12) best[s] = {gain, f, last[s]};
        }
        left_sum[s] += residual[r];
        ++left_n[s];
        last[s] = v;
      }
    }

    std::vector<Index> next;
    for (std::size_t s = 0; s < open.size(); ++s) {
      if (best[s].feature < 0) continue;
      const Index node = open[s];
      const auto left = static_cast<Index>(tree.size());
      tree.emplace_back();
      tree.emplace_back();
      auto& nd = tree[static_cast<std::size_t>(node)];
      nd.feature = best[s].feature;
      nd.threshold = best[s].threshold;
      nd.left = left;
      nd.right = left + 1;
      next.push_back(left);
      next.push_back(left + 1);
    }
    for (Index r = 0; r < n; ++r) {
      Index& node = node_of[static_cast<std::size_t>(r)];
      const auto& nd = tree[static_cast<std::size_t>(node)];
      if (nd.feature >= 0 && slot.count(node)) node = x(r, nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    open = std::move(next);
  }

  std::vector<double> sum(tree.size(), 0.0);
  std::vector<Index> count(tree.size(), 0);
  for (Index r = 0; r < n; ++r) {
    sum[static_cast<std::size_t>(node_of[static_cast<std::size_t>(r)])] += residual[r];
    ++count[static_cast<std::size_t>(node_of[static_cast<std::size_t>(r)])];
  }
  for (std::size_t i = 0; i < tree.size(); ++i) {
    if (tree[i].feature < 0 && count[i] > 0) tree[i].value = sum[i] / static_cast<double>(count[i]);
  }
  return tree;
}

}  // namespace

GbtRegressor::GbtRegressor(const GbtParams& p, const TabularDataset& train)
    : Regressor(p, train.feature_names), lr_(p.learning_rate) {
  const Eigen::MatrixXd& x = train.features;
  base_ = train.target.mean();
  Eigen::VectorXd pred = Eigen::VectorXd::Constant(x.rows(), base_);
  train_loss_.push_back((train.target - pred).squaredNorm() / static_cast<double>(x.rows()));

  std::vector<std::vector<Index>> order(static_cast<std::size_t>(x.cols()));
  for (Index f = 0; f < x.cols(); ++f) {
    auto& o = order[static_cast<std::size_t>(f)];
    o.resize(static_cast<std::size_t>(x.rows()));
    std::iota(o.begin(), o.end(), Index{0});
    std::stable_sort(o.begin(), o.end(), [&](Index a, Index b) { return x(a, f) < x(b, f); });
  }

  for (Index t = 0; t < p.n_trees; ++t) {
    const Eigen::VectorXd residual = train.target - pred;
    Tree tree = grow_tree(x, residual, order, p);
    for (Index r = 0; r < x.rows(); ++r) pred[r] += lr_ * tree_value(tree, x.row(r));
    trees_.push_back(std::move(tree));
    train_loss_.push_back((train.target - pred).squaredNorm() / static_cast<double>(x.rows()));
  }
}

Eigen::VectorXd GbtRegressor::predict_rows(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out = Eigen::VectorXd::Constant(x.rows(), base_);
  for (const auto& tree : trees_) {
    for (Index r = 0; r < x.rows(); ++r) out[r] += lr_ * tree_value(tree, x.row(r));
  }
  return out;
}

std::unique_ptr<Regressor> fit(const RegressorKind& kind, const TabularDataset& train, std::uint64_t) {
  if (train.rows() != train.target.size() || static_cast<Index>(train.feature_names.size()) != train.cols()) {
    fail(Errc::SchemaMismatch, "dataset columns and names disagree");
  }
  return std::visit(
      [&](const auto& p) -> std::unique_ptr<Regressor> {
        using T = std::decay_t<decltype(p)>;
        Index needed = 10;
        if constexpr (std::is_same_v<T, RidgeParams>) {
          if (!(p.lambda >= 0.0)) fail(Errc::ConfigError, "ridge lambda must be >= 0");
        } else if constexpr (std::is_same_v<T, KnnParams>) {
          if (p.k < 1) fail(Errc::ConfigError, "knn k must be >= 1");
          needed = std::max(needed, p.k);
        } else {
          if (p.n_trees < 1 || p.max_depth < 1 || p.min_leaf < 1 || !(p.learning_rate > 0.0)) {
            fail(Errc::ConfigError, "gbt hyperparameters must be positive");
          }
          needed = std::max(needed, p.min_leaf);
        }
        if (train.rows() < needed) {
          fail(Errc::TooFewRows, std::to_string(train.rows()) + " rows, need " + std::to_string(needed));
        }
        if constexpr (std::is_same_v<T, RidgeParams>) {
          return std::make_unique<RidgeRegressor>(p, train);
        } else if constexpr (std::is_same_v<T, KnnParams>) {
          return std::make_unique<KnnRegressor>(p, train);
        } else {
          return std::make_unique<GbtRegressor>(p, train);
        }
      },
      kind);
}

namespace {

std::pair<int, Index> complexity(const RegressorKind& kind) {
  if (const auto* g = std::get_if<GbtParams>(&kind)) return {2, g->n_trees};
  return {static_cast<int>(kind.index()), 0};
}

}  // namespace

Selection select_model(const std::vector<RegressorKind>& candidates, const TabularDataset& train,
                       const TabularDataset& val, std::uint64_t seed) {
  if (candidates.empty()) fail(Errc::EmptySelection, "no candidate models");
  Selection best;
  for (const auto& kind : candidates) {
    auto model = fit(kind, train, seed);
    const double score = metrics::mae(model->predict(val), val.target);
    best.candidate_val_mae.push_back(score);
    const bool better = !best.model || score < best.val_mae ||
                        (score == best.val_mae && complexity(kind) < complexity(best.kind));
    if (better) {
      best.model = std::move(model);
      best.kind = kind;
      best.val_mae = score;
    }
  }
  return best;
}

std::vector<RegressorKind> default_candidates() {
  return {RidgeParams{0.1}, RidgeParams{1.0},           RidgeParams{10.0},
          KnnParams{5},     KnnParams{15},              GbtParams{100, 3, 0.1, 5},
          GbtParams{200, 4, 0.1, 5}};
}

Holdout random_holdout(const TabularDataset& rows, double val_fraction, std::uint64_t seed) {
  std::vector<Index> idx(static_cast<std::size_t>(rows.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  Rng rng(derive_seed(seed, "tabular.holdout"));
  rng.shuffle(idx.begin(), idx.end());
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(idx.size())));
  std::vector<Index> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<Index> train(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  if (val.empty() || train.empty()) fail(Errc::TooFewRows, "holdout leaves an empty side");
  return {take_rows(rows, train), take_rows(rows, val)};
}

namespace {

metrics::MinMaxScaler fit_train_scaler(const TomoCube& cube, const PolarizationSet& pols, const SplitAssignment& split) {
  metrics::MinMaxAccumulator acc(static_cast<Index>(pols.size()));
  for (std::size_t c = 0; c < pols.size(); ++c) {
    const auto idx = cube.pol_index(pols[c]);
    if (!idx) fail(Errc::DimensionMismatch, "cube has no " + std::string(to_string(pols[c])) + " channel");
    for (Index x = 0; x < cube.nx; ++x) {
      for (Index y = 0; y < cube.ny; ++y) {
        if (split.at(x, y) != SplitLabel::Train) continue;
        for (float v : cube.profile(*idx, x, y)) acc.add(static_cast<Index>(c), v);
      }
    }
  }
  return acc.finish();
}

}  // namespace

TabularRun run_tabular(const AlignedScene& scene, const PolarizationSet& pols, const SplitAssignment& split,
                       geosplit::Strategy strategy, bool include_xy, const std::vector<RegressorKind>& candidates,
                       std::uint64_t seed) {
  const auto scaler = fit_train_scaler(scene.cube, pols, split);
  TabularDataset train = flatten(scene, pols, include_xy, split, SplitLabel::Train, scaler);
  TabularDataset val;
  if (split.count(SplitLabel::Val) > 0) {
    val = flatten(scene, pols, include_xy, split, SplitLabel::Val, scaler);
  } else {
    auto h = random_holdout(train, 0.2, seed);
    train = std::move(h.train);
    val = std::move(h.val);
  }
  Selection sel = select_model(candidates, train, val, seed);

  const TabularDataset test = flatten(scene, pols, include_xy, split, SplitLabel::Test, scaler);
  TabularRun run;
  run.pols = pols;
  run.strategy = strategy;
  run.include_xy = include_xy;
  run.model = describe(sel.kind);
  run.val_mae = sel.val_mae;
  run.test = metrics::report(sel.model->predict(test), test.target, scene.cube.band, pols, SplitLabel::Test);
  return run;
}

std::string runs_csv(const std::vector<TabularRun>& runs) {
  std::ostringstream out;
  out << "pol,strategy,include_xy,model,val_mae,test_mae,test_rmse,test_r2\n" << std::setprecision(17);
  for (const auto& r : runs) {
    out << to_string(r.pols) << ',' << geosplit::to_string(r.strategy) << ',' << (r.include_xy ? "true" : "false")
        << ",\"" << r.model << "\"," << r.val_mae << ',' << r.test.mae_m << ',' << r.test.rmse_m << ','
        << r.test.r2 << '\n';
  }
  return out.str();
}

std::string strategy_table_csv(const std::vector<TabularRun>& runs) {
  const std::array<geosplit::Strategy, 3> strategies{geosplit::Strategy::Square, geosplit::Strategy::Swath,
                                                     geosplit::Strategy::Quadrant};
  std::vector<std::string> pol_order;
  std::map<std::string, std::map<std::pair<int, bool>, double>> cells;
  for (const auto& r : runs) {
    const std::string key = to_string(r.pols);
    if (!cells.count(key)) pol_order.push_back(key);
    cells[key][{static_cast<int>(r.strategy), r.include_xy}] = r.test.mae_m;
  }
  std::ostringstream out;
  out << "pol,square_xy,square_no_xy,swath_xy,swath_no_xy,quadrant_xy,quadrant_no_xy\n" << std::setprecision(6);
  for (const auto& key : pol_order) {
    out << key;
    for (auto s : strategies) {
      for (bool xy : {true, false}) {
        out << ',';
        const auto& row = cells[key];
        if (auto it = row.find({static_cast<int>(s), xy}); it != row.end()) out << it->second;
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace tomoheight::tabular
