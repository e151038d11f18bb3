#include "tomoheight/hpo.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "tomoheight/random.hpp"

namespace tomoheight::hpo {

using nlohmann::json;

const std::string& name_of(const Dimension& dim) {
  return std::visit([](const auto& d) -> const std::string& { return d.name; }, dim);
}

void SearchSpace::validate() const {
  if (dims.empty()) fail(Errc::ConfigError, "search space has no dimensions");
  std::set<std::string> seen;
  for (const auto& dim : dims) {
    const std::string& name = name_of(dim);
    if (name.empty()) fail(Errc::ConfigError, "dimension without a name");
    if (!seen.insert(name).second) fail(Errc::ConfigError, "duplicate dimension '" + name + "'");
    std::visit(
        [&](const auto& d) {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, Continuous>) {
            if (!(d.lo < d.hi) || !std::isfinite(d.lo) || !std::isfinite(d.hi)) {
              fail(Errc::ConfigError, name + ": need finite lo < hi");
            }
            if (d.scale == Scale::Log && !(d.lo > 0.0)) fail(Errc::ConfigError, name + ": log bounds must be > 0");
          } else if constexpr (std::is_same_v<T, Integer>) {
            if (!(d.lo < d.hi)) fail(Errc::ConfigError, name + ": need lo < hi");
          } else {
            if (d.choices.empty()) fail(Errc::ConfigError, name + ": no choices");
            if (std::set<std::string>(d.choices.begin(), d.choices.end()).size() != d.choices.size()) {
              fail(Errc::ConfigError, name + ": duplicate choices");
            }
          }
        },
        dim);
  }
}

Index SearchSpace::encoded_size() const {
  Index n = 0;
  for (const auto& dim : dims) {
    const auto* c = std::get_if<Categorical>(&dim);
    n += c ? static_cast<Index>(c->choices.size()) : 1;
  }
  return n;
}

std::vector<std::string> SearchSpace::names() const {
  std::vector<std::string> out;
  for (const auto& dim : dims) out.push_back(name_of(dim));
  return out;
}

std::string format_value(const Value& v) {
  if (const auto* d = std::get_if<double>(&v)) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, *d);
    return std::string(buf, res.ptr);
  }
  if (const auto* i = std::get_if<Index>(&v)) return std::to_string(*i);
  return std::get<std::string>(v);
}

namespace {

double numeric(const Value& v, const std::string& name) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<Index>(&v)) return static_cast<double>(*i);
  fail(Errc::OutOfSpace, name + ": expected a number");
}

}  // namespace

Eigen::VectorXd encode(const Point& point, const SearchSpace& space) {
  if (point.size() != space.dims.size()) fail(Errc::OutOfSpace, "point has the wrong number of values");
  Eigen::VectorXd u = Eigen::VectorXd::Zero(space.encoded_size());
  Index slot = 0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const Value& v = point[i];
    std::visit(
        [&](const auto& d) {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, Continuous>) {
            const double x = numeric(v, d.name);
            if (!(x >= d.lo && x <= d.hi)) fail(Errc::OutOfSpace, d.name + " = " + format_value(v) + " out of range");
            u[slot++] = d.scale == Scale::Log ? (std::log(x) - std::log(d.lo)) / (std::log(d.hi) - std::log(d.lo))
                                              : (x - d.lo) / (d.hi - d.lo);
          } else if constexpr (std::is_same_v<T, Integer>) {
            const auto* x = std::get_if<Index>(&v);
            if (!x) fail(Errc::OutOfSpace, d.name + ": expected an integer");
            if (*x < d.lo || *x > d.hi) fail(Errc::OutOfSpace, d.name + " = " + format_value(v) + " out of range");
            u[slot++] = static_cast<double>(*x - d.lo) / static_cast<double>(d.hi - d.lo);
          } else {
            const auto* s = std::get_if<std::string>(&v);
            if (!s) fail(Errc::OutOfSpace, d.name + ": expected a choice");
            const auto it = std::find(d.choices.begin(), d.choices.end(), *s);
            if (it == d.choices.end()) fail(Errc::OutOfSpace, d.name + ": unknown choice '" + *s + "'");
            u[slot + (it - d.choices.begin())] = 1.0;
            slot += static_cast<Index>(d.choices.size());
          }
        },
        space.dims[i]);
  }
  return u;
}

Point decode(const Eigen::VectorXd& u, const SearchSpace& space) {
  if (u.size() != space.encoded_size()) fail(Errc::OutOfSpace, "encoding has the wrong length");
  Point out;
  Index slot = 0;
  for (const auto& dim : space.dims) {
    std::visit(
        [&](const auto& d) {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, Continuous>) {
            const double t = std::clamp(u[slot++], 0.0, 1.0);
            double x = d.scale == Scale::Log ? std::exp(std::log(d.lo) + t * (std::log(d.hi) - std::log(d.lo)))
                                             : d.lo + t * (d.hi - d.lo);
            out.emplace_back(std::clamp(x, d.lo, d.hi));
          } else if constexpr (std::is_same_v<T, Integer>) {
            const double t = std::clamp(u[slot++], 0.0, 1.0);
            out.emplace_back(d.lo + static_cast<Index>(std::llround(t * static_cast<double>(d.hi - d.lo))));
          } else {
            const auto n = static_cast<Index>(d.choices.size());
            Index best = 0;
            for (Index c = 1; c < n; ++c) {
              if (u[slot + c] > u[slot + best]) best = c;
            }
            out.emplace_back(d.choices[static_cast<std::size_t>(best)]);
            slot += n;
          }
        },
        dim);
  }
  return out;
}

double matern52(double r, double length_scale) {
  const double s = std::sqrt(5.0) * r / length_scale;
  return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

GaussianProcess::GaussianProcess(Eigen::MatrixXd x, const Eigen::VectorXd& y) : x_(std::move(x)) {
  if (x_.rows() == 0 || x_.rows() != y.size()) fail(Errc::EmptyInput, "surrogate needs matching observations");
  y_mean_ = y.mean();
  const double var = y.size() > 1 ? (y.array() - y_mean_).square().sum() / static_cast<double>(y.size() - 1) : 0.0;
  y_scale_ = var > 1e-24 ? std::sqrt(var) : 1.0;
  z_ = (y.array() - y_mean_) / y_scale_;

  double best = -std::numeric_limits<double>::infinity();
  for (double ell : kLengthScales) {
    const double lml = log_marginal_likelihood(ell);
    if (lml > best) {
      best = lml;
      ell_ = ell;
    }
  }
  Eigen::MatrixXd k = kernel(x_, x_, ell_);
  k.diagonal().array() += kNoise;
  llt_.compute(k);
  alpha_ = llt_.solve(z_);
}

Eigen::MatrixXd GaussianProcess::kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double ell) const {
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < b.rows(); ++j) k(i, j) = matern52((a.row(i) - b.row(j)).norm(), ell);
  }
  return k;
}

double GaussianProcess::log_marginal_likelihood(double length_scale) const {
  Eigen::MatrixXd k = kernel(x_, x_, length_scale);
  k.diagonal().array() += kNoise;
  const Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const Eigen::VectorXd a = llt.solve(z_);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * z_.dot(a) - 0.5 * log_det - 0.5 * static_cast<double>(z_.size()) * std::log(2.0 * std::numbers::pi);
}

GaussianProcess::Prediction GaussianProcess::predict(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd ks = kernel(x_, x.transpose(), ell_);
  const double mean = ks.dot(alpha_);
  const Eigen::VectorXd v = llt_.matrixL().solve(ks);
  const double var = std::max(0.0, 1.0 - v.squaredNorm());
  return {y_mean_ + y_scale_ * mean, y_scale_ * std::sqrt(var)};
}

double expected_improvement(double mean, double sd, double best) {
  const double imp = best - mean;
  if (sd <= 1e-12) return std::max(imp, 0.0);
  const double z = imp / sd;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return imp * cdf + sd * pdf;
}

namespace {

constexpr std::array<int, 40> kPrimes{2,   3,   5,   7,   11,  13,  17,  19,  23,  29,  31,  37,  41,  43,
                                      47,  53,  59,  61,  67,  71,  73,  79,  83,  89,  97,  101, 103, 107,
                                      109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173};

double radical_inverse(Index i, int base) {
  double f = 1.0;
  double r = 0.0;
  while (i > 0) {
    f /= base;
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

}  // namespace

Eigen::MatrixXd halton(Index n, Index dims, const Eigen::VectorXd& shift) {
  if (dims > static_cast<Index>(kPrimes.size())) fail(Errc::ConfigError, "too many encoded dimensions for Halton");
  Eigen::MatrixXd out(n, dims);
  for (Index i = 0; i < n; ++i) {
    for (Index d = 0; d < dims; ++d) {
      const double v = radical_inverse(i + 1, kPrimes[static_cast<std::size_t>(d)]) + shift[d];
      out(i, d) = v - std::floor(v);
    }
  }
  return out;
}

std::string_view to_string(TrialStatus status) noexcept {
  return status == TrialStatus::Ok ? "ok" : "failed";
}

void SweepOptions::validate() const {
  if (budget < 5) fail(Errc::ConfigError, "budget must be >= 5");
  if (!(warmup_fraction > 0.0 && warmup_fraction <= 1.0)) fail(Errc::ConfigError, "warmup_fraction must lie in (0, 1]");
  if (jobs < 1) fail(Errc::ConfigError, "jobs must be >= 1");
  if (threads < 0) fail(Errc::ConfigError, "threads must be >= 0");
  if (candidates < 1) fail(Errc::ConfigError, "candidates must be >= 1");
}

Index warmup_count(Index budget, double warmup_fraction) {
  const auto w = static_cast<Index>(std::ceil(warmup_fraction * static_cast<double>(budget) - 1e-9));
  return std::clamp<Index>(w, 1, budget);
}

namespace {

Point random_point(const SearchSpace& space, Rng& rng) {
  Point out;
  for (const auto& dim : space.dims) {
    std::visit(
        [&](const auto& d) {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, Continuous>) {
            const double t = rng.uniform();
            out.emplace_back(d.scale == Scale::Log ? std::exp(std::log(d.lo) + t * (std::log(d.hi) - std::log(d.lo)))
                                                   : d.lo + t * (d.hi - d.lo));
          } else if constexpr (std::is_same_v<T, Integer>) {
            out.emplace_back(d.lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(d.hi - d.lo + 1))));
          } else {
            out.emplace_back(d.choices[rng.below(d.choices.size())]);
          }
        },
        dim);
  }
  return out;
}

void run_batch(const Objective& objective, std::vector<Trial>& batch, Index threads) {
  auto run_one = [&](Trial& t) {
    try {
      const double v = objective(t.point);
      if (std::isfinite(v)) {
        t.value = v;
        t.status = TrialStatus::Ok;
      } else {
        t.status = TrialStatus::Failed;
        t.error = "non-finite objective";
      }
    } catch (const Error& e) {
      t.status = TrialStatus::Failed;
      t.error = std::string(e.name()) + ": " + e.what();
    }
  };
  const auto n = static_cast<Index>(batch.size());
  const Index workers = std::min(n, threads > 0 ? threads : n);
  if (workers <= 1) {
    for (auto& t : batch) run_one(t);
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  for (Index w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (Index i = next++; i < n; i = next++) {
        try {
          run_one(batch[static_cast<std::size_t>(i)]);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// `count` proposals from the ok trials, each one maximizing EI after the previous proposals
/// are added at their posterior mean.
std::vector<Point> propose(const SearchSpace& space, const std::vector<Trial>& trials, Index count,
                           Index n_candidates, Rng& rng) {
  std::vector<Eigen::VectorXd> xs;
  std::vector<double> ys;
  for (const auto& t : trials) {
    if (t.status != TrialStatus::Ok) continue;
    xs.push_back(encode(t.point, space));
    ys.push_back(*t.value);
  }
  const Index d = space.encoded_size();
  std::vector<Point> out;
  for (Index q = 0; q < count; ++q) {
    Eigen::MatrixXd x(static_cast<Index>(xs.size()), d);
    for (std::size_t i = 0; i < xs.size(); ++i) x.row(static_cast<Index>(i)) = xs[i].transpose();
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Index>(ys.size()));
    const GaussianProcess gp(std::move(x), y);
    const double best = y.minCoeff();

    Eigen::VectorXd shift(d);
    for (Index k = 0; k < d; ++k) shift[k] = rng.uniform();
    const Eigen::MatrixXd cand = halton(n_candidates, d, shift);
    double best_ei = -1.0;
    Eigen::VectorXd chosen;
    for (Index i = 0; i < cand.rows(); ++i) {
      const Eigen::VectorXd snapped = encode(decode(cand.row(i).transpose(), space), space);
      const auto pred = gp.predict(snapped);
      const double ei = expected_improvement(pred.mean, pred.sd, best);
      if (ei > best_ei) {
        best_ei = ei;
        chosen = snapped;
      }
    }
    out.push_back(decode(chosen, space));
    xs.push_back(chosen);
    ys.push_back(gp.predict(chosen).mean);
  }
  return out;
}

}  // namespace

SweepResult sweep(const SearchSpace& space, const Objective& objective, const SweepOptions& options) {
  space.validate();
  options.validate();
  const Index warmup = warmup_count(options.budget, options.warmup_fraction);
  Rng warm_rng(derive_seed(options.seed, "hpo.warmup"));
  Rng cand_rng(derive_seed(options.seed, "hpo.candidates"));

  SweepResult result;
  auto& trials = result.trials;
  while (static_cast<Index>(trials.size()) < options.budget) {
    const auto n = static_cast<Index>(trials.size());
    const Index end = std::min(n < warmup ? warmup : options.budget, n + options.jobs);
    const bool any_ok = std::any_of(trials.begin(), trials.end(), [](const Trial& t) { return t.status == TrialStatus::Ok; });
    std::vector<Point> points;
    if (n < warmup || !any_ok) {
      for (Index i = n; i < end; ++i) points.push_back(random_point(space, warm_rng));
    } else {
      points = propose(space, trials, end - n, options.candidates, cand_rng);
    }
    std::vector<Trial> batch;
    for (Index i = n; i < end; ++i) {
      Trial t;
      t.id = i;
      t.point = std::move(points[static_cast<std::size_t>(i - n)]);
      batch.push_back(std::move(t));
    }
    run_batch(objective, batch, options.threads);
    for (auto& t : batch) trials.push_back(std::move(t));
  }

  const Trial* best = nullptr;
  for (const auto& t : trials) {
    if (t.status == TrialStatus::Ok && (!best || *t.value < *best->value)) best = &t;
  }
  if (!best) fail(Errc::AllTrialsFailed, "all " + std::to_string(trials.size()) + " trials failed");
  result.best = *best;
  return result;
}

std::string trials_csv(const SearchSpace& space, const std::vector<Trial>& trials) {
  std::ostringstream out;
  out << "trial_id";
  for (const auto& name : space.names()) out << ',' << name;
  out << ",val_mae,status\n";
  for (const auto& t : trials) {
    out << t.id;
    for (const auto& v : t.point) out << ',' << format_value(v);
    out << ',' << (t.value ? format_value(*t.value) : std::string()) << ',' << to_string(t.status) << '\n';
  }
  return out.str();
}

json to_json(const SearchSpace& space) {
  json dims = json::array();
  for (const auto& dim : space.dims) {
    std::visit(
        [&](const auto& d) {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, Continuous>) {
            dims.push_back({{"name", d.name}, {"type", d.scale == Scale::Log ? "log" : "float"}, {"lo", d.lo}, {"hi", d.hi}});
          } else if constexpr (std::is_same_v<T, Integer>) {
            dims.push_back({{"name", d.name}, {"type", "int"}, {"lo", d.lo}, {"hi", d.hi}});
          } else {
            dims.push_back({{"name", d.name}, {"type", "categorical"}, {"choices", d.choices}});
          }
        },
        dim);
  }
  return dims;
}

SearchSpace search_space_from_json(const json& j) {
  SearchSpace space;
  try {
    if (!j.is_array()) fail(Errc::ConfigError, "search space must be a JSON array");
    for (const auto& d : j) {
      const auto name = d.at("name").get<std::string>();
      const auto type = d.at("type").get<std::string>();
      if (type == "float" || type == "log") {
        space.dims.emplace_back(Continuous{name, d.at("lo").get<double>(), d.at("hi").get<double>(),
                                           type == "log" ? Scale::Log : Scale::Linear});
      } else if (type == "int") {
        space.dims.emplace_back(Integer{name, d.at("lo").get<Index>(), d.at("hi").get<Index>()});
      } else if (type == "categorical") {
        space.dims.emplace_back(Categorical{name, d.at("choices").get<std::vector<std::string>>()});
      } else {
        fail(Errc::ConfigError, name + ": unknown dimension type '" + type + "'");
      }
    }
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, std::string("search space: ") + e.what());
  }
  space.validate();
  return space;
}

json to_json(const SweepOptions& o) {
  return {{"budget", o.budget},
          {"warmup_fraction", o.warmup_fraction},
          {"seed", o.seed},
          {"jobs", o.jobs},
          {"candidates", o.candidates}};
}

SweepOptions sweep_options_from_json(const json& j) {
  SweepOptions o;
  try {
    if (!j.is_object()) fail(Errc::ConfigError, "sweep options must be a JSON object");
    if (j.contains("budget")) o.budget = j.at("budget").get<Index>();
    if (j.contains("warmup_fraction")) o.warmup_fraction = j.at("warmup_fraction").get<double>();
    if (j.contains("seed")) o.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("jobs")) o.jobs = j.at("jobs").get<Index>();
    if (j.contains("candidates")) o.candidates = j.at("candidates").get<Index>();
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, std::string("sweep options: ") + e.what());
  }
  o.validate();
  return o;
}

json to_json(const Trial& trial, const SearchSpace& space) {
  json params = json::object();
  for (std::size_t i = 0; i < trial.point.size(); ++i) {
    std::visit([&](const auto& v) { params[name_of(space.dims[i])] = v; }, trial.point[i]);
  }
  json j{{"trial_id", trial.id}, {"params", params}, {"status", to_string(trial.status)}};
  j["val_mae"] = trial.value ? json(*trial.value) : json(nullptr);
  if (!trial.error.empty()) j["error"] = trial.error;
  return j;
}

SearchSpace default_space() {
  return {{Continuous{"learning_rate", 1e-5, 1e-2, Scale::Log}, Integer{"batch_size", 2, 16},
           Integer{"max_epochs", 10, 60}}};
}

namespace {

Index as_int(const Value& v, const std::string& name) {
  if (const auto* i = std::get_if<Index>(&v)) return *i;
  if (const auto* d = std::get_if<double>(&v); d && std::floor(*d) == *d) return static_cast<Index>(*d);
  fail(Errc::ConfigError, name + ": expected an integer value");
}

double as_real(const Value& v, const std::string& name) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<Index>(&v)) return static_cast<double>(*i);
  fail(Errc::ConfigError, name + ": expected a numeric value");
}

const std::string& as_text(const Value& v, const std::string& name) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  fail(Errc::ConfigError, name + ": expected a categorical value");
}

bool as_bool(const Value& v, const std::string& name) {
  const std::string& s = as_text(v, name);
  if (s == "true") return true;
  if (s == "false") return false;
  fail(Errc::ConfigError, name + ": expected true or false");
}

}  // namespace

trainer::ExperimentConfig apply(const Point& point, const SearchSpace& space, trainer::ExperimentConfig base) {
  if (point.size() != space.dims.size()) fail(Errc::ConfigError, "point has the wrong number of values");
  bool patience_set = false;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const std::string& name = name_of(space.dims[i]);
    const Value& v = point[i];
    auto& t = base.train;
    auto& m = base.model;
    if (name == "learning_rate") {
      t.learning_rate = as_real(v, name);
    } else if (name == "batch_size") {
      t.batch_size = as_int(v, name);
    } else if (name == "max_epochs") {
      t.max_epochs = as_int(v, name);
    } else if (name == "patience_epochs") {
      t.patience_epochs = as_int(v, name);
      patience_set = true;
    } else if (name == "patch_w") {
      t.patch_w = as_int(v, name);
    } else if (name == "train_stride") {
      t.train_stride = as_int(v, name);
    } else if (name == "use_db_transform") {
      t.use_db_transform = as_bool(v, name);
    } else if (name == "backbone") {
      m.backbone = volnet::parse_backbone(as_text(v, name));
    } else if (name == "collapse") {
      m.collapse = volnet::parse_collapse(as_text(v, name));
    } else if (name == "base_width") {
      m.base_width = as_int(v, name);
    } else if (name == "dropout_rate") {
      m.dropout_rate = as_real(v, name);
    } else if (name == "batch_norm") {
      m.batch_norm = as_bool(v, name);
    } else {
      fail(Errc::ConfigError, "unknown sweep dimension '" + name + "'");
    }
  }
  if (!patience_set) base.train.patience_epochs = std::min(base.train.patience_epochs, base.train.max_epochs);
  return base;
}

}  // namespace tomoheight::hpo
