#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "tomoheight/core.hpp"
#include "tomoheight/random.hpp"

namespace tomoheight::volnet {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

struct Shape3 {
  Index x = 0;
  Index y = 0;
  Index z = 0;

  Index voxels() const noexcept { return x * y * z; }
  Index index(Index i, Index j, Index k) const noexcept { return (i * y + j) * z + k; }
  bool operator==(const Shape3&) const = default;
};

/// Feature volume: one row per channel, one column per voxel (x, y, z), z fastest.
template <typename Scalar>
struct Volume {
  Mat<Scalar> data;
  Shape3 shape;

  Volume() = default;
  Volume(Index channels, Shape3 s) : data(Mat<Scalar>::Zero(channels, s.voxels())), shape(s) {}
  Volume(Mat<Scalar> d, Shape3 s) : data(std::move(d)), shape(s) {}

  Index channels() const noexcept { return data.rows(); }
  Scalar& at(Index c, Index i, Index j, Index k) { return data(c, shape.index(i, j, k)); }
  Scalar at(Index c, Index i, Index j, Index k) const { return data(c, shape.index(i, j, k)); }
};

template <typename Scalar>
using Batch = std::vector<Volume<Scalar>>;

template <typename Scalar>
struct Parameter {
  std::string name;
  Mat<Scalar> value;
  Mat<Scalar> grad;
  /// Batch-norm running statistics are stored alongside weights but never optimized.
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Index rows, Index cols, bool train = true)
      : name(std::move(n)),
        value(Mat<Scalar>::Zero(rows, cols)),
        grad(Mat<Scalar>::Zero(rows, cols)),
        trainable(train) {}
};

/// Per-forward switches. Training sets both flags.
struct Pass {
  bool dropout_active = false;
  bool batch_stats = false;
  Rng* rng = nullptr;

  static Pass train(Rng& rng) { return {true, true, &rng}; }
  static Pass eval() { return {}; }
};

}  // namespace tomoheight::volnet
