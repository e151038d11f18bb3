#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tomoheight/volnet/tensor.hpp"

namespace tomoheight::volnet {

/// Cross-correlation with per-axis kernel, stride and zero padding, lowered to one GEMM per
/// sample over an im2col buffer (rows ordered [kernel offset][input channel]).
template <typename Scalar>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(const std::string& name, Index in, Index out, Shape3 kernel, Shape3 stride = {1, 1, 1},
         Shape3 pad = {0, 0, 0})
      : in_(in),
        out_(out),
        kernel_(kernel),
        stride_(stride),
        pad_(pad),
        weight_(name + ".weight", out, kernel.voxels() * in),
        bias_(name + ".bias", out, 1) {}

  Index in_channels() const noexcept { return in_; }
  Index out_channels() const noexcept { return out_; }

  Shape3 output_shape(const Shape3& s) const {
    auto axis = [](Index n, Index k, Index st, Index p) {
      const Index span = n + 2 * p - k;
      if (span < 0) fail(Errc::ShapeMismatch, "convolution kernel larger than padded input");
      return span / st + 1;
    };
    return {axis(s.x, kernel_.x, stride_.x, pad_.x), axis(s.y, kernel_.y, stride_.y, pad_.y),
            axis(s.z, kernel_.z, stride_.z, pad_.z)};
  }

  /// He-normal weights with the given gain, zero bias.
  void init(Rng& rng, double gain = 2.0) {
    const double sd = std::sqrt(gain / static_cast<double>(kernel_.voxels() * in_));
    for (Index i = 0; i < weight_.value.size(); ++i) {
      weight_.value.data()[i] = static_cast<Scalar>(sd * rng.normal());
    }
    bias_.value.setZero();
  }

  Batch<Scalar> forward(const Batch<Scalar>& in) {
    inputs_ = in;
    Batch<Scalar> out;
    out.reserve(in.size());
    Mat<Scalar> cols;
    for (const auto& v : in) {
      if (v.channels() != in_) fail(Errc::ShapeMismatch, "convolution input channel mismatch");
      const Shape3 os = output_shape(v.shape);
      Volume<Scalar> y(out_, os);
      if (pointwise()) {
        y.data.noalias() = weight_.value * v.data;
      } else {
        const Index step = chunk();
        for (Index p0 = 0; p0 < os.voxels(); p0 += step) {
          const Index n = std::min(step, os.voxels() - p0);
          im2col(v, os, p0, n, cols);
          y.data.middleCols(p0, n).noalias() = weight_.value * cols;
        }
      }
      y.data.colwise() += bias_.value.col(0);
      out.push_back(std::move(y));
    }
    return out;
  }

  Batch<Scalar> backward(const Batch<Scalar>& grad_out) {
    Batch<Scalar> grad_in;
    grad_in.reserve(grad_out.size());
    Mat<Scalar> cols;
    Mat<Scalar> dcols;
    for (std::size_t b = 0; b < grad_out.size(); ++b) {
      const auto& x = inputs_[b];
      const auto& g = grad_out[b];
      bias_.grad.col(0) += g.data.rowwise().sum();
      Volume<Scalar> dx(in_, x.shape);
      if (pointwise()) {
        weight_.grad.noalias() += g.data * x.data.transpose();
        dx.data.noalias() = weight_.value.transpose() * g.data;
      } else {
        const Index step = chunk();
        const Index total = g.shape.voxels();
        for (Index p0 = 0; p0 < total; p0 += step) {
          const Index n = std::min(step, total - p0);
          im2col(x, g.shape, p0, n, cols);
          weight_.grad.noalias() += g.data.middleCols(p0, n) * cols.transpose();
          dcols.noalias() = weight_.value.transpose() * g.data.middleCols(p0, n);
          col2im(dcols, g.shape, p0, n, dx);
        }
      }
      grad_in.push_back(std::move(dx));
    }
    return grad_in;
  }

  template <typename F>
  void visit(F&& f) {
    f(weight_);
    f(bias_);
  }

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }

 private:
  static constexpr Index kChunkElements = Index{1} << 22;

  bool pointwise() const noexcept {
    return kernel_ == Shape3{1, 1, 1} && stride_ == Shape3{1, 1, 1} && pad_ == Shape3{0, 0, 0};
  }

  Index chunk() const noexcept { return std::max<Index>(256, kChunkElements / (kernel_.voxels() * in_)); }

  template <typename Visit>
  void for_taps(const Shape3& is, const Shape3& os, Index p0, Index n, Visit&& visit) const {
    for (Index p = p0; p < p0 + n; ++p) {
      const Index oz = p % os.z;
      const Index oy = (p / os.z) % os.y;
      const Index ox = p / (os.z * os.y);
      Index k = 0;
      for (Index a = 0; a < kernel_.x; ++a) {
        const Index ix = ox * stride_.x - pad_.x + a;
        for (Index b = 0; b < kernel_.y; ++b) {
          const Index iy = oy * stride_.y - pad_.y + b;
          for (Index d = 0; d < kernel_.z; ++d, ++k) {
            const Index iz = oz * stride_.z - pad_.z + d;
            const bool inside = ix >= 0 && iy >= 0 && iz >= 0 && ix < is.x && iy < is.y && iz < is.z;
            visit(p - p0, k, inside ? is.index(ix, iy, iz) : Index{-1});
          }
        }
      }
    }
  }

  void im2col(const Volume<Scalar>& v, const Shape3& os, Index p0, Index n, Mat<Scalar>& cols) const {
    const Index c = in_;
    cols.resize(kernel_.voxels() * c, n);
    for_taps(v.shape, os, p0, n, [&](Index col, Index k, Index src) {
      Scalar* dst = cols.col(col).data() + k * c;
      if (src < 0) {
        std::fill(dst, dst + c, Scalar(0));
      } else {
        const Scalar* from = v.data.col(src).data();
        std::copy(from, from + c, dst);
      }
    });
  }

  void col2im(const Mat<Scalar>& dcols, const Shape3& os, Index p0, Index n, Volume<Scalar>& dx) const {
    const Index c = in_;
    for_taps(dx.shape, os, p0, n, [&](Index col, Index k, Index dst) {
      if (dst < 0) return;
      dx.data.col(dst) += dcols.col(col).segment(k * c, c);
    });
  }

  Index in_ = 0;
  Index out_ = 0;
  Shape3 kernel_;
  Shape3 stride_;
  Shape3 pad_;
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  Batch<Scalar> inputs_;
};

/// 2x2x2 stride-2 transposed convolution. Output is zero-padded at the high end of any axis
/// where the skip connection it feeds is one voxel longer (odd sizes after floor pooling).
template <typename Scalar>
class UpConv3d {
 public:
  UpConv3d() = default;
  UpConv3d(const std::string& name, Index in, Index out)
      : in_(in), out_(out), weight_(name + ".weight", 8 * out, in), bias_(name + ".bias", out, 1) {}

  void init(Rng& rng) {
    const double sd = std::sqrt(2.0 / static_cast<double>(in_));
    for (Index i = 0; i < weight_.value.size(); ++i) {
      weight_.value.data()[i] = static_cast<Scalar>(sd * rng.normal());
    }
    bias_.value.setZero();
  }

  Batch<Scalar> forward(const Batch<Scalar>& in, const Shape3& target) {
    inputs_ = in;
    Batch<Scalar> out;
    out.reserve(in.size());
    Mat<Scalar> taps;
    for (const auto& v : in) {
      const Shape3& s = v.shape;
      if (target.x < 2 * s.x || target.y < 2 * s.y || target.z < 2 * s.z ||
          target.x > 2 * s.x + 1 || target.y > 2 * s.y + 1 || target.z > 2 * s.z + 1) {
        fail(Errc::ShapeMismatch, "upsampling target incompatible with input size");
      }
      taps.noalias() = weight_.value * v.data;
      Volume<Scalar> y(out_, target);
      for (Index i = 0; i < s.x; ++i) {
        for (Index j = 0; j < s.y; ++j) {
          for (Index k = 0; k < s.z; ++k) {
            const Index src = s.index(i, j, k);
            for (Index q = 0; q < 8; ++q) {
              const Index dst = target.index(2 * i + (q >> 2), 2 * j + ((q >> 1) & 1), 2 * k + (q & 1));
              y.data.col(dst) = taps.block(q * out_, src, out_, 1) + bias_.value;
            }
          }
        }
      }
      out.push_back(std::move(y));
    }
    return out;
  }

  Batch<Scalar> backward(const Batch<Scalar>& grad_out) {
    Batch<Scalar> grad_in;
    grad_in.reserve(grad_out.size());
    Mat<Scalar> gathered;
    for (std::size_t b = 0; b < grad_out.size(); ++b) {
      const auto& x = inputs_[b];
      const auto& g = grad_out[b];
      const Shape3& s = x.shape;
      gathered.resize(8 * out_, s.voxels());
      for (Index i = 0; i < s.x; ++i) {
        for (Index j = 0; j < s.y; ++j) {
          for (Index k = 0; k < s.z; ++k) {
            const Index src = s.index(i, j, k);
            for (Index q = 0; q < 8; ++q) {
              const Index dst = g.shape.index(2 * i + (q >> 2), 2 * j + ((q >> 1) & 1), 2 * k + (q & 1));
              gathered.block(q * out_, src, out_, 1) = g.data.col(dst);
            }
          }
        }
      }
      for (Index q = 0; q < 8; ++q) {
        bias_.grad.col(0) += gathered.middleRows(q * out_, out_).rowwise().sum();
      }
      weight_.grad.noalias() += gathered * x.data.transpose();
      Volume<Scalar> dx(in_, s);
      dx.data.noalias() = weight_.value.transpose() * gathered;
      grad_in.push_back(std::move(dx));
    }
    return grad_in;
  }

  template <typename F>
  void visit(F&& f) {
    f(weight_);
    f(bias_);
  }

 private:
  Index in_ = 0;
  Index out_ = 0;
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  Batch<Scalar> inputs_;
};

/// Per-channel normalization over every voxel of every sample in the batch.
template <typename Scalar>
class BatchNorm3d {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

  BatchNorm3d() = default;
  BatchNorm3d(const std::string& name, Index channels)
      : gamma_(name + ".gamma", channels, 1),
        beta_(name + ".beta", channels, 1),
        running_mean_(name + ".running_mean", channels, 1, false),
        running_var_(name + ".running_var", channels, 1, false) {
    gamma_.value.setOnes();
    running_var_.value.setOnes();
  }

  Batch<Scalar> forward(const Batch<Scalar>& in, const Pass& pass) {
    const Index c = gamma_.value.rows();
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    Vec mean;
    Vec var;
    batch_stats_ = pass.batch_stats;
    if (pass.batch_stats) {
      Index count = 0;
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(c);
      for (const auto& v : in) {
        sum += v.data.template cast<double>().rowwise().sum();
        count += v.data.cols();
      }
      const Eigen::VectorXd m = sum / static_cast<double>(count);
      Eigen::VectorXd sq = Eigen::VectorXd::Zero(c);
      for (const auto& v : in) {
        sq += (v.data.template cast<double>().colwise() - m).rowwise().squaredNorm();
      }
      const Eigen::VectorXd bvar = sq / static_cast<double>(count);
      mean = m.cast<Scalar>();
      var = bvar.cast<Scalar>();
      count_ = count;
      const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
      running_mean_.value = ((1.0 - kMomentum) * running_mean_.value.template cast<double>() + kMomentum * m)
                                .template cast<Scalar>();
      running_var_.value =
          ((1.0 - kMomentum) * running_var_.value.template cast<double>() + kMomentum * unbias * bvar)
              .template cast<Scalar>();
    } else {
      mean = running_mean_.value.col(0);
      var = running_var_.value.col(0);
    }
    inv_std_ = (var.array() + Scalar(kEps)).rsqrt().matrix();

    Batch<Scalar> out;
    out.reserve(in.size());
    normalized_.clear();
    for (const auto& v : in) {
      Mat<Scalar> xhat = (v.data.colwise() - mean).array().colwise() * inv_std_.array();
      Mat<Scalar> y = (xhat.array().colwise() * gamma_.value.col(0).array()).colwise() +
                      beta_.value.col(0).array();
      out.emplace_back(std::move(y), v.shape);
      normalized_.push_back(std::move(xhat));
    }
    return out;
  }

  Batch<Scalar> backward(const Batch<Scalar>& grad_out) {
    const Index c = gamma_.value.rows();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sum_g = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(c);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sum_gx = sum_g;
    for (std::size_t b = 0; b < grad_out.size(); ++b) {
      sum_g += grad_out[b].data.rowwise().sum();
      sum_gx += grad_out[b].data.cwiseProduct(normalized_[b]).rowwise().sum();
    }
    gamma_.grad.col(0) += sum_gx;
    beta_.grad.col(0) += sum_g;

    const auto scale = (gamma_.value.col(0).array() * inv_std_.array()).eval();
    Batch<Scalar> grad_in;
    grad_in.reserve(grad_out.size());
    for (std::size_t b = 0; b < grad_out.size(); ++b) {
      const auto& g = grad_out[b];
      Mat<Scalar> dx;
      if (batch_stats_) {
        const Scalar inv_m = Scalar(1) / static_cast<Scalar>(count_);
        dx = ((g.data.colwise() - sum_g * inv_m).array() -
              normalized_[b].array().colwise() * (sum_gx.array() * inv_m))
                 .colwise() *
             scale;
      } else {
        dx = g.data.array().colwise() * scale;
      }
      grad_in.emplace_back(std::move(dx), g.shape);
    }
    return grad_in;
  }

  template <typename F>
  void visit(F&& f) {
    f(gamma_);
    f(beta_);
    f(running_mean_);
    f(running_var_);
  }

 private:
  Parameter<Scalar> gamma_;
  Parameter<Scalar> beta_;
  Parameter<Scalar> running_mean_;
  Parameter<Scalar> running_var_;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std_;
  std::vector<Mat<Scalar>> normalized_;
  Index count_ = 0;
  bool batch_stats_ = false;
};

template <typename Scalar>
class ReLU {
 public:
  Batch<Scalar> forward(Batch<Scalar> in) {
    masks_.clear();
    for (auto& v : in) {
      masks_.push_back((v.data.array() > Scalar(0)).template cast<Scalar>());
      v.data = v.data.cwiseMax(Scalar(0));
    }
    return in;
  }

  Batch<Scalar> backward(Batch<Scalar> grad) {
    for (std::size_t b = 0; b < grad.size(); ++b) grad[b].data.array() *= masks_[b];
    return grad;
  }

 private:
  std::vector<Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>> masks_;
};

/// Inverted dropout: kept activations are scaled by 1 / (1 - rate) during training.
template <typename Scalar>
class Dropout {
 public:
  Dropout() = default;
  explicit Dropout(double rate) : rate_(rate) {}

  Batch<Scalar> forward(Batch<Scalar> in, const Pass& pass) {
    active_ = pass.dropout_active && rate_ > 0.0;
    masks_.clear();
    if (!active_) return in;
    if (pass.rng == nullptr) fail(Errc::ShapeMismatch, "dropout in training mode needs an rng");
    const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - rate_));
    for (auto& v : in) {
      Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> mask(v.data.rows(), v.data.cols());
      for (Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = pass.rng->uniform() < rate_ ? Scalar(0) : keep_scale;
      }
      v.data.array() *= mask;
      masks_.push_back(std::move(mask));
    }
    return in;
  }

  Batch<Scalar> backward(Batch<Scalar> grad) {
    if (!active_) return grad;
    for (std::size_t b = 0; b < grad.size(); ++b) grad[b].data.array() *= masks_[b];
    return grad;
  }

 private:
  double rate_ = 0.0;
  bool active_ = false;
  std::vector<Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>> masks_;
};

/// 2x2x2 max pooling with stride 2; odd trailing voxels are dropped (floor).
template <typename Scalar>
class MaxPool3d {
 public:
  static Shape3 output_shape(const Shape3& s) { return {s.x / 2, s.y / 2, s.z / 2}; }

  Batch<Scalar> forward(const Batch<Scalar>& in) {
    Batch<Scalar> out;
    argmax_.clear();
    in_shapes_.clear();
    for (const auto& v : in) {
      const Shape3 os = output_shape(v.shape);
      if (os.voxels() == 0) fail(Errc::ShapeMismatch, "pooling would empty the volume");
      const Index c = v.channels();
      Volume<Scalar> y(c, os);
      Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic> arg(c, os.voxels());
      for (Index i = 0; i < os.x; ++i) {
        for (Index j = 0; j < os.y; ++j) {
          for (Index k = 0; k < os.z; ++k) {
            const Index dst = os.index(i, j, k);
            const Index first = v.shape.index(2 * i, 2 * j, 2 * k);
            y.data.col(dst) = v.data.col(first);
            arg.col(dst).setConstant(static_cast<std::int32_t>(first));
            for (Index q = 1; q < 8; ++q) {
              const Index src = v.shape.index(2 * i + (q >> 2), 2 * j + ((q >> 1) & 1), 2 * k + (q & 1));
              for (Index ch = 0; ch < c; ++ch) {
                if (v.data(ch, src) > y.data(ch, dst)) {
                  y.data(ch, dst) = v.data(ch, src);
                  arg(ch, dst) = static_cast<std::int32_t>(src);
                }
              }
            }
          }
        }
      }
      out.push_back(std::move(y));
      argmax_.push_back(std::move(arg));
      in_shapes_.push_back(v.shape);
    }
    return out;
  }

  Batch<Scalar> backward(const Batch<Scalar>& grad_out) {
    Batch<Scalar> grad_in;
    for (std::size_t b = 0; b < grad_out.size(); ++b) {
      const auto& g = grad_out[b];
      Volume<Scalar> dx(g.channels(), in_shapes_[b]);
      const auto& arg = argmax_[b];
      for (Index col = 0; col < g.data.cols(); ++col) {
        for (Index ch = 0; ch < g.data.rows(); ++ch) dx.data(ch, arg(ch, col)) += g.data(ch, col);
      }
      grad_in.push_back(std::move(dx));
    }
    return grad_in;
  }

 private:
  std::vector<Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>> argmax_;
  std::vector<Shape3> in_shapes_;
};

/// Mean over the z axis: (C, X, Y, Z) -> (C, X, Y, 1). Values are summed in sorted order, so
/// the result does not depend on the z ordering.
template <typename Scalar>
class ZMean {
 public:
  Batch<Scalar> forward(const Batch<Scalar>& in) {
    Batch<Scalar> out;
    depth_.clear();
    for (const auto& v : in) {
      const Shape3 os{v.shape.x, v.shape.y, 1};
      Volume<Scalar> y(v.channels(), os);
      const Index nz = v.shape.z;
      std::vector<Scalar> column(static_cast<std::size_t>(nz));
      for (Index p = 0; p < os.voxels(); ++p) {
        for (Index c = 0; c < v.channels(); ++c) {
          for (Index k = 0; k < nz; ++k) column[static_cast<std::size_t>(k)] = v.data(c, p * nz + k);
          std::sort(column.begin(), column.end());
          double sum = 0.0;
          for (Scalar value : column) sum += static_cast<double>(value);
          y.data(c, p) = static_cast<Scalar>(sum / static_cast<double>(nz));
        }
      }
      out.push_back(std::move(y));
      depth_.push_back(nz);
    }
    return out;
  }

  Batch<Scalar> backward(const Batch<Scalar>& grad_out) {
    Batch<Scalar> grad_in;
    for (std::size_t b = 0; b < grad_out.size(); ++b) {
      const auto& g = grad_out[b];
      const Index nz = depth_[b];
      Volume<Scalar> dx(g.channels(), Shape3{g.shape.x, g.shape.y, nz});
      for (Index p = 0; p < g.shape.voxels(); ++p) {
        dx.data.middleCols(p * nz, nz).colwise() = g.data.col(p) / static_cast<Scalar>(nz);
      }
      grad_in.push_back(std::move(dx));
    }
    return grad_in;
  }

 private:
  std::vector<Index> depth_;
};

template <typename Scalar>
Batch<Scalar> add(Batch<Scalar> a, const Batch<Scalar>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i].data += b[i].data;
  return a;
}

/// Channel concatenation [first; second].
template <typename Scalar>
Batch<Scalar> concat(const Batch<Scalar>& first, const Batch<Scalar>& second) {
  Batch<Scalar> out;
  for (std::size_t i = 0; i < first.size(); ++i) {
    if (!(first[i].shape == second[i].shape)) fail(Errc::ShapeMismatch, "skip connection shape mismatch");
    Mat<Scalar> d(first[i].channels() + second[i].channels(), first[i].data.cols());
    d << first[i].data, second[i].data;
    out.emplace_back(std::move(d), first[i].shape);
  }
  return out;
}

template <typename Scalar>
std::pair<Batch<Scalar>, Batch<Scalar>> split_channels(const Batch<Scalar>& grad, Index first_channels) {
  Batch<Scalar> a;
  Batch<Scalar> b;
  for (const auto& g : grad) {
    a.emplace_back(g.data.topRows(first_channels), g.shape);
    b.emplace_back(g.data.bottomRows(g.channels() - first_channels), g.shape);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace tomoheight::volnet
