#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tomoheight/volnet/layers.hpp"

namespace tomoheight::volnet {

enum class BlockKind { Double, Residual };

/// Two [3x3x3 conv -> optional batch norm -> ReLU -> dropout] stages. The residual variant adds
/// the (projected when widths differ) input before the second ReLU.
template <typename Scalar>
class ConvBlock {
 public:
  ConvBlock(const std::string& name, Index in, Index out, BlockKind kind, bool batch_norm, double dropout)
      : kind_(kind),
        batch_norm_(batch_norm),
        conv1_(name + ".conv1", in, out, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}),
        conv2_(name + ".conv2", out, out, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}),
        drop1_(dropout),
        drop2_(dropout) {
    if (batch_norm) {
      bn1_.emplace(name + ".bn1", out);
      bn2_.emplace(name + ".bn2", out);
    }
    if (kind == BlockKind::Residual && in != out) proj_.emplace(name + ".shortcut", in, out, Shape3{1, 1, 1});
  }

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    if (proj_) proj_->init(rng);
  }

  Batch<Scalar> forward(const Batch<Scalar>& x, const Pass& pass) {
    Batch<Scalar> h = conv1_.forward(x);
    if (bn1_) h = bn1_->forward(h, pass);
    h = drop1_.forward(relu1_.forward(std::move(h)), pass);
    h = conv2_.forward(h);
    if (bn2_) h = bn2_->forward(h, pass);
    if (kind_ == BlockKind::Residual) h = add(std::move(h), proj_ ? proj_->forward(x) : x);
    return drop2_.forward(relu2_.forward(std::move(h)), pass);
  }

  Batch<Scalar> backward(Batch<Scalar> g) {
    g = relu2_.backward(drop2_.backward(std::move(g)));
    Batch<Scalar> shortcut;
    if (kind_ == BlockKind::Residual) shortcut = proj_ ? proj_->backward(g) : g;
    if (bn2_) g = bn2_->backward(g);
    g = conv2_.backward(g);
    g = relu1_.backward(drop1_.backward(std::move(g)));
    if (bn1_) g = bn1_->backward(g);
    g = conv1_.backward(g);
    if (kind_ == BlockKind::Residual) g = add(std::move(g), shortcut);
    return g;
  }

  template <typename F>
  void visit(F&& f) {
    conv1_.visit(f);
    if (bn1_) bn1_->visit(f);
    conv2_.visit(f);
    if (bn2_) bn2_->visit(f);
    if (proj_) proj_->visit(f);
  }

 private:
  BlockKind kind_;
  bool batch_norm_;
  Conv3d<Scalar> conv1_;
  Conv3d<Scalar> conv2_;
  std::optional<BatchNorm3d<Scalar>> bn1_;
  std::optional<BatchNorm3d<Scalar>> bn2_;
  std::optional<Conv3d<Scalar>> proj_;
  ReLU<Scalar> relu1_;
  ReLU<Scalar> relu2_;
  Dropout<Scalar> drop1_;
  Dropout<Scalar> drop2_;
};

enum class Collapse { ConvZ, GapZ, ProgressiveZ };

/// Reduces (C, W, W, Z) to (1, W, W, 1).
template <typename Scalar>
class CollapseHead {
 public:
  CollapseHead(Collapse kind, Index channels, Index depth) : kind_(kind), depth_(depth) {
    switch (kind) {
      case Collapse::GapZ:
        break;
      case Collapse::ConvZ:
        convs_.emplace_back("head.zconv", channels, channels, Shape3{1, 1, depth});
        break;
      case Collapse::ProgressiveZ: {
        Index z = depth;
        int i = 0;
        while (z > 1) {
          const Index pad = z > 3 ? 1 : 0;
          convs_.emplace_back("head.zconv" + std::to_string(i++), channels, channels, Shape3{1, 1, 3},
                              Shape3{1, 1, 2}, Shape3{0, 0, pad});
          z = (z + 2 * pad - 3) / 2 + 1;
        }
        break;
      }
    }
    relus_.resize(convs_.size());
    proj_ = Conv3d<Scalar>("head.proj", channels, 1, Shape3{1, 1, 1});
  }

  void init(Rng& rng) {
    for (auto& c : convs_) c.init(rng);
    proj_.init(rng, 1.0);
  }

  Batch<Scalar> forward(const Batch<Scalar>& x) {
    for (const auto& v : x) {
      if (v.shape.z != depth_) fail(Errc::ShapeMismatch, "collapse head expects z = " + std::to_string(depth_));
    }
    Batch<Scalar> h = x;
    if (kind_ == Collapse::GapZ) h = zmean_.forward(h);
    for (std::size_t i = 0; i < convs_.size(); ++i) h = relus_[i].forward(convs_[i].forward(h));
    return proj_.forward(h);
  }

  Batch<Scalar> backward(const Batch<Scalar>& g) {
    Batch<Scalar> h = proj_.backward(g);
    for (std::size_t i = convs_.size(); i-- > 0;) h = convs_[i].backward(relus_[i].backward(std::move(h)));
    if (kind_ == Collapse::GapZ) h = zmean_.backward(h);
    return h;
  }

  template <typename F>
  void visit(F&& f) {
    for (auto& c : convs_) c.visit(f);
    proj_.visit(f);
  }

  Parameter<Scalar>& output_bias() { return proj_.bias(); }

 private:
  Collapse kind_;
  Index depth_;
  std::vector<Conv3d<Scalar>> convs_;
  std::vector<ReLU<Scalar>> relus_;
  ZMean<Scalar> zmean_;
  Conv3d<Scalar> proj_;
};

}  // namespace tomoheight::volnet
