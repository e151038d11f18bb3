#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tomoheight/volnet/blocks.hpp"

namespace tomoheight::volnet {

enum class Backbone { Model1, Model2, Model3 };

inline constexpr Index kPatchDepth = 36;

std::string_view to_string(Backbone b) noexcept;
std::string_view to_string(Collapse c) noexcept;
Backbone parse_backbone(std::string_view s);
Collapse parse_collapse(std::string_view s);

/// Widths chosen so the parameter totals land near Model1 21M, Model2 1.3M, Model3 1.2M.
Index default_base_width(Backbone b);

struct ModelSpec {
  Backbone backbone = Backbone::Model2;
  Collapse collapse = Collapse::GapZ;
  Index in_channels = 3;
  Index base_width = 32;
  double dropout_rate = 0.0;
  bool batch_norm = true;

  static ModelSpec defaults(Backbone b, Collapse c = Collapse::GapZ, Index in_channels = 3);

  /// Encoder/decoder depth: 3 for Model1, 2 otherwise.
  Index levels() const noexcept { return backbone == Backbone::Model1 ? 3 : 2; }
  BlockKind block_kind() const noexcept {
    return backbone == Backbone::Model3 ? BlockKind::Residual : BlockKind::Double;
  }
  /// Throws BadSpec.
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

/// Patch widths accepted by every backbone.
bool valid_patch_width(Index w) noexcept;

/// 3D U-Net with a z-collapse head. Inputs are (C, W, W, 36) volumes; outputs W x W maps
/// indexed (x, y).
template <typename Scalar>
class Model {
 public:
  using Map = Mat<Scalar>;

  explicit Model(const ModelSpec& spec, std::uint64_t seed = 0);
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  ~Model();

  const ModelSpec& spec() const noexcept { return spec_; }

  /// Throws ShapeMismatch for a wrong channel count, z depth or width, NonFinite for
  /// non-finite inputs or outputs.
  std::vector<Map> forward(const Batch<Scalar>& batch, const Pass& pass);
  std::vector<Map> predict(const Batch<Scalar>& batch) { return forward(batch, Pass::eval()); }

  /// Masked MSE (NaN targets are nodata) of a forward pass; gradients accumulate into
  /// Parameter::grad. Returns 0 with zero gradients when every target is nodata.
  Scalar loss_and_backward(const Batch<Scalar>& batch, const std::vector<Map>& targets, const Pass& pass);

  void zero_grad();
  void visit(const std::function<void(Parameter<Scalar>&)>& f);
  void visit(const std::function<void(const Parameter<Scalar>&)>& f) const;

  /// Trainable scalars only.
  Index parameter_count() const;
  void set_output_bias(Scalar value);

 private:
  struct Net;
  ModelSpec spec_;
  std::unique_ptr<Net> net_;
};

extern template class Model<float>;
extern template class Model<double>;

/// Copies parameter values between precisions.
template <typename To, typename From>
Model<To> convert(const Model<From>& src) {
  Model<To> out(src.spec());
  std::vector<const Parameter<From>*> params;
  src.visit([&](const Parameter<From>& p) { params.push_back(&p); });
  std::size_t i = 0;
  out.visit([&](Parameter<To>& p) { p.value = params[i++]->value.template cast<To>(); });
  return out;
}

/// Masked mean squared error; NaN targets are excluded from both sum and count.
template <typename Scalar>
double masked_mse(const std::vector<Mat<Scalar>>& preds, const std::vector<Mat<Scalar>>& targets) {
  double sum = 0.0;
  Index n = 0;
  for (std::size_t b = 0; b < preds.size(); ++b) {
    for (Index i = 0; i < preds[b].size(); ++i) {
      const double t = static_cast<double>(targets[b].data()[i]);
      if (std::isnan(t)) continue;
      const double d = static_cast<double>(preds[b].data()[i]) - t;
      sum += d * d;
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

inline constexpr std::string_view kCheckpointMagic = "TMDL1\n";

/// magic | u32 LE header length | JSON {spec, meta, tensors:[{name, rows, cols}]} |
/// float32 LE tensors in header order (column-major).
std::string encode_checkpoint(const Model<float>& model, const nlohmann::json& meta = nlohmann::json::object());
std::pair<Model<float>, nlohmann::json> decode_checkpoint(std::string_view bytes);
void save_checkpoint(const Model<float>& model, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object());
std::pair<Model<float>, nlohmann::json> load_checkpoint(const std::filesystem::path& path);

/// Same spec and bitwise-equal tensors (including batch-norm running statistics).
bool parameters_equal(const Model<float>& a, const Model<float>& b);

}  // namespace tomoheight::volnet
