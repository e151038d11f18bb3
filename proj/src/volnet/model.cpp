#include "tomoheight/volnet/model.hpp"

#include <cmath>

#include "tomoheight/container.hpp"
#include "tomoheight/fileio.hpp"

namespace tomoheight::volnet {

using nlohmann::json;

std::string_view to_string(Backbone b) noexcept {
  switch (b) {
    case Backbone::Model1: return "Model1";
    case Backbone::Model2: return "Model2";
    case Backbone::Model3: return "Model3";
  }
  return "?";
}

std::string_view to_string(Collapse c) noexcept {
  switch (c) {
    case Collapse::ConvZ: return "ConvZ";
    case Collapse::GapZ: return "GapZ";
    case Collapse::ProgressiveZ: return "ProgressiveZ";
  }
  return "?";
}

Backbone parse_backbone(std::string_view s) {
  for (auto b : {Backbone::Model1, Backbone::Model2, Backbone::Model3}) {
    if (s == to_string(b)) return b;
  }
  fail(Errc::ConfigError, "unknown backbone '" + std::string(s) + "'");
}

Collapse parse_collapse(std::string_view s) {
  for (auto c : {Collapse::ConvZ, Collapse::GapZ, Collapse::ProgressiveZ}) {
    if (s == to_string(c)) return c;
  }
  fail(Errc::ConfigError, "unknown collapse head '" + std::string(s) + "'");
}

Index default_base_width(Backbone b) {
  switch (b) {
    case Backbone::Model1: return 64;
    case Backbone::Model2: return 32;
    case Backbone::Model3: return 30;
  }
  return 32;
}

ModelSpec ModelSpec::defaults(Backbone b, Collapse c, Index in_channels) {
  ModelSpec s;
  s.backbone = b;
  s.collapse = c;
  s.in_channels = in_channels;
  s.base_width = default_base_width(b);
  return s;
}

void ModelSpec::validate() const {
  if (in_channels < 1) fail(Errc::BadSpec, "in_channels must be at least 1");
  if (base_width < 4) fail(Errc::BadSpec, "base_width must be at least 4");
  if (!(dropout_rate >= 0.0 && dropout_rate <= 0.5)) fail(Errc::BadSpec, "dropout_rate must lie in [0, 0.5]");
}

json to_json(const ModelSpec& spec) {
  return {{"backbone", to_string(spec.backbone)},
          {"collapse", to_string(spec.collapse)},
          {"in_channels", spec.in_channels},
          {"base_width", spec.base_width},
          {"dropout_rate", spec.dropout_rate},
          {"batch_norm", spec.batch_norm}};
}

ModelSpec model_spec_from_json(const json& j) {
  ModelSpec s;
  try {
    s.backbone = parse_backbone(j.at("backbone").get<std::string>());
    s.collapse = parse_collapse(j.at("collapse").get<std::string>());
    s.in_channels = j.at("in_channels").get<Index>();
    s.base_width = j.at("base_width").get<Index>();
    s.dropout_rate = j.at("dropout_rate").get<double>();
    s.batch_norm = j.at("batch_norm").get<bool>();
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, std::string("model spec: ") + e.what());
  }
  s.validate();
  return s;
}

bool valid_patch_width(Index w) noexcept { return w == 16 || w == 32 || w == 64; }

template <typename Scalar>
struct Model<Scalar>::Net {
  std::vector<ConvBlock<Scalar>> enc;
  std::vector<MaxPool3d<Scalar>> pools;
  std::vector<UpConv3d<Scalar>> ups;
  std::vector<ConvBlock<Scalar>> dec;
  CollapseHead<Scalar> head;
  std::vector<Index> widths;

  explicit Net(const ModelSpec& s) : head(s.collapse, s.base_width, kPatchDepth) {
    const Index levels = s.levels();
    for (Index i = 0; i <= levels; ++i) widths.push_back(s.base_width << i);
    Index in = s.in_channels;
    for (Index i = 0; i <= levels; ++i) {
      enc.emplace_back("enc" + std::to_string(i), in, widths[i], s.block_kind(), s.batch_norm, s.dropout_rate);
      in = widths[i];
    }
    pools.resize(levels);
    for (Index i = 0; i < levels; ++i) {
      ups.emplace_back("up" + std::to_string(i), widths[i + 1], widths[i]);
      dec.emplace_back("dec" + std::to_string(i), 2 * widths[i], widths[i], s.block_kind(), s.batch_norm,
                       s.dropout_rate);
    }
  }

  template <typename F>
  void visit(F&& f) {
    for (auto& b : enc) b.visit(f);
    for (std::size_t i = ups.size(); i-- > 0;) {
      ups[i].visit(f);
      dec[i].visit(f);
    }
    head.visit(f);
  }

  void init(Rng& rng) {
    for (auto& b : enc) b.init(rng);
    for (std::size_t i = ups.size(); i-- > 0;) {
      ups[i].init(rng);
      dec[i].init(rng);
    }
    head.init(rng);
  }

  Batch<Scalar> forward(Batch<Scalar> h, const Pass& pass) {
    const std::size_t levels = pools.size();
    std::vector<Batch<Scalar>> skips;
    for (std::size_t i = 0; i < levels; ++i) {
      h = enc[i].forward(h, pass);
      skips.push_back(h);
      h = pools[i].forward(h);
    }
    h = enc[levels].forward(h, pass);
    for (std::size_t i = levels; i-- > 0;) {
      h = concat(ups[i].forward(h, skips[i].front().shape), skips[i]);
      h = dec[i].forward(h, pass);
    }
    return head.forward(h);
  }

  void backward(const Batch<Scalar>& grad_out) {
    const std::size_t levels = pools.size();
    Batch<Scalar> g = head.backward(grad_out);
    std::vector<Batch<Scalar>> skip_grads(levels);
    for (std::size_t i = 0; i < levels; ++i) {
      g = dec[i].backward(std::move(g));
      auto [up_grad, skip_grad] = split_channels(g, widths[i]);
      skip_grads[i] = std::move(skip_grad);
      g = ups[i].backward(up_grad);
    }
    g = enc[levels].backward(std::move(g));
    for (std::size_t i = levels; i-- > 0;) {
      g = add(pools[i].backward(g), skip_grads[i]);
      g = enc[i].backward(std::move(g));
    }
  }
};

template <typename Scalar>
Model<Scalar>::Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  net_ = std::make_unique<Net>(spec_);
  Rng rng(derive_seed(seed, "volnet.init"));
  net_->init(rng);
}

template <typename Scalar>
Model<Scalar>::Model(const Model& other) : spec_(other.spec_), net_(std::make_unique<Net>(*other.net_)) {}

template <typename Scalar>
Model<Scalar>& Model<Scalar>::operator=(const Model& other) {
  if (this != &other) {
    spec_ = other.spec_;
    net_ = std::make_unique<Net>(*other.net_);
  }
  return *this;
}

template <typename Scalar>
Model<Scalar>::Model(Model&&) noexcept = default;
template <typename Scalar>
Model<Scalar>& Model<Scalar>::operator=(Model&&) noexcept = default;
template <typename Scalar>
Model<Scalar>::~Model() = default;

template <typename Scalar>
std::vector<typename Model<Scalar>::Map> Model<Scalar>::forward(const Batch<Scalar>& batch, const Pass& pass) {
  if (batch.empty()) fail(Errc::ShapeMismatch, "empty batch");
  const Shape3 shape = batch.front().shape;
  const Index divisor = Index{1} << spec_.levels();
  for (const auto& v : batch) {
    if (v.channels() != spec_.in_channels) {
      fail(Errc::ShapeMismatch, "expected " + std::to_string(spec_.in_channels) + " channels, got " +
                                    std::to_string(v.channels()));
    }
    if (!(v.shape == shape)) fail(Errc::ShapeMismatch, "patches in a batch must share one shape");
    if (v.shape.z != kPatchDepth) fail(Errc::ShapeMismatch, "patch depth must be 36");
    if (v.shape.x != v.shape.y || !valid_patch_width(v.shape.x) || v.shape.x % divisor != 0) {
      fail(Errc::ShapeMismatch, "patch width must be 16, 32 or 64 and divisible by " + std::to_string(divisor));
    }
    if (!v.data.allFinite()) fail(Errc::NonFinite, "non-finite patch value");
  }

  const Batch<Scalar> out = net_->forward(batch, pass);
  std::vector<Map> maps;
  maps.reserve(out.size());
  const Index w = shape.x;
  for (const auto& v : out) {
    Map m(w, w);
    for (Index x = 0; x < w; ++x) {
      for (Index y = 0; y < w; ++y) m(x, y) = v.data(0, x * w + y);
    }
    if (!m.allFinite()) fail(Errc::NonFinite, "non-finite network output");
    maps.push_back(std::move(m));
  }
  return maps;
}

template <typename Scalar>
Scalar Model<Scalar>::loss_and_backward(const Batch<Scalar>& batch, const std::vector<Map>& targets,
                                        const Pass& pass) {
  if (targets.size() != batch.size()) fail(Errc::ShapeMismatch, "one target map per patch required");
  const std::vector<Map> preds = forward(batch, pass);
  Index valid = 0;
  for (std::size_t b = 0; b < preds.size(); ++b) {
    if (targets[b].rows() != preds[b].rows() || targets[b].cols() != preds[b].cols()) {
      fail(Errc::ShapeMismatch, "target map shape differs from patch");
    }
    valid += (targets[b].array() == targets[b].array()).count();
  }
  if (valid == 0) return Scalar(0);

  const Scalar scale = Scalar(2) / static_cast<Scalar>(valid);
  double loss = 0.0;
  Batch<Scalar> grads;
  for (std::size_t b = 0; b < preds.size(); ++b) {
    const Index w = preds[b].rows();
    Volume<Scalar> g(1, Shape3{w, w, 1});
    for (Index x = 0; x < w; ++x) {
      for (Index y = 0; y < w; ++y) {
        const Scalar t = targets[b](x, y);
        if (std::isnan(t)) continue;
        const Scalar d = preds[b](x, y) - t;
        loss += static_cast<double>(d) * static_cast<double>(d);
        g.data(0, x * w + y) = scale * d;
      }
    }
    grads.push_back(std::move(g));
  }
  net_->backward(grads);
  return static_cast<Scalar>(loss / static_cast<double>(valid));
}

template <typename Scalar>
void Model<Scalar>::zero_grad() {
  net_->visit([](Parameter<Scalar>& p) { p.grad.setZero(); });
}

template <typename Scalar>
void Model<Scalar>::visit(const std::function<void(Parameter<Scalar>&)>& f) {
  net_->visit(f);
}

template <typename Scalar>
void Model<Scalar>::visit(const std::function<void(const Parameter<Scalar>&)>& f) const {
  net_->visit([&](Parameter<Scalar>& p) { f(p); });
}

template <typename Scalar>
Index Model<Scalar>::parameter_count() const {
  Index n = 0;
  visit([&](const Parameter<Scalar>& p) {
    if (p.trainable) n += p.value.size();
  });
  return n;
}

template <typename Scalar>
void Model<Scalar>::set_output_bias(Scalar value) {
  net_->head.output_bias().value.setConstant(value);
}

template class Model<float>;
template class Model<double>;

std::string encode_checkpoint(const Model<float>& model, const json& meta) {
  json tensors = json::array();
  std::string payload;
  model.visit([&](const Parameter<float>& p) {
    tensors.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    fileio::append_f32_le(payload, std::span<const float>(p.value.data(), static_cast<std::size_t>(p.value.size())));
  });
  const json header{{"spec", to_json(model.spec())}, {"meta", meta}, {"tensors", tensors}};
  return fileio::pack(kCheckpointMagic, header, payload);
}

std::pair<Model<float>, json> decode_checkpoint(std::string_view bytes) {
  const auto unpacked = fileio::unpack(bytes, kCheckpointMagic);
  const auto spec_json = fileio::header_field<json>(unpacked.header, "spec");
  const auto tensors = fileio::header_field<json>(unpacked.header, "tensors");
  json meta = unpacked.header.value("meta", json::object());
  ModelSpec spec;
  try {
    spec = model_spec_from_json(spec_json);
  } catch (const Error& e) {
    fail(Errc::HeaderParse, e.what());
  }
  Model<float> model(spec);
  std::size_t index = 0;
  std::size_t offset = 0;
  std::string_view payload = unpacked.payload;
  model.visit([&](Parameter<float>& p) {
    if (!tensors.is_array() || index >= tensors.size()) fail(Errc::HeaderParse, "checkpoint tensor list too short");
    const json& t = tensors[index++];
    if (t.value("name", std::string()) != p.name || t.value("rows", Index{-1}) != p.value.rows() ||
        t.value("cols", Index{-1}) != p.value.cols()) {
      fail(Errc::HeaderParse, "checkpoint tensor '" + p.name + "' does not match the model spec");
    }
    const std::size_t n = static_cast<std::size_t>(p.value.size());
    if (payload.size() < offset + 4 * n) fail(Errc::TruncatedPayload, "checkpoint payload too short");
    fileio::read_f32_le(payload.substr(offset), std::span<float>(p.value.data(), n));
    offset += 4 * n;
  });
  if (index != tensors.size()) fail(Errc::HeaderParse, "checkpoint lists extra tensors");
  if (offset != payload.size()) fail(Errc::HeaderParse, "checkpoint payload has trailing bytes");
  return {std::move(model), std::move(meta)};
}

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path, const json& meta) {
  fileio::write_file(path, encode_checkpoint(model, meta));
}

std::pair<Model<float>, json> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(fileio::read_file(path));
}

bool parameters_equal(const Model<float>& a, const Model<float>& b) {
  if (!(a.spec() == b.spec())) return false;
  std::vector<const Parameter<float>*> pa;
  a.visit([&](const Parameter<float>& p) { pa.push_back(&p); });
  std::size_t i = 0;
  bool equal = true;
  b.visit([&](const Parameter<float>& p) {
    const auto& q = *pa[i++];
    equal = equal && q.name == p.name && q.value.rows() == p.value.rows() && q.value.cols() == p.value.cols() &&
            std::memcmp(q.value.data(), p.value.data(), sizeof(float) * static_cast<std::size_t>(p.value.size())) == 0;
  });
  return equal;
}

}  // namespace tomoheight::volnet
