// SPDX-License-Identifier: Apache-2.0
#include "leafnet/model.hpp"

#include <algorithm>

namespace leafnet {

std::string_view to_string(Preset preset) { return preset == Preset::ResNet50 ? "resnet50" : "mini"; }

Preset parse_preset(std::string_view name) {
  if (name == "resnet50") return Preset::ResNet50;
  if (name == "mini") return Preset::Mini;
  throw Error(ErrorCode::InvalidArgument, "unknown preset '" + std::string(name) + "'");
}

std::string LayerSpec::kind() const {
  return std::visit(
      [](const auto& l) -> std::string {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, ConvLayer>) return "conv2d";
        else if constexpr (std::is_same_v<L, BatchNormLayer>) return "batchnorm";
        else if constexpr (std::is_same_v<L, ReluLayer>) return "relu";
        else if constexpr (std::is_same_v<L, LeakyReluLayer>) return "leaky_relu";
        else if constexpr (std::is_same_v<L, DropoutLayer>) return "dropout";
        else if constexpr (std::is_same_v<L, MaxPoolLayer>) return "max_pool2d";
        else if constexpr (std::is_same_v<L, GlobalAvgPoolLayer>) return "global_avg_pool";
        else if constexpr (std::is_same_v<L, DenseLayer>) return "dense";
        else if constexpr (std::is_same_v<L, SoftmaxLayer>) return "softmax";
        else return "residual_block";
      },
      layer);
}

bool ParamGroup::trainable() const {
  return std::any_of(tensors.begin(), tensors.end(), [](const Tensor& t) { return t.requires_grad(); });
}

std::size_t ParamGroup::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.numel();
  return n;
}

namespace {

// A parameter-bearing unit in forward order.
struct Unit {
  std::string name;
  ConvParams* conv = nullptr;
  BatchNormState* norm = nullptr;
  DenseParams* dense = nullptr;
  bool head = false;
};

std::vector<Unit> collect_units(ModelGraph& model) {
  std::vector<Unit> units;
  for (auto& spec : model.layers) {
    std::visit(
        [&](auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, ConvLayer>) {
            units.push_back({spec.name, &l.params, nullptr, nullptr, spec.head});
          } else if constexpr (std::is_same_v<L, BatchNormLayer>) {
            units.push_back({spec.name, nullptr, &l.state, nullptr, spec.head});
          } else if constexpr (std::is_same_v<L, DenseLayer>) {
            units.push_back({spec.name, nullptr, nullptr, &l.params, spec.head});
          } else if constexpr (std::is_same_v<L, ResidualLayer>) {
            auto& b = l.block;
            for (std::size_t i = 0; i < b.convs.size(); ++i) {
              const std::string idx = std::to_string(i + 1);
              units.push_back({spec.name + ".conv" + idx, &b.convs[i], nullptr, nullptr, spec.head});
              units.push_back({spec.name + ".bn" + idx, nullptr, &b.norms[i], nullptr, spec.head});
            }
            if (b.projection) {
              units.push_back({spec.name + ".proj", &*b.projection, nullptr, nullptr, spec.head});
              units.push_back({spec.name + ".proj_bn", nullptr, &*b.projection_norm, nullptr, spec.head});
            }
          }
        },
        spec.layer);
  }
  return units;
}

void check_input(Preset preset, const InputSpec& input) {
  const std::size_t min_side = preset == Preset::ResNet50 ? 32 : 16;
  require(input.channels >= 1, ErrorCode::InvalidArgument, "input needs at least one channel");
  require(input.height >= min_side && input.width >= min_side, ErrorCode::InputTooSmall,
          std::string(to_string(preset)) + " needs spatial dims >= " + std::to_string(min_side) + ", got " +
              std::to_string(input.height) + "x" + std::to_string(input.width));
}

Shape conv_shape(const Shape& in, const ConvParams& p) {
  require(in.size() == 4 && in[1] == p.in_channels(), ErrorCode::ShapeMismatch,
          "conv expects " + std::to_string(p.in_channels()) + " channels, got " + shape_to_string(in));
  const auto gy = conv_axis_geometry(in[2], p.kernel.dim(2), p.stride_h, p.padding);
  const auto gx = conv_axis_geometry(in[3], p.kernel.dim(3), p.stride_w, p.padding);
  return {in[0], p.out_channels(), gy.out, gx.out};
}

}  // namespace

std::size_t ModelGraph::head_start() const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].head) return i;
  return layers.size();
}

Tensor ModelGraph::forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (auto& spec : layers) {
    h = std::visit(
        [&](auto& l) -> Tensor {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, ConvLayer>) {
            return conv2d_forward(h, l.params);
          } else if constexpr (std::is_same_v<L, BatchNormLayer>) {
            l.state.mode = effective_norm_mode(l.state, mode);
            return batchnorm_forward(h, l.state);
          } else if constexpr (std::is_same_v<L, ReluLayer>) {
            return relu(h);
          } else if constexpr (std::is_same_v<L, LeakyReluLayer>) {
            return leaky_relu(h, l.alpha);
          } else if constexpr (std::is_same_v<L, DropoutLayer>) {
            l.params.mode = mode;
            return dropout(h, l.params, dropout_rng);
          } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
            return max_pool2d(h, l.window, l.stride);
          } else if constexpr (std::is_same_v<L, GlobalAvgPoolLayer>) {
            return global_avg_pool(h);
          } else if constexpr (std::is_same_v<L, DenseLayer>) {
            return dense_forward(h, l.params);
          } else if constexpr (std::is_same_v<L, SoftmaxLayer>) {
            return softmax(h);
          } else {
            return residual_block_forward(h, l.block, mode);
          }
        },
        spec.layer);
  }
  return h;
}

std::vector<ParamGroup> ModelGraph::param_groups() {
  std::vector<ParamGroup> groups;
  for (const Unit& u : collect_units(*this)) {
    if (u.conv) {
      ParamGroup g{u.name, {u.conv->kernel}, u.head};
      if (u.conv->bias.defined()) g.tensors.push_back(u.conv->bias);
      groups.push_back(std::move(g));
    } else if (u.norm) {
      groups.push_back({u.name + ".gamma", {u.norm->gamma}, u.head});
      groups.push_back({u.name + ".beta", {u.norm->beta}, u.head});
    } else if (u.dense) {
      groups.push_back({u.name, {u.dense->weight, u.dense->bias}, u.head});
    }
  }
  return groups;
}

std::vector<std::pair<std::string, Tensor>> ModelGraph::named_state() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const Unit& u : collect_units(*this)) {
    if (u.conv) {
      out.emplace_back(u.name + ".kernel", u.conv->kernel);
      if (u.conv->bias.defined()) out.emplace_back(u.name + ".bias", u.conv->bias);
    } else if (u.norm) {
      out.emplace_back(u.name + ".gamma", u.norm->gamma);
      out.emplace_back(u.name + ".beta", u.norm->beta);
      out.emplace_back(u.name + ".running_mean", u.norm->running_mean);
      out.emplace_back(u.name + ".running_var", u.norm->running_var);
    } else if (u.dense) {
      out.emplace_back(u.name + ".weight", u.dense->weight);
      out.emplace_back(u.name + ".bias", u.dense->bias);
    }
  }
  return out;
}

Shape ModelGraph::output_shape() const {
  Shape s{1, input.channels, input.height, input.width};
  for (const auto& spec : layers) {
    s = std::visit(
        [&](const auto& l) -> Shape {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, ConvLayer>) {
            return conv_shape(s, l.params);
          } else if constexpr (std::is_same_v<L, BatchNormLayer>) {
            require(s.size() >= 2 && s[1] == l.state.gamma.numel(), ErrorCode::ShapeMismatch,
                    spec.name + ": batchnorm width mismatch");
            return s;
          } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
            require(s.size() == 4 && s[2] >= l.window && s[3] >= l.window, ErrorCode::ShapeMismatch,
                    spec.name + ": pooling window larger than input");
            return {s[0], s[1], (s[2] - l.window) / l.stride + 1, (s[3] - l.window) / l.stride + 1};
          } else if constexpr (std::is_same_v<L, GlobalAvgPoolLayer>) {
            require(s.size() == 4, ErrorCode::ShapeMismatch, spec.name + ": GAP needs a 4-D input");
            return {s[0], s[1]};
          } else if constexpr (std::is_same_v<L, DenseLayer>) {
            require(s.size() == 2 && s[1] == l.params.weight.dim(1), ErrorCode::ShapeMismatch,
                    spec.name + ": dense input width mismatch");
            return {s[0], l.params.weight.dim(0)};
          } else if constexpr (std::is_same_v<L, ResidualLayer>) {
            Shape main = s;
            for (const auto& c : l.block.convs) main = conv_shape(main, c);
            const Shape shortcut = l.block.projection ? conv_shape(s, *l.block.projection) : s;
            require(main == shortcut, ErrorCode::ShapeMismatch, spec.name + ": shortcut shape mismatch");
            return main;
          } else {
            return s;
          }
        },
        spec.layer);
  }
  return s;
}

std::vector<Tensor> ModelGraph::snapshot() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_state()) out.push_back(t.clone());
  return out;
}

void ModelGraph::restore(const std::vector<Tensor>& snap) {
  auto state = named_state();
  require(snap.size() == state.size(), ErrorCode::ShapeMismatchOnLoad, "snapshot size mismatch");
  for (std::size_t i = 0; i < state.size(); ++i) {
    Tensor& dst = state[i].second;
    require(dst.shape() == snap[i].shape() && dst.dtype() == snap[i].dtype(), ErrorCode::ShapeMismatchOnLoad,
            "snapshot tensor " + state[i].first + " does not match");
    dst.impl()->data = snap[i].impl()->data;
  }
}

nlohmann::json ModelGraph::descriptor() const {
  nlohmann::json d;
  d["preset"] = std::string(to_string(preset));
  d["input"] = {input.channels, input.height, input.width};
  d["dtype"] = std::string(to_string(dtype));
  d["seed"] = seed;
  if (head_kind == "custom") {
    d["head"] = {{"kind", "custom"},
                 {"widths", head_spec.widths},
                 {"dropout", head_spec.dropout_rates},
                 {"alpha", head_spec.leaky_alpha},
                 {"classes", head_spec.classes}};
  } else if (head_kind == "linear") {
    d["head"] = {{"kind", "linear"}, {"classes", class_count}};
  } else {
    d["head"] = nullptr;
  }
  return d;
}

ModelGraph build_backbone(Preset preset, const InputSpec& input, std::uint64_t seed, DType dtype) {
  check_input(preset, input);
  ModelGraph m;
  m.preset = preset;
  m.input = input;
  m.dtype = dtype;
  m.seed = seed;
  m.dropout_rng = Rng(derive_seed(seed, "dropout"));
  Rng rng(derive_seed(seed, "backbone"));

  auto add = [&](std::string name, Layer layer) { m.layers.push_back({std::move(name), std::move(layer), false}); };

  std::vector<std::size_t> blocks, widths, strides;
  std::size_t channels = 0;
  if (preset == Preset::ResNet50) {
    add("stem.conv", ConvLayer{make_conv(input.channels, 64, 7, 2, Padding::Same, false, rng, dtype)});
    add("stem.bn", BatchNormLayer{make_batchnorm(64, dtype)});
    add("stem.relu", ReluLayer{});
    add("stem.pool", MaxPoolLayer{3, 2});
    channels = 64;
    blocks = {3, 4, 6, 3};
    widths = {64, 128, 256, 512};
    strides = {1, 2, 2, 2};
  } else {
    add("stem.conv", ConvLayer{make_conv(input.channels, 16, 3, 1, Padding::Same, false, rng, dtype)});
    add("stem.bn", BatchNormLayer{make_batchnorm(16, dtype)});
    add("stem.relu", ReluLayer{});
    channels = 16;
    blocks = {2, 2, 2};
    widths = {16, 32, 64};
    strides = {1, 2, 2};
  }
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    for (std::size_t b = 0; b < blocks[s]; ++b) {
      const std::size_t stride = b == 0 ? strides[s] : 1;
      const std::string name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      if (preset == Preset::ResNet50) {
        add(name, ResidualLayer{make_bottleneck_block(channels, widths[s], stride, rng, dtype)});
        channels = widths[s] * 4;
      } else {
        add(name, ResidualLayer{make_basic_block(channels, widths[s], stride, rng, dtype)});
        channels = widths[s];
      }
    }
  }
  for (auto& [name, t] : m.named_state()) t.set_requires_grad(!name.ends_with("running_mean") && !name.ends_with("running_var"));
  (void)m.output_shape();
  return m;
}

namespace {

void check_headless(const ModelGraph& model) {
  require(!model.has_head(), ErrorCode::AlreadyHasHead, "model already has a classification head");
  const Shape s = model.output_shape();
  require(s.size() == 4, ErrorCode::ShapeMismatch, "head expects a 4-D feature map, got " + shape_to_string(s));
}

void mark_trainable(LayerSpec& spec) {
  std::visit(
      [](auto& l) {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, DenseLayer>) {
          l.params.weight.set_requires_grad(true);
          l.params.bias.set_requires_grad(true);
        } else if constexpr (std::is_same_v<L, BatchNormLayer>) {
          l.state.gamma.set_requires_grad(true);
          l.state.beta.set_requires_grad(true);
        }
      },
      spec.layer);
}

}  // namespace

void attach_head(ModelGraph& model, const HeadSpec& head) {
  check_headless(model);
  require(head.widths.size() == head.dropout_rates.size(), ErrorCode::InvalidArgument,
          "head needs one dropout rate per hidden width");
  require(head.classes >= 2, ErrorCode::InvalidArgument, "head needs at least 2 classes");
  for (std::size_t w : head.widths) require(w > 0, ErrorCode::InvalidArgument, "head widths must be positive");
  for (double r : head.dropout_rates)
    require(r >= 0.0 && r < 1.0, ErrorCode::InvalidArgument, "dropout rates must be in [0, 1)");

  Rng rng(derive_seed(model.seed, "head"));
  std::size_t features = model.output_shape()[1];
  const std::size_t first = model.layers.size();
  auto add = [&](std::string name, Layer layer) { model.layers.push_back({std::move(name), std::move(layer), true}); };
  add("head.gap", GlobalAvgPoolLayer{});
  for (std::size_t i = 0; i < head.widths.size(); ++i) {
    const std::string idx = std::to_string(i + 1);
    add("head.dense" + idx, DenseLayer{make_dense(features, head.widths[i], rng, model.dtype)});
    add("head.bn" + idx, BatchNormLayer{make_batchnorm(head.widths[i], model.dtype)});
    add("head.act" + idx, LeakyReluLayer{head.leaky_alpha});
    add("head.drop" + idx, DropoutLayer{DropoutParams{head.dropout_rates[i], Mode::Train}});
    features = head.widths[i];
  }
  add("head.out", DenseLayer{make_dense(features, head.classes, rng, model.dtype)});
  add("head.softmax", SoftmaxLayer{});
  for (std::size_t i = first; i < model.layers.size(); ++i) mark_trainable(model.layers[i]);
  model.head_kind = "custom";
  model.head_spec = head;
  model.class_count = head.classes;
}

void attach_linear_head(ModelGraph& model, std::size_t classes) {
  check_headless(model);
  require(classes >= 2, ErrorCode::InvalidArgument, "head needs at least 2 classes");
  Rng rng(derive_seed(model.seed, "linear_head"));
  const std::size_t features = model.output_shape()[1];
  const std::size_t first = model.layers.size();
  model.layers.push_back({"head.gap", GlobalAvgPoolLayer{}, true});
  model.layers.push_back({"head.out", DenseLayer{make_dense(features, classes, rng, model.dtype)}, true});
  model.layers.push_back({"head.softmax", SoftmaxLayer{}, true});
  for (std::size_t i = first; i < model.layers.size(); ++i) mark_trainable(model.layers[i]);
  model.head_kind = "linear";
  model.class_count = classes;
}

void strip_head(ModelGraph& model) {
  model.layers.erase(model.layers.begin() + static_cast<std::ptrdiff_t>(model.head_start()), model.layers.end());
  model.head_kind.clear();
  model.class_count = 0;
}

ModelGraph model_from_descriptor(const nlohmann::json& d) {
  try {
    const auto in = d.at("input");
    InputSpec input{in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(), in.at(2).get<std::size_t>()};
    const std::string dtype_name = d.at("dtype").get<std::string>();
    const DType dtype = dtype_name == "f64" ? DType::F64 : DType::F32;
    ModelGraph m = build_backbone(parse_preset(d.at("preset").get<std::string>()), input,
                                  d.at("seed").get<std::uint64_t>(), dtype);
    const auto& head = d.at("head");
    if (!head.is_null()) {
      const std::string kind = head.at("kind").get<std::string>();
      if (kind == "custom") {
        HeadSpec spec;
        spec.widths = head.at("widths").get<std::vector<std::size_t>>();
        spec.dropout_rates = head.at("dropout").get<std::vector<double>>();
        spec.leaky_alpha = head.at("alpha").get<double>();
        spec.classes = head.at("classes").get<std::size_t>();
        attach_head(m, spec);
      } else if (kind == "linear") {
        attach_linear_head(m, head.at("classes").get<std::size_t>());
      } else {
        throw Error(ErrorCode::MalformedFile, "unknown head kind '" + kind + "'");
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("bad architecture descriptor: ") + e.what());
  }
}

void set_trainable(ModelGraph& model, TrainablePolicy policy, std::size_t k) {
  auto groups = model.param_groups();
  if (policy == TrainablePolicy::UnfreezeLastK)
    require(k <= groups.size(), ErrorCode::KOutOfRange,
            "cannot unfreeze " + std::to_string(k) + " of " + std::to_string(groups.size()) + " layers");
  if (policy == TrainablePolicy::HeadOnly)
    require(model.has_head(), ErrorCode::InvalidArgument, "head_only policy on a headless model");
  for (std::size_t i = 0; i < groups.size(); ++i) {
    bool on = false;
    switch (policy) {
      case TrainablePolicy::FreezeAll: on = false; break;
      case TrainablePolicy::UnfreezeAll: on = true; break;
      case TrainablePolicy::UnfreezeLastK: on = i >= groups.size() - k; break;
      case TrainablePolicy::HeadOnly: on = groups[i].head; break;
    }
    for (auto& t : groups[i].tensors) t.set_requires_grad(on);
  }
}

std::size_t parameterized_layer_count(ModelGraph& model) { return model.param_groups().size(); }

ParameterSummary parameter_summary(ModelGraph& model) {
  ParameterSummary s;
  for (const auto& g : model.param_groups()) {
    const std::size_t n = g.count();
    const bool on = g.trainable();
    s.per_layer.push_back({g.name, n, on});
    s.total += n;
    (on ? s.trainable : s.frozen) += n;
  }
  return s;
}

}  // namespace leafnet
