#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwd/container.hpp"
#include "dwd/convcore.hpp"
#include "dwd/errors.hpp"
#include "dwd/tensor.hpp"

namespace dwd {

enum class Activation { identity, relu };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  fail(ErrorKind::malformed, "unknown activation '" + s + "'");
}

using ConvLayer = std::variant<RegularConvLayer, SeparableConvLayer>;

struct NetworkLayer {
  ConvLayer conv;
  Activation activation = Activation::identity;
  bool operator==(const NetworkLayer&) const = default;
};

struct InputSignature {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const InputSignature&) const = default;
};

inline std::size_t in_channels(const ConvLayer& l) {
  return std::visit([](const auto& x) { return x.in_channels(); }, l);
}
inline std::size_t out_channels(const ConvLayer& l) {
  return std::visit([](const auto& x) { return x.out_channels(); }, l);
}
inline Hw kernel_size(const ConvLayer& l) {
  return std::visit([](const auto& x) { return Hw{x.kernel_h(), x.kernel_w()}; }, l);
}
inline Hw stride_of(const ConvLayer& l) {
  return std::visit([](const auto& x) { return x.stride; }, l);
}
inline Hw padding_of(const ConvLayer& l) {
  return std::visit([](const auto& x) { return x.padding; }, l);
}
inline bool is_separable(const ConvLayer& l) { return std::holds_alternative<SeparableConvLayer>(l); }

/// Regular-conv view of any layer (separable layers are folded).
inline RegularConvLayer as_regular(const ConvLayer& l) {
  if (const auto* r = std::get_if<RegularConvLayer>(&l)) return *r;
  return fold_separable(std::get<SeparableConvLayer>(l));
}

/// Sequential chain of conv layers, each followed by its activation.
struct NetworkModel {
  std::string name;
  InputSignature input;
  std::vector<NetworkLayer> layers;

  void validate() const {
    require(!layers.empty(), ErrorKind::shape, "model '" + name + "' has no layers");
    require(input.channels >= 1 && input.height >= 1 && input.width >= 1, ErrorKind::shape,
            "model input signature must be positive");
    std::size_t c = input.channels, h = input.height, w = input.width;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const ConvLayer& l = layers[i].conv;
      std::visit([](const auto& x) { x.validate(); }, l);
      if (in_channels(l) != c) {
        fail(ErrorKind::shape, "layer " + std::to_string(i) + " expects " + std::to_string(in_channels(l)) +
                                   " input channels, previous stage provides " + std::to_string(c));
      }
      const Hw k = kernel_size(l), s = stride_of(l), p = padding_of(l);
      h = output_extent(h, k.h, s.h, p.h);
      w = output_extent(w, k.w, s.w, p.w);
      c = out_channels(l);
    }
  }

  bool operator==(const NetworkModel&) const = default;
};

inline Tensor4 apply_activation(Tensor4 x, Activation a) {
  if (a == Activation::relu)
    for (float& v : x.data()) v = v > 0.0f ? v : 0.0f;
  return x;
}

inline Tensor4 apply_layer(const NetworkLayer& layer, const Tensor4& input) {
  Tensor4 out = std::visit(
      [&](const auto& l) {
        if constexpr (std::is_same_v<std::decay_t<decltype(l)>, RegularConvLayer>) {
          return conv2d_reference(input, l);
        } else {
          return separable_forward(input, l);
        }
      },
      layer.conv);
  return apply_activation(std::move(out), layer.activation);
}

/// Activations entering layer `index` (index == layers.size() gives the
/// network output).
inline Tensor4 forward_prefix(const NetworkModel& model, const Tensor4& input, std::size_t index) {
  input.expect_role(Role::activation_nchw, "forward");
  require(index <= model.layers.size(), ErrorKind::input, "forward_prefix: layer index out of range");
  if (input.dim(1) != model.input.channels) {
    fail(ErrorKind::shape, "forward: input has " + std::to_string(input.dim(1)) + " channels, model '" + model.name +
                               "' expects " + std::to_string(model.input.channels));
  }
  Tensor4 x = input;
  for (std::size_t i = 0; i < index; ++i) x = apply_layer(model.layers[i], x);
  return x;
}

inline Tensor4 forward(const NetworkModel& model, const Tensor4& input) {
  return forward_prefix(model, input, model.layers.size());
}

// ---------------------------------------------------------------------------
// FLOPs accounting (multiplies).

inline std::uint64_t per_position_cost(const ConvLayer& l) {
  const std::uint64_t n = out_channels(l), c = in_channels(l);
  const Hw k = kernel_size(l);
  if (is_separable(l)) return c * k.h * k.w + n * c;
  return n * c * k.h * k.w;
}

struct LayerFlops {
  std::size_t index = 0;
  std::string kind;
  std::uint64_t per_position = 0;
  std::uint64_t positions = 0;
  std::uint64_t total = 0;
};

struct ModelFlops {
  std::vector<LayerFlops> layers;
  std::uint64_t total = 0;
};

struct FlopsReport {
  InputSignature input;
  ModelFlops reference;
  std::optional<ModelFlops> other;
  std::optional<double> speedup;  // reference.total / other.total
};

inline ModelFlops model_flops(const NetworkModel& model, InputSignature sig) {
  if (sig.channels != model.input.channels) {
    fail(ErrorKind::shape, "flops: signature has " + std::to_string(sig.channels) + " channels, model '" + model.name +
                               "' expects " + std::to_string(model.input.channels));
  }
  NetworkModel probe = model;
  probe.input = sig;
  probe.validate();
  ModelFlops out;
  std::size_t h = sig.height, w = sig.width;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const ConvLayer& l = model.layers[i].conv;
    const Hw k = kernel_size(l), s = stride_of(l), p = padding_of(l);
    h = output_extent(h, k.h, s.h, p.h);
    w = output_extent(w, k.w, s.w, p.w);
    LayerFlops lf{i, is_separable(l) ? "separable" : "regular", per_position_cost(l), h * w, 0};
    lf.total = lf.per_position * lf.positions;
    out.total += lf.total;
    out.layers.push_back(lf);
  }
  return out;
}

inline FlopsReport flops_and_speedup(const NetworkModel& ref, const NetworkModel* other, InputSignature sig) {
  FlopsReport r{sig, model_flops(ref, sig), std::nullopt, std::nullopt};
  if (other) {
    r.other = model_flops(*other, sig);
    require(r.other->total > 0, ErrorKind::shape, "flops: transformed model has zero cost");
    r.speedup = static_cast<double>(r.reference.total) / static_cast<double>(r.other->total);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Serialization. Manifest layer entries reference buffer sections; tensor
// sections are row-major in their declared shapes:
//   regular   weights [n, c, kh, kw], bias [n]
//   separable depthwise [c, 1, kh, kw], pointwise [n, c, 1, 1], bias [n]

inline constexpr const char* kModelFormat = "dwd-model";

namespace detail {

inline nlohmann::json put_section(std::vector<float>& buffer, std::span<const float> values) {
  nlohmann::json s = section(buffer.size(), values.size());
  buffer.insert(buffer.end(), values.begin(), values.end());
  return s;
}

inline nlohmann::json hw_json(Hw v) { return nlohmann::json::array({v.h, v.w}); }
inline Hw hw_from(const nlohmann::json& j) { return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>()}; }

}  // namespace detail

inline void serialize_model(const NetworkModel& model, const std::filesystem::path& path) {
  model.validate();
  std::vector<float> buffer;
  nlohmann::json layers = nlohmann::json::array();
  for (const NetworkLayer& nl : model.layers) {
    nlohmann::json e;
    e["activation"] = to_string(nl.activation);
    e["stride"] = detail::hw_json(stride_of(nl.conv));
    e["padding"] = detail::hw_json(padding_of(nl.conv));
    std::visit(
        [&](const auto& l) {
          if constexpr (std::is_same_v<std::decay_t<decltype(l)>, RegularConvLayer>) {
            e["kind"] = "regular";
            const auto& d = l.weights.dims();
            e["weights"] = detail::put_section(buffer, l.weights.data());
            e["weights"]["shape"] = {d[0], d[1], d[2], d[3]};
          } else {
            e["kind"] = "separable";
            const auto& d = l.depthwise.dims();
            e["depthwise"] = detail::put_section(buffer, l.depthwise.data());
            e["depthwise"]["shape"] = {d[0], d[1], d[2], d[3]};
            e["pointwise"] = detail::put_section(buffer, l.pointwise.data());
            e["pointwise"]["shape"] = {l.pointwise.rows(), l.pointwise.cols(), 1, 1};
          }
          e["bias"] = l.bias ? detail::put_section(buffer, *l.bias) : nlohmann::json(nullptr);
        },
        nl.conv);
    layers.push_back(std::move(e));
  }
  nlohmann::json manifest;
  manifest["format"] = kModelFormat;
  manifest["name"] = model.name;
  manifest["input"] = {{"channels", model.input.channels}, {"height", model.input.height}, {"width", model.input.width}};
  manifest["layers"] = std::move(layers);
  write_container(path, std::move(manifest), buffer);
}

inline NetworkModel deserialize_model(const std::filesystem::path& path) {
  const ContainerPayload payload = read_container(path, kModelFormat);
  NetworkModel model;
  try {
    const auto& m = payload.manifest;
    model.name = m.at("name").get<std::string>();
    const auto& in = m.at("input");
    model.input = {in.at("channels").get<std::size_t>(), in.at("height").get<std::size_t>(), in.at("width").get<std::size_t>()};
    auto shape4 = [](const nlohmann::json& sec) {
      const auto& s = sec.at("shape");
      if (s.size() != 4) fail(ErrorKind::malformed, "tensor shape must have 4 entries");
      return Tensor4::Dims{s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(), s.at(2).get<std::size_t>(),
                           s.at(3).get<std::size_t>()};
    };
    auto count = [](const Tensor4::Dims& d) { return d[0] * d[1] * d[2] * d[3]; };
    for (const auto& e : m.at("layers")) {
      NetworkLayer nl;
      nl.activation = parse_activation(e.at("activation").get<std::string>());
      const Hw stride = detail::hw_from(e.at("stride"));
      const Hw padding = detail::hw_from(e.at("padding"));
      const std::string kind = e.at("kind").get<std::string>();
      std::optional<std::vector<float>> bias;
      std::size_t n = 0;
      if (kind == "regular") {
        RegularConvLayer l;
        const auto d = shape4(e.at("weights"));
        l.weights = Tensor4(Role::weight_nckk, d, payload.take(e.at("weights"), count(d)));
        l.stride = stride;
        l.padding = padding;
        n = d[0];
        nl.conv = std::move(l);
      } else if (kind == "separable") {
        SeparableConvLayer l;
        const auto dd = shape4(e.at("depthwise"));
        const auto pd = shape4(e.at("pointwise"));
        if (pd[2] != 1 || pd[3] != 1) fail(ErrorKind::malformed, "pointwise shape must be [n, c, 1, 1]");
        l.depthwise = Tensor4(Role::weight_nckk, dd, payload.take(e.at("depthwise"), count(dd)));
        l.pointwise = Matrix<float>(pd[0], pd[1], payload.take(e.at("pointwise"), count(pd)));
        l.stride = stride;
        l.padding = padding;
        n = pd[0];
        nl.conv = std::move(l);
      } else {
        fail(ErrorKind::malformed, "unknown layer kind '" + kind + "'");
      }
      if (!e.at("bias").is_null()) bias = payload.take(e.at("bias"), n);
      std::visit([&](auto& l) { l.bias = std::move(bias); }, nl.conv);
      model.layers.push_back(std::move(nl));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::malformed, path.string() + ": " + e.what());
  }
  try {
    model.validate();
  } catch (const Error& e) {
    fail(ErrorKind::malformed, path.string() + ": invalid model: " + e.what());
  }
  return model;
}

}  // namespace dwd
