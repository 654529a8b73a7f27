#pragma once

// Response-patch sampling. For a target layer, each sampled output position
// contributes one row of X (its receptive field in im2col order, taken from
// the activations entering the layer) and one row of Y (the layer's linear
// response at that position, bias excluded, before the layer's activation).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwd/container.hpp"
#include "dwd/convcore.hpp"
#include "dwd/errors.hpp"
#include "dwd/linalg.hpp"
#include "dwd/netmodel.hpp"
#include "dwd/parallel.hpp"
#include "dwd/rng.hpp"
#include "dwd/tensor.hpp"

namespace dwd {

/// Indexed source of single images (1 x c x H x W activations).
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual std::size_t count() const = 0;
  virtual Tensor4 image(std::size_t index) const = 0;
};

/// Seeded standard-Gaussian images; image i depends only on (seed, i).
class SyntheticImageSource final : public ImageSource {
 public:
  SyntheticImageSource(InputSignature sig, std::uint64_t seed, std::size_t count)
      : sig_(sig), seed_(seed), count_(count) {}

  std::size_t count() const override { return count_; }

  Tensor4 image(std::size_t index) const override {
    require(index < count_, ErrorKind::input, "synthetic image index out of range");
    Tensor4 t(Role::activation_nchw, {1, sig_.channels, sig_.height, sig_.width});
    Rng rng(derive_seed(seed_, {index}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (float& v : t.data()) v = static_cast<float>(gauss(rng));
    return t;
  }

 private:
  InputSignature sig_;
  std::uint64_t seed_;
  std::size_t count_;
};

/// Directory of raw images: every regular file with extension .f32 holds
/// c*H*W little-endian float32 values in channel-major order. Files are
/// indexed in lexicographic filename order.
class DirectoryImageSource final : public ImageSource {
 public:
  DirectoryImageSource(const std::filesystem::path& dir, InputSignature sig) : sig_(sig) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) fail(ErrorKind::input, "image directory not found: " + dir.string());
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".f32") files_.push_back(entry.path());
    }
    std::sort(files_.begin(), files_.end());
  }

  std::size_t count() const override { return files_.size(); }

  Tensor4 image(std::size_t index) const override {
    require(index < files_.size(), ErrorKind::input, "image index out of range");
    const std::vector<unsigned char> bytes = read_file_bytes(files_[index]);
    const std::size_t expected = sig_.channels * sig_.height * sig_.width;
    if (bytes.size() != expected * 4) {
      fail(ErrorKind::input, files_[index].string() + ": expected " + std::to_string(expected * 4) + " bytes, found " +
                                 std::to_string(bytes.size()));
    }
    return Tensor4(Role::activation_nchw, {1, sig_.channels, sig_.height, sig_.width}, decode_f32le(bytes));
  }

 private:
  InputSignature sig_;
  std::vector<std::filesystem::path> files_;
};

/// "synthetic:<seed>" or a directory path.
inline std::unique_ptr<ImageSource> open_image_source(const std::string& spec, InputSignature sig, std::size_t synthetic_count) {
  const std::string prefix = "synthetic:";
  if (spec.rfind(prefix, 0) == 0) {
    const std::string digits = spec.substr(prefix.size());
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      fail(ErrorKind::input, "bad synthetic image source '" + spec + "' (expected synthetic:<seed>)");
    }
    return std::make_unique<SyntheticImageSource>(sig, std::stoull(digits), synthetic_count);
  }
  return std::make_unique<DirectoryImageSource>(spec, sig);
}

struct SamplingConfig {
  std::size_t per_image = 10;
  std::size_t num_images = 300;
  std::uint64_t seed = 0;

  void validate() const {
    require(per_image >= 1 && num_images >= 1, ErrorKind::input, "sampling counts must be >= 1");
  }
};

struct PatchPosition {
  std::uint32_t image = 0;
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  bool operator==(const PatchPosition&) const = default;
};

struct PatchSet {
  Matrix<float> x;  // N x (c*kh*kw)
  Matrix<float> y;  // N x n
  std::size_t layer_id = 0;
  std::uint64_t seed = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::vector<PatchPosition> positions;

  std::size_t rows() const noexcept { return x.rows(); }
  std::size_t kernel_area() const noexcept { return kernel_h * kernel_w; }

  bool operator==(const PatchSet&) const = default;
};

/// Position draws for one image: without replacement when the image has at
/// least `count` valid positions, with replacement otherwise.
inline std::vector<std::size_t> draw_positions(std::uint64_t seed, std::size_t total, std::size_t count) {
  Rng rng(seed);
  std::vector<std::size_t> out;
  out.reserve(count);
  if (count <= total) {
    std::vector<std::size_t> pool(total);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t k = 0; k < count; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, total - 1);
      std::swap(pool[k], pool[pick(rng)]);
      out.push_back(pool[k]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t k = 0; k < count; ++k) out.push_back(pick(rng));
  }
  return out;
}

/// Builds a patch set from arbitrary receptive-field rows: Y = X W.
inline Matrix<float> linear_response(const Matrix<float>& x, const Matrix<float>& w) {
  require(x.cols() == w.rows(), ErrorKind::shape, "linear_response: X columns must equal W rows");
  Matrix<float> y(x.rows(), w.cols());
  parallel_for(x.rows(), [&](std::size_t r) {
    std::vector<double> acc(w.cols(), 0.0);
    auto xr = x.row(r);
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xv = xr[k];
      if (xv == 0.0) continue;
      auto wk = w.row(k);
      for (std::size_t j = 0; j < w.cols(); ++j) acc[j] += xv * static_cast<double>(wk[j]);
    }
    auto yr = y.row(r);
    for (std::size_t j = 0; j < w.cols(); ++j) yr[j] = static_cast<float>(acc[j]);
  });
  return y;
}

inline PatchSet sample_patches(const NetworkModel& model, const ImageSource& images, std::size_t layer_id,
                               const SamplingConfig& cfg) {
  cfg.validate();
  model.validate();
  if (layer_id >= model.layers.size()) {
    fail(ErrorKind::input, "layer " + std::to_string(layer_id) + " does not exist (model has " +
                               std::to_string(model.layers.size()) + " layers)");
  }
  if (images.count() < cfg.num_images) {
    fail(ErrorKind::input, "image source provides " + std::to_string(images.count()) + " images, sampling needs " +
                               std::to_string(cfg.num_images));
  }
  const RegularConvLayer layer = as_regular(model.layers[layer_id].conv);
  const std::size_t c = layer.in_channels(), kh = layer.kernel_h(), kw = layer.kernel_w();
  const Matrix<float> w = weight_matrix(layer.weights);

  PatchSet ps;
  ps.layer_id = layer_id;
  ps.seed = cfg.seed;
  ps.in_channels = c;
  ps.kernel_h = kh;
  ps.kernel_w = kw;
  ps.x = Matrix<float>(cfg.per_image * cfg.num_images, c * kh * kw);
  ps.positions.resize(ps.x.rows());

  parallel_for(cfg.num_images, [&](std::size_t img) {
    const Tensor4 act = forward_prefix(model, images.image(img), layer_id);
    const std::size_t ho = output_extent(act.dim(2), kh, layer.stride.h, layer.padding.h);
    const std::size_t wo = output_extent(act.dim(3), kw, layer.stride.w, layer.padding.w);
    const std::vector<std::size_t> picks = draw_positions(derive_seed(cfg.seed, {img}), ho * wo, cfg.per_image);
    for (std::size_t k = 0; k < picks.size(); ++k) {
      const std::size_t row = img * cfg.per_image + k;
      const std::size_t oy = picks[k] / wo, ox = picks[k] % wo;
      im2col_row(act, 0, oy, ox, kh, kw, layer.stride, layer.padding, ps.x.row(row));
      ps.positions[row] = {static_cast<std::uint32_t>(img), static_cast<std::uint32_t>(oy), static_cast<std::uint32_t>(ox)};
    }
  });
  ps.y = linear_response(ps.x, w);
  return ps;
}

/// Channel i (0-based) of a patch set and the matching weight rows, in double.
struct ChannelSlice {
  MatrixD x;  // N x (kh*kw)
  MatrixD w;  // (kh*kw) x n
};

inline MatrixD weight_rows(const Matrix<float>& w, std::size_t channel, std::size_t area) {
  require((channel + 1) * area <= w.rows(), ErrorKind::input, "channel index out of range");
  MatrixD out(area, w.cols());
  for (std::size_t k = 0; k < area; ++k)
    for (std::size_t j = 0; j < w.cols(); ++j) out(k, j) = w(channel * area + k, j);
  return out;
}

inline MatrixD patch_columns(const Matrix<float>& x, std::size_t channel, std::size_t area) {
  require((channel + 1) * area <= x.cols(), ErrorKind::input, "channel index out of range");
  MatrixD out(x.rows(), area);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t k = 0; k < area; ++k) out(r, k) = x(r, channel * area + k);
  return out;
}

inline ChannelSlice channel_slice(const PatchSet& ps, const Matrix<float>& weights, std::size_t channel) {
  if (channel >= ps.in_channels) {
    fail(ErrorKind::input, "channel " + std::to_string(channel) + " out of range (layer has " +
                               std::to_string(ps.in_channels) + " input channels)");
  }
  require(weights.rows() == ps.x.cols(), ErrorKind::shape, "channel_slice: weights do not match patch set");
  const std::size_t area = ps.kernel_area();
  return {patch_columns(ps.x, channel, area), weight_rows(weights, channel, area)};
}

// ---------------------------------------------------------------------------
// Persistence in the shared container format.

inline constexpr const char* kPatchSetFormat = "dwd-patchset";

inline void save_patchset(const PatchSet& ps, const std::filesystem::path& path) {
  std::vector<float> buffer;
  buffer.reserve(ps.x.size() + ps.y.size());
  nlohmann::json m;
  m["format"] = kPatchSetFormat;
  m["layer_id"] = ps.layer_id;
  m["seed"] = ps.seed;
  m["in_channels"] = ps.in_channels;
  m["kernel"] = {ps.kernel_h, ps.kernel_w};
  m["rows"] = ps.x.rows();
  m["x"] = section(0, ps.x.size());
  m["x"]["cols"] = ps.x.cols();
  buffer.insert(buffer.end(), ps.x.data().begin(), ps.x.data().end());
  m["y"] = section(buffer.size(), ps.y.size());
  m["y"]["cols"] = ps.y.cols();
  buffer.insert(buffer.end(), ps.y.data().begin(), ps.y.data().end());
  nlohmann::json pos = nlohmann::json::array();
  for (const auto& p : ps.positions) pos.push_back({p.image, p.row, p.col});
  m["positions"] = std::move(pos);
  write_container(path, std::move(m), buffer);
}

inline PatchSet load_patchset(const std::filesystem::path& path) {
  const ContainerPayload payload = read_container(path, kPatchSetFormat);
  PatchSet ps;
  try {
    const auto& m = payload.manifest;
    ps.layer_id = m.at("layer_id").get<std::size_t>();
    ps.seed = m.at("seed").get<std::uint64_t>();
    ps.in_channels = m.at("in_channels").get<std::size_t>();
    ps.kernel_h = m.at("kernel").at(0).get<std::size_t>();
    ps.kernel_w = m.at("kernel").at(1).get<std::size_t>();
    const auto rows = m.at("rows").get<std::size_t>();
    const auto xc = m.at("x").at("cols").get<std::size_t>();
    const auto yc = m.at("y").at("cols").get<std::size_t>();
    ps.x = Matrix<float>(rows, xc, payload.take(m.at("x"), rows * xc));
    ps.y = Matrix<float>(rows, yc, payload.take(m.at("y"), rows * yc));
    for (const auto& p : m.at("positions")) {
      ps.positions.push_back({p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>(), p.at(2).get<std::uint32_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::malformed, path.string() + ": " + e.what());
  }
  return ps;
}

}  // namespace dwd
