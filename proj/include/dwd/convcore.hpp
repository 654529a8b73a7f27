#pragma once

// Reference convolution kernels and the im2col view.
//
// im2col column ordering is channel-major, then kernel row, then kernel
// column: column (ch * kh + ky) * kw + kx. weight_matrix() uses the same
// ordering for its rows, so Y = X * W holds position by position, and
// channel i of X occupies the contiguous block [i*kh*kw, (i+1)*kh*kw).
//
// All kernels accumulate in double and store single precision. Each output
// element is summed in a fixed (ch, ky, kx) order, so results are bitwise
// identical for any worker count.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dwd/errors.hpp"
#include "dwd/parallel.hpp"
#include "dwd/tensor.hpp"

namespace dwd {

struct Hw {
  std::size_t h = 0;
  std::size_t w = 0;
  bool operator==(const Hw&) const = default;
};

struct RegularConvLayer {
  Tensor4 weights;  // n x c x kh x kw
  Hw stride{1, 1};
  Hw padding{0, 0};
  std::optional<std::vector<float>> bias;

  std::size_t out_channels() const noexcept { return weights.dim(0); }
  std::size_t in_channels() const noexcept { return weights.dim(1); }
  std::size_t kernel_h() const noexcept { return weights.dim(2); }
  std::size_t kernel_w() const noexcept { return weights.dim(3); }

  void validate() const {
    weights.expect_role(Role::weight_nckk, "regular conv");
    require(out_channels() >= 1 && in_channels() >= 1, ErrorKind::shape, "regular conv needs n, c >= 1");
    require(kernel_h() >= 1 && kernel_w() >= 1, ErrorKind::shape, "regular conv needs kh, kw >= 1");
    require(stride.h >= 1 && stride.w >= 1, ErrorKind::shape, "stride must be positive");
    require(!bias || bias->size() == out_channels(), ErrorKind::shape, "bias length must equal n");
  }

  bool operator==(const RegularConvLayer&) const = default;
};

/// Depthwise stage (one kh x kw kernel per input channel, stored c x 1 x kh x kw)
/// followed by a 1x1 pointwise stage (n x c). Stride and padding apply to the
/// depthwise stage; bias is added after the pointwise stage.
struct SeparableConvLayer {
  Tensor4 depthwise;
  Matrix<float> pointwise;
  Hw stride{1, 1};
  Hw padding{0, 0};
  std::optional<std::vector<float>> bias;

  std::size_t out_channels() const noexcept { return pointwise.rows(); }
  std::size_t in_channels() const noexcept { return depthwise.dim(0); }
  std::size_t kernel_h() const noexcept { return depthwise.dim(2); }
  std::size_t kernel_w() const noexcept { return depthwise.dim(3); }

  void validate() const {
    depthwise.expect_role(Role::weight_nckk, "separable conv depthwise");
    require(depthwise.dim(1) == 1, ErrorKind::shape, "depthwise kernels must be stored c x 1 x kh x kw");
    require(in_channels() >= 1 && out_channels() >= 1, ErrorKind::shape, "separable conv needs n, c >= 1");
    require(pointwise.cols() == in_channels(), ErrorKind::shape,
            "depthwise channel count must equal pointwise column count");
    require(kernel_h() >= 1 && kernel_w() >= 1, ErrorKind::shape, "separable conv needs kh, kw >= 1");
    require(stride.h >= 1 && stride.w >= 1, ErrorKind::shape, "stride must be positive");
    require(!bias || bias->size() == out_channels(), ErrorKind::shape, "bias length must equal n");
  }

  bool operator==(const SeparableConvLayer&) const = default;
};

inline std::size_t output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  require(stride >= 1, ErrorKind::shape, "stride must be positive");
  if (in + 2 * pad < kernel) {
    fail(ErrorKind::shape, "non-positive output extent (input " + std::to_string(in) + ", kernel " +
                               std::to_string(kernel) + ", pad " + std::to_string(pad) + ")");
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

// Zero-padded read of one input value.
inline float padded_at(const Tensor4& x, std::size_t img, std::size_t ch, std::ptrdiff_t y, std::ptrdiff_t xx) {
  if (y < 0 || xx < 0 || y >= static_cast<std::ptrdiff_t>(x.dim(2)) || xx >= static_cast<std::ptrdiff_t>(x.dim(3))) {
    return 0.0f;
  }
  return x(img, ch, static_cast<std::size_t>(y), static_cast<std::size_t>(xx));
}

/// Writes the receptive field of output position (img, oy, ox) into out
/// (length c*kh*kw) in im2col column order.
inline void im2col_row(const Tensor4& input, std::size_t img, std::size_t oy, std::size_t ox, std::size_t kh,
                       std::size_t kw, Hw stride, Hw pad, std::span<float> out) {
  const std::size_t c = input.dim(1);
  const auto y0 = static_cast<std::ptrdiff_t>(oy * stride.h) - static_cast<std::ptrdiff_t>(pad.h);
  const auto x0 = static_cast<std::ptrdiff_t>(ox * stride.w) - static_cast<std::ptrdiff_t>(pad.w);
  std::size_t k = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        out[k++] = padded_at(input, img, ch, y0 + static_cast<std::ptrdiff_t>(ky), x0 + static_cast<std::ptrdiff_t>(kx));
      }
    }
  }
}

/// (N*Ho*Wo) x (c*kh*kw) patch matrix; row (img*Ho + oy)*Wo + ox.
inline Matrix<float> im2col(const Tensor4& input, std::size_t kh, std::size_t kw, Hw stride, Hw pad) {
  input.expect_role(Role::activation_nchw, "im2col");
  require(input.dim(0) > 0 && input.dim(1) > 0 && input.dim(2) > 0 && input.dim(3) > 0, ErrorKind::shape,
          "im2col input extents must be positive");
  require(kh >= 1 && kw >= 1, ErrorKind::shape, "kernel extents must be positive");
  const std::size_t ho = output_extent(input.dim(2), kh, stride.h, pad.h);
  const std::size_t wo = output_extent(input.dim(3), kw, stride.w, pad.w);
  const std::size_t batch = input.dim(0);
  Matrix<float> out(batch * ho * wo, input.dim(1) * kh * kw);
  for (std::size_t img = 0; img < batch; ++img) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        im2col_row(input, img, oy, ox, kh, kw, stride, pad, out.row((img * ho + oy) * wo + ox));
      }
    }
  }
  return out;
}

/// Reshapes n x c x kh x kw weights into the (c*kh*kw) x n matrix W with Y = X W.
inline Matrix<float> weight_matrix(const Tensor4& weights) {
  weights.expect_role(Role::weight_nckk, "weight_matrix");
  const auto [n, c, kh, kw] = weights.dims();
  Matrix<float> m(c * kh * kw, n);
  for (std::size_t o = 0; o < n; ++o)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) m((ch * kh + ky) * kw + kx, o) = weights(o, ch, ky, kx);
  return m;
}

/// Inverse of weight_matrix.
inline Tensor4 weights_from_matrix(const Matrix<float>& m, std::size_t c, std::size_t kh, std::size_t kw) {
  require(m.rows() == c * kh * kw, ErrorKind::shape, "weight matrix rows must equal c*kh*kw");
  const std::size_t n = m.cols();
  Tensor4 w(Role::weight_nckk, {n, c, kh, kw});
  for (std::size_t o = 0; o < n; ++o)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) w(o, ch, ky, kx) = m((ch * kh + ky) * kw + kx, o);
  return w;
}

inline Tensor4 conv2d_reference(const Tensor4& input, const RegularConvLayer& layer) {
  input.expect_role(Role::activation_nchw, "conv2d_reference");
  layer.validate();
  const std::size_t c = layer.in_channels();
  if (input.dim(1) != c) {
    fail(ErrorKind::shape, "conv2d_reference: input has " + std::to_string(input.dim(1)) + " channels, layer expects " +
                               std::to_string(c));
  }
  const std::size_t kh = layer.kernel_h(), kw = layer.kernel_w(), n = layer.out_channels();
  const std::size_t ho = output_extent(input.dim(2), kh, layer.stride.h, layer.padding.h);
  const std::size_t wo = output_extent(input.dim(3), kw, layer.stride.w, layer.padding.w);
  const std::size_t batch = input.dim(0);
  Tensor4 out(Role::activation_nchw, {batch, n, ho, wo});
  parallel_for(batch * n, [&](std::size_t item) {
    const std::size_t img = item / n, o = item % n;
    const double b = layer.bias ? static_cast<double>((*layer.bias)[o]) : 0.0;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const auto y0 = static_cast<std::ptrdiff_t>(oy * layer.stride.h) - static_cast<std::ptrdiff_t>(layer.padding.h);
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const auto x0 = static_cast<std::ptrdiff_t>(ox * layer.stride.w) - static_cast<std::ptrdiff_t>(layer.padding.w);
        double acc = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx)
              acc += static_cast<double>(layer.weights(o, ch, ky, kx)) *
                     static_cast<double>(padded_at(input, img, ch, y0 + static_cast<std::ptrdiff_t>(ky),
                                                   x0 + static_cast<std::ptrdiff_t>(kx)));
        out(img, o, oy, ox) = static_cast<float>(acc + b);
      }
    }
  });
  return out;
}

/// Channel i of the output depends only on channel i of the input.
inline Tensor4 depthwise_forward(const Tensor4& input, const Tensor4& kernels, Hw stride, Hw pad) {
  input.expect_role(Role::activation_nchw, "depthwise_forward");
  const std::size_t c = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  require(input.dim(1) == c, ErrorKind::shape, "depthwise_forward: channel mismatch");
  const std::size_t ho = output_extent(input.dim(2), kh, stride.h, pad.h);
  const std::size_t wo = output_extent(input.dim(3), kw, stride.w, pad.w);
  const std::size_t batch = input.dim(0);
  Tensor4 out(Role::activation_nchw, {batch, c, ho, wo});
  parallel_for(batch * c, [&](std::size_t item) {
    const std::size_t img = item / c, ch = item % c;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const auto y0 = static_cast<std::ptrdiff_t>(oy * stride.h) - static_cast<std::ptrdiff_t>(pad.h);
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const auto x0 = static_cast<std::ptrdiff_t>(ox * stride.w) - static_cast<std::ptrdiff_t>(pad.w);
        double acc = 0.0;
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx)
            acc += static_cast<double>(kernels(ch, 0, ky, kx)) *
                   static_cast<double>(padded_at(input, img, ch, y0 + static_cast<std::ptrdiff_t>(ky),
                                                 x0 + static_cast<std::ptrdiff_t>(kx)));
        out(img, ch, oy, ox) = static_cast<float>(acc);
      }
    }
  });
  return out;
}

inline Tensor4 pointwise_forward(const Tensor4& input, const Matrix<float>& mix, const std::optional<std::vector<float>>& bias) {
  input.expect_role(Role::activation_nchw, "pointwise_forward");
  const std::size_t c = mix.cols(), n = mix.rows();
  require(input.dim(1) == c, ErrorKind::shape, "pointwise_forward: channel mismatch");
  const std::size_t batch = input.dim(0), h = input.dim(2), w = input.dim(3);
  Tensor4 out(Role::activation_nchw, {batch, n, h, w});
  parallel_for(batch * n, [&](std::size_t item) {
    const std::size_t img = item / n, o = item % n;
    const double b = bias ? static_cast<double>((*bias)[o]) : 0.0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) acc += static_cast<double>(mix(o, ch)) * static_cast<double>(input(img, ch, y, x));
        out(img, o, y, x) = static_cast<float>(acc + b);
      }
  });
  return out;
}

inline Tensor4 separable_forward(const Tensor4& input, const SeparableConvLayer& layer) {
  layer.validate();
  if (input.dim(1) != layer.in_channels()) {
    fail(ErrorKind::shape, "separable_forward: input has " + std::to_string(input.dim(1)) + " channels, layer expects " +
                               std::to_string(layer.in_channels()));
  }
  return pointwise_forward(depthwise_forward(input, layer.depthwise, layer.stride, layer.padding), layer.pointwise,
                           layer.bias);
}

/// Exact regular equivalent: W[o, i, :, :] = P[o, i] * D[i, :, :].
inline RegularConvLayer fold_separable(const SeparableConvLayer& layer) {
  layer.validate();
  const std::size_t n = layer.out_channels(), c = layer.in_channels();
  const std::size_t kh = layer.kernel_h(), kw = layer.kernel_w();
  RegularConvLayer out;
  out.weights = Tensor4(Role::weight_nckk, {n, c, kh, kw});
  for (std::size_t o = 0; o < n; ++o)
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) out.weights(o, i, ky, kx) = layer.pointwise(o, i) * layer.depthwise(i, 0, ky, kx);
  out.stride = layer.stride;
  out.padding = layer.padding;
  out.bias = layer.bias;
  return out;
}

}  // namespace dwd
