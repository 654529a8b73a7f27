#pragma once

// Regular convolution -> depth-wise separable pair.
//
// Shapes follow the sampled linear model Y = X W with X: N x (c*kh*kw) and
// W: (c*kh*kw) x n. Channel i owns the kh*kw column block X_i of X and the
// matching row block W_i of W, so Y = sum_i X_i W_i. A separable pair
// reconstructs channel i as (X_i d_i) p_i^T with a depthwise kernel d_i
// (kh*kw) and a pointwise column p_i (n).
//
// Three methods:
//   channel  truncated SVD of Y (k x k conv to c' channels + 1x1 conv)
//   dw       per channel, d_i = W_i v0 and p_i = v0 with v0 the leading
//            right singular vector of Y_i
//   dw-comp  channels in ascending order, each fitted to its own response
//            plus the error accumulated by earlier channels

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dwd/convcore.hpp"
#include "dwd/errors.hpp"
#include "dwd/linalg.hpp"
#include "dwd/netmodel.hpp"
#include "dwd/parallel.hpp"
#include "dwd/rng.hpp"
#include "dwd/sampler.hpp"
#include "dwd/tensor.hpp"

namespace dwd {

enum class Method { channel, dw, dw_comp };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::channel: return "channel";
    case Method::dw: return "dw";
    case Method::dw_comp: return "dw-comp";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "channel") return Method::channel;
  if (s == "dw") return Method::dw;
  if (s == "dw-comp") return Method::dw_comp;
  fail(ErrorKind::input, "unknown method '" + s + "' (expected channel, dw or dw-comp)");
}

// absolute: E_i = |residual_i| entry-wise. signed: E_i = residual_i.
enum class CompensationMode { absolute, signed_residual };

inline std::string to_string(CompensationMode m) { return m == CompensationMode::absolute ? "absolute" : "signed"; }

inline CompensationMode parse_compensation(const std::string& s) {
  if (s == "absolute") return CompensationMode::absolute;
  if (s == "signed") return CompensationMode::signed_residual;
  fail(ErrorKind::input, "unknown compensation mode '" + s + "' (expected absolute or signed)");
}

// How a target speed-up maps to a channel-decomposition rank.
//   total_cost     c' = floor(n c kh kw / ((c kh kw + n) r)): both convs counted
//   spatial_stage  c' = floor(n / r): only the kh x kw conv counted
enum class RankRule { total_cost, spatial_stage };

inline std::string to_string(RankRule r) { return r == RankRule::total_cost ? "total-cost" : "spatial-stage"; }

inline RankRule parse_rank_rule(const std::string& s) {
  if (s == "total-cost") return RankRule::total_cost;
  if (s == "spatial-stage") return RankRule::spatial_stage;
  fail(ErrorKind::input, "unknown rank rule '" + s + "' (expected total-cost or spatial-stage)");
}

inline std::size_t select_rank_for_speedup(std::size_t n, std::size_t c, std::size_t kh, std::size_t kw, double speedup,
                                           RankRule rule = RankRule::total_cost) {
  require(speedup > 0.0 && std::isfinite(speedup), ErrorKind::input, "target speed-up must be positive");
  double raw = 0.0;
  if (rule == RankRule::total_cost) {
    const double area = static_cast<double>(c * kh * kw);
    raw = static_cast<double>(n) * area / ((area + static_cast<double>(n)) * speedup);
  } else {
    raw = static_cast<double>(n) / speedup;
  }
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(raw)));
}

/// ||y_hat - y_ref||_F / ||y_ref||_F.
template <typename A, typename B>
double relative_error(const Matrix<A>& y_hat, const Matrix<B>& y_ref) {
  require(y_hat.rows() == y_ref.rows() && y_hat.cols() == y_ref.cols(), ErrorKind::shape,
          "relative_error: shapes differ");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y_ref.size(); ++i) {
    const double r = static_cast<double>(y_ref.data()[i]);
    const double d = static_cast<double>(y_hat.data()[i]) - r;
    num += d * d;
    den += r * r;
  }
  if (den == 0.0) fail(ErrorKind::undefined_metric, "relative_error: reference is all zero");
  return std::sqrt(num / den);
}

struct DecompositionReport {
  Method method = Method::dw;
  std::size_t layer_id = 0;
  // dw methods: sigma_1 of each Y_i. channel: singular values of Y.
  std::vector<double> leading_singular_values;
  // Per-channel residual norm of the fit (dw methods).
  std::vector<double> channel_residuals;
  std::vector<std::size_t> degenerate_channels;
  double relative_error = 0.0;
  // Error against the original network's responses (multi-layer runs only).
  std::optional<double> network_relative_error;
  std::uint64_t flops_before = 0;  // multiplies per output position
  std::uint64_t flops_after = 0;
  double speedup = 1.0;
  std::size_t rank = 0;  // c' for channel decomposition
};

namespace detail {

inline void check_patchset(const RegularConvLayer& layer, const PatchSet& ps) {
  layer.validate();
  const std::size_t area = layer.kernel_h() * layer.kernel_w();
  if (ps.in_channels != layer.in_channels() || ps.kernel_h != layer.kernel_h() || ps.kernel_w != layer.kernel_w() ||
      ps.x.cols() != layer.in_channels() * area || ps.y.cols() != layer.out_channels() || ps.y.rows() != ps.x.rows()) {
    fail(ErrorKind::shape, "patch set (c=" + std::to_string(ps.in_channels) + ", k=" + std::to_string(ps.kernel_h) + "x" +
                               std::to_string(ps.kernel_w) + ", n=" + std::to_string(ps.y.cols()) +
                               ") does not match the layer");
  }
  require(ps.rows() > 0, ErrorKind::shape, "patch set is empty");
}

inline void set_flops(DecompositionReport& r, std::uint64_t before, std::uint64_t after) {
  r.flops_before = before;
  r.flops_after = after;
  r.speedup = static_cast<double>(before) / static_cast<double>(after);
}

// X (float) times W (double), double result.
inline MatrixD times(const Matrix<float>& x, const MatrixD& w) {
  require(x.cols() == w.rows(), ErrorKind::shape, "times: inner dimensions differ");
  MatrixD out(x.rows(), w.cols());
  parallel_for(x.rows(), [&](std::size_t r) {
    auto xr = x.row(r);
    auto o = out.row(r);
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xv = xr[k];
      if (xv == 0.0) continue;
      auto wk = w.row(k);
      for (std::size_t j = 0; j < w.cols(); ++j) o[j] += xv * wk[j];
    }
  });
  return out;
}

// Y_i = X_i W_i is reduced through a thin QR of X_i to the kh*kw x n carrier
// R W_i. Right singular vectors and the constrained fit are unchanged by the
// orthonormal factor; target norms shift by ||T||^2 - ||Q^T T||^2.
struct ChannelSystem {
  std::optional<MatrixD> q;  // absent when N < kh*kw (no reduction)
  MatrixD carrier;

  MatrixD project(const MatrixD& t) const { return q ? matmul_tn(*q, t) : t; }
};

inline ChannelSystem reduce_channel(const MatrixD& x_i, const MatrixD& w_i) {
  ChannelSystem sys;
  if (x_i.rows() >= x_i.cols()) {
    QrResult qr = thin_qr(x_i);
    sys.carrier = matmul(qr.r, w_i);
    sys.q = std::move(qr.q);
  } else {
    sys.carrier = matmul(x_i, w_i);
  }
  return sys;
}

inline SeparableConvLayer assemble(const RegularConvLayer& layer, const std::vector<std::vector<double>>& depthwise,
                                   const std::vector<std::vector<double>>& pointwise) {
  const std::size_t c = layer.in_channels(), n = layer.out_channels(), kh = layer.kernel_h(), kw = layer.kernel_w();
  SeparableConvLayer out;
  out.depthwise = Tensor4(Role::weight_nckk, {c, 1, kh, kw});
  out.pointwise = Matrix<float>(n, c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t k = 0; k < kh * kw; ++k) out.depthwise(i, 0, k / kw, k % kw) = static_cast<float>(depthwise[i][k]);
    for (std::size_t o = 0; o < n; ++o) out.pointwise(o, i) = static_cast<float>(pointwise[i][o]);
  }
  out.stride = layer.stride;
  out.padding = layer.padding;
  out.bias = layer.bias;
  return out;
}

}  // namespace detail

/// (c*kh*kw) x n matrix of any layer's effective regular weights.
inline MatrixD effective_weight_matrix(const ConvLayer& l) { return weight_matrix(as_regular(l).weights).cast<double>(); }

inline MatrixD effective_weight_matrix(const SeparableConvLayer& l) {
  return weight_matrix(fold_separable(l).weights).cast<double>();
}

// ---------------------------------------------------------------------------
// Channel decomposition baseline.

struct ChannelDecompResult {
  Matrix<float> w1;  // (c*kh*kw) x c': narrowed kh x kw conv
  Matrix<float> w2;  // c' x n: pointwise conv
  std::size_t rank = 0;
};

struct ChannelDecomposition {
  ChannelDecompResult factors;
  DecompositionReport report;
};

/// P = first c' right singular vectors of Y; W1 = W P, W2 = P^T.
inline ChannelDecomposition channel_decompose(const RegularConvLayer& layer, const PatchSet& ps, std::size_t rank) {
  detail::check_patchset(layer, ps);
  const std::size_t n = layer.out_channels(), area = layer.kernel_h() * layer.kernel_w(), c = layer.in_channels();
  const std::size_t max_rank = std::min({c * area, n, ps.rows()});
  if (rank < 1 || rank > max_rank) {
    fail(ErrorKind::input, "channel rank " + std::to_string(rank) + " outside [1, " + std::to_string(max_rank) + "]");
  }
  const Matrix<float> w = weight_matrix(layer.weights);
  const MatrixD y = ps.y.cast<double>();

  ChannelDecomposition out;
  out.factors.rank = rank;
  out.factors.w1 = Matrix<float>(c * area, rank);
  out.factors.w2 = Matrix<float>(rank, n);
  DecompositionReport& rep = out.report;
  rep.method = Method::channel;
  rep.layer_id = ps.layer_id;
  rep.rank = rank;
  detail::set_flops(rep, static_cast<std::uint64_t>(n) * c * area, static_cast<std::uint64_t>(rank) * (c * area + n));

  if (all_zero(y)) {
    rep.relative_error = 0.0;
    return out;
  }
  const SvdResult s = svd(y);
  rep.leading_singular_values = s.s;
  MatrixD proj(n, rank);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < rank; ++j) proj(i, j) = s.v(i, j);

  const MatrixD w1 = matmul(w.cast<double>(), proj);
  for (std::size_t i = 0; i < w1.rows(); ++i)
    for (std::size_t j = 0; j < rank; ++j) out.factors.w1(i, j) = static_cast<float>(w1(i, j));
  for (std::size_t j = 0; j < rank; ++j)
    for (std::size_t i = 0; i < n; ++i) out.factors.w2(j, i) = static_cast<float>(proj(i, j));

  // ||Y - Y P P^T||_F / ||Y||_F
  const MatrixD yp = matmul(y, proj);
  const MatrixD approx = matmul(yp, transpose(proj));
  rep.relative_error = relative_error(approx, y);
  return out;
}

/// The narrowed kh x kw conv (c' outputs, original stride/padding) followed
/// by the 1x1 conv carrying the original bias.
inline std::pair<RegularConvLayer, RegularConvLayer> channel_layers(const ChannelDecompResult& f, const RegularConvLayer& original) {
  RegularConvLayer first;
  first.weights = weights_from_matrix(f.w1, original.in_channels(), original.kernel_h(), original.kernel_w());
  first.stride = original.stride;
  first.padding = original.padding;
  RegularConvLayer second;
  second.weights = weights_from_matrix(f.w2, f.rank, 1, 1);
  second.bias = original.bias;
  return {std::move(first), std::move(second)};
}

// ---------------------------------------------------------------------------
// Depth-wise decomposition.

struct SingleChannelResult {
  std::vector<double> depthwise;  // kh*kw
  std::vector<double> pointwise;  // n
  double sigma1 = 0.0;
  double residual = 0.0;  // ||Y_i - Y_i v0 v0^T||_F
  bool degenerate = false;
};

/// v0 = leading right singular vector of Y_i; depthwise = W_i v0, pointwise = v0.
inline SingleChannelResult dw_decompose_single(const MatrixD& w_i, const MatrixD& y_i) {
  require(w_i.cols() == y_i.cols(), ErrorKind::shape, "dw_decompose_single: W_i and Y_i column counts differ");
  SingleChannelResult r;
  if (all_zero(y_i)) {
    r.depthwise.assign(w_i.rows(), 0.0);
    r.pointwise.assign(w_i.cols(), 0.0);
    r.degenerate = true;
    return r;
  }
  const SvdResult s = svd(y_i);
  r.pointwise.resize(w_i.cols());
  for (std::size_t j = 0; j < w_i.cols(); ++j) r.pointwise[j] = s.v(j, 0);
  r.depthwise = matvec(w_i, r.pointwise);
  r.sigma1 = s.s[0];
  double tail = 0.0;
  for (std::size_t j = 1; j < s.s.size(); ++j) tail += s.s[j] * s.s[j];
  r.residual = std::sqrt(tail);
  return r;
}

struct DwDecomposition {
  SeparableConvLayer layer;
  DecompositionReport report;
};

inline DwDecomposition dw_decompose(const RegularConvLayer& layer, const PatchSet& ps) {
  detail::check_patchset(layer, ps);
  const std::size_t c = layer.in_channels(), n = layer.out_channels(), area = layer.kernel_h() * layer.kernel_w();
  const Matrix<float> w = weight_matrix(layer.weights);

  std::vector<std::vector<double>> depthwise(c), pointwise(c);
  std::vector<double> sigma(c, 0.0), residual(c, 0.0);
  std::vector<char> degenerate(c, 0);
  parallel_for(c, [&](std::size_t i) {
    const MatrixD x_i = patch_columns(ps.x, i, area);
    const MatrixD w_i = weight_rows(w, i, area);
    const detail::ChannelSystem sys = detail::reduce_channel(x_i, w_i);
    if (all_zero(sys.carrier)) {
      depthwise[i].assign(area, 0.0);
      pointwise[i].assign(n, 0.0);
      degenerate[i] = 1;
      return;
    }
    // Same right singular vectors as Y_i = X_i W_i.
    const SvdResult s = svd(sys.carrier);
    pointwise[i].resize(n);
    for (std::size_t j = 0; j < n; ++j) pointwise[i][j] = s.v(j, 0);
    depthwise[i] = matvec(w_i, pointwise[i]);
    sigma[i] = s.s[0];
    double tail = 0.0;
    for (std::size_t j = 1; j < s.s.size(); ++j) tail += s.s[j] * s.s[j];
    residual[i] = std::sqrt(tail);
  });

  DwDecomposition out;
  out.layer = detail::assemble(layer, depthwise, pointwise);
  DecompositionReport& rep = out.report;
  rep.method = Method::dw;
  rep.layer_id = ps.layer_id;
  rep.leading_singular_values = std::move(sigma);
  rep.channel_residuals = std::move(residual);
  for (std::size_t i = 0; i < c; ++i)
    if (degenerate[i]) rep.degenerate_channels.push_back(i);
  detail::set_flops(rep, static_cast<std::uint64_t>(n) * c * area, static_cast<std::uint64_t>(c) * area + static_cast<std::uint64_t>(n) * c);
  rep.relative_error = relative_error(detail::times(ps.x, effective_weight_matrix(out.layer)), ps.y);
  return out;
}

struct CompensationState {
  MatrixD error;  // N x n accumulated E
  CompensationMode mode = CompensationMode::signed_residual;
};

struct CompensationOptions {
  CompensationMode mode = CompensationMode::signed_residual;
  // Ground-truth patches at the same positions; channel targets become
  // Y_i' = X_i' W_i instead of Y_i.
  const PatchSet* targets = nullptr;
  // Carried-in accumulated error (N x n); starts at zero when absent.
  std::optional<MatrixD> initial_error;
  std::optional<double> regularization;  // default: 1e-8 trace(Y_i^T Y_i) / n
};

struct CompensatedDecomposition {
  SeparableConvLayer layer;
  DecompositionReport report;
  CompensationState state;  // terminal E
};

/// For i = 0..c-1: T = base_i + E, (u, p) = rank1_constrained_fit(T, Y_i),
/// d_i = W_i u, p_i = p, E += residual_i (or |residual_i|), where
/// residual_i = base_i - (X_i d_i) p_i^T. Degenerate channels leave E as is.
/// The reported relative error is against sum_i base_i + E_initial.
inline CompensatedDecomposition dw_decompose_compensated(const RegularConvLayer& layer, const PatchSet& ps,
                                                         const CompensationOptions& opt = {}) {
  detail::check_patchset(layer, ps);
  const std::size_t c = layer.in_channels(), n = layer.out_channels(), area = layer.kernel_h() * layer.kernel_w();
  const std::size_t rows = ps.rows();
  if (opt.targets) {
    detail::check_patchset(layer, *opt.targets);
    require(opt.targets->rows() == rows, ErrorKind::shape, "target patch set row count differs");
  }
  if (opt.initial_error) {
    require(opt.initial_error->rows() == rows && opt.initial_error->cols() == n, ErrorKind::shape,
            "initial error must be N x n");
  }
  const Matrix<float> w = weight_matrix(layer.weights);

  CompensatedDecomposition out;
  out.state.mode = opt.mode;
  out.state.error = opt.initial_error ? *opt.initial_error : MatrixD(rows, n);
  MatrixD& err = out.state.error;

  std::vector<std::vector<double>> depthwise(c), pointwise(c);
  DecompositionReport& rep = out.report;
  rep.method = Method::dw_comp;
  rep.layer_id = ps.layer_id;
  rep.leading_singular_values.assign(c, 0.0);
  rep.channel_residuals.assign(c, 0.0);

  MatrixD target(rows, n);
  for (std::size_t i = 0; i < c; ++i) {
    const MatrixD x_i = patch_columns(ps.x, i, area);
    const MatrixD w_i = weight_rows(w, i, area);
    const detail::ChannelSystem sys = detail::reduce_channel(x_i, w_i);
    const MatrixD base = opt.targets ? matmul(patch_columns(opt.targets->x, i, area), w_i) : matmul(x_i, w_i);

    if (all_zero(sys.carrier)) {
      depthwise[i].assign(area, 0.0);
      pointwise[i].assign(n, 0.0);
      rep.degenerate_channels.push_back(i);
      continue;
    }
    for (std::size_t k = 0; k < target.size(); ++k) target.data()[k] = base.data()[k] + err.data()[k];

    const double eps = opt.regularization.value_or(default_regularization(sys.carrier));
    const MatrixD reduced_target = sys.project(target);
    const Rank1Fit fit = rank1_constrained_fit(reduced_target, sys.carrier, eps);

    depthwise[i] = matvec(w_i, fit.u);
    pointwise[i] = fit.p;
    rep.leading_singular_values[i] = svd(sys.carrier).s[0];
    const double shift = frobenius_norm_sq(target) - frobenius_norm_sq(reduced_target);
    rep.channel_residuals[i] = std::sqrt(std::max(0.0, shift + fit.objective * fit.objective));

    const std::vector<double> xd = matvec(x_i, depthwise[i]);
    for (std::size_t r = 0; r < rows; ++r) {
      auto br = base.row(r);
      auto er = err.row(r);
      for (std::size_t j = 0; j < n; ++j) {
        const double e = br[j] - xd[r] * fit.p[j];
        er[j] += opt.mode == CompensationMode::absolute ? std::abs(e) : e;
      }
    }
  }

  out.layer = detail::assemble(layer, depthwise, pointwise);
  detail::set_flops(rep, static_cast<std::uint64_t>(n) * c * area, static_cast<std::uint64_t>(c) * area + static_cast<std::uint64_t>(n) * c);

  MatrixD reference = (opt.targets ? opt.targets->y : ps.y).cast<double>();
  if (opt.initial_error)
    for (std::size_t k = 0; k < reference.size(); ++k) reference.data()[k] += opt.initial_error->data()[k];
  rep.relative_error = relative_error(detail::times(ps.x, effective_weight_matrix(out.layer)), reference);
  return out;
}

// ---------------------------------------------------------------------------
// Whole-network pipeline.

struct NetworkDecomposeOptions {
  Method method = Method::dw_comp;
  SamplingConfig sampling;
  bool compensate_layers = true;
  CompensationMode mode = CompensationMode::signed_residual;
  double speedup = 9.0;
  RankRule rank_rule = RankRule::total_cost;
  std::optional<std::vector<std::size_t>> layers;  // original layer ids; all when absent
};

struct NetworkDecomposition {
  NetworkModel model;
  std::vector<DecompositionReport> reports;
  std::vector<std::string> notices;
};

inline bool is_pointwise_only(const ConvLayer& l) {
  const Hw k = kernel_size(l);
  return k.h == 1 && k.w == 1;
}

/// Layers are processed front to back. Layer l is sampled twice at the same
/// positions (seed derived from the sampling seed and l): X from the
/// partially decomposed network, X' from the original. With
/// compensate_layers, dw-comp starts from E = Y' - Y, the error of the
/// already-decomposed prefix as seen at this layer's output, so the channel
/// loop targets the original network's responses.
inline NetworkDecomposition decompose_network(const NetworkModel& original, const ImageSource& images,
                                              const NetworkDecomposeOptions& opt) {
  original.validate();
  opt.sampling.validate();
  if (opt.layers) {
    for (std::size_t id : *opt.layers) {
      if (id >= original.layers.size()) {
        fail(ErrorKind::input, "layer " + std::to_string(id) + " does not exist (model has " +
                                   std::to_string(original.layers.size()) + " layers)");
      }
    }
  }
  auto selected = [&](std::size_t l) {
    return !opt.layers || std::find(opt.layers->begin(), opt.layers->end(), l) != opt.layers->end();
  };

  NetworkDecomposition out;
  out.model.name = original.name;
  out.model.input = original.input;

  for (std::size_t l = 0; l < original.layers.size(); ++l) {
    const NetworkLayer& nl = original.layers[l];
    const bool regular = !is_separable(nl.conv);
    if (!selected(l) || !regular) {
      out.model.layers.push_back(nl);
      continue;
    }
    if (is_pointwise_only(nl.conv)) {
      out.notices.push_back("layer " + std::to_string(l) + ": 1x1 convolution has no spatial kernel to separate; kept");
      out.model.layers.push_back(nl);
      continue;
    }
    const RegularConvLayer& layer = std::get<RegularConvLayer>(nl.conv);

    // Decomposed prefix followed by the untouched remainder.
    NetworkModel partial = out.model;
    const std::size_t partial_index = partial.layers.size();
    partial.layers.insert(partial.layers.end(), original.layers.begin() + static_cast<std::ptrdiff_t>(l), original.layers.end());

    SamplingConfig cfg = opt.sampling;
    cfg.seed = derive_seed(opt.sampling.seed, {l});
    PatchSet ps = sample_patches(partial, images, partial_index, cfg);
    PatchSet truth = sample_patches(original, images, l, cfg);
    ps.layer_id = l;
    require(ps.positions == truth.positions, ErrorKind::numeric, "sampled positions diverged between networks");

    DecompositionReport rep;
    std::vector<NetworkLayer> replacement;
    MatrixD effective;
    switch (opt.method) {
      case Method::channel: {
        const std::size_t rank = std::min(
            select_rank_for_speedup(layer.out_channels(), layer.in_channels(), layer.kernel_h(), layer.kernel_w(), opt.speedup,
                                    opt.rank_rule),
            std::min({layer.in_channels() * layer.kernel_h() * layer.kernel_w(), layer.out_channels(), ps.rows()}));
        ChannelDecomposition cd = channel_decompose(layer, ps, rank);
        auto [first, second] = channel_layers(cd.factors, layer);
        effective = matmul(cd.factors.w1.cast<double>(), cd.factors.w2.cast<double>());
        replacement.push_back({std::move(first), Activation::identity});
        replacement.push_back({std::move(second), nl.activation});
        rep = std::move(cd.report);
        break;
      }
      case Method::dw: {
        DwDecomposition d = dw_decompose(layer, ps);
        effective = effective_weight_matrix(d.layer);
        replacement.push_back({std::move(d.layer), nl.activation});
        rep = std::move(d.report);
        break;
      }
      case Method::dw_comp: {
        CompensationOptions co;
        co.mode = opt.mode;
        if (opt.compensate_layers) {
          MatrixD carried(ps.rows(), layer.out_channels());
          for (std::size_t k = 0; k < carried.size(); ++k)
            carried.data()[k] = static_cast<double>(truth.y.data()[k]) - static_cast<double>(ps.y.data()[k]);
          co.initial_error = std::move(carried);
        }
        CompensatedDecomposition d = dw_decompose_compensated(layer, ps, co);
        effective = effective_weight_matrix(d.layer);
        replacement.push_back({std::move(d.layer), nl.activation});
        rep = std::move(d.report);
        break;
      }
    }
    rep.layer_id = l;
    rep.network_relative_error = relative_error(detail::times(ps.x, effective), truth.y);
    out.reports.push_back(std::move(rep));
    out.model.layers.insert(out.model.layers.end(), replacement.begin(), replacement.end());
  }
  out.model.validate();
  return out;
}

}  // namespace dwd
