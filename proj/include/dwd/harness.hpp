#pragma once

// Synthetic networks and the desk-scale experiments: the random-data sanity
// check (three methods on one Gaussian layer) and per-layer error studies.
//
// Seed substreams: run r of a sanity experiment uses derive_seed(seed, {r});
// synthetic layer l uses derive_seed(seed, {l}); synthetic image i uses
// derive_seed(seed, {i}); layer-wise sampling of layer l uses
// derive_seed(sampling.seed, {l}).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dwd/convcore.hpp"
#include "dwd/decompose.hpp"
#include "dwd/netmodel.hpp"
#include "dwd/parallel.hpp"
#include "dwd/rng.hpp"
#include "dwd/sampler.hpp"

namespace dwd {

struct LayerSpec {
  std::size_t out_channels = 1;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  Activation activation = Activation::relu;
};

struct SyntheticNetworkSpec {
  std::string name = "synthetic";
  InputSignature input{3, 16, 16};
  std::vector<LayerSpec> layers;
  std::uint64_t seed = 0;
  bool separable_ground_truth = false;
};

/// Weights ~ N(0, 1/fan_in) with fan_in = c*kh*kw. With
/// separable_ground_truth every layer is the fold of random depthwise
/// kernels ~ N(0, 1/(kh*kw)) and pointwise weights ~ N(0, 1/c), so each
/// per-channel weight block has rank 1 and the fan-in variance is kept.
inline NetworkModel gen_synthetic_network(const SyntheticNetworkSpec& spec) {
  NetworkModel model;
  model.name = spec.name;
  model.input = spec.input;
  std::size_t c = spec.input.channels;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    Rng rng(derive_seed(spec.seed, {l}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t n = ls.out_channels, kh = ls.kernel_h, kw = ls.kernel_w;
    RegularConvLayer layer;
    layer.stride = {ls.stride, ls.stride};
    layer.padding = {ls.padding, ls.padding};
    if (spec.separable_ground_truth) {
      SeparableConvLayer sep;
      sep.depthwise = Tensor4(Role::weight_nckk, {c, 1, kh, kw});
      sep.pointwise = Matrix<float>(n, c);
      const double ds = 1.0 / std::sqrt(static_cast<double>(kh * kw));
      const double ps = 1.0 / std::sqrt(static_cast<double>(c));
      for (float& v : sep.depthwise.data()) v = static_cast<float>(gauss(rng) * ds);
      for (float& v : sep.pointwise.data()) v = static_cast<float>(gauss(rng) * ps);
      sep.stride = layer.stride;
      sep.padding = layer.padding;
      layer = fold_separable(sep);
    } else {
      layer.weights = Tensor4(Role::weight_nckk, {n, c, kh, kw});
      const double scale = 1.0 / std::sqrt(static_cast<double>(c * kh * kw));
      for (float& v : layer.weights.data()) v = static_cast<float>(gauss(rng) * scale);
    }
    model.layers.push_back({std::move(layer), ls.activation});
    c = n;
  }
  model.validate();
  return model;
}

// ---------------------------------------------------------------------------
// Sanity experiment.

struct SanityConfig {
  std::size_t samples = 3000;  // N
  std::size_t out_channels = 128;  // n
  std::size_t in_channels = 64;  // c
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::uint64_t seed = 1;
  std::size_t runs = 10;
  double speedup = 9.0;
  CompensationMode mode = CompensationMode::signed_residual;
  RankRule rank_rule = RankRule::spatial_stage;

  void validate() const {
    require(samples >= 1 && out_channels >= 1 && in_channels >= 1 && kernel_h >= 1 && kernel_w >= 1 && runs >= 1,
            ErrorKind::input, "sanity configuration values must be positive");
    require(speedup > 0.0, ErrorKind::input, "sanity speed-up must be positive");
  }
};

struct SanityRow {
  Method method = Method::dw;
  double mean = 0.0;
  double stddev = 0.0;  // population std over runs
  std::vector<double> per_run;
  std::size_t rank = 0;
  std::uint64_t flops_before = 0;
  std::uint64_t flops_after = 0;
};

struct SanityTable {
  SanityConfig config;
  std::vector<SanityRow> rows;  // channel, dw, dw-comp

  const SanityRow& row(Method m) const {
    for (const auto& r : rows)
      if (r.method == m) return r;
    fail(ErrorKind::input, "no row for method " + to_string(m));
  }
};

/// One run's single Gaussian layer: W ~ N(0,1) weights, X ~ N(0,1) patches, Y = X W.
inline std::pair<RegularConvLayer, PatchSet> sanity_instance(const SanityConfig& cfg, std::size_t run) {
  Rng rng(derive_seed(cfg.seed, {run}));
  std::normal_distribution<double> gauss(0.0, 1.0);
  RegularConvLayer layer;
  layer.weights = Tensor4(Role::weight_nckk, {cfg.out_channels, cfg.in_channels, cfg.kernel_h, cfg.kernel_w});
  for (float& v : layer.weights.data()) v = static_cast<float>(gauss(rng));
  PatchSet ps;
  ps.seed = cfg.seed;
  ps.in_channels = cfg.in_channels;
  ps.kernel_h = cfg.kernel_h;
  ps.kernel_w = cfg.kernel_w;
  ps.x = Matrix<float>(cfg.samples, cfg.in_channels * cfg.kernel_h * cfg.kernel_w);
  for (float& v : ps.x.data()) v = static_cast<float>(gauss(rng));
  ps.y = linear_response(ps.x, weight_matrix(layer.weights));
  return {std::move(layer), std::move(ps)};
}

inline SanityTable run_sanity_experiment(const SanityConfig& cfg) {
  cfg.validate();
  const std::size_t area = cfg.kernel_h * cfg.kernel_w;
  const std::size_t rank = std::min({select_rank_for_speedup(cfg.out_channels, cfg.in_channels, cfg.kernel_h, cfg.kernel_w,
                                                             cfg.speedup, cfg.rank_rule),
                                     cfg.in_channels * area, cfg.out_channels, cfg.samples});
  std::vector<std::array<double, 3>> errors(cfg.runs);
  std::array<DecompositionReport, 3> sample_reports;
  parallel_for(cfg.runs, [&](std::size_t run) {
    auto [layer, ps] = sanity_instance(cfg, run);
    ChannelDecomposition ch = channel_decompose(layer, ps, rank);
    DwDecomposition dw = dw_decompose(layer, ps);
    CompensationOptions co;
    co.mode = cfg.mode;
    CompensatedDecomposition comp = dw_decompose_compensated(layer, ps, co);
    errors[run] = {ch.report.relative_error, dw.report.relative_error, comp.report.relative_error};
    if (run == 0) sample_reports = {ch.report, dw.report, comp.report};
  });

  SanityTable table;
  table.config = cfg;
  const Method methods[3] = {Method::channel, Method::dw, Method::dw_comp};
  for (std::size_t m = 0; m < 3; ++m) {
    SanityRow row;
    row.method = methods[m];
    for (const auto& e : errors) row.per_run.push_back(e[m]);
    double sum = 0.0;
    for (double v : row.per_run) sum += v;
    row.mean = sum / static_cast<double>(cfg.runs);
    double var = 0.0;
    for (double v : row.per_run) var += (v - row.mean) * (v - row.mean);
    row.stddev = std::sqrt(var / static_cast<double>(cfg.runs));
    row.rank = methods[m] == Method::channel ? rank : 0;
    row.flops_before = sample_reports[m].flops_before;
    row.flops_after = sample_reports[m].flops_after;
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Per-layer study: every decomposable layer is decomposed on its own (the
// rest of the network untouched) with each requested method.

struct LayerwiseConfig {
  SamplingConfig sampling;
  std::vector<Method> methods{Method::channel, Method::dw, Method::dw_comp};
  double speedup = 9.0;
  RankRule rank_rule = RankRule::total_cost;
  CompensationMode mode = CompensationMode::signed_residual;
};

struct LayerwiseRow {
  std::size_t layer_id = 0;
  Method method = Method::dw;
  double relative_error = 0.0;
  std::optional<double> network_relative_error;
  std::uint64_t flops_before = 0;
  std::uint64_t flops_after = 0;
  std::size_t rank = 0;
};

inline LayerwiseRow to_row(const DecompositionReport& r) {
  return {r.layer_id, r.method, r.relative_error, r.network_relative_error, r.flops_before, r.flops_after, r.rank};
}

inline std::vector<LayerwiseRow> run_layerwise_experiment(const NetworkModel& model, const ImageSource& images,
                                                          const LayerwiseConfig& cfg) {
  model.validate();
  std::vector<LayerwiseRow> rows;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const ConvLayer& conv = model.layers[l].conv;
    if (is_separable(conv) || is_pointwise_only(conv)) continue;
    const RegularConvLayer& layer = std::get<RegularConvLayer>(conv);
    SamplingConfig sc = cfg.sampling;
    sc.seed = derive_seed(cfg.sampling.seed, {l});
    const PatchSet ps = sample_patches(model, images, l, sc);
    for (Method m : cfg.methods) {
      DecompositionReport rep;
      switch (m) {
        case Method::channel: {
          const std::size_t rank =
              std::min(select_rank_for_speedup(layer.out_channels(), layer.in_channels(), layer.kernel_h(), layer.kernel_w(),
                                               cfg.speedup, cfg.rank_rule),
                       std::min({layer.in_channels() * layer.kernel_h() * layer.kernel_w(), layer.out_channels(), ps.rows()}));
          rep = channel_decompose(layer, ps, rank).report;
          break;
        }
        case Method::dw: rep = dw_decompose(layer, ps).report; break;
        case Method::dw_comp: {
          CompensationOptions co;
          co.mode = cfg.mode;
          rep = dw_decompose_compensated(layer, ps, co).report;
          break;
        }
      }
      rep.layer_id = l;
      rows.push_back(to_row(rep));
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Report formats. CSV files start with a "# schema:" line naming the schema
// and its version; numbers use %.9g so output bytes are reproducible.

inline constexpr const char* kSanitySchema = "dwd-sanity/1";
inline constexpr const char* kLayerReportSchema = "dwd-layer-report/1";

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string sanity_csv(const SanityTable& t) {
  std::ostringstream os;
  os << "# schema: " << kSanitySchema << "\n";
  os << "method,runs,mean_relative_error,std_relative_error,rank,flops_before,flops_after\n";
  for (const auto& r : t.rows) {
    os << to_string(r.method) << ',' << r.per_run.size() << ',' << format_number(r.mean) << ',' << format_number(r.stddev)
       << ',' << r.rank << ',' << r.flops_before << ',' << r.flops_after << '\n';
  }
  return os.str();
}

inline std::string sanity_summary(const SanityTable& t) {
  std::ostringstream os;
  const auto& c = t.config;
  os << "sanity N=" << c.samples << " n=" << c.out_channels << " c=" << c.in_channels << " k=" << c.kernel_h << "x"
     << c.kernel_w << " runs=" << c.runs << " speedup=" << format_number(c.speedup) << " rank_rule=" << to_string(c.rank_rule)
     << " compensation=" << to_string(c.mode) << " seed=" << c.seed << "\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %14s %14s %6s\n", "method", "mean_rel_err", "std_rel_err", "rank");
  os << line;
  for (const auto& r : t.rows) {
    std::snprintf(line, sizeof line, "%-10s %14.6f %14.3e %6zu\n", to_string(r.method).c_str(), r.mean, r.stddev, r.rank);
    os << line;
  }
  return os.str();
}

inline std::string layer_report_csv(const std::vector<LayerwiseRow>& rows) {
  std::ostringstream os;
  os << "# schema: " << kLayerReportSchema << "\n";
  os << "layer_id,method,relative_error,flops_before,flops_after,rank,network_relative_error\n";
  for (const auto& r : rows) {
    os << r.layer_id << ',' << to_string(r.method) << ',' << format_number(r.relative_error) << ',' << r.flops_before << ','
       << r.flops_after << ',' << r.rank << ',' << (r.network_relative_error ? format_number(*r.network_relative_error) : "")
       << '\n';
  }
  return os.str();
}

// One "key=value" line per row.
inline std::string layer_report_text(const std::vector<LayerwiseRow>& rows) {
  std::ostringstream os;
  for (const auto& r : rows) {
    os << "layer_id=" << r.layer_id << " method=" << to_string(r.method) << " relative_error=" << format_number(r.relative_error)
       << " flops_before=" << r.flops_before << " flops_after=" << r.flops_after << " rank=" << r.rank;
    if (r.network_relative_error) os << " network_relative_error=" << format_number(*r.network_relative_error);
    os << '\n';
  }
  return os.str();
}

}  // namespace dwd
