// dwd: command-line front end for the depth-wise decomposition library.
//
// Exit codes: 0 success, 1 usage, 2 data/shape, 3 numeric. Every failure
// prints exactly one line to stderr of the form "error:<kind>: <message>".

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dwd/dwd.hpp"

namespace {

using namespace dwd;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::numeric:
    case ErrorKind::undefined_metric: return 3;
    default: return 2;
  }
}

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

std::size_t parse_count(const std::string& s, const std::string& what) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw UsageError(what + ": '" + s + "' is not a non-negative integer");
  return std::stoull(s);
}

InputSignature parse_signature(const std::string& s) {
  const auto parts = split(s, ',');
  if (parts.size() != 3) throw UsageError("--input-sig expects c,H,W");
  return {parse_count(parts[0], "--input-sig"), parse_count(parts[1], "--input-sig"), parse_count(parts[2], "--input-sig")};
}

// ---------------------------------------------------------------------------

struct SanityArgs {
  SanityConfig cfg;
  std::string out;
  std::string compensation = "signed";
  std::string rank_rule = "spatial-stage";
};

void cmd_sanity(SanityArgs& a) {
  a.cfg.mode = parse_compensation(a.compensation);
  a.cfg.rank_rule = parse_rank_rule(a.rank_rule);
  const SanityTable t = run_sanity_experiment(a.cfg);
  if (!a.out.empty()) write_text_atomic(a.out, sanity_csv(t));
  std::cout << sanity_summary(t);
}

struct SynthArgs {
  std::string out;
  std::string name = "synthetic";
  std::string input_sig = "3,16,16";
  std::string channels = "16,16,16";
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::optional<std::size_t> padding;
  std::string activation = "relu";
  std::uint64_t seed = 0;
  bool separable = false;
};

void cmd_synth(const SynthArgs& a) {
  SyntheticNetworkSpec spec;
  spec.name = a.name;
  spec.input = parse_signature(a.input_sig);
  spec.seed = a.seed;
  spec.separable_ground_truth = a.separable;
  const Activation act = parse_activation(a.activation);
  for (const auto& c : split(a.channels, ',')) {
    LayerSpec ls;
    ls.out_channels = parse_count(c, "--channels");
    ls.kernel_h = ls.kernel_w = a.kernel;
    ls.stride = a.stride;
    ls.padding = a.padding.value_or(a.kernel / 2);
    ls.activation = act;
    spec.layers.push_back(ls);
  }
  const NetworkModel m = gen_synthetic_network(spec);
  serialize_model(m, a.out);
  std::cout << "wrote " << a.out << " (" << m.layers.size() << " layers)\n";
}

struct DecomposeArgs {
  std::string model;
  std::string out;
  std::string method = "dw-comp";
  double speedup = 9.0;
  std::string images;
  std::size_t per_image = 10;
  std::size_t num_images = 300;
  std::uint64_t seed = 0;
  std::string compensation = "signed";
  std::string rank_rule = "total-cost";
  std::string layers = "all";
  std::string report;
  bool no_layer_compensation = false;
};

void cmd_decompose(const DecomposeArgs& a) {
  const NetworkModel model = deserialize_model(a.model);
  NetworkDecomposeOptions opt;
  opt.method = parse_method(a.method);
  opt.mode = parse_compensation(a.compensation);
  opt.rank_rule = parse_rank_rule(a.rank_rule);
  opt.speedup = a.speedup;
  opt.compensate_layers = !a.no_layer_compensation;
  opt.sampling.per_image = a.per_image;
  opt.sampling.num_images = a.num_images;
  opt.sampling.seed = a.seed;
  if (a.layers != "all") {
    std::vector<std::size_t> ids;
    for (const auto& s : split(a.layers, ',')) ids.push_back(parse_count(s, "--layers"));
    for (std::size_t id : ids) {
      if (id >= model.layers.size()) {
        fail(ErrorKind::input, "unknown layer id " + std::to_string(id) + " (model has " + std::to_string(model.layers.size()) +
                                   " layers)");
      }
      if (!is_separable(model.layers[id].conv) && is_pointwise_only(model.layers[id].conv)) {
        fail(ErrorKind::shape, "layer " + std::to_string(id) + " is a 1x1 convolution and cannot be decomposed");
      }
    }
    opt.layers = ids;
  }
  const std::string image_spec = a.images.empty() ? "synthetic:" + std::to_string(a.seed) : a.images;
  const auto images = open_image_source(image_spec, model.input, a.num_images);

  const NetworkDecomposition d = decompose_network(model, *images, opt);
  for (const auto& n : d.notices) std::cerr << "notice: " << n << "\n";
  serialize_model(d.model, a.out);

  std::vector<LayerwiseRow> rows;
  for (const auto& r : d.reports) rows.push_back(to_row(r));
  const std::string report = a.report.empty() ? a.out + ".report.csv" : a.report;
  write_text_atomic(report, layer_report_csv(rows));
  std::cout << layer_report_text(rows);
}

struct FoldArgs {
  std::string model;
  std::string out;
};

void cmd_fold(const FoldArgs& a) {
  NetworkModel m = deserialize_model(a.model);
  std::size_t folded = 0;
  for (auto& l : m.layers) {
    if (const auto* s = std::get_if<SeparableConvLayer>(&l.conv)) {
      l.conv = fold_separable(*s);
      ++folded;
    }
  }
  if (folded == 0) std::cerr << "notice: model has no separable layers; nothing to fold\n";
  serialize_model(m, a.out);
  std::cout << "folded=" << folded << "\n";
}

struct EvalArgs {
  std::string model;
  std::string ref;
  std::string images;
  std::size_t num_images = 8;
  std::uint64_t seed = 0;
};

void cmd_eval(const EvalArgs& a) {
  const NetworkModel m = deserialize_model(a.model);
  const NetworkModel r = deserialize_model(a.ref);
  if (!(m.input == r.input)) fail(ErrorKind::shape, "models have different input signatures");
  const std::string image_spec = a.images.empty() ? "synthetic:" + std::to_string(a.seed) : a.images;
  const auto images = open_image_source(image_spec, r.input, a.num_images);
  const std::size_t count = std::min(a.num_images, images->count());
  require(count > 0, ErrorKind::input, "no images to evaluate on");
  std::vector<double> got, want;
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor4 x = images->image(i);
    const Tensor4 ym = forward(m, x);
    const Tensor4 yr = forward(r, x);
    if (ym.dims() != yr.dims()) fail(ErrorKind::shape, "models produce outputs of different shapes");
    got.insert(got.end(), ym.data().begin(), ym.data().end());
    want.insert(want.end(), yr.data().begin(), yr.data().end());
  }
  const Matrix<double> gm(1, got.size(), got), wm(1, want.size(), want);
  std::cout << "images=" << count << " relative_error=" << format_number(relative_error(gm, wm)) << "\n";
}

struct FlopsArgs {
  std::string model;
  std::string ref;
  std::string input_sig;
  std::string out;
};

std::string flops_csv(const FlopsReport& r) {
  std::ostringstream os;
  os << "# schema: dwd-flops/1\n";
  os << "model,layer,kind,per_position,positions,total\n";
  auto emit = [&](const char* which, const ModelFlops& mf) {
    for (const auto& l : mf.layers)
      os << which << ',' << l.index << ',' << l.kind << ',' << l.per_position << ',' << l.positions << ',' << l.total << '\n';
    os << which << ",total,,,," << mf.total << '\n';
  };
  emit("reference", r.reference);
  if (r.other) emit("model", *r.other);
  if (r.speedup) os << "speedup,,,,," << format_number(*r.speedup) << '\n';
  return os.str();
}

void cmd_flops(const FlopsArgs& a) {
  const NetworkModel m = deserialize_model(a.model);
  FlopsReport rep;
  if (a.ref.empty()) {
    const InputSignature sig = a.input_sig.empty() ? m.input : parse_signature(a.input_sig);
    rep = flops_and_speedup(m, nullptr, sig);
  } else {
    const NetworkModel r = deserialize_model(a.ref);
    const InputSignature sig = a.input_sig.empty() ? r.input : parse_signature(a.input_sig);
    rep = flops_and_speedup(r, &m, sig);
  }
  const std::string csv = flops_csv(rep);
  if (!a.out.empty()) write_text_atomic(a.out, csv);
  std::cout << "input=" << rep.input.channels << "," << rep.input.height << "," << rep.input.width
            << " reference_total=" << rep.reference.total;
  if (rep.other) std::cout << " model_total=" << rep.other->total;
  if (rep.speedup) std::cout << " speedup=" << format_number(*rep.speedup);
  std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-wise decomposition of convolution layers"};
  app.require_subcommand(1);

  SanityArgs sanity;
  auto* s = app.add_subcommand("sanity", "Random-data single-layer comparison of the three methods");
  s->add_option("--n", sanity.cfg.out_channels, "Output channels")->check(CLI::PositiveNumber);
  s->add_option("--c", sanity.cfg.in_channels, "Input channels")->check(CLI::PositiveNumber);
  s->add_option("--kh", sanity.cfg.kernel_h, "Kernel height")->check(CLI::PositiveNumber);
  s->add_option("--kw", sanity.cfg.kernel_w, "Kernel width")->check(CLI::PositiveNumber);
  s->add_option("--samples", sanity.cfg.samples, "Sampled patches per run")->check(CLI::PositiveNumber);
  s->add_option("--runs", sanity.cfg.runs, "Independent runs")->check(CLI::PositiveNumber);
  s->add_option("--seed", sanity.cfg.seed, "Root seed");
  s->add_option("--speedup", sanity.cfg.speedup, "Target speed-up for the channel baseline")->check(CLI::PositiveNumber);
  s->add_option("--out", sanity.out, "CSV report path");
  s->add_option("--compensation", sanity.compensation, "absolute|signed")->check(CLI::IsMember({"absolute", "signed"}));
  s->add_option("--rank-rule", sanity.rank_rule, "total-cost|spatial-stage")
      ->check(CLI::IsMember({"total-cost", "spatial-stage"}));

  SynthArgs synth;
  auto* sy = app.add_subcommand("synth", "Generate a synthetic chain model");
  sy->add_option("--out", synth.out, "Model manifest path")->required();
  sy->add_option("--name", synth.name);
  sy->add_option("--input-sig", synth.input_sig, "c,H,W");
  sy->add_option("--channels", synth.channels, "Comma list of output channels per layer");
  sy->add_option("--kernel", synth.kernel)->check(CLI::PositiveNumber);
  sy->add_option("--stride", synth.stride)->check(CLI::PositiveNumber);
  sy->add_option("--padding", synth.padding);
  sy->add_option("--activation", synth.activation)->check(CLI::IsMember({"relu", "identity"}));
  sy->add_option("--seed", synth.seed);
  sy->add_flag("--separable", synth.separable, "Build every layer from a separable ground truth");

  DecomposeArgs dec;
  auto* d = app.add_subcommand("decompose", "Decompose the regular layers of a model");
  d->add_option("--model", dec.model)->required();
  d->add_option("--out", dec.out)->required();
  d->add_option("--method", dec.method)->check(CLI::IsMember({"channel", "dw", "dw-comp"}));
  d->add_option("--speedup", dec.speedup)->check(CLI::PositiveNumber);
  d->add_option("--images", dec.images, "Directory of .f32 images or synthetic:<seed>");
  d->add_option("--per-image", dec.per_image)->check(CLI::PositiveNumber);
  d->add_option("--num-images", dec.num_images)->check(CLI::PositiveNumber);
  d->add_option("--seed", dec.seed);
  d->add_option("--compensation", dec.compensation)->check(CLI::IsMember({"absolute", "signed"}));
  d->add_option("--rank-rule", dec.rank_rule)->check(CLI::IsMember({"total-cost", "spatial-stage"}));
  d->add_option("--layers", dec.layers, "Comma list of layer ids or 'all'");
  d->add_option("--report", dec.report, "Per-layer CSV report path (default <out>.report.csv)");
  d->add_flag("--no-layer-compensation", dec.no_layer_compensation, "Do not carry prefix error into later layers");

  FoldArgs fold;
  auto* f = app.add_subcommand("fold", "Replace separable layers by their regular equivalent");
  f->add_option("--model", fold.model)->required();
  f->add_option("--out", fold.out)->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Relative error of a model's outputs against a reference model");
  e->add_option("--model", ev.model)->required();
  e->add_option("--ref", ev.ref)->required();
  e->add_option("--images", ev.images, "Directory of .f32 images or synthetic:<seed>");
  e->add_option("--num-images", ev.num_images)->check(CLI::PositiveNumber);
  e->add_option("--seed", ev.seed);

  FlopsArgs fl;
  auto* fp = app.add_subcommand("flops", "Multiply counts and speed-up");
  fp->add_option("--model", fl.model)->required();
  fp->add_option("--ref", fl.ref);
  fp->add_option("--input-sig", fl.input_sig, "c,H,W");
  fp->add_option("--out", fl.out, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "error:usage: " << one_line(ex.what()) << "\n";
    return 1;
  }

  try {
    if (*s) cmd_sanity(sanity);
    else if (*sy) cmd_synth(synth);
    else if (*d) cmd_decompose(dec);
    else if (*f) cmd_fold(fold);
    else if (*e) cmd_eval(ev);
    else if (*fp) cmd_flops(fl);
  } catch (const UsageError& ex) {
    std::cerr << "error:usage: " << one_line(ex.what()) << "\n";
    return 1;
  } catch (const Error& ex) {
    std::cerr << "error:" << to_string(ex.kind()) << ": " << one_line(ex.what()) << "\n";
    return exit_code_for(ex.kind());
  } catch (const std::exception& ex) {
    std::cerr << "error:io: " << one_line(ex.what()) << "\n";
    return 2;
  }
  return 0;
}
