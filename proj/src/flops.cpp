#include "cfaan/flops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cfaan/errors.hpp"

namespace cfaan {

// ---- conventions -----------------------------------------------------------

std::string CountingConvention::tag() const {
  std::ostringstream os;
  os << "mac=" << macs_per_flop << ",softmax=" << include_softmax_exp
     << ",bnrelu=" << include_bn_relu << ",proj=" << include_attention_projections
     << ",positional=" << (positional == PositionalCounting::per_head ? "per_head" : "shared");
  return os.str();
}

namespace {

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "no") return false;
  throw ConfigError("convention key '" + key + "' expects 0/1, got '" + value + "'");
}

}  // namespace

CountingConvention CountingConvention::parse(const std::string& text) {
  if (text.empty() || text == "default") return {};
  if (text == "exact") return exact();
  if (text == "calibrated") return calibrated();
  CountingConvention c;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("convention item '" + item + "' lacks '='");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    if (key == "mac") {
      if (value != "1" && value != "2") throw ConfigError("mac must be 1 or 2, got '" + value + "'");
      c.macs_per_flop = value == "1" ? 1 : 2;
    } else if (key == "softmax") {
      c.include_softmax_exp = parse_flag(key, value);
    } else if (key == "bnrelu") {
      c.include_bn_relu = parse_flag(key, value);
    } else if (key == "proj") {
      c.include_attention_projections = parse_flag(key, value);
    } else if (key == "positional") {
      if (value == "per_head") {
        c.positional = PositionalCounting::per_head;
      } else if (value == "shared") {
        c.positional = PositionalCounting::shared;
      } else {
        throw ConfigError("positional must be per_head or shared, got '" + value + "'");
      }
    } else {
      throw ConfigError("unknown convention key '" + key + "'");
    }
  }
  return c;
}

CountingConvention CountingConvention::exact() {
  CountingConvention c;
  c.macs_per_flop = 2;
  c.include_softmax_exp = true;
  c.include_bn_relu = true;
  c.include_attention_projections = true;
  return c;
}

CountingConvention CountingConvention::calibrated() { return calibrate().best().convention; }

std::vector<CountingConvention> all_conventions() {
  std::vector<CountingConvention> out;
  for (unsigned mac : {1u, 2u})
    for (bool sm : {false, true})
      for (bool bn : {false, true})
        for (bool proj : {false, true})
          for (auto pos : {PositionalCounting::per_head, PositionalCounting::shared})
            out.push_back({mac, sm, bn, proj, pos});
  return out;
}

// ---- backbone --------------------------------------------------------------

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::linear: return "linear";
    case LayerKind::attention: return "attention";
    case LayerKind::bn: return "bn";
    case LayerKind::relu: return "relu";
  }
  return "?";
}

std::uint64_t LayerSpec::ops_per_frame() const {
  const std::uint64_t out = std::uint64_t{out_h()} * out_w();
  switch (kind) {
    case LayerKind::conv:
      return out * c_in * c_out * kernel * kernel;
    case LayerKind::linear:
      return std::uint64_t{c_in} * c_out;
    case LayerKind::bn:
    case LayerKind::relu:
      return out * c_out;
    case LayerKind::attention:
      break;
  }
  throw ConfigError("attention layers are counted by attention_flops");
}

void BackboneSpec::validate() const {
  if (input_h == 0 || input_w == 0) throw ConfigError("backbone input extents must be positive");
  if (stem_width == 0) throw ConfigError("stem width must be positive");
  if (widths.size() != 4 || blocks.size() != 4) {
    throw ConfigError("backbone needs exactly four stages");
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (widths[i] == 0 || blocks[i] == 0) throw ConfigError("stage widths and depths must be positive");
  }
  if (last_stride != 1 && last_stride != 2) throw ConfigError("last_stride must be 1 or 2");
}

std::vector<LayerSpec> backbone_layers(const BackboneSpec& spec) {
  spec.validate();
  std::vector<LayerSpec> layers;
  auto add_conv = [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                      std::size_t stride, std::size_t h, std::size_t w, bool relu) {
    LayerSpec conv{name, LayerKind::conv, cin, cout, k, stride, h, w};
    layers.push_back(conv);
    // BN and ReLU act on the conv output, so they take its extents.
    LayerSpec bn{name + ".bn", LayerKind::bn, cout, cout, 1, 1, conv.out_h(), conv.out_w()};
    layers.push_back(bn);
    if (relu) layers.push_back({name + ".relu", LayerKind::relu, cout, cout, 1, 1, bn.in_h, bn.in_w});
    return conv;
  };

  LayerSpec stem = add_conv("conv1", 3, spec.stem_width, 7, 2, spec.input_h, spec.input_w, true);
  // 3x3 stride-2 max pool; comparisons are not counted.
  std::size_t h = (stem.out_h() + 1) / 2, w = (stem.out_w() + 1) / 2;
  std::size_t cin = spec.stem_width;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const std::size_t width = spec.widths[stage], cout = 4 * width;
    const std::size_t stage_stride = stage == 0 ? 1 : stage == 3 ? spec.last_stride : 2;
    for (std::size_t b = 0; b < spec.blocks[stage]; ++b) {
      const std::size_t stride = b == 0 ? stage_stride : 1;
      const std::string prefix = "conv" + std::to_string(stage + 2) + "_" + std::to_string(b + 1);
      add_conv(prefix + ".a", cin, width, 1, 1, h, w, true);
      LayerSpec mid = add_conv(prefix + ".b", width, width, 3, stride, h, w, true);
      add_conv(prefix + ".c", width, cout, 1, 1, mid.out_h(), mid.out_w(), false);
      if (b == 0) add_conv(prefix + ".downsample", cin, cout, 1, stride, h, w, false);
      layers.push_back({prefix + ".relu", LayerKind::relu, cout, cout, 1, 1, mid.out_h(), mid.out_w()});
      h = mid.out_h();
      w = mid.out_w();
      cin = cout;
    }
  }
  return layers;
}

// ---- reports ---------------------------------------------------------------

std::uint64_t FlopReport::total() const {
  std::uint64_t t = 0;
  for (const auto& r : rows) t += r.flops;
  return t;
}

std::int64_t FlopReport::delta() const {
  return static_cast<std::int64_t>(total()) - static_cast<std::int64_t>(baseline_flops);
}

double to_gflops(std::uint64_t flops) { return static_cast<double>(flops) / 1e9; }
double to_gflops(std::int64_t flops) { return static_cast<double>(flops) / 1e9; }

FlopReport backbone_flops(const BackboneSpec& spec, std::size_t frames,
                          const CountingConvention& convention) {
  if (frames == 0) throw ConfigError("frames must be positive");
  FlopReport report;
  report.title = "backbone";
  report.convention = convention;
  for (const LayerSpec& l : backbone_layers(spec)) {
    std::uint64_t ops = l.ops_per_frame() * frames;
    if (l.kind == LayerKind::bn || l.kind == LayerKind::relu) {
      if (!convention.include_bn_relu) continue;
      // BN folds into one multiply-add per element.
      if (l.kind == LayerKind::bn) ops *= convention.macs_per_flop;
    } else {
      ops *= convention.macs_per_flop;
    }
    report.rows.push_back({l.name, l.kind, ops});
  }
  return report;
}

// ---- attention -------------------------------------------------------------

std::string to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::nonlocal3d: return "nonlocal3d";
    case AttentionVariant::axial: return "axial";
    case AttentionVariant::axial_sinusoidal: return "axial-sinusoidal";
    case AttentionVariant::axial_relative: return "axial-relative";
    case AttentionVariant::cfaa: return "cfaa";
  }
  return "?";
}

AttentionVariant parse_variant(const std::string& text) {
  if (text == "nonlocal3d" || text == "nonlocal") return AttentionVariant::nonlocal3d;
  if (text == "axial") return AttentionVariant::axial;
  if (text == "axial-sinusoidal") return AttentionVariant::axial_sinusoidal;
  if (text == "axial-relative") return AttentionVariant::axial_relative;
  if (text == "cfaa") return AttentionVariant::cfaa;
  throw ConfigError("unknown attention variant '" + text +
                    "' (expected nonlocal3d, axial, axial-sinusoidal, axial-relative, cfaa)");
}

Encoding VariantSpec::encoding() const {
  switch (variant) {
    case AttentionVariant::nonlocal3d:
    case AttentionVariant::axial: return Encoding::none;
    case AttentionVariant::axial_sinusoidal: return Encoding::sinusoidal;
    case AttentionVariant::axial_relative:
    case AttentionVariant::cfaa: return Encoding::relative;
  }
  return Encoding::none;
}

std::size_t VariantSpec::effective_scales() const {
  return variant == AttentionVariant::cfaa ? scales : 1;
}

std::vector<InsertionPoint> default_insertion_points(const BackboneSpec& spec) {
  const auto layers = backbone_layers(spec);
  auto stage_output = [&](const std::string& block, std::size_t channels) {
    for (const auto& l : layers) {
      if (l.name == block + ".c") return InsertionPoint{block, channels, l.out_h(), l.out_w()};
    }
    throw ConfigError("backbone has no block " + block);
  };
  return {stage_output("conv3_3", 4 * spec.widths[1]), stage_output("conv3_4", 4 * spec.widths[1]),
          stage_output("conv4_4", 4 * spec.widths[2]), stage_output("conv4_5", 4 * spec.widths[2]),
          stage_output("conv4_6", 4 * spec.widths[2])};
}

AttentionConfig module_config(const VariantSpec& v, const InsertionPoint& at, std::size_t frames,
                              const ModuleWidths& widths) {
  if (widths.qk_divisor == 0 || widths.out_divisor == 0) {
    throw ConfigError("width divisors must be positive");
  }
  AttentionConfig c;
  c.c_in = at.channels;
  c.c_qk = at.channels / widths.qk_divisor;
  c.c_out = at.channels / widths.out_divisor;
  c.heads = v.variant == AttentionVariant::nonlocal3d ? 1 : v.heads;
  c.scales = v.effective_scales();
  c.encoding = v.encoding();
  c.frames = frames;
  c.height = at.height;
  c.width = at.width;
  if (v.variant == AttentionVariant::nonlocal3d) {
    c.encoding = Encoding::none;
  }
  c.validate();
  return c;
}

OpCounts analytic_attention_counts(const VariantSpec& v, const AttentionConfig& config) {
  config.validate();
  OpCounts n;
  const std::uint64_t T = config.frames, H = config.height, W = config.width;
  if (v.variant == AttentionVariant::nonlocal3d) {
    const std::uint64_t N = T * H * W;
    n.projection_macs = N * config.c_in * (2 * config.c_qk + config.c_out);
    n.score_macs = N * N * config.c_qk;
    n.value_macs = N * N * config.c_out;
    n.softmax_exps = N * N * config.heads;
    n.output_macs = N * config.c_out * config.c_in;
    return n;
  }
  const std::uint64_t S = config.scales, M = config.heads;
  const std::uint64_t cin = config.c_in / S, cq = config.c_qk / S, cv = config.c_out / S;
  for (std::size_t s = 0; s < S; ++s) {
    const std::uint64_t h = config.scale_height(s), w = config.scale_width(s), N = T * h * w;
    const std::uint64_t lengths[3] = {h, w, T};
    for (int a = 0; a < 3; ++a) {
      const std::uint64_t L = lengths[a], c_in_axis = a == 0 ? cin : cv;
      n.projection_macs += N * c_in_axis * (2 * cq + cv);
      n.score_macs += N * L * cq;
      n.value_macs += N * L * cv;
      n.softmax_exps += N * L * M;
      if (config.encoding == Encoding::relative) n.positional_macs += N * L * (2 * cq + cv);
      if (config.encoding == Encoding::sinusoidal) n.encoding_adds += 2 * N * cq;
    }
  }
  n.output_macs = T * H * W * config.c_out * config.c_in;
  return n;
}

std::uint64_t flops_from_counts(const OpCounts& c, std::size_t heads,
                                const CountingConvention& convention) {
  if (heads == 0) throw ConfigError("heads must be positive");
  std::uint64_t positional = c.positional_macs;
  if (convention.positional == PositionalCounting::shared) positional /= heads;
  std::uint64_t macs = c.score_macs + c.value_macs + positional;
  if (convention.include_attention_projections) macs += c.projection_macs + c.output_macs;
  std::uint64_t flops = macs * convention.macs_per_flop + c.encoding_adds;
  if (convention.include_softmax_exp) flops += c.softmax_exps;
  return flops;
}

FlopReport attention_flops(const VariantSpec& v, const std::vector<InsertionPoint>& points,
                           std::size_t frames, const ModuleWidths& widths,
                           const CountingConvention& convention) {
  FlopReport report;
  report.title = to_string(v.variant);
  if (v.variant == AttentionVariant::cfaa) report.title += "(S=" + std::to_string(v.scales) + ")";
  report.convention = convention;
  for (const auto& p : points) {
    const AttentionConfig c = module_config(v, p, frames, widths);
    report.rows.push_back({p.name + "." + to_string(v.variant), LayerKind::attention,
                           flops_from_counts(analytic_attention_counts(v, c), c.heads, convention)});
  }
  return report;
}

OpCounts count_oracle_multiplies(const VariantSpec& v, const AttentionConfig& config,
                                 std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const Tensor x =
      random_uniform({config.c_in, config.frames, config.height, config.width}, -1, 1, rng);
  OpCounts counts;
  if (v.variant == AttentionVariant::nonlocal3d) {
    const NonLocalParams p = init_nonlocal_params(config.c_in, config.c_qk, config.c_out, rng);
    nonlocal_3d_forward(x, p, config.heads, &counts);
  } else {
    const CfaaParams p = init_cfaa_params(config, rng);
    cfaa_forward(x, p, config, &counts);
  }
  return counts;
}

// ---- model presets ---------------------------------------------------------

const std::vector<std::string>& model_presets() {
  static const std::vector<std::string> presets{"c2d", "nonlocal", "cfaan"};
  return presets;
}

FlopReport model_flops(const std::string& preset, const BackboneSpec& spec, std::size_t frames,
                       const CountingConvention& convention) {
  FlopReport report = backbone_flops(spec, frames, convention);
  const std::uint64_t base = report.total();
  report.baseline_name = "c2d";
  report.baseline_flops = base;
  report.title = preset;
  const ModuleWidths widths;
  if (preset == "c2d") return report;
  VariantSpec v;
  if (preset == "nonlocal") {
    v = {AttentionVariant::nonlocal3d, 1, 1};
  } else if (preset == "cfaan") {
    v = {AttentionVariant::cfaa, 2, 4};
  } else {
    throw ConfigError("unknown model preset '" + preset + "' (expected c2d, nonlocal, cfaan)");
  }
  const FlopReport att =
      attention_flops(v, default_insertion_points(spec), frames, widths, convention);
  report.rows.insert(report.rows.end(), att.rows.begin(), att.rows.end());
  return report;
}

std::vector<FlopReport> model_table(const std::vector<std::string>& presets,
                                    const BackboneSpec& spec, std::size_t frames,
                                    const CountingConvention& convention) {
  std::vector<FlopReport> out;
  for (const auto& p : presets) out.push_back(model_flops(p, spec, frames, convention));
  return out;
}

const std::vector<ModelTarget>& model_targets() {
  static const std::vector<ModelTarget> targets{
      {"c2d", 24.520, 0.05}, {"nonlocal", 41.733, 0.10}, {"cfaan", 24.646, 0.05}};
  return targets;
}

// ---- ablation table and calibration ---------------------------------------

double AblationRow::relative_error() const {
  return (computed_gflops - target_gflops) / target_gflops;
}

std::vector<AblationRow> ablation_table(const CountingConvention& convention,
                                        const BackboneSpec& spec, std::size_t frames) {
  std::vector<AblationRow> rows{
      {"baseline", true, {}, 24.520, 0.05, 0.0},
      {"non-local", false, {AttentionVariant::nonlocal3d, 1, 1}, 17.213, 0.10, 0.0},
      {"axial", false, {AttentionVariant::axial, 8, 1}, 0.361, 0.10, 0.0},
      {"axial+sinusoidal", false, {AttentionVariant::axial_sinusoidal, 8, 1}, 0.377, 0.10, 0.0},
      {"axial+relative", false, {AttentionVariant::axial_relative, 8, 1}, 0.424, 0.10, 0.0},
      {"cfaa S=2", false, {AttentionVariant::cfaa, 4, 2}, 0.245, 0.10, 0.0},
      {"cfaa S=4", false, {AttentionVariant::cfaa, 2, 4}, 0.126, 0.10, 0.0},
  };
  const auto points = default_insertion_points(spec);
  for (auto& r : rows) {
    const std::uint64_t f =
        r.is_baseline ? backbone_flops(spec, frames, convention).total()
                      : attention_flops(r.variant, points, frames, {}, convention).total();
    r.computed_gflops = to_gflops(f);
  }
  return rows;
}

namespace {

bool ordering_of(const std::vector<AblationRow>& rows) {
  auto get = [&](const std::string& label) {
    for (const auto& r : rows) {
      if (r.label == label) return r.computed_gflops;
    }
    throw ConfigError("missing ablation row " + label);
  };
  return get("cfaa S=4") < get("cfaa S=2") && get("cfaa S=2") < get("axial+relative") &&
         get("axial+relative") < get("non-local") && get("axial") < get("non-local");
}

}  // namespace

bool CalibrationReport::any_within() const {
  return std::any_of(entries.begin(), entries.end(), [](const auto& e) { return e.all_within; });
}

bool CalibrationReport::ordering_holds_everywhere() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const auto& e) { return e.ordering_holds; });
}

CalibrationReport calibrate(const BackboneSpec& spec, std::size_t frames) {
  CalibrationReport report;
  for (const auto& conv : all_conventions()) {
    CalibrationEntry e;
    e.convention = conv;
    e.rows = ablation_table(conv, spec, frames);
    e.all_within = true;
    for (const auto& r : e.rows) {
      e.score = std::max(e.score, std::abs(r.relative_error()) / r.tolerance);
      e.all_within = e.all_within && r.within_tolerance();
    }
    e.ordering_holds = ordering_of(e.rows);
    report.entries.push_back(std::move(e));
  }
  std::stable_sort(report.entries.begin(), report.entries.end(),
                   [](const auto& a, const auto& b) { return a.score < b.score; });
  return report;
}

}  // namespace cfaan
