#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cfaan/attention.hpp"

namespace cfaan {

enum class PositionalCounting {
  per_head,  // every head pays for its own q.r^q, k.r^k and r^v terms
  shared,    // positional terms counted once per line at per-head table width
};

/// How raw operation counts turn into reported FLOPs.
struct CountingConvention {
  unsigned macs_per_flop = 1;  // 1: a multiply-accumulate is one FLOP; 2: two
  bool include_softmax_exp = false;
  bool include_bn_relu = false;
  bool include_attention_projections = false;
  PositionalCounting positional = PositionalCounting::per_head;

  /// Compact description, e.g. "mac=1,softmax=0,bnrelu=0,proj=0,positional=per_head".
  std::string tag() const;
  bool operator==(const CountingConvention&) const = default;

  /// Accepts "default", "exact", "calibrated" or a comma-separated list of
  /// key=value pairs using the keys of tag().
  static CountingConvention parse(const std::string& text);
  static CountingConvention exact();
  static CountingConvention calibrated();
};

enum class LayerKind { conv, linear, attention, bn, relu };
std::string to_string(LayerKind k);

/// One layer of the per-frame backbone.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t in_h = 0;
  std::size_t in_w = 0;

  std::size_t out_h() const { return (in_h + stride - 1) / stride; }
  std::size_t out_w() const { return (in_w + stride - 1) / stride; }
  /// Multiply-accumulates (conv/linear) or elementwise ops (bn/relu) per frame.
  std::uint64_t ops_per_frame() const;
};

/// Residual 50-layer backbone geometry.
struct BackboneSpec {
  std::size_t input_h = 256;
  std::size_t input_w = 128;
  std::size_t stem_width = 64;
  std::vector<std::size_t> widths{64, 128, 256, 512};
  std::vector<std::size_t> blocks{3, 4, 6, 3};
  std::size_t last_stride = 1;

  void validate() const;
};

/// Convolutions, plus BN and ReLU layers, in execution order. Layer names
/// follow "conv<stage>_<block>.<part>".
std::vector<LayerSpec> backbone_layers(const BackboneSpec& spec);

struct FlopRow {
  std::string name;
  LayerKind kind = LayerKind::conv;
  std::uint64_t flops = 0;
};

struct FlopReport {
  std::string title;
  CountingConvention convention;
  std::vector<FlopRow> rows;
  std::string baseline_name;       // empty when there is no baseline
  std::uint64_t baseline_flops = 0;

  std::uint64_t total() const;
  /// total() - baseline_flops, as a signed integer.
  std::int64_t delta() const;
};

double to_gflops(std::uint64_t flops);
double to_gflops(std::int64_t flops);

FlopReport backbone_flops(const BackboneSpec& spec, std::size_t frames,
                          const CountingConvention& convention);

enum class AttentionVariant { nonlocal3d, axial, axial_sinusoidal, axial_relative, cfaa };
std::string to_string(AttentionVariant v);
AttentionVariant parse_variant(const std::string& text);

/// A variant together with its head and scale counts. `heads` is per scale.
struct VariantSpec {
  AttentionVariant variant = AttentionVariant::cfaa;
  std::size_t heads = 2;
  std::size_t scales = 4;

  Encoding encoding() const;
  std::size_t effective_scales() const;  // 1 except for cfaa
};

/// Where an attention module sits and the map it sees.
struct InsertionPoint {
  std::string name;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Two modules after conv3_3 and conv3_4, three after conv4_4..conv4_6, with
/// extents taken from the backbone geometry.
std::vector<InsertionPoint> default_insertion_points(const BackboneSpec& spec);

/// Channel widths of an inserted module relative to its input channels.
struct ModuleWidths {
  std::size_t qk_divisor = 2;   // c_qk = c_in / qk_divisor
  std::size_t out_divisor = 1;  // c_out = c_in / out_divisor
};

AttentionConfig module_config(const VariantSpec& v, const InsertionPoint& at, std::size_t frames,
                              const ModuleWidths& widths);

/// Closed-form operation counts of one module; equal to the counts recorded
/// while executing the kernels.
OpCounts analytic_attention_counts(const VariantSpec& v, const AttentionConfig& config);

/// FLOPs of a set of op counts under a convention. `heads` is the per-scale
/// head count used by shared positional counting.
std::uint64_t flops_from_counts(const OpCounts& c, std::size_t heads,
                                const CountingConvention& convention);

FlopReport attention_flops(const VariantSpec& v, const std::vector<InsertionPoint>& points,
                           std::size_t frames, const ModuleWidths& widths,
                           const CountingConvention& convention);

/// Runs the kernels on random data with an instrumented counter.
OpCounts count_oracle_multiplies(const VariantSpec& v, const AttentionConfig& config,
                                 std::uint64_t seed = 1);

/// Full-model presets: "c2d", "nonlocal", "cfaan".
FlopReport model_flops(const std::string& preset, const BackboneSpec& spec, std::size_t frames,
                       const CountingConvention& convention);
std::vector<FlopReport> model_table(const std::vector<std::string>& presets,
                                    const BackboneSpec& spec, std::size_t frames,
                                    const CountingConvention& convention);
const std::vector<std::string>& model_presets();

/// One row of the attention ablation cost table.
struct AblationRow {
  std::string label;
  bool is_baseline = false;
  VariantSpec variant;
  double target_gflops = 0.0;  // absolute for the baseline, delta otherwise
  double tolerance = 0.0;      // relative
  double computed_gflops = 0.0;

  double relative_error() const;
  bool within_tolerance() const { return std::abs(relative_error()) <= tolerance; }
};

std::vector<AblationRow> ablation_table(const CountingConvention& convention,
                                        const BackboneSpec& spec = {}, std::size_t frames = 6);

/// Target full-model totals paired with their presets.
struct ModelTarget {
  std::string preset;
  double target_gflops;
  double tolerance;
};
const std::vector<ModelTarget>& model_targets();

struct CalibrationEntry {
  CountingConvention convention;
  std::vector<AblationRow> rows;
  double score = 0.0;  // max |relative error| / tolerance over all rows
  bool all_within = false;
  bool ordering_holds = false;  // cfaa(S=4) < cfaa(S=2) < axial < non-local
};

struct CalibrationReport {
  std::vector<CalibrationEntry> entries;  // sorted by score, best first
  const CalibrationEntry& best() const { return entries.front(); }
  bool any_within() const;
  bool ordering_holds_everywhere() const;
};

CalibrationReport calibrate(const BackboneSpec& spec = {}, std::size_t frames = 6);

/// Every convention the calibration sweep visits.
std::vector<CountingConvention> all_conventions();

}  // namespace cfaan
