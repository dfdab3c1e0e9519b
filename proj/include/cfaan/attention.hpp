#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cfaan/rng.hpp"
#include "cfaan/tensor.hpp"
#include "cfaan/tensor_io.hpp"

namespace cfaan {

enum class Encoding { none, sinusoidal, relative };
enum class Axis { H, W, T };

std::string to_string(Encoding e);
std::string to_string(Axis a);
Encoding parse_encoding(const std::string& text);
Axis parse_axis(const std::string& text);

/// Hyperparameters of one attention module applied to a C_in x T x H x W map.
///
/// `heads` is the head count of every 1-D attention inside one scale, so a
/// coarse-to-fine module has scales * heads heads in total. Channel widths
/// are module totals; scale s gets c_in/S, c_qk/S and c_out/S of them.
struct AttentionConfig {
  std::size_t c_in = 0;
  std::size_t c_qk = 0;
  std::size_t c_out = 0;
  std::size_t heads = 1;
  std::size_t scales = 1;
  Encoding encoding = Encoding::relative;
  std::size_t frames = 1;  // T
  std::size_t height = 1;  // H
  std::size_t width = 1;   // W

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;

  std::size_t scale_factor(std::size_t s) const { return std::size_t{1} << s; }
  std::size_t scale_height(std::size_t s) const;
  std::size_t scale_width(std::size_t s) const;
  /// Shape of the pooled channel group fed to scale s.
  Tensor::Shape scale_input_shape(std::size_t s) const;
};

/// Exact operation counts of one forward pass. Multiply-accumulate fields
/// count scalar multiplies; `encoding_adds` counts sinusoidal additions.
struct OpCounts {
  std::uint64_t projection_macs = 0;  // q/k/v 1x1x1 projections
  std::uint64_t score_macs = 0;       // q . k
  std::uint64_t value_macs = 0;       // softmax-weighted value sums
  std::uint64_t positional_macs = 0;  // q . r^q, k . r^k and weighted r^v sums
  std::uint64_t encoding_adds = 0;    // sinusoidal table added to q and k
  std::uint64_t softmax_exps = 0;     // one exp per attention logit
  std::uint64_t output_macs = 0;      // projection back to c_in

  OpCounts& operator+=(const OpCounts& o);
  bool operator==(const OpCounts&) const = default;
};

/// Weights of one attention layer (a 1-D axial attention, or the 3-D one).
///
/// Relative tables have 2L-1 rows, row `p - o + L - 1` holding the
/// embedding for offset p - o. They are shared by all heads, so their width
/// is the per-head width.
struct AttentionLayerParams {
  Tensor w_q;  // c_qk x c_in
  Tensor w_k;  // c_qk x c_in
  Tensor w_v;  // c_out x c_in
  std::optional<Tensor> r_q;  // (2L-1) x c_qk/M
  std::optional<Tensor> r_k;  // (2L-1) x c_qk/M
  std::optional<Tensor> r_v;  // (2L-1) x c_out/M

  std::size_t c_in() const { return w_q.dim(1); }
  std::size_t c_qk() const { return w_q.dim(0); }
  std::size_t c_out() const { return w_v.dim(0); }
};

/// AA^H, AA^W and AA^T of one scale, applied in that order.
struct AxialStackParams {
  AttentionLayerParams h;
  AttentionLayerParams w;
  AttentionLayerParams t;

  const AttentionLayerParams& layer(Axis a) const;
  AttentionLayerParams& layer(Axis a);
};

/// Coarse-to-fine module: one axial stack per scale plus the shared output
/// projection w_o (c_in x c_out). With one scale this is the plain
/// position-sensitive axial block.
struct CfaaParams {
  std::vector<AxialStackParams> scales;
  Tensor w_o;
};

struct NonLocalParams {
  AttentionLayerParams attention;
  Tensor w_o;  // c_in x c_out
};

template <typename Params>
struct Gradients {
  Tensor input;
  Params params;
};

using LayerGradients = Gradients<AttentionLayerParams>;
using NonLocalGradients = Gradients<NonLocalParams>;
using CfaaGradients = Gradients<CfaaParams>;

struct LayerOptions {
  std::size_t heads = 1;
  Encoding encoding = Encoding::none;
};

using TensorVisitor = std::function<void(const std::string& name, Tensor& t)>;
using ConstTensorVisitor = std::function<void(const std::string& name, const Tensor& t)>;

// Canonical parameter enumeration, shared by checkpoints, optimizers and
// gradient checks. Absent relative tables are skipped.
void for_each_tensor(AttentionLayerParams& p, const std::string& prefix, const TensorVisitor& f);
void for_each_tensor(const AttentionLayerParams& p, const std::string& prefix,
                     const ConstTensorVisitor& f);
void for_each_tensor(CfaaParams& p, const std::string& prefix, const TensorVisitor& f);
void for_each_tensor(const CfaaParams& p, const std::string& prefix, const ConstTensorVisitor& f);
void for_each_tensor(NonLocalParams& p, const std::string& prefix, const TensorVisitor& f);
void for_each_tensor(const NonLocalParams& p, const std::string& prefix,
                     const ConstTensorVisitor& f);

template <typename Params>
NamedTensors named_tensors(const Params& p, const std::string& prefix = "") {
  NamedTensors out;
  for_each_tensor(p, prefix, [&](const std::string& name, const Tensor& t) {
    out.emplace_back(name, t);
  });
  return out;
}

/// Fills params from a checkpoint listing; names and shapes must match.
template <typename Params>
void assign_named_tensors(Params& p, const NamedTensors& tensors, const std::string& prefix = "");

/// Same structure, every tensor zero.
AttentionLayerParams zeros_like(const AttentionLayerParams& p);
NonLocalParams zeros_like(const NonLocalParams& p);
CfaaParams zeros_like(const CfaaParams& p);

// Deterministic initialisation, uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
// `axis_length` sizes the relative tables and is ignored otherwise.
AttentionLayerParams init_layer_params(std::size_t c_in, std::size_t c_qk, std::size_t c_out,
                                       const LayerOptions& opts, std::size_t axis_length,
                                       Rng& rng);
NonLocalParams init_nonlocal_params(std::size_t c_in, std::size_t c_qk, std::size_t c_out,
                                    Rng& rng, bool zero_output = false);
CfaaParams init_cfaa_params(const AttentionConfig& config, Rng& rng, bool zero_output = false);

/// Fixed sin/cos table of shape axis_length x dim; entry (p, 2i) is
/// sin(p / 10000^(2i/dim)) and (p, 2i+1) the matching cosine.
Tensor sinusoidal_encode(std::size_t axis_length, std::size_t dim);

// ---- forward passes --------------------------------------------------------

/// 3-D non-local block: x + W_o (attention over all T*H*W positions).
Tensor nonlocal_3d_forward(const Tensor& x, const NonLocalParams& params,
                           std::size_t heads = 1, OpCounts* counts = nullptr);

/// One 1-D attention along `axis` (encoding none or sinusoidal). Returns
/// the concatenated head outputs, c_out x T x H x W.
Tensor axial_forward(const Tensor& x, const AttentionLayerParams& params, Axis axis,
                     const LayerOptions& opts, OpCounts* counts = nullptr);

/// Position-sensitive 1-D attention with relative q/k/v embeddings.
Tensor axial_ps_forward(const Tensor& x, const AttentionLayerParams& params, Axis axis,
                        std::size_t heads, OpCounts* counts = nullptr);

/// Coarse-to-fine axial attention with residual output, same shape as x.
Tensor cfaa_forward(const Tensor& x, const CfaaParams& params, const AttentionConfig& config,
                    OpCounts* counts = nullptr);

/// Softmax weights of a 1-D attention, heads x lines x L x L. Lines are
/// ordered by flattened off-axis coordinate.
Tensor axial_attention_weights(const Tensor& x, const AttentionLayerParams& params, Axis axis,
                               const LayerOptions& opts);

// ---- backward passes -------------------------------------------------------
// Each recomputes its forward pass and returns d(loss)/d(input) and
// d(loss)/d(every parameter) for upstream gradient `grad_out`.

NonLocalGradients nonlocal_3d_backward(const Tensor& x, const NonLocalParams& params,
                                       const Tensor& grad_out, std::size_t heads = 1);
LayerGradients axial_backward(const Tensor& x, const AttentionLayerParams& params, Axis axis,
                              const LayerOptions& opts, const Tensor& grad_out);
LayerGradients axial_ps_backward(const Tensor& x, const AttentionLayerParams& params, Axis axis,
                                 std::size_t heads, const Tensor& grad_out);
CfaaGradients cfaa_backward(const Tensor& x, const CfaaParams& params,
                            const AttentionConfig& config, const Tensor& grad_out);

}  // namespace cfaan
