#include "cfaan/attention.hpp"

#include <algorithm>
#include <cmath>

#include "cfaan/errors.hpp"

namespace cfaan {

std::string to_string(Encoding e) {
  switch (e) {
    case Encoding::none: return "none";
    case Encoding::sinusoidal: return "sinusoidal";
    case Encoding::relative: return "relative";
  }
  return "?";
}

std::string to_string(Axis a) {
  switch (a) {
    case Axis::H: return "H";
    case Axis::W: return "W";
    case Axis::T: return "T";
  }
  return "?";
}

Encoding parse_encoding(const std::string& text) {
  if (text == "none") return Encoding::none;
  if (text == "sinusoidal") return Encoding::sinusoidal;
  if (text == "relative") return Encoding::relative;
  throw ConfigError("unknown encoding '" + text + "' (expected none, sinusoidal, relative)");
}

Axis parse_axis(const std::string& text) {
  if (text == "H" || text == "h") return Axis::H;
  if (text == "W" || text == "w") return Axis::W;
  if (text == "T" || text == "t") return Axis::T;
  throw ConfigError("unknown axis '" + text + "' (expected H, W or T)");
}

// ---- config ----------------------------------------------------------------

void AttentionConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("attention config: " + msg); };
  if (c_in == 0 || c_qk == 0 || c_out == 0) fail("channel widths must be positive");
  if (heads == 0) fail("heads must be >= 1");
  if (scales == 0) fail("scales must be >= 1");
  if (frames == 0 || height == 0 || width == 0) fail("axis lengths must be positive");
  if (scales > 30) fail("too many scales");
  if (c_in % scales != 0) {
    fail("c_in " + std::to_string(c_in) + " not divisible by scales " + std::to_string(scales));
  }
  const std::size_t split = scales * heads;
  if (c_qk % split != 0) {
    fail("c_qk " + std::to_string(c_qk) + " not divisible by scales*heads " +
         std::to_string(split));
  }
  if (c_out % split != 0) {
    fail("c_out " + std::to_string(c_out) + " not divisible by scales*heads " +
         std::to_string(split));
  }
  const std::size_t min_extent = std::size_t{1} << (scales - 1);
  if (height < min_extent || width < min_extent) {
    fail("H and W must be >= 2^(S-1) = " + std::to_string(min_extent));
  }
  if (encoding == Encoding::sinusoidal && (c_qk / scales) % 2 != 0) {
    fail("sinusoidal encoding needs an even per-scale c_qk");
  }
}

std::size_t AttentionConfig::scale_height(std::size_t s) const {
  const std::size_t f = scale_factor(s);
  return (height + f - 1) / f;
}

std::size_t AttentionConfig::scale_width(std::size_t s) const {
  const std::size_t f = scale_factor(s);
  return (width + f - 1) / f;
}

Tensor::Shape AttentionConfig::scale_input_shape(std::size_t s) const {
  return {c_in / scales, frames, scale_height(s), scale_width(s)};
}

OpCounts& OpCounts::operator+=(const OpCounts& o) {
  projection_macs += o.projection_macs;
  score_macs += o.score_macs;
  value_macs += o.value_macs;
  positional_macs += o.positional_macs;
  encoding_adds += o.encoding_adds;
  softmax_exps += o.softmax_exps;
  output_macs += o.output_macs;
  return *this;
}

// ---- parameter plumbing ----------------------------------------------------

const AttentionLayerParams& AxialStackParams::layer(Axis a) const {
  switch (a) {
    case Axis::H: return h;
    case Axis::W: return w;
    case Axis::T: return t;
  }
  throw ConfigError("unknown axis");
}

AttentionLayerParams& AxialStackParams::layer(Axis a) {
  return const_cast<AttentionLayerParams&>(std::as_const(*this).layer(a));
}

namespace {

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

template <typename Layer, typename Visitor>
void visit_layer(Layer& p, const std::string& prefix, const Visitor& f) {
  f(join(prefix, "w_q"), p.w_q);
  f(join(prefix, "w_k"), p.w_k);
  f(join(prefix, "w_v"), p.w_v);
  if (p.r_q) f(join(prefix, "r_q"), *p.r_q);
  if (p.r_k) f(join(prefix, "r_k"), *p.r_k);
  if (p.r_v) f(join(prefix, "r_v"), *p.r_v);
}

template <typename Cfaa, typename Visitor>
void visit_cfaa(Cfaa& p, const std::string& prefix, const Visitor& f) {
  for (std::size_t s = 0; s < p.scales.size(); ++s) {
    const std::string sp = join(prefix, "scale" + std::to_string(s));
    visit_layer(p.scales[s].h, join(sp, "h"), f);
    visit_layer(p.scales[s].w, join(sp, "w"), f);
    visit_layer(p.scales[s].t, join(sp, "t"), f);
  }
  f(join(prefix, "w_o"), p.w_o);
}

template <typename NonLocal, typename Visitor>
void visit_nonlocal(NonLocal& p, const std::string& prefix, const Visitor& f) {
  visit_layer(p.attention, join(prefix, "attention"), f);
  f(join(prefix, "w_o"), p.w_o);
}

Tensor zeros(const Tensor& t) { return Tensor(t.shape()); }

std::optional<Tensor> zeros(const std::optional<Tensor>& t) {
  if (!t) return std::nullopt;
  return Tensor(t->shape());
}

}  // namespace

void for_each_tensor(AttentionLayerParams& p, const std::string& prefix, const TensorVisitor& f) {
  visit_layer(p, prefix, f);
}
void for_each_tensor(const AttentionLayerParams& p, const std::string& prefix,
                     const ConstTensorVisitor& f) {
  visit_layer(p, prefix, f);
}
void for_each_tensor(CfaaParams& p, const std::string& prefix, const TensorVisitor& f) {
  visit_cfaa(p, prefix, f);
}
void for_each_tensor(const CfaaParams& p, const std::string& prefix,
                     const ConstTensorVisitor& f) {
  visit_cfaa(p, prefix, f);
}
void for_each_tensor(NonLocalParams& p, const std::string& prefix, const TensorVisitor& f) {
  visit_nonlocal(p, prefix, f);
}
void for_each_tensor(const NonLocalParams& p, const std::string& prefix,
                     const ConstTensorVisitor& f) {
  visit_nonlocal(p, prefix, f);
}

template <typename Params>
void assign_named_tensors(Params& p, const NamedTensors& tensors, const std::string& prefix) {
  std::size_t i = 0;
  for_each_tensor(p, prefix, [&](const std::string& name, Tensor& t) {
    if (i >= tensors.size()) throw ValidationError("checkpoint missing parameter " + name);
    const auto& [stored_name, stored] = tensors[i++];
    if (stored_name != name) {
      throw ValidationError("checkpoint order mismatch: expected " + name + ", found " +
                            stored_name);
    }
    if (stored.shape() != t.shape()) {
      throw ValidationError("checkpoint shape mismatch for " + name + ": " +
                            shape_string(stored.shape()) + " vs " + shape_string(t.shape()));
    }
    t = stored;
  });
  if (i != tensors.size()) throw ValidationError("checkpoint has unexpected extra parameters");
}

template void assign_named_tensors<AttentionLayerParams>(AttentionLayerParams&,
                                                         const NamedTensors&,
                                                         const std::string&);
template void assign_named_tensors<CfaaParams>(CfaaParams&, const NamedTensors&,
                                               const std::string&);
template void assign_named_tensors<NonLocalParams>(NonLocalParams&, const NamedTensors&,
                                                   const std::string&);

AttentionLayerParams zeros_like(const AttentionLayerParams& p) {
  return {zeros(p.w_q), zeros(p.w_k), zeros(p.w_v), zeros(p.r_q), zeros(p.r_k), zeros(p.r_v)};
}

NonLocalParams zeros_like(const NonLocalParams& p) {
  return {zeros_like(p.attention), zeros(p.w_o)};
}

CfaaParams zeros_like(const CfaaParams& p) {
  CfaaParams out;
  for (const auto& s : p.scales) {
    out.scales.push_back({zeros_like(s.h), zeros_like(s.w), zeros_like(s.t)});
  }
  out.w_o = zeros(p.w_o);
  return out;
}

AttentionLayerParams init_layer_params(std::size_t c_in, std::size_t c_qk, std::size_t c_out,
                                       const LayerOptions& opts, std::size_t axis_length,
                                       Rng& rng) {
  if (opts.heads == 0 || c_qk % opts.heads != 0 || c_out % opts.heads != 0) {
    throw ConfigError("init_layer_params: c_qk and c_out must be divisible by heads");
  }
  AttentionLayerParams p;
  p.w_q = init_uniform({c_qk, c_in}, c_in, rng);
  p.w_k = init_uniform({c_qk, c_in}, c_in, rng);
  p.w_v = init_uniform({c_out, c_in}, c_in, rng);
  if (opts.encoding == Encoding::relative) {
    if (axis_length == 0) throw ConfigError("init_layer_params: axis length must be positive");
    const std::size_t rows = 2 * axis_length - 1;
    const std::size_t dq = c_qk / opts.heads, dv = c_out / opts.heads;
    p.r_q = init_uniform({rows, dq}, dq, rng);
    p.r_k = init_uniform({rows, dq}, dq, rng);
    p.r_v = init_uniform({rows, dv}, dv, rng);
  }
  return p;
}

NonLocalParams init_nonlocal_params(std::size_t c_in, std::size_t c_qk, std::size_t c_out,
                                    Rng& rng, bool zero_output) {
  NonLocalParams p;
  p.attention = init_layer_params(c_in, c_qk, c_out, {1, Encoding::none}, 0, rng);
  p.w_o = zero_output ? Tensor({c_in, c_out}) : init_uniform({c_in, c_out}, c_out, rng);
  return p;
}

CfaaParams init_cfaa_params(const AttentionConfig& config, Rng& rng, bool zero_output) {
  config.validate();
  const std::size_t S = config.scales;
  const std::size_t cin = config.c_in / S, cqk = config.c_qk / S, cout = config.c_out / S;
  const LayerOptions opts{config.heads, config.encoding};
  CfaaParams p;
  for (std::size_t s = 0; s < S; ++s) {
    AxialStackParams stack;
    stack.h = init_layer_params(cin, cqk, cout, opts, config.scale_height(s), rng);
    stack.w = init_layer_params(cout, cqk, cout, opts, config.scale_width(s), rng);
    stack.t = init_layer_params(cout, cqk, cout, opts, config.frames, rng);
    p.scales.push_back(std::move(stack));
  }
  p.w_o = zero_output ? Tensor({config.c_in, config.c_out})
                      : init_uniform({config.c_in, config.c_out}, config.c_out, rng);
  return p;
}

Tensor sinusoidal_encode(std::size_t axis_length, std::size_t dim) {
  if (axis_length == 0) throw ConfigError("sinusoidal_encode: axis length must be positive");
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("sinusoidal_encode: dim must be even and positive, got " +
                      std::to_string(dim));
  }
  Tensor table({axis_length, dim});
  for (std::size_t p = 0; p < axis_length; ++p) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(2 * i) / static_cast<double>(dim));
      const double angle = static_cast<double>(p) * freq;
      table[p * dim + 2 * i] = std::sin(angle);
      table[p * dim + 2 * i + 1] = std::cos(angle);
    }
  }
  return table;
}

// ---- kernels ---------------------------------------------------------------

namespace {

enum class Scope { all, H, W, T };

Scope scope_of(Axis a) {
  switch (a) {
    case Axis::H: return Scope::H;
    case Axis::W: return Scope::W;
    case Axis::T: return Scope::T;
  }
  throw ConfigError("unknown axis");
}

// Independent 1-D lines of a T x H x W grid, addressed as start + i * stride.
struct Lines {
  std::size_t count = 0;
  std::size_t length = 0;
  std::size_t stride = 0;
  std::size_t T = 0, H = 0, W = 0;
  Scope scope = Scope::all;

  std::size_t start(std::size_t line) const {
    switch (scope) {
      case Scope::all: return 0;
      case Scope::H: return (line / W) * H * W + line % W;
      case Scope::W: return line * W;
      case Scope::T: return line;
    }
    return 0;
  }
};

Lines make_lines(const Tensor& x, Scope scope) {
  Lines l;
  l.T = x.dim(1);
  l.H = x.dim(2);
  l.W = x.dim(3);
  l.scope = scope;
  switch (scope) {
    case Scope::all: l.count = 1; l.length = l.T * l.H * l.W; l.stride = 1; break;
    case Scope::H: l.count = l.T * l.W; l.length = l.H; l.stride = l.W; break;
    case Scope::W: l.count = l.T * l.H; l.length = l.W; l.stride = 1; break;
    case Scope::T: l.count = l.H * l.W; l.length = l.T; l.stride = l.H * l.W; break;
  }
  return l;
}

void validate_layer(const Tensor& x, const AttentionLayerParams& p, Scope scope,
                    const LayerOptions& opts) {
  if (x.rank() != 4) {
    throw DimensionError("attention input must be C x T x H x W, got " + shape_string(x.shape()));
  }
  if (p.w_q.rank() != 2 || p.w_k.rank() != 2 || p.w_v.rank() != 2) {
    throw DimensionError("attention projections must be matrices");
  }
  if (p.w_q.dim(1) != x.dim(0) || p.w_k.dim(1) != x.dim(0) || p.w_v.dim(1) != x.dim(0)) {
    throw DimensionError("attention projections expect " + std::to_string(p.w_q.dim(1)) +
                         " input channels, input is " + shape_string(x.shape()));
  }
  if (p.w_k.shape() != p.w_q.shape()) {
    throw DimensionError("w_q " + shape_string(p.w_q.shape()) + " and w_k " +
                         shape_string(p.w_k.shape()) + " differ");
  }
  if (opts.heads == 0 || p.c_qk() % opts.heads != 0 || p.c_out() % opts.heads != 0) {
    throw ConfigError("c_qk " + std::to_string(p.c_qk()) + " and c_out " +
                      std::to_string(p.c_out()) + " must be divisible by heads " +
                      std::to_string(opts.heads));
  }
  if (scope == Scope::all && opts.encoding != Encoding::none) {
    throw ConfigError("3-D attention supports no positional encoding");
  }
  if (opts.encoding == Encoding::sinusoidal && p.c_qk() % 2 != 0) {
    throw ConfigError("sinusoidal encoding needs an even c_qk");
  }
  if (opts.encoding == Encoding::relative) {
    const Lines lines = make_lines(x, scope);
    const std::size_t rows = 2 * lines.length - 1;
    const std::size_t dq = p.c_qk() / opts.heads, dv = p.c_out() / opts.heads;
    auto check = [&](const std::optional<Tensor>& t, std::size_t width, const char* name) {
      if (!t) throw ConfigError(std::string("relative encoding needs table ") + name);
      if (t->rank() != 2 || t->dim(0) != rows || t->dim(1) != width) {
        throw ConfigError(std::string("relative table ") + name + " has shape " +
                          shape_string(t->shape()) + ", expected " +
                          shape_string({rows, width}) + " for axis length " +
                          std::to_string(lines.length));
      }
    };
    check(p.r_q, dq, "r_q");
    check(p.r_k, dq, "r_k");
    check(p.r_v, dv, "r_v");
  }
}

inline double dotn(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// Position-major projection: rows are positions, columns output channels.
Tensor project(const Tensor& x_pm, const Tensor& w, OpCounts* counts) {
  if (counts) counts->projection_macs += x_pm.dim(0) * w.dim(1) * w.dim(0);
  return matmul_nt(x_pm, w);
}

struct Projected {
  Tensor x_pm;  // N x c_in
  Tensor q;     // N x c_qk (encoding already added)
  Tensor k;     // N x c_qk
  Tensor v;     // N x c_out
};

Projected project_layer(const Tensor& x, const AttentionLayerParams& p, const Lines& lines,
                        const LayerOptions& opts, OpCounts* counts) {
  const std::size_t N = lines.T * lines.H * lines.W;
  Projected pr;
  pr.x_pm = transpose(x.reshaped({x.dim(0), N}));
  pr.q = project(pr.x_pm, p.w_q, counts);
  pr.k = project(pr.x_pm, p.w_k, counts);
  pr.v = project(pr.x_pm, p.w_v, counts);
  if (opts.encoding == Encoding::sinusoidal) {
    const std::size_t cq = p.c_qk();
    const Tensor pe = sinusoidal_encode(lines.length, cq);
    for (std::size_t l = 0; l < lines.count; ++l) {
      const std::size_t base = lines.start(l);
      for (std::size_t i = 0; i < lines.length; ++i) {
        const std::size_t pos = base + i * lines.stride;
        axpy(1.0, &pe[i * cq], &pr.q[pos * cq], cq);
        axpy(1.0, &pe[i * cq], &pr.k[pos * cq], cq);
      }
    }
    if (counts) counts->encoding_adds += 2 * N * cq;
  }
  return pr;
}

// Logits and softmax weights of one line for one head, L x L row-major.
void line_weights(const Projected& pr, const AttentionLayerParams& p, const Lines& lines,
                  std::size_t base, std::size_t head, std::size_t dq, bool relative,
                  std::vector<double>& a, OpCounts* counts) {
  const std::size_t L = lines.length, cq = pr.q.dim(1);
  const double* q = pr.q.data().data();
  const double* k = pr.k.data().data();
  for (std::size_t i = 0; i < L; ++i) {
    const double* qi = q + (base + i * lines.stride) * cq + head * dq;
    double* row = &a[i * L];
    for (std::size_t j = 0; j < L; ++j) {
      const double* kj = k + (base + j * lines.stride) * cq + head * dq;
      double s = dotn(qi, kj, dq);
      if (relative) {
        const std::size_t r = j + L - 1 - i;
        s += dotn(qi, &(*p.r_q)[r * dq], dq);
        s += dotn(kj, &(*p.r_k)[r * dq], dq);
      }
      row[j] = s;
    }
    double mx = row[0];
    for (std::size_t j = 1; j < L; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < L; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < L; ++j) row[j] /= sum;
  }
  if (counts) {
    counts->score_macs += L * L * dq;
    if (relative) counts->positional_macs += 2 * L * L * dq;
    counts->softmax_exps += L * L;
  }
}

// Attention output, channel-major c_out x T x H x W.
Tensor layer_forward(const Tensor& x, const AttentionLayerParams& p, Scope scope,
                     const LayerOptions& opts, OpCounts* counts, Tensor* weights = nullptr) {
  validate_layer(x, p, scope, opts);
  const Lines lines = make_lines(x, scope);
  const Projected pr = project_layer(x, p, lines, opts, counts);
  const std::size_t N = lines.T * lines.H * lines.W, L = lines.length, M = opts.heads;
  const std::size_t cv = p.c_out(), dq = p.c_qk() / M, dv = cv / M;
  const bool relative = opts.encoding == Encoding::relative;

  Tensor z_pm({N, cv});
  if (weights) *weights = Tensor({M, lines.count, L, L});
  std::vector<double> a(L * L);
  const double* v = pr.v.data().data();
  for (std::size_t l = 0; l < lines.count; ++l) {
    const std::size_t base = lines.start(l);
    for (std::size_t m = 0; m < M; ++m) {
      line_weights(pr, p, lines, base, m, dq, relative, a, counts);
      if (weights) {
        std::copy(a.begin(), a.end(), weights->data().begin() +
                                           static_cast<std::ptrdiff_t>((m * lines.count + l) * L * L));
      }
      for (std::size_t i = 0; i < L; ++i) {
        double* zi = &z_pm[(base + i * lines.stride) * cv + m * dv];
        for (std::size_t j = 0; j < L; ++j) {
          const double w = a[i * L + j];
          axpy(w, v + (base + j * lines.stride) * cv + m * dv, zi, dv);
          if (relative) axpy(w, &(*p.r_v)[(j + L - 1 - i) * dv], zi, dv);
        }
      }
      if (counts) {
        counts->value_macs += L * L * dv;
        if (relative) counts->positional_macs += L * L * dv;
      }
    }
  }
  Tensor z = transpose(z_pm).reshaped({cv, lines.T, lines.H, lines.W});
  ensure_finite(z, "attention forward");
  return z;
}

LayerGradients layer_backward(const Tensor& x, const AttentionLayerParams& p, Scope scope,
                              const LayerOptions& opts, const Tensor& grad_out) {
  validate_layer(x, p, scope, opts);
  const Lines lines = make_lines(x, scope);
  const std::size_t N = lines.T * lines.H * lines.W, L = lines.length, M = opts.heads;
  const std::size_t cq = p.c_qk(), cv = p.c_out(), dq = cq / M, dv = cv / M;
  const Tensor::Shape out_shape{cv, lines.T, lines.H, lines.W};
  if (grad_out.shape() != out_shape) {
    throw DimensionError("upstream gradient " + shape_string(grad_out.shape()) +
                         " does not match attention output " + shape_string(out_shape));
  }
  const bool relative = opts.encoding == Encoding::relative;
  const Projected pr = project_layer(x, p, lines, opts, nullptr);
  const Tensor dz = transpose(grad_out.reshaped({cv, N}));

  LayerGradients g{Tensor(x.shape()), zeros_like(p)};
  Tensor dq_pm({N, cq}), dk_pm({N, cq}), dv_pm({N, cv});
  std::vector<double> a(L * L), da(L * L);
  const double* q = pr.q.data().data();
  const double* k = pr.k.data().data();
  const double* v = pr.v.data().data();

  for (std::size_t l = 0; l < lines.count; ++l) {
    const std::size_t base = lines.start(l);
    for (std::size_t m = 0; m < M; ++m) {
      line_weights(pr, p, lines, base, m, dq, relative, a, nullptr);
      for (std::size_t i = 0; i < L; ++i) {
        const double* dzi = &dz[(base + i * lines.stride) * cv + m * dv];
        double row_sum = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          const std::size_t pj = base + j * lines.stride;
          const std::size_t r = j + L - 1 - i;
          const double w = a[i * L + j];
          double d = dotn(dzi, v + pj * cv + m * dv, dv);
          axpy(w, dzi, &dv_pm[pj * cv + m * dv], dv);
          if (relative) {
            d += dotn(dzi, &(*p.r_v)[r * dv], dv);
            axpy(w, dzi, &(*g.params.r_v)[r * dv], dv);
          }
          da[i * L + j] = d;
          row_sum += w * d;
        }
        for (std::size_t j = 0; j < L; ++j) da[i * L + j] = a[i * L + j] * (da[i * L + j] - row_sum);
      }
      // da now holds d(loss)/d(logit).
      for (std::size_t i = 0; i < L; ++i) {
        const std::size_t pi = base + i * lines.stride;
        const double* qi = q + pi * cq + m * dq;
        double* dqi = &dq_pm[pi * cq + m * dq];
        for (std::size_t j = 0; j < L; ++j) {
          const std::size_t pj = base + j * lines.stride;
          const double gl = da[i * L + j];
          const double* kj = k + pj * cq + m * dq;
          axpy(gl, kj, dqi, dq);
          axpy(gl, qi, &dk_pm[pj * cq + m * dq], dq);
          if (relative) {
            const std::size_t r = j + L - 1 - i;
            axpy(gl, &(*p.r_q)[r * dq], dqi, dq);
            axpy(gl, &(*p.r_k)[r * dq], &dk_pm[pj * cq + m * dq], dq);
            axpy(gl, qi, &(*g.params.r_q)[r * dq], dq);
            axpy(gl, kj, &(*g.params.r_k)[r * dq], dq);
          }
        }
      }
    }
  }

  g.params.w_q = matmul_tn(dq_pm, pr.x_pm);
  g.params.w_k = matmul_tn(dk_pm, pr.x_pm);
  g.params.w_v = matmul_tn(dv_pm, pr.x_pm);
  Tensor dx_pm = matmul(dq_pm, p.w_q);
  add_inplace(dx_pm, matmul(dk_pm, p.w_k));
  add_inplace(dx_pm, matmul(dv_pm, p.w_v));
  g.input = transpose(dx_pm).reshaped(x.shape());
  return g;
}

Tensor channel_matrix(const Tensor& t) { return t.reshaped({t.dim(0), t.size() / t.dim(0)}); }

void check_output_projection(const Tensor& w_o, std::size_t c_in, std::size_t c_out) {
  if (w_o.shape() != Tensor::Shape{c_in, c_out}) {
    throw DimensionError("output projection " + shape_string(w_o.shape()) + ", expected " +
                         shape_string({c_in, c_out}));
  }
}

// x + W_o z for channel-major x and z.
Tensor residual_project(const Tensor& x, const Tensor& w_o, const Tensor& z, OpCounts* counts) {
  check_output_projection(w_o, x.dim(0), z.dim(0));
  const Tensor zm = channel_matrix(z);
  if (counts) counts->output_macs += w_o.dim(0) * w_o.dim(1) * zm.dim(1);
  Tensor y = matmul(w_o, zm).reshaped(x.shape());
  add_inplace(y, x);
  ensure_finite(y, "residual projection");
  return y;
}

void require_upstream(const Tensor& grad_out, const Tensor& x) {
  if (!grad_out.same_shape(x)) {
    throw DimensionError("upstream gradient " + shape_string(grad_out.shape()) +
                         " does not match output " + shape_string(x.shape()));
  }
}

struct CfaaTrace {
  // Per scale: pooled input, then the outputs of AA^H, AA^W, AA^T.
  std::vector<std::array<Tensor, 4>> stages;
  Tensor z;
};

constexpr std::array<Axis, 3> kAxisOrder{Axis::H, Axis::W, Axis::T};

void validate_cfaa(const Tensor& x, const CfaaParams& params, const AttentionConfig& config) {
  config.validate();
  const Tensor::Shape expected{config.c_in, config.frames, config.height, config.width};
  if (x.shape() != expected) {
    throw DimensionError("cfaa input " + shape_string(x.shape()) + " does not match config " +
                         shape_string(expected));
  }
  if (params.scales.size() != config.scales) {
    throw ConfigError("cfaa params hold " + std::to_string(params.scales.size()) +
                      " scales, config has " + std::to_string(config.scales));
  }
  check_output_projection(params.w_o, config.c_in, config.c_out);
}

CfaaTrace cfaa_trace(const Tensor& x, const CfaaParams& params, const AttentionConfig& config,
                     OpCounts* counts) {
  validate_cfaa(x, params, config);
  const std::size_t S = config.scales, group = config.c_in / S;
  const LayerOptions opts{config.heads, config.encoding};
  CfaaTrace trace;
  std::vector<Tensor> upsampled;
  for (std::size_t s = 0; s < S; ++s) {
    std::array<Tensor, 4> st;
    st[0] = avg_pool_2d(slice_channels(x, s * group, (s + 1) * group), config.scale_factor(s));
    for (std::size_t a = 0; a < 3; ++a) {
      st[a + 1] = layer_forward(st[a], params.scales[s].layer(kAxisOrder[a]),
                                scope_of(kAxisOrder[a]), opts, counts);
    }
    upsampled.push_back(
        upsample_nearest_2d(st[3], config.scale_factor(s), config.height, config.width));
    trace.stages.push_back(std::move(st));
  }
  trace.z = concat_channels(upsampled);
  return trace;
}

}  // namespace

// ---- public forward ops ----------------------------------------------------

Tensor nonlocal_3d_forward(const Tensor& x, const NonLocalParams& params, std::size_t heads,
                           OpCounts* counts) {
  const Tensor z = layer_forward(x, params.attention, Scope::all, {heads, Encoding::none}, counts);
  return residual_project(x, params.w_o, z, counts);
}

Tensor axial_forward(const Tensor& x, const AttentionLayerParams& params, Axis axis,
                     const LayerOptions& opts, OpCounts* counts) {
  if (opts.encoding == Encoding::relative) {
    throw ConfigError("axial_forward: relative encoding is handled by axial_ps_forward");
  }
  return layer_forward(x, params, scope_of(axis), opts, counts);
}

Tensor axial_ps_forward(const Tensor& x, const AttentionLayerParams& params, Axis axis,
                        std::size_t heads, OpCounts* counts) {
  return layer_forward(x, params, scope_of(axis), {heads, Encoding::relative}, counts);
}

Tensor cfaa_forward(const Tensor& x, const CfaaParams& params, const AttentionConfig& config,
                    OpCounts* counts) {
  const CfaaTrace trace = cfaa_trace(x, params, config, counts);
  return residual_project(x, params.w_o, trace.z, counts);
}

Tensor axial_attention_weights(const Tensor& x, const AttentionLayerParams& params, Axis axis,
                               const LayerOptions& opts) {
  Tensor weights;
  layer_forward(x, params, scope_of(axis), opts, nullptr, &weights);
  return weights;
}

// ---- public backward ops ---------------------------------------------------

NonLocalGradients nonlocal_3d_backward(const Tensor& x, const NonLocalParams& params,
                                       const Tensor& grad_out, std::size_t heads) {
  require_upstream(grad_out, x);
  const LayerOptions opts{heads, Encoding::none};
  const Tensor z = layer_forward(x, params.attention, Scope::all, opts, nullptr);
  check_output_projection(params.w_o, x.dim(0), z.dim(0));
  const Tensor dy = channel_matrix(grad_out);
  const Tensor dz = matmul_tn(params.w_o, dy).reshaped(z.shape());
  LayerGradients inner = layer_backward(x, params.attention, Scope::all, opts, dz);
  NonLocalGradients g;
  g.params.attention = std::move(inner.params);
  g.params.w_o = matmul_nt(dy, channel_matrix(z));
  g.input = add(grad_out, inner.input);
  return g;
}

LayerGradients axial_backward(const Tensor& x, const AttentionLayerParams& params, Axis axis,
                              const LayerOptions& opts, const Tensor& grad_out) {
  if (opts.encoding == Encoding::relative) {
    throw ConfigError("axial_backward: relative encoding is handled by axial_ps_backward");
  }
  return layer_backward(x, params, scope_of(axis), opts, grad_out);
}

LayerGradients axial_ps_backward(const Tensor& x, const AttentionLayerParams& params, Axis axis,
                                 std::size_t heads, const Tensor& grad_out) {
  return layer_backward(x, params, scope_of(axis), {heads, Encoding::relative}, grad_out);
}

CfaaGradients cfaa_backward(const Tensor& x, const CfaaParams& params,
                            const AttentionConfig& config, const Tensor& grad_out) {
  require_upstream(grad_out, x);
  const CfaaTrace trace = cfaa_trace(x, params, config, nullptr);
  const std::size_t S = config.scales, group = config.c_in / S, out_group = config.c_out / S;
  const LayerOptions opts{config.heads, config.encoding};

  const Tensor dy = channel_matrix(grad_out);
  CfaaGradients g;
  g.params = zeros_like(params);
  g.params.w_o = matmul_nt(dy, channel_matrix(trace.z));
  const Tensor dz = matmul_tn(params.w_o, dy).reshaped(trace.z.shape());

  std::vector<Tensor> dx_groups;
  for (std::size_t s = 0; s < S; ++s) {
    const auto& st = trace.stages[s];
    Tensor d = upsample_nearest_2d_backward(slice_channels(dz, s * out_group, (s + 1) * out_group),
                                            st[3].shape(), config.scale_factor(s));
    for (std::size_t a = 3; a-- > 0;) {
      const Axis axis = kAxisOrder[a];
      LayerGradients lg = layer_backward(st[a], params.scales[s].layer(axis), scope_of(axis),
                                         opts, d);
      g.params.scales[s].layer(axis) = std::move(lg.params);
      d = std::move(lg.input);
    }
    dx_groups.push_back(avg_pool_2d_backward(
        d, {group, config.frames, config.height, config.width}, config.scale_factor(s)));
  }
  g.input = add(grad_out, concat_channels(dx_groups));
  return g;
}

}  // namespace cfaan
