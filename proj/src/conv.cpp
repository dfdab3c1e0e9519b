#include "cfaan/conv.hpp"

#include <cmath>

#include "cfaan/errors.hpp"

namespace cfaan {

namespace {

void require_map(const Tensor& x, std::size_t channels, const char* op) {
  if (x.rank() != 4 || x.dim(0) != channels) {
    throw DimensionError(std::string(op) + ": expected " + std::to_string(channels) +
                         " x T x H x W input, got " + shape_string(x.shape()));
  }
}

// Column matrix (c_in*k*k) x (T*Ho*Wo) of the zero-padded input windows.
Tensor im2col(const Tensor& x, const Conv2d& conv, std::size_t ho, std::size_t wo) {
  const std::size_t C = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t k = conv.kernel(), pad = k / 2, s = conv.stride, n = T * ho * wo;
  Tensor col({C * k * k, n});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = &col[((c * k + ky) * k + kx) * n];
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = long(oy * s + ky) - long(pad);
            if (iy < 0 || iy >= long(H)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = long(ox * s + kx) - long(pad);
              if (ix < 0 || ix >= long(W)) continue;
              row[(t * ho + oy) * wo + ox] = x[((c * T + t) * H + iy) * W + ix];
            }
          }
      }
  return col;
}

Tensor col2im(const Tensor& col, const Conv2d& conv, const Tensor::Shape& shape, std::size_t ho,
              std::size_t wo) {
  const std::size_t C = shape[0], T = shape[1], H = shape[2], W = shape[3];
  const std::size_t k = conv.kernel(), pad = k / 2, s = conv.stride, n = T * ho * wo;
  Tensor x(shape);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = &col[((c * k + ky) * k + kx) * n];
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = long(oy * s + ky) - long(pad);
            if (iy < 0 || iy >= long(H)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = long(ox * s + kx) - long(pad);
              if (ix < 0 || ix >= long(W)) continue;
              x[((c * T + t) * H + iy) * W + ix] += row[(t * ho + oy) * wo + ox];
            }
          }
      }
  return x;
}

}  // namespace

std::size_t Conv2d::out_extent(std::size_t in) const {
  const std::size_t k = kernel(), pad = k / 2;
  if (in + 2 * pad < k) throw DimensionError("conv2d: input smaller than the kernel");
  return (in + 2 * pad - k) / stride + 1;
}

Conv2d init_conv2d(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride,
                   Rng& rng) {
  if (c_in == 0 || c_out == 0 || kernel == 0 || kernel % 2 == 0 || stride == 0) {
    throw ConfigError("conv2d needs positive channels, an odd kernel and a positive stride");
  }
  const std::size_t fan_in = c_in * kernel * kernel;
  return Conv2d{init_uniform({c_out, c_in, kernel, kernel}, fan_in, rng),
                init_uniform({c_out}, fan_in, rng), stride};
}

Tensor conv2d_forward(const Tensor& x, const Conv2d& conv) {
  require_map(x, conv.c_in(), "conv2d");
  const std::size_t T = x.dim(1), ho = conv.out_extent(x.dim(2)), wo = conv.out_extent(x.dim(3));
  const Tensor col = im2col(x, conv, ho, wo);
  const std::size_t fan = conv.weight.size() / conv.c_out();
  Tensor out = matmul(conv.weight.reshaped({conv.c_out(), fan}), col);
  const std::size_t n = T * ho * wo;
  for (std::size_t o = 0; o < conv.c_out(); ++o)
    for (std::size_t i = 0; i < n; ++i) out[o * n + i] += conv.bias[o];
  return out.reshaped({conv.c_out(), T, ho, wo});
}

Conv2dGradients conv2d_backward(const Tensor& x, const Conv2d& conv, const Tensor& grad_out) {
  require_map(x, conv.c_in(), "conv2d_backward");
  const std::size_t T = x.dim(1), ho = conv.out_extent(x.dim(2)), wo = conv.out_extent(x.dim(3));
  if (grad_out.shape() != Tensor::Shape{conv.c_out(), T, ho, wo}) {
    throw DimensionError("conv2d_backward: gradient is " + shape_string(grad_out.shape()) +
                         ", expected " + shape_string({conv.c_out(), T, ho, wo}));
  }
  const std::size_t n = T * ho * wo, fan = conv.weight.size() / conv.c_out();
  const Tensor g = grad_out.reshaped({conv.c_out(), n});
  const Tensor col = im2col(x, conv, ho, wo);
  Conv2dGradients out;
  out.weight = matmul_nt(g, col).reshaped(conv.weight.shape());
  out.bias = Tensor({conv.c_out()});
  for (std::size_t o = 0; o < conv.c_out(); ++o)
    for (std::size_t i = 0; i < n; ++i) out.bias[o] += g[o * n + i];
  out.input = col2im(matmul_tn(conv.weight.reshaped({conv.c_out(), fan}), g), conv, x.shape(), ho,
                     wo);
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  if (!x.same_shape(grad_out)) throw DimensionError("relu_backward: shapes differ");
  Tensor out = grad_out;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i] > 0.0)) out[i] = 0.0;
  return out;
}

Linear init_linear(std::size_t c_in, std::size_t c_out, Rng& rng) {
  if (c_in == 0 || c_out == 0) throw ConfigError("linear layer needs positive widths");
  return Linear{init_uniform({c_out, c_in}, c_in, rng), init_uniform({c_out}, c_in, rng)};
}

Tensor linear_forward(const Tensor& x, const Linear& fc) {
  if (x.rank() != 2 || x.dim(1) != fc.weight.dim(1)) {
    throw DimensionError("linear: expected B x " + std::to_string(fc.weight.dim(1)) +
                         " input, got " + shape_string(x.shape()));
  }
  Tensor out = matmul_nt(x, fc.weight);
  const std::size_t B = x.dim(0), O = fc.weight.dim(0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o) out[b * O + o] += fc.bias[o];
  return out;
}

LinearGradients linear_backward(const Tensor& x, const Linear& fc, const Tensor& grad_out) {
  const std::size_t B = x.dim(0), O = fc.weight.dim(0);
  if (grad_out.shape() != Tensor::Shape{B, O}) {
    throw DimensionError("linear_backward: gradient is " + shape_string(grad_out.shape()));
  }
  LinearGradients g;
  g.input = matmul(grad_out, fc.weight);
  g.weight = matmul_tn(grad_out, x);
  g.bias = Tensor({O});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o) g.bias[o] += grad_out[b * O + o];
  return g;
}

Tensor swap_leading_axes(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("swap_leading_axes needs rank >= 2");
  const std::size_t A = x.dim(0), B = x.dim(1), inner = x.size() / (A * B);
  Tensor::Shape shape = x.shape();
  std::swap(shape[0], shape[1]);
  Tensor out(shape);
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < inner; ++i) out[(b * A + a) * inner + i] = x[(a * B + b) * inner + i];
  return out;
}

}  // namespace cfaan
