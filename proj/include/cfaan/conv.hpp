#pragma once

#include <string>

#include "cfaan/attention.hpp"
#include "cfaan/rng.hpp"
#include "cfaan/tensor.hpp"

namespace cfaan {

/// Square 2-D convolution applied to every frame of a C x T x H x W map,
/// zero padding kernel/2 on each side.
struct Conv2d {
  Tensor weight;  // c_out x c_in x k x k
  Tensor bias;    // c_out
  std::size_t stride = 1;

  std::size_t c_in() const { return weight.dim(1); }
  std::size_t c_out() const { return weight.dim(0); }
  std::size_t kernel() const { return weight.dim(2); }
  std::size_t out_extent(std::size_t in) const;
};

Conv2d init_conv2d(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride,
                   Rng& rng);

Tensor conv2d_forward(const Tensor& x, const Conv2d& conv);

struct Conv2dGradients {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
Conv2dGradients conv2d_backward(const Tensor& x, const Conv2d& conv, const Tensor& grad_out);

Tensor relu(const Tensor& x);
/// grad_out where the forward input was positive, zero elsewhere.
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

/// Fully-connected layer on B x c_in rows.
struct Linear {
  Tensor weight;  // c_out x c_in
  Tensor bias;    // c_out
};

Linear init_linear(std::size_t c_in, std::size_t c_out, Rng& rng);
Tensor linear_forward(const Tensor& x, const Linear& fc);

struct LinearGradients {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
LinearGradients linear_backward(const Tensor& x, const Linear& fc, const Tensor& grad_out);

/// Swaps the two leading axes: C x T x ... <-> T x C x ...
Tensor swap_leading_axes(const Tensor& x);

}  // namespace cfaan
