#include "cfaan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cfaan/errors.hpp"

namespace cfaan {

namespace {

void check_extents(const Tensor::Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) {
      throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_string(a.shape()));
  }
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_volume(const Tensor::Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

Tensor::Tensor() : data_(1, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_volume(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw DimensionError("matrix: no rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("matrix: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank does not match tensor " + shape_string(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw DimensionError("index out of range");
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[flat_index(index)]; }

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[flat_index(index)];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_volume(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void ensure_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value produced");
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  add_inplace(out, b);
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  add_inplace(out, b, -1.0);
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = a;
  for (double& v : out.data()) v *= factor;
  return out;
}

void add_inplace(Tensor& a, const Tensor& b, double factor) {
  require_same_shape(a, b, "add_inplace");
  auto dst = a.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  // i-p-j order keeps the per-element sum in increasing p.
  for (std::size_t i = 0; i < m; ++i) {
    double* row = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  ensure_finite(out, "matmul");
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_tn");
  require_rank(b, 2, "matmul_tn");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul_tn: leading extents differ, " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = pa + p * m;
    const double* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* row = po + i * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  ensure_finite(out, "matmul_tn");
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: trailing extents differ, " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += pa[i * k + p] * pb[j * k + p];
      po[i * n + j] = s;
    }
  }
  ensure_finite(out, "matmul_nt");
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(x.shape()));
  }
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = x[base];
      for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, x[base + l * inner]);
      double sum = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(x[base + l * inner] - mx);
        out[base + l * inner] = e;
        sum += e;
      }
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= sum;
    }
  }
  ensure_finite(out, "softmax");
  return out;
}

Tensor avg_pool_2d(const Tensor& x, std::size_t factor) {
  if (factor == 0) throw ConfigError("avg_pool_2d: factor must be >= 1");
  require_rank(x, 4, "avg_pool_2d");
  if (factor == 1) return x;
  const std::size_t C = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = ceil_div(H, factor), Wo = ceil_div(W, factor);
  Tensor out({C, T, Ho, Wo});
  for (std::size_t ct = 0; ct < C * T; ++ct) {
    const double* src = x.data().data() + ct * H * W;
    double* dst = out.data().data() + ct * Ho * Wo;
    for (std::size_t i = 0; i < Ho; ++i) {
      const std::size_t h0 = i * factor, h1 = std::min(H, h0 + factor);
      for (std::size_t j = 0; j < Wo; ++j) {
        const std::size_t w0 = j * factor, w1 = std::min(W, w0 + factor);
        double s = 0.0;
        for (std::size_t h = h0; h < h1; ++h)
          for (std::size_t w = w0; w < w1; ++w) s += src[h * W + w];
        dst[i * Wo + j] = s / static_cast<double>((h1 - h0) * (w1 - w0));
      }
    }
  }
  return out;
}

Tensor avg_pool_2d_backward(const Tensor& grad_out, const Tensor::Shape& input_shape,
                            std::size_t factor) {
  if (factor == 0) throw ConfigError("avg_pool_2d_backward: factor must be >= 1");
  if (input_shape.size() != 4) throw DimensionError("avg_pool_2d_backward: rank-4 input expected");
  const std::size_t C = input_shape[0], T = input_shape[1], H = input_shape[2],
                    W = input_shape[3];
  const std::size_t Ho = ceil_div(H, factor), Wo = ceil_div(W, factor);
  if (grad_out.shape() != Tensor::Shape{C, T, Ho, Wo}) {
    throw DimensionError("avg_pool_2d_backward: gradient shape " +
                         shape_string(grad_out.shape()) + " does not match pooled " +
                         shape_string({C, T, Ho, Wo}));
  }
  Tensor grad(input_shape);
  for (std::size_t ct = 0; ct < C * T; ++ct) {
    const double* g = grad_out.data().data() + ct * Ho * Wo;
    double* dst = grad.data().data() + ct * H * W;
    for (std::size_t i = 0; i < Ho; ++i) {
      const std::size_t h0 = i * factor, h1 = std::min(H, h0 + factor);
      for (std::size_t j = 0; j < Wo; ++j) {
        const std::size_t w0 = j * factor, w1 = std::min(W, w0 + factor);
        const double share = g[i * Wo + j] / static_cast<double>((h1 - h0) * (w1 - w0));
        for (std::size_t h = h0; h < h1; ++h)
          for (std::size_t w = w0; w < w1; ++w) dst[h * W + w] += share;
      }
    }
  }
  return grad;
}

Tensor upsample_nearest_2d(const Tensor& x, std::size_t factor, std::size_t target_h,
                           std::size_t target_w) {
  if (factor == 0) throw ConfigError("upsample_nearest_2d: factor must be >= 1");
  require_rank(x, 4, "upsample_nearest_2d");
  const std::size_t C = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = target_h ? target_h : H * factor;
  const std::size_t Wo = target_w ? target_w : W * factor;
  if (Ho > H * factor || Wo > W * factor || ceil_div(Ho, factor) != H ||
      ceil_div(Wo, factor) != W) {
    throw DimensionError("upsample_nearest_2d: target " + std::to_string(Ho) + "x" +
                         std::to_string(Wo) + " incompatible with " + shape_string(x.shape()) +
                         " at factor " + std::to_string(factor));
  }
  Tensor out({C, T, Ho, Wo});
  for (std::size_t ct = 0; ct < C * T; ++ct) {
    const double* src = x.data().data() + ct * H * W;
    double* dst = out.data().data() + ct * Ho * Wo;
    for (std::size_t h = 0; h < Ho; ++h)
      for (std::size_t w = 0; w < Wo; ++w) dst[h * Wo + w] = src[(h / factor) * W + w / factor];
  }
  return out;
}

Tensor upsample_nearest_2d_backward(const Tensor& grad_out, const Tensor::Shape& input_shape,
                                    std::size_t factor) {
  if (factor == 0) throw ConfigError("upsample_nearest_2d_backward: factor must be >= 1");
  require_rank(grad_out, 4, "upsample_nearest_2d_backward");
  if (input_shape.size() != 4) {
    throw DimensionError("upsample_nearest_2d_backward: rank-4 input expected");
  }
  const std::size_t C = input_shape[0], T = input_shape[1], H = input_shape[2],
                    W = input_shape[3];
  const std::size_t Ho = grad_out.dim(2), Wo = grad_out.dim(3);
  if (grad_out.dim(0) != C || grad_out.dim(1) != T || ceil_div(Ho, factor) != H ||
      ceil_div(Wo, factor) != W) {
    throw DimensionError("upsample_nearest_2d_backward: gradient " +
                         shape_string(grad_out.shape()) + " incompatible with input " +
                         shape_string(input_shape));
  }
  Tensor grad(input_shape);
  for (std::size_t ct = 0; ct < C * T; ++ct) {
    const double* g = grad_out.data().data() + ct * Ho * Wo;
    double* dst = grad.data().data() + ct * H * W;
    for (std::size_t h = 0; h < Ho; ++h)
      for (std::size_t w = 0; w < Wo; ++w) dst[(h / factor) * W + w / factor] += g[h * Wo + w];
  }
  return grad;
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_channels: bad range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") for " + shape_string(x.shape()));
  }
  Tensor::Shape shape = x.shape();
  const std::size_t stride = x.size() / shape[0];
  shape[0] = end - begin;
  std::vector<double> data(x.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                           x.data().begin() + static_cast<std::ptrdiff_t>(end * stride));
  return Tensor(std::move(shape), std::move(data));
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: nothing to concatenate");
  Tensor::Shape shape = parts.front().shape();
  if (shape.empty()) throw DimensionError("concat_channels: rank-0 input");
  std::size_t channels = 0;
  std::vector<double> data;
  for (const Tensor& p : parts) {
    if (p.rank() != shape.size() ||
        !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw DimensionError("concat_channels: trailing extents differ, " + shape_string(shape) +
                           " vs " + shape_string(p.shape()));
    }
    channels += p.dim(0);
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  shape[0] = channels;
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace cfaan
