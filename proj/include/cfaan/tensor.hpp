#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cfaan {

/// Dense row-major tensor of 64-bit floats.
///
/// Every extent must be at least 1; a rank-0 tensor holds a single scalar.
/// Attention feature maps use the layout C x T x H x W, which is also a
/// C x N matrix over the N = T*H*W positions.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// Builds a 2-D tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  const double& operator[](std::size_t flat) const { return data_[flat]; }

  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

std::string shape_string(const Tensor::Shape& shape);
std::size_t shape_volume(const Tensor::Shape& shape);

/// Throws NumericError if any element is NaN or infinite.
void ensure_finite(const Tensor& t, const char* op);

// Elementwise helpers; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
void add_inplace(Tensor& a, const Tensor& b, double factor = 1.0);
double dot(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Standard matrix product of [m x k] by [k x n]. The k-sum runs in index order.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T b for a [k x m], b [k x n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a b^T for a [m x k], b [n x k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Spatial average pooling of a C x T x H x W tensor with ceil-sized output.
/// Edge windows may be partial and average only the cells they cover.
Tensor avg_pool_2d(const Tensor& x, std::size_t factor);
Tensor avg_pool_2d_backward(const Tensor& grad_out, const Tensor::Shape& input_shape,
                            std::size_t factor);

/// Nearest-neighbour spatial upsampling of a C x T x H x W tensor. Each cell
/// becomes a factor x factor block; the result is cropped to target_h x
/// target_w (zero means "no crop", i.e. H*factor / W*factor).
Tensor upsample_nearest_2d(const Tensor& x, std::size_t factor, std::size_t target_h = 0,
                           std::size_t target_w = 0);
Tensor upsample_nearest_2d_backward(const Tensor& grad_out, const Tensor::Shape& input_shape,
                                    std::size_t factor);

/// Channel slice [begin, end) of a tensor whose leading axis is channels.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);
/// Concatenation along the leading axis.
Tensor concat_channels(const std::vector<Tensor>& parts);

}  // namespace cfaan
