#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cfaan/tensor.hpp"

namespace cfaan {

/// Per-pixel validity of a T x H x W stack of frames: 1 = real content,
/// 0 = padding introduced by crop normalisation.
struct ValidityMask {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> valid;

  static ValidityMask all_valid(std::size_t frames, std::size_t height, std::size_t width);
  static ValidityMask from_tensor(const Tensor& t);  // T x H x W of 0/1 values

  std::uint8_t at(std::size_t t, std::size_t h, std::size_t w) const {
    return valid[(t * height + h) * width + w];
  }
  std::uint8_t& at(std::size_t t, std::size_t h, std::size_t w) {
    return valid[(t * height + h) * width + w];
  }
  std::size_t valid_count(std::size_t t) const;
  bool fully_padded(std::size_t t) const { return valid_count(t) == 0; }
  Tensor to_tensor() const;
  void validate() const;
};

/// Downsamples by integer ratios H/H' and W/W'. An output cell is valid iff
/// strictly more than half of its window is valid. Frames that end up fully
/// padded fall back to an all-valid mask.
ValidityMask mask_downsample(const ValidityMask& m, std::size_t target_h, std::size_t target_w);

/// Per-frame mean of the feature vectors at valid cells; features are
/// T x C x H x W, result is T x C. A fully padded frame averages all cells.
Tensor masked_avg_pool(const Tensor& features, const ValidityMask& m);
Tensor masked_avg_pool_backward(const Tensor& grad_out, const ValidityMask& m,
                                const Tensor::Shape& feature_shape);

/// Mean over the leading (frame) axis of a T x C tensor.
Tensor temporal_mean(const Tensor& frame_feats);

/// 1-D batch normalisation with learned affine and running statistics.
struct BatchNorm1d {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  explicit BatchNorm1d(std::size_t channels = 1);

  std::size_t channels() const { return gamma.size(); }

  /// Running-statistics normalisation of a C vector or B x C batch.
  Tensor forward_eval(const Tensor& x) const;

  struct TrainCache {
    Tensor x_hat;                 // B x C
    std::vector<double> inv_std;  // per channel
  };
  /// Batch-statistics normalisation of B x C; updates running stats when asked.
  Tensor forward_train(const Tensor& x, TrainCache& cache, bool update_running = true);

  struct Grads {
    Tensor input;
    Tensor gamma;
    Tensor beta;
  };
  Grads backward_train(const Tensor& grad_out, const TrainCache& cache) const;
};

struct Aggregated {
  Tensor f_pre;   // temporal mean, feeds the triplet loss
  Tensor f_post;  // BN(f_pre), feeds the classifier
};

/// Temporal mean of T x C frame features followed by inference-mode BN.
Aggregated aggregate(const Tensor& frame_feats, const BatchNorm1d& bn);

/// Identity of each tracklet in a P x K batch.
struct BatchLabels {
  std::vector<std::size_t> identity;

  /// Returns K; throws unless every identity occurs exactly K >= 2 times.
  std::size_t validate() const;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d(loss)/d(input), same shape as the input
};

/// Batch-hard triplet loss on Euclidean distances, averaged over anchors.
LossResult batch_hard_triplet(const Tensor& features, const BatchLabels& labels, double margin);

/// Mean negative log-softmax probability of the true class.
LossResult cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

/// Pairwise Euclidean distances between the rows of a and b.
Tensor euclidean_distances(const Tensor& a, const Tensor& b);

}  // namespace cfaan
