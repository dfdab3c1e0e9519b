#include "cfaan/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cfaan/errors.hpp"

namespace cfaan {

ValidityMask ValidityMask::all_valid(std::size_t frames, std::size_t height, std::size_t width) {
  ValidityMask m{frames, height, width, {}};
  m.valid.assign(frames * height * width, 1);
  m.validate();
  return m;
}

ValidityMask ValidityMask::from_tensor(const Tensor& t) {
  if (t.rank() != 3) throw DimensionError("mask tensor must be T x H x W");
  ValidityMask m{t.dim(0), t.dim(1), t.dim(2), {}};
  m.valid.reserve(t.size());
  for (double v : t.data()) {
    if (v != 0.0 && v != 1.0) throw ValidationError("mask entries must be 0 or 1");
    m.valid.push_back(v == 1.0 ? 1 : 0);
  }
  return m;
}

std::size_t ValidityMask::valid_count(std::size_t t) const {
  const auto first = valid.begin() + static_cast<std::ptrdiff_t>(t * height * width);
  return static_cast<std::size_t>(
      std::count(first, first + static_cast<std::ptrdiff_t>(height * width), std::uint8_t{1}));
}

Tensor ValidityMask::to_tensor() const {
  Tensor t({frames, height, width});
  for (std::size_t i = 0; i < valid.size(); ++i) t[i] = valid[i];
  return t;
}

void ValidityMask::validate() const {
  if (frames == 0 || height == 0 || width == 0) throw DimensionError("mask extents must be positive");
  if (valid.size() != frames * height * width) throw DimensionError("mask data length mismatch");
}

ValidityMask mask_downsample(const ValidityMask& m, std::size_t target_h, std::size_t target_w) {
  m.validate();
  if (target_h == 0 || target_w == 0 || target_h > m.height || target_w > m.width ||
      m.height % target_h != 0 || m.width % target_w != 0) {
    throw DimensionError("mask_downsample: " + std::to_string(m.height) + "x" +
                         std::to_string(m.width) + " -> " + std::to_string(target_h) + "x" +
                         std::to_string(target_w) + " is not an integer pooling ratio");
  }
  const std::size_t rh = m.height / target_h, rw = m.width / target_w;
  ValidityMask out{m.frames, target_h, target_w, std::vector<std::uint8_t>(m.frames * target_h * target_w)};
  for (std::size_t t = 0; t < m.frames; ++t) {
    for (std::size_t i = 0; i < target_h; ++i) {
      for (std::size_t j = 0; j < target_w; ++j) {
        std::size_t count = 0;
        for (std::size_t h = i * rh; h < (i + 1) * rh; ++h)
          for (std::size_t w = j * rw; w < (j + 1) * rw; ++w) count += m.at(t, h, w);
        out.at(t, i, j) = 2 * count > rh * rw ? 1 : 0;
      }
    }
    if (out.fully_padded(t)) {
      std::fill_n(out.valid.begin() + static_cast<std::ptrdiff_t>(t * target_h * target_w),
                  target_h * target_w, std::uint8_t{1});
    }
  }
  return out;
}

namespace {

void check_mask_matches(const Tensor::Shape& features, const ValidityMask& m) {
  m.validate();
  if (features.size() != 4 || features[0] != m.frames || features[2] != m.height ||
      features[3] != m.width) {
    throw DimensionError("masked_avg_pool: features " + shape_string(features) +
                         " do not match mask " +
                         shape_string({m.frames, m.height, m.width}));
  }
}

}  // namespace

Tensor masked_avg_pool(const Tensor& features, const ValidityMask& m) {
  check_mask_matches(features.shape(), m);
  const std::size_t T = m.frames, C = features.dim(1), HW = m.height * m.width;
  Tensor out({T, C});
  for (std::size_t t = 0; t < T; ++t) {
    const std::uint8_t* valid = m.valid.data() + t * HW;
    const bool fallback = m.fully_padded(t);
    const std::size_t n = fallback ? HW : m.valid_count(t);
    for (std::size_t c = 0; c < C; ++c) {
      const double* f = features.data().data() + (t * C + c) * HW;
      double s = 0.0;
      for (std::size_t p = 0; p < HW; ++p) {
        if (fallback || valid[p]) s += f[p];
      }
      out[t * C + c] = s / static_cast<double>(n);
    }
  }
  return out;
}

Tensor masked_avg_pool_backward(const Tensor& grad_out, const ValidityMask& m,
                                const Tensor::Shape& feature_shape) {
  check_mask_matches(feature_shape, m);
  const std::size_t T = m.frames, C = feature_shape[1], HW = m.height * m.width;
  if (grad_out.shape() != Tensor::Shape{T, C}) {
    throw DimensionError("masked_avg_pool_backward: gradient must be " + shape_string({T, C}));
  }
  Tensor grad(feature_shape);
  for (std::size_t t = 0; t < T; ++t) {
    const std::uint8_t* valid = m.valid.data() + t * HW;
    const bool fallback = m.fully_padded(t);
    const double n = static_cast<double>(fallback ? HW : m.valid_count(t));
    for (std::size_t c = 0; c < C; ++c) {
      const double g = grad_out[t * C + c] / n;
      double* dst = grad.data().data() + (t * C + c) * HW;
      for (std::size_t p = 0; p < HW; ++p) {
        if (fallback || valid[p]) dst[p] = g;
      }
    }
  }
  return grad;
}

Tensor temporal_mean(const Tensor& frame_feats) {
  if (frame_feats.rank() != 2) {
    throw DimensionError("frame features must be T x C, got " + shape_string(frame_feats.shape()));
  }
  const std::size_t T = frame_feats.dim(0), C = frame_feats.dim(1);
  Tensor out({C});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) out[c] += frame_feats[t * C + c];
  for (double& v : out.data()) v /= static_cast<double>(T);
  return out;
}

BatchNorm1d::BatchNorm1d(std::size_t channels)
    : gamma({channels}, 1.0),
      beta({channels}, 0.0),
      running_mean({channels}, 0.0),
      running_var({channels}, 1.0) {}

Tensor BatchNorm1d::forward_eval(const Tensor& x) const {
  const std::size_t C = channels();
  if (x.size() % C != 0 || x.shape().back() != C) {
    throw DimensionError("BatchNorm1d: input " + shape_string(x.shape()) + " vs " +
                         std::to_string(C) + " channels");
  }
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t c = i % C;
    y[i] = gamma[c] * (x[i] - running_mean[c]) / std::sqrt(running_var[c] + eps) + beta[c];
  }
  return y;
}

Tensor BatchNorm1d::forward_train(const Tensor& x, TrainCache& cache, bool update_running) {
  const std::size_t C = channels();
  if (x.rank() != 2 || x.dim(1) != C || x.dim(0) < 2) {
    throw DimensionError("BatchNorm1d training needs B x " + std::to_string(C) +
                         " with B >= 2, got " + shape_string(x.shape()));
  }
  const std::size_t B = x.dim(0);
  cache.x_hat = Tensor(x.shape());
  cache.inv_std.assign(C, 0.0);
  Tensor y(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0;
    for (std::size_t b = 0; b < B; ++b) mean += x[b * C + c];
    mean /= static_cast<double>(B);
    double var = 0.0;
    for (std::size_t b = 0; b < B; ++b) var += (x[b * C + c] - mean) * (x[b * C + c] - mean);
    var /= static_cast<double>(B);
    const double inv = 1.0 / std::sqrt(var + eps);
    cache.inv_std[c] = inv;
    for (std::size_t b = 0; b < B; ++b) {
      const double xh = (x[b * C + c] - mean) * inv;
      cache.x_hat[b * C + c] = xh;
      y[b * C + c] = gamma[c] * xh + beta[c];
    }
    if (update_running) {
      const double unbiased = var * static_cast<double>(B) / static_cast<double>(B - 1);
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean;
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased;
    }
  }
  return y;
}

BatchNorm1d::Grads BatchNorm1d::backward_train(const Tensor& grad_out,
                                               const TrainCache& cache) const {
  if (!grad_out.same_shape(cache.x_hat)) throw DimensionError("BatchNorm1d backward shape mismatch");
  const std::size_t B = grad_out.dim(0), C = grad_out.dim(1);
  Grads g{Tensor(grad_out.shape()), Tensor({C}), Tensor({C})};
  for (std::size_t c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      sum_dy += grad_out[b * C + c];
      sum_dy_xh += grad_out[b * C + c] * cache.x_hat[b * C + c];
    }
    g.beta[c] = sum_dy;
    g.gamma[c] = sum_dy_xh;
    const double k = gamma[c] * cache.inv_std[c] / static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b) {
      g.input[b * C + c] = k * (static_cast<double>(B) * grad_out[b * C + c] - sum_dy -
                                cache.x_hat[b * C + c] * sum_dy_xh);
    }
  }
  return g;
}

Aggregated aggregate(const Tensor& frame_feats, const BatchNorm1d& bn) {
  if (frame_feats.rank() != 2 || frame_feats.dim(1) != bn.channels()) {
    throw DimensionError("aggregate: frame features " + shape_string(frame_feats.shape()) +
                         " do not match BN width " + std::to_string(bn.channels()));
  }
  Aggregated out;
  out.f_pre = temporal_mean(frame_feats);
  out.f_post = bn.forward_eval(out.f_pre);
  return out;
}

std::size_t BatchLabels::validate() const {
  if (identity.empty()) throw ValidationError("empty batch");
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t id : identity) ++counts[id];
  const std::size_t k = counts.begin()->second;
  for (const auto& [id, n] : counts) {
    if (n < 2) {
      throw ValidationError("identity " + std::to_string(id) +
                            " has a single instance; batch-hard triplet needs a positive");
    }
    if (n != k) {
      throw ValidationError("batch is not P x K: identity " + std::to_string(id) + " has " +
                            std::to_string(n) + " instances, expected " + std::to_string(k));
    }
  }
  if (counts.size() < 2) throw ValidationError("batch-hard triplet needs at least two identities");
  return k;
}

Tensor euclidean_distances(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("euclidean_distances: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = a[i * d + c] - b[j * d + c];
        s += diff * diff;
      }
      out[i * m + j] = std::sqrt(s);
    }
  }
  return out;
}

LossResult batch_hard_triplet(const Tensor& features, const BatchLabels& labels, double margin) {
  if (features.rank() != 2 || features.dim(0) != labels.identity.size()) {
    throw DimensionError("batch_hard_triplet: features " + shape_string(features.shape()) +
                         " vs " + std::to_string(labels.identity.size()) + " labels");
  }
  if (!(margin >= 0.0)) throw ConfigError("triplet margin must be >= 0");
  labels.validate();
  const std::size_t B = features.dim(0), D = features.dim(1);
  const Tensor dist = euclidean_distances(features, features);
  LossResult r{0.0, Tensor(features.shape())};
  auto accumulate = [&](std::size_t a, std::size_t o, double sign) {
    const double d = dist[a * B + o];
    if (d <= 0.0) return;  // subgradient 0 at coincident points
    for (std::size_t c = 0; c < D; ++c) {
      const double g = sign * (features[a * D + c] - features[o * D + c]) / (d * static_cast<double>(B));
      r.grad[a * D + c] += g;
      r.grad[o * D + c] -= g;
    }
  };
  for (std::size_t a = 0; a < B; ++a) {
    std::size_t pos = B, neg = B;
    for (std::size_t j = 0; j < B; ++j) {
      if (j == a) continue;
      const double d = dist[a * B + j];
      if (labels.identity[j] == labels.identity[a]) {
        if (pos == B || d > dist[a * B + pos]) pos = j;
      } else if (neg == B || d < dist[a * B + neg]) {
        neg = j;
      }
    }
    const double hinge = margin + dist[a * B + pos] - dist[a * B + neg];
    if (hinge > 0.0) {
      r.loss += hinge;
      accumulate(a, pos, 1.0);
      accumulate(a, neg, -1.0);
    }
  }
  r.loss /= static_cast<double>(B);
  return r;
}

LossResult cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= K) {
      throw ValidationError("cross_entropy: label " + std::to_string(labels[b]) +
                            " out of range for " + std::to_string(K) + " classes");
    }
  }
  const Tensor prob = softmax(logits, 1);
  LossResult r{0.0, prob};
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = &logits[b * K];
    const double mx = *std::max_element(row, row + K);
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) sum += std::exp(row[k] - mx);
    r.loss += mx + std::log(sum) - row[labels[b]];
    r.grad[b * K + labels[b]] -= 1.0;
  }
  r.loss /= static_cast<double>(B);
  for (double& g : r.grad.data()) g /= static_cast<double>(B);
  return r;
}

}  // namespace cfaan
