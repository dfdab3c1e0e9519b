#include "cfaan/toy_train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "cfaan/errors.hpp"

namespace cfaan {

namespace {

using Rgb = std::array<double, 3>;

const Rgb kPalette[8] = {{0.90, 0.10, 0.10}, {0.10, 0.80, 0.20}, {0.15, 0.25, 0.95},
                         {0.95, 0.90, 0.10}, {0.85, 0.10, 0.85}, {0.10, 0.85, 0.85},
                         {0.95, 0.95, 0.95}, {0.05, 0.05, 0.05}};
const Rgb kSkin = {0.90, 0.75, 0.60};

// Shirt and trouser colours differ for every identity below 56.
Rgb shirt_colour(std::size_t identity) { return kPalette[identity % 8]; }
Rgb trouser_colour(std::size_t identity) {
  return kPalette[(identity % 8 + 1 + (identity / 8) % 7) % 8];
}

void fill_rect(Tensor& img, long top, long left, long bottom, long right, const Rgb& colour,
               double brightness, Rng& rng, double noise) {
  const long H = long(img.dim(1)), W = long(img.dim(2));
  for (long y = std::max(top, 0L); y < std::min(bottom, H); ++y)
    for (long x = std::max(left, 0L); x < std::min(right, W); ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img[(c * H + y) * W + x] = colour[c] * brightness + noise * rng.normal();
}

}  // namespace

void ToyDataConfig::validate() const {
  if (identities < 2) throw ConfigError("toy data needs at least 2 identities");
  if (identities > 56) throw ConfigError("toy data supports at most 56 distinct identities");
  if (train_tracklets == 0 || frames == 0) throw ConfigError("toy data needs tracklets and frames");
  if (height < 24 || width < 12) throw ConfigError("toy frames must be at least 24 x 12");
  if (occlusion_prob < 0 || occlusion_prob > 1 || padding_prob < 0 || padding_prob > 1) {
    throw ConfigError("toy data probabilities must lie in [0, 1]");
  }
}

Tensor ToyTracklet::clip(std::size_t begin, std::size_t count) const {
  if (count == 0 || begin + count > frames.size()) throw DimensionError("clip outside tracklet");
  const std::size_t H = frames[0].dim(1), W = frames[0].dim(2), HW = H * W;
  Tensor out({3, count, H, W});
  for (std::size_t t = 0; t < count; ++t)
    for (std::size_t c = 0; c < 3; ++c)
      std::copy_n(&frames[begin + t][c * HW], HW, &out[(c * count + t) * HW]);
  return out;
}

ValidityMask ToyTracklet::clip_mask(std::size_t begin, std::size_t count) const {
  if (count == 0 || begin + count > mask.frames) throw DimensionError("clip outside tracklet");
  ValidityMask m;
  m.frames = count;
  m.height = mask.height;
  m.width = mask.width;
  const std::size_t HW = m.height * m.width;
  m.valid.assign(mask.valid.begin() + long(begin * HW), mask.valid.begin() + long((begin + count) * HW));
  return m;
}

ToyTracklet render_toy_tracklet(const ToyDataConfig& cfg, std::size_t identity, std::size_t camera,
                                std::uint64_t id, Rng& rng) {
  const std::size_t T = cfg.frames, H = cfg.height, W = cfg.width;
  ToyTracklet t;
  t.id = id;
  t.identity = identity;
  t.camera = camera;
  t.mask = ValidityMask::all_valid(T, H, W);
  t.flipped.assign(T, false);

  Rgb background;
  for (double& v : background) v = rng.uniform(0.3, 0.7);
  const double tint = camera % 2 == 0 ? 0.06 : -0.06;
  const long base_x = long(W / 2) + long(rng.index(5)) - 2;
  const long base_y = 2 + long(rng.index(3));
  const long torso_half = identity % 3 == 0 ? 5 : 3;
  const double scale_y = double(H) / 32.0;

  std::optional<std::size_t> occ_begin;
  std::size_t occ_len = 0, occ_x = 0;
  Rgb occ_colour{};
  if (rng.uniform() < cfg.occlusion_prob) {
    occ_len = 2 + rng.index(3);
    occ_begin = rng.index(T > occ_len ? T - occ_len + 1 : 1);
    occ_x = rng.index(W - 4);
    for (double& v : occ_colour) v = rng.uniform(0.2, 0.8);
  }
  std::size_t pad = 0;
  bool pad_left = false;
  if (rng.uniform() < cfg.padding_prob) {
    pad = 2 + rng.index(3);
    pad_left = rng.uniform() < 0.5;
  }

  for (std::size_t k = 0; k < T; ++k) {
    Tensor img({3, H, W});
    for (std::size_t c = 0; c < 3; ++c) {
      const double shift = c == 0 ? tint : (c == 2 ? -tint : 0.0);
      for (std::size_t i = 0; i < H * W; ++i)
        img[c * H * W + i] = background[c] + shift + 0.05 * rng.normal();
    }
    const double brightness = rng.uniform(0.9, 1.1);
    const long cx = base_x + long(rng.index(3)) - 1;
    const long y0 = base_y + long(rng.index(3)) - 1;
    auto row = [&](double r) { return y0 + long(std::lround(r * scale_y)); };
    fill_rect(img, row(0), cx - 2, row(5), cx + 2, kSkin, brightness, rng, 0.03);
    fill_rect(img, row(5), cx - torso_half, row(16), cx + torso_half, shirt_colour(identity),
              brightness, rng, 0.03);
    fill_rect(img, row(16), cx - 3, row(28), cx + 3, trouser_colour(identity), brightness, rng,
              0.03);
    if (occ_begin && k >= *occ_begin && k < *occ_begin + occ_len) {
      fill_rect(img, long(H / 4), long(occ_x), long(H), long(occ_x) + 5, occ_colour, 1.0, rng, 0.02);
    }
    for (double& v : img.data()) v -= 0.5;
    for (std::size_t p = 0; p < pad; ++p) {
      const std::size_t x = pad_left ? p : W - 1 - p;
      for (std::size_t y = 0; y < H; ++y) {
        t.mask.at(k, y, x) = 0;
        for (std::size_t c = 0; c < 3; ++c) img[(c * H + y) * W + x] = 0.0;
      }
    }
    t.frames.push_back(std::move(img));
  }
  return t;
}

ToyDataset generate_toy_dataset(const ToyDataConfig& config) {
  config.validate();
  ToyDataset d;
  d.config = config;
  Rng rng(config.seed);
  std::uint64_t next_id = 1;
  for (std::size_t i = 0; i < config.identities; ++i) {
    for (std::size_t j = 0; j < config.train_tracklets; ++j) {
      Rng r = rng.fork();
      d.train.push_back(render_toy_tracklet(config, i, j % 2, next_id++, r));
    }
  }
  for (std::size_t i = 0; i < config.identities; ++i) {
    Rng r = rng.fork();
    d.query.push_back(render_toy_tracklet(config, i, 0, next_id++, r));
  }
  for (std::size_t i = 0; i < config.identities; ++i) {
    Rng r = rng.fork();
    d.gallery.push_back(render_toy_tracklet(config, i, 1, next_id++, r));
  }
  return d;
}

void flip_horizontal(ToyTracklet& t) {
  for (std::size_t k = 0; k < t.frames.size(); ++k) {
    Tensor& img = t.frames[k];
    const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y) {
        double* row = &img[(c * H + y) * W];
        std::reverse(row, row + W);
      }
    for (std::size_t y = 0; y < t.mask.height; ++y) {
      auto begin = t.mask.valid.begin() + long((k * t.mask.height + y) * t.mask.width);
      std::reverse(begin, begin + long(t.mask.width));
    }
    t.flipped[k] = !t.flipped[k];
  }
}

// ---- model -----------------------------------------------------------------

void ToyModelSpec::validate() const {
  if (num_classes == 0) throw ConfigError("toy model needs at least one class");
  if (height % 2 != 0 || width % 2 != 0) throw ConfigError("toy model input extents must be even");
  if (clip_length == 0) throw ConfigError("clip length must be positive");
  for (std::size_t w : widths)
    if (w == 0) throw ConfigError("conv widths must be positive");
  if (attention) attention_config().validate();
}

AttentionConfig ToyModelSpec::attention_config() const {
  AttentionConfig c;
  c.c_in = widths[2];
  c.c_qk = widths[2] / 2;
  c.c_out = widths[2];
  c.heads = heads;
  c.scales = scales;
  c.encoding = encoding;
  c.frames = clip_length;
  c.height = height / 2;
  c.width = width / 2;
  return c;
}

ToyModel init_toy_model(const ToyModelSpec& spec, Rng& rng) {
  spec.validate();
  ToyModel m;
  m.spec = spec;
  m.conv[0] = init_conv2d(3, spec.widths[0], 3, 1, rng);
  m.conv[1] = init_conv2d(spec.widths[0], spec.widths[1], 3, 2, rng);
  m.conv[2] = init_conv2d(spec.widths[1], spec.widths[2], 3, 1, rng);
  if (spec.attention) m.cfaa = init_cfaa_params(spec.attention_config(), rng, true);
  m.bn = BatchNorm1d(spec.feature_width());
  m.classifier = init_linear(spec.feature_width(), spec.num_classes, rng);
  return m;
}

void for_each_parameter(ToyModel& m, const TensorVisitor& f) {
  for (std::size_t i = 0; i < 3; ++i) {
    f("conv" + std::to_string(i + 1) + ".weight", m.conv[i].weight);
    f("conv" + std::to_string(i + 1) + ".bias", m.conv[i].bias);
  }
  if (m.cfaa) for_each_tensor(*m.cfaa, "cfaa.", f);
  f("bn.gamma", m.bn.gamma);
  f("bn.beta", m.bn.beta);
  f("classifier.weight", m.classifier.weight);
  f("classifier.bias", m.classifier.bias);
}

void for_each_parameter(const ToyModel& m, const ConstTensorVisitor& f) {
  for_each_parameter(const_cast<ToyModel&>(m),
                     [&](const std::string& name, Tensor& t) { f(name, t); });
}

namespace {

struct ClipTrace {
  Tensor pre[3];   // conv outputs before ReLU
  Tensor post[3];  // after ReLU; post[0] input is the gated clip
  Tensor input;
  Tensor features;  // after attention, C x T x H' x W'
  ValidityMask feature_mask;
  Tensor f_pre;
};

AttentionConfig clip_attention_config(const ToyModel& m, std::size_t frames) {
  AttentionConfig c = m.spec.attention_config();
  c.frames = frames;
  return c;
}

ClipTrace forward_trace(const ToyModel& m, const Tensor& clip, const ValidityMask& mask) {
  if (clip.rank() != 4 || clip.dim(0) != 3 || clip.dim(2) != m.spec.height ||
      clip.dim(3) != m.spec.width) {
    throw DimensionError("toy model expects 3 x T x " + std::to_string(m.spec.height) + " x " +
                         std::to_string(m.spec.width) + " clips, got " +
                         shape_string(clip.shape()));
  }
  const std::size_t T = clip.dim(1), H = clip.dim(2), W = clip.dim(3);
  if (mask.frames != T || mask.height != H || mask.width != W) {
    throw DimensionError("toy model: mask does not match the clip");
  }
  ClipTrace tr;
  tr.input = clip;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < H * W; ++i)
        if (!mask.valid[t * H * W + i]) tr.input[(c * T + t) * H * W + i] = 0.0;
  const Tensor* x = &tr.input;
  for (std::size_t i = 0; i < 3; ++i) {
    tr.pre[i] = conv2d_forward(*x, m.conv[i]);
    tr.post[i] = relu(tr.pre[i]);
    x = &tr.post[i];
  }
  tr.features = m.cfaa ? cfaa_forward(*x, *m.cfaa, clip_attention_config(m, T)) : *x;
  tr.feature_mask = mask_downsample(mask, tr.features.dim(2), tr.features.dim(3));
  tr.f_pre = temporal_mean(masked_avg_pool(swap_leading_axes(tr.features), tr.feature_mask));
  return tr;
}

// Adds d(loss)/d(parameters) of one clip into `grads`, which mirrors the model.
void backward_trace(const ToyModel& m, const ClipTrace& tr, const Tensor& grad_f_pre,
                    ToyModel& grads) {
  const std::size_t C = tr.features.dim(0), T = tr.features.dim(1);
  Tensor grad_frames({T, C});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) grad_frames[t * C + c] = grad_f_pre[c] / double(T);
  const Tensor::Shape pooled_shape{T, C, tr.features.dim(2), tr.features.dim(3)};
  Tensor grad = swap_leading_axes(masked_avg_pool_backward(grad_frames, tr.feature_mask, pooled_shape));
  if (m.cfaa) {
    CfaaGradients g = cfaa_backward(tr.post[2], *m.cfaa, clip_attention_config(m, T), grad);
    std::vector<Tensor*> dst;
    for_each_tensor(*grads.cfaa, "", [&](const std::string&, Tensor& t) { dst.push_back(&t); });
    std::size_t i = 0;
    for_each_tensor(g.params, "", [&](const std::string&, Tensor& t) { add_inplace(*dst[i++], t); });
    grad = std::move(g.input);
  }
  for (std::size_t i = 3; i-- > 0;) {
    const Tensor& in = i == 0 ? tr.input : tr.post[i - 1];
    Conv2dGradients g = conv2d_backward(in, m.conv[i], relu_backward(tr.pre[i], grad));
    add_inplace(grads.conv[i].weight, g.weight);
    add_inplace(grads.conv[i].bias, g.bias);
    if (i > 0) grad = std::move(g.input);
  }
}

ToyModel zero_grads(const ToyModel& m) {
  ToyModel g = m;
  for_each_parameter(g, [](const std::string&, Tensor& t) { t = Tensor(t.shape()); });
  return g;
}

std::vector<Tensor*> parameter_list(ToyModel& m) {
  std::vector<Tensor*> out;
  for_each_parameter(m, [&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  const std::size_t C = rows[0].size();
  Tensor out({rows.size(), C});
  for (std::size_t b = 0; b < rows.size(); ++b) std::copy_n(&rows[b][0], C, &out[b * C]);
  return out;
}

}  // namespace

Tensor clip_feature(const ToyModel& m, const Tensor& clip, const ValidityMask& mask) {
  return forward_trace(m, clip, mask).f_pre;
}

void TrainConfig::validate() const {
  if (p == 0 || k == 0) throw ConfigError("batch needs P >= 1 identities and K >= 1 tracklets");
  if (triplet_weight > 0 && k < 2) throw ConfigError("triplet loss needs K >= 2");
  if (lr < 0 || momentum < 0 || momentum >= 1 || weight_decay < 0) {
    throw ConfigError("optimizer settings out of range");
  }
  if (margin < 0) throw ConfigError("triplet margin must be >= 0");
  if (triplet_weight < 0 || ce_weight < 0) throw ConfigError("loss weights must be >= 0");
  if (flip_prob < 0 || flip_prob > 1) throw ConfigError("flip probability must lie in [0, 1]");
}

TrainResult train(ToyModel& model, const ToyDataset& data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  const std::size_t L = model.spec.clip_length;
  std::vector<std::vector<const ToyTracklet*>> by_identity(model.spec.num_classes);
  for (const auto& t : data.train) {
    if (t.identity >= by_identity.size()) {
      throw ValidationError("training tracklet identity " + std::to_string(t.identity) +
                            " exceeds the classifier width");
    }
    if (t.length() < L) throw ValidationError("training tracklet shorter than the clip length");
    by_identity[t.identity].push_back(&t);
  }
  std::vector<std::size_t> present;
  for (std::size_t i = 0; i < by_identity.size(); ++i) {
    if (by_identity[i].empty()) continue;
    if (by_identity[i].size() < config.k) {
      throw ValidationError("identity " + std::to_string(i) + " has fewer than K = " +
                            std::to_string(config.k) + " training tracklets");
    }
    present.push_back(i);
  }
  const std::size_t p = std::min(config.p, present.size());
  if (p == 0 || (config.triplet_weight > 0 && p < 2)) {
    throw ValidationError("a P x K batch needs at least " +
                          std::string(config.triplet_weight > 0 ? "2 identities" : "1 identity"));
  }

  Rng rng(config.seed);
  std::vector<Tensor*> params = parameter_list(model);
  ToyModel velocity = zero_grads(model);
  std::vector<Tensor*> vel = parameter_list(velocity);
  TrainResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = present;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + p <= order.size(); start += p) {
      std::vector<ClipTrace> traces;
      std::vector<std::size_t> labels;
      for (std::size_t b = start; b < start + p; ++b) {
        std::vector<const ToyTracklet*> pool = by_identity[order[b]];
        rng.shuffle(pool);
        for (std::size_t j = 0; j < config.k; ++j) {
          ToyTracklet t = *pool[j];
          if (rng.uniform() < config.flip_prob) flip_horizontal(t);
          const std::size_t begin = rng.index(t.length() - L + 1);
          traces.push_back(forward_trace(model, t.clip(begin, L), t.clip_mask(begin, L)));
          labels.push_back(order[b]);
        }
      }
      std::vector<Tensor> rows;
      for (const auto& tr : traces) rows.push_back(tr.f_pre);
      const Tensor f_pre = stack_rows(rows);

      BatchNorm1d::TrainCache cache;
      const Tensor f_post = model.bn.forward_train(f_pre, cache);
      const Tensor logits = linear_forward(f_post, model.classifier);
      ToyModel grads = zero_grads(model);
      Tensor grad_f_pre(f_pre.shape());
      double loss = 0.0;
      if (config.ce_weight > 0) {
        const LossResult ce = cross_entropy(logits, labels);
        loss += config.ce_weight * ce.loss;
        const LinearGradients lg =
            linear_backward(f_post, model.classifier, scale(ce.grad, config.ce_weight));
        grads.classifier.weight = lg.weight;
        grads.classifier.bias = lg.bias;
        const BatchNorm1d::Grads bg = model.bn.backward_train(lg.input, cache);
        grads.bn.gamma = bg.gamma;
        grads.bn.beta = bg.beta;
        add_inplace(grad_f_pre, bg.input);
      }
      if (config.triplet_weight > 0) {
        const LossResult tri = batch_hard_triplet(f_pre, BatchLabels{labels}, config.margin);
        loss += config.triplet_weight * tri.loss;
        add_inplace(grad_f_pre, tri.grad, config.triplet_weight);
      }
      const std::size_t C = f_pre.dim(1);
      for (std::size_t b = 0; b < traces.size(); ++b) {
        Tensor g({C});
        std::copy_n(&grad_f_pre[b * C], C, &g[0]);
        backward_trace(model, traces[b], g, grads);
      }
      std::vector<Tensor*> gl = parameter_list(grads);
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& w = *params[i];
        Tensor& v = *vel[i];
        const Tensor& g = *gl[i];
        for (std::size_t e = 0; e < w.size(); ++e) {
          v[e] = config.momentum * v[e] + g[e] + config.weight_decay * w[e];
          w[e] -= config.lr * v[e];
        }
      }
      epoch_loss += loss;
      ++batches;
    }
    epoch_loss /= double(batches);
    result.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return result;
}

Tensor tracklet_feature(const ToyModel& m, const ToyTracklet& t) {
  const std::size_t L = m.spec.clip_length;
  if (t.length() == 0) throw ValidationError("empty tracklet");
  if (t.length() < L) {
    if (m.cfaa) throw ValidationError("tracklet shorter than the attention clip length");
    return clip_feature(m, t.clip(0, t.length()), t.clip_mask(0, t.length()));
  }
  const std::size_t clips = t.length() / L;
  Tensor sum({m.spec.feature_width()});
  for (std::size_t c = 0; c < clips; ++c) add_inplace(sum, clip_feature(m, t.clip(c * L, L), t.clip_mask(c * L, L)));
  return scale(sum, 1.0 / double(clips));
}

EvalDataset retrieve(const ToyModel& m, const std::vector<ToyTracklet>& query,
                     const std::vector<ToyTracklet>& gallery) {
  std::vector<Tensor> qf, gf;
  EvalDataset d;
  for (const auto& t : query) {
    qf.push_back(tracklet_feature(m, t));
    d.query.push_back(TrackletMeta{t.id, t.identity + 1, t.camera, {}, {}});
  }
  for (const auto& t : gallery) {
    gf.push_back(tracklet_feature(m, t));
    d.gallery.push_back(TrackletMeta{t.id, t.identity + 1, t.camera, {}, {}});
  }
  d.distances = euclidean_distances(stack_rows(qf), stack_rows(gf));
  return d;
}

ChanceEstimate chance_estimate(const ToyDataset& data, const ToyModelSpec& spec,
                               std::size_t trials, std::uint64_t seed) {
  if (trials == 0) throw ConfigError("chance estimate needs at least one trial");
  ChanceEstimate est;
  est.trials = trials;
  est.uniform_rank1 = 1.0 / double(data.config.identities);
  std::vector<double> r1;
  for (std::size_t i = 0; i < trials; ++i) {
    Rng rng(seed + i);
    const ToyModel m = init_toy_model(spec, rng);
    const EvalResult r = evaluate(retrieve(m, data.query, data.gallery), Protocol::old_protocol);
    r1.push_back(r.cmc_at(1));
    est.map_mean += r.mAP / double(trials);
  }
  est.rank1_mean = std::accumulate(r1.begin(), r1.end(), 0.0) / double(trials);
  double var = 0.0;
  for (double v : r1) var += (v - est.rank1_mean) * (v - est.rank1_mean);
  est.rank1_std = trials > 1 ? std::sqrt(var / double(trials - 1)) : 0.0;
  return est;
}

DemoReport run_demo(const DemoConfig& config, const EpochCallback& on_epoch) {
  const ToyDataset data = generate_toy_dataset(config.data);
  ToyModelSpec spec = config.model;
  spec.num_classes = config.data.identities;
  spec.height = config.data.height;
  spec.width = config.data.width;

  auto run = [&](const ToyModelSpec& s, const EpochCallback& cb) {
    Rng rng(config.train.seed);
    ToyModel m = init_toy_model(s, rng);
    DemoRun r;
    r.training = train(m, data, config.train, cb);
    r.retrieval = evaluate(retrieve(m, data.query, data.gallery), Protocol::old_protocol);
    return r;
  };

  DemoReport rep;
  rep.attention = run(spec, on_epoch);
  if (config.baseline) {
    ToyModelSpec plain = spec;
    plain.attention = false;
    rep.baseline = run(plain, {});
  }
  if (config.chance_trials > 0) {
    rep.chance = chance_estimate(data, spec, config.chance_trials, config.train.seed * 1000 + 17);
  }
  const auto& curve = rep.attention.training.epoch_loss;
  if (!curve.empty() && curve.front() > 0) rep.loss_drop = 1.0 - curve.back() / curve.front();
  return rep;
}

}  // namespace cfaan
