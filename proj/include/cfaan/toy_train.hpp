#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cfaan/aggregation.hpp"
#include "cfaan/attention.hpp"
#include "cfaan/conv.hpp"
#include "cfaan/reid_eval.hpp"
#include "cfaan/rng.hpp"

namespace cfaan {

/// Seeded video-identity data: each identity is a figure with its own
/// shirt/trouser colours and build, drawn over a textured background whose
/// colour changes per tracklet and whose tint depends on the camera.
struct ToyDataConfig {
  std::size_t identities = 20;
  std::size_t train_tracklets = 16;  // per identity, cameras alternate
  std::size_t frames = 12;           // per tracklet
  std::size_t height = 32;
  std::size_t width = 16;
  double occlusion_prob = 0.25;  // per tracklet
  double padding_prob = 0.3;     // per tracklet
  std::uint64_t seed = 1;

  void validate() const;
};

struct ToyTracklet {
  std::uint64_t id = 0;
  std::size_t identity = 0;  // class index, 0-based
  std::size_t camera = 0;
  std::vector<Tensor> frames;  // 3 x H x W each
  ValidityMask mask;           // frames x H x W
  std::vector<bool> flipped;   // per frame, set by flip_horizontal

  std::size_t length() const { return frames.size(); }
  /// Frames [begin, begin + count) as a 3 x count x H x W map plus mask.
  Tensor clip(std::size_t begin, std::size_t count) const;
  ValidityMask clip_mask(std::size_t begin, std::size_t count) const;
};

struct ToyDataset {
  ToyDataConfig config;
  std::vector<ToyTracklet> train;
  std::vector<ToyTracklet> query;    // one per identity, camera 0
  std::vector<ToyTracklet> gallery;  // one per identity, camera 1
};

ToyDataset generate_toy_dataset(const ToyDataConfig& config);
ToyTracklet render_toy_tracklet(const ToyDataConfig& config, std::size_t identity,
                                std::size_t camera, std::uint64_t id, Rng& rng);

/// Mirrors every frame and mask of the tracklet together.
void flip_horizontal(ToyTracklet& t);

struct ToyModelSpec {
  std::size_t num_classes = 20;
  std::size_t height = 32;
  std::size_t width = 16;
  std::size_t widths[3] = {8, 16, 32};  // conv stack; the second conv halves H and W
  bool attention = true;
  std::size_t heads = 2;
  std::size_t scales = 4;
  Encoding encoding = Encoding::relative;
  std::size_t clip_length = 6;

  void validate() const;
  /// Configuration of the attention module after the conv stack.
  AttentionConfig attention_config() const;
  std::size_t feature_width() const { return widths[2]; }
};

struct ToyModel {
  ToyModelSpec spec;
  Conv2d conv[3];
  std::optional<CfaaParams> cfaa;
  BatchNorm1d bn;
  Linear classifier;
};

ToyModel init_toy_model(const ToyModelSpec& spec, Rng& rng);

/// Trainable tensors in canonical order (running BN statistics excluded).
void for_each_parameter(ToyModel& m, const TensorVisitor& f);
void for_each_parameter(const ToyModel& m, const ConstTensorVisitor& f);

/// Tracklet feature f_pre (length C) of one 3 x T x H x W clip. Padded
/// pixels are zeroed before the conv stack and the mask is downsampled
/// to the feature grid for pooling.
Tensor clip_feature(const ToyModel& m, const Tensor& clip, const ValidityMask& mask);

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t p = 10;  // identities per batch
  std::size_t k = 2;   // tracklets per identity
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double margin = 0.3;
  double triplet_weight = 1.0;
  double ce_weight = 1.0;
  double flip_prob = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean combined loss per epoch
};

/// Called after every epoch with the epoch index and its mean loss.
using EpochCallback = std::function<void(std::size_t, double)>;

/// SGD with momentum on triplet(f_pre) + cross-entropy(classifier(BN(f_pre))).
/// Each step draws P identities with K training tracklets each, takes one
/// random clip per tracklet and flips whole tracklets at random.
TrainResult train(ToyModel& model, const ToyDataset& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Tracklet feature: mean of f_pre over consecutive clip_length-frame clips
/// (one clip of all frames when the tracklet is shorter).
Tensor tracklet_feature(const ToyModel& m, const ToyTracklet& t);

/// Query/gallery features, Euclidean distances and metadata ready for evaluation.
EvalDataset retrieve(const ToyModel& m, const std::vector<ToyTracklet>& query,
                     const std::vector<ToyTracklet>& gallery);

struct ChanceEstimate {
  double rank1_mean = 0.0;
  double rank1_std = 0.0;
  double map_mean = 0.0;
  std::size_t trials = 0;
  double uniform_rank1 = 0.0;  // 1 / identities for a random ranking
};

/// Retrieval of untrained models over `trials` initialisation seeds.
ChanceEstimate chance_estimate(const ToyDataset& data, const ToyModelSpec& spec,
                               std::size_t trials, std::uint64_t seed);

struct DemoConfig {
  ToyDataConfig data;
  ToyModelSpec model;
  TrainConfig train;
  std::size_t chance_trials = 5;
  bool baseline = true;  // also train the model without attention
};

struct DemoRun {
  TrainResult training;
  EvalResult retrieval;
};

struct DemoReport {
  DemoRun attention;
  std::optional<DemoRun> baseline;
  ChanceEstimate chance;
  double loss_drop = 0.0;  // 1 - last epoch loss / first epoch loss
};

DemoReport run_demo(const DemoConfig& config, const EpochCallback& on_epoch = {});

}  // namespace cfaan
