#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cfaan/rng.hpp"
#include "cfaan/tensor.hpp"

namespace cfaan {

struct Box {
  double x = 0.0;  // left
  double y = 0.0;  // top
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  double center_x() const { return x + 0.5 * w; }
  bool operator==(const Box&) const = default;
};

struct CandidateBox {
  std::size_t frame = 0;
  Box box;
  double confidence = 0.0;
  std::vector<double> feature;
};

/// Index of the largest box; ties go to higher confidence, then lower index.
/// Empty input means no detection.
std::optional<std::size_t> select_first_frame(const std::vector<CandidateBox>& candidates);

/// Running global appearance feature f_g with its EMA weight.
struct LinkState {
  std::vector<double> f_g;
  double alpha = 0.9;
  bool initialized = false;
  /// Coefficient of every feature folded into f_g so far, oldest first.
  std::vector<double> weights;

  void initialize(const std::vector<double>& f1);
  /// f_g <- alpha * f_g + (1 - alpha) * f.
  void update(const std::vector<double>& f);
};

struct LinkResult {
  std::optional<std::size_t> chosen;
  LinkState state;
};

/// Picks the candidate nearest to f_g (ties: confidence, then lower index)
/// and folds its feature into the EMA. No candidates leaves the state as is.
LinkResult link_frame(const LinkState& state, const std::vector<CandidateBox>& candidates);

double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b);

struct NormalizeOptions {
  std::size_t out_h = 256;
  std::size_t out_w = 128;
  double slim_ratio = 3.0;
  /// Share of the free width placed on the far side of a slim box: 0.5
  /// centres it, 1.0 pushes it flush against the opposite edge.
  double shift = 1.0;

  void validate() const;
};

enum class Placement { center, shifted_right, shifted_left, passthrough };
std::string to_string(Placement p);

struct CropProvenance {
  std::optional<std::size_t> candidate;  // chosen index within the frame
  Box source;                            // box as detected
  Box clipped;                           // box after clipping to the frame
  Placement placement = Placement::passthrough;
  double scale = 1.0;
  std::size_t top = 0, left = 0, content_h = 0, content_w = 0;

  std::string to_line() const;
};

struct AlignedFrame {
  Tensor image;  // 3 x out_h x out_w
  Tensor mask;   // out_h x out_w, 1 = content, 0 = padding
  CropProvenance provenance;
};

/// Bilinear resize of a C x H x W image (pixel-centre sampling).
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

/// Crops `box` from a 3 x H x W frame, resizes it keeping its aspect ratio,
/// places it (shifting slim boxes away from the side they sit on) and pads
/// with zeros. A box that clips to nothing passes the frame through.
AlignedFrame normalize_crop(const Tensor& frame, const Box& box, const NormalizeOptions& opts = {});

/// Whole-frame resize with an all-valid mask, used when nothing was detected.
AlignedFrame passthrough_frame(const Tensor& frame, const NormalizeOptions& opts = {});

struct TrackletAlignment {
  std::vector<AlignedFrame> frames;
  std::vector<std::optional<std::size_t>> chosen;
  LinkState state;
};

/// Runs selection, linking and normalisation over one tracklet; the output
/// always has one frame per input frame.
TrackletAlignment process_tracklet(const std::vector<Tensor>& frames,
                                   const std::vector<std::vector<CandidateBox>>& candidates,
                                   double alpha = 0.9, const NormalizeOptions& opts = {});

/// Identity script for the synthetic detector.
struct ScriptedIdentity {
  std::size_t id = 0;
  std::vector<double> centroid;
  std::vector<std::optional<Box>> boxes;  // one entry per frame
  double confidence = 0.9;
};

struct SceneScript {
  std::size_t frames = 0;
  std::size_t frame_h = 256;
  std::size_t frame_w = 128;
  double noise = 0.0;
  bool shuffle = true;
  std::vector<ScriptedIdentity> identities;

  void validate() const;
};

struct SyntheticFrame {
  std::vector<CandidateBox> candidates;
  std::vector<std::size_t> truth;  // identity id of each candidate
};

/// Emits every scripted box with feature = centroid + noise * N(0, 1).
std::vector<SyntheticFrame> synthetic_detector(const SceneScript& script, Rng& rng);

/// Two identities with centroids drawn far apart. The target fills frame 1;
/// a second identity with larger boxes occludes frames 3 to 5.
SceneScript occluder_scene(Rng& rng, std::size_t dim = 8, double noise = 0.3);
/// Two identities visible in every frame of a 4-frame clip; the target has
/// the larger box in frame 1, the other identity's boxes are larger after.
SceneScript interleaved_scene(Rng& rng, std::size_t dim = 8, double noise = 0.3);

/// Plain frames for a scene: flat grey with each identity's box filled by a
/// per-identity shade.
std::vector<Tensor> render_scene(const SceneScript& script);

/// Candidate file: header "# D=<n>", then tab-separated records
/// tracklet, frame, x, y, w, h, confidence, f_1 .. f_D.
struct CandidateFile {
  std::size_t dim = 0;
  std::map<std::string, std::vector<CandidateBox>> tracklets;  // in file order
};

CandidateFile read_candidate_file(std::istream& is);
CandidateFile load_candidate_file(const std::filesystem::path& path);
void write_candidate_file(std::ostream& os, const CandidateFile& file);

/// Groups a tracklet's candidates by frame, for `frames` frames.
std::vector<std::vector<CandidateBox>> candidates_by_frame(const std::vector<CandidateBox>& all,
                                                           std::size_t frames);

/// Frames directory layout: <dir>/<tracklet>/frame_<k>.aakt, k = 0, 1, ...
std::vector<Tensor> load_frames(const std::filesystem::path& tracklet_dir);
void save_frames(const std::filesystem::path& tracklet_dir, const std::vector<Tensor>& frames);

/// Writes image_<k>.aakt, mask_<k>.aakt and provenance.txt into `dir`.
void save_alignment(const std::filesystem::path& dir, const TrackletAlignment& alignment);

}  // namespace cfaan
