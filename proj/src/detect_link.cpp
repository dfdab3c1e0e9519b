#include "cfaan/detect_link.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cfaan/errors.hpp"
#include "cfaan/tensor_io.hpp"

namespace cfaan {

std::optional<std::size_t> select_first_frame(const std::vector<CandidateBox>& candidates) {
  if (candidates.empty()) return std::nullopt;
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double a = candidates[i].box.area(), b = candidates[best].box.area();
    if (a > b || (a == b && candidates[i].confidence > candidates[best].confidence)) best = i;
  }
  return best;
}

double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("feature length " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

void LinkState::initialize(const std::vector<double>& f1) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  f_g = f1;
  weights.assign(1, 1.0);
  initialized = true;
}

void LinkState::update(const std::vector<double>& f) {
  if (!initialized) throw ValidationError("link state used before initialisation");
  if (f.size() != f_g.size()) {
    throw DimensionError("feature length " + std::to_string(f.size()) + " vs global feature " +
                         std::to_string(f_g.size()));
  }
  for (std::size_t i = 0; i < f.size(); ++i) f_g[i] = alpha * f_g[i] + (1.0 - alpha) * f[i];
  for (double& w : weights) w *= alpha;
  weights.push_back(1.0 - alpha);
}

LinkResult link_frame(const LinkState& state, const std::vector<CandidateBox>& candidates) {
  LinkResult r{std::nullopt, state};
  if (candidates.empty()) return r;
  if (!state.initialized) throw ValidationError("link_frame needs an initialised state");
  std::size_t best = 0;
  double best_d = euclidean_distance(candidates[0].feature, state.f_g);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double d = euclidean_distance(candidates[i].feature, state.f_g);
    if (d < best_d || (d == best_d && candidates[i].confidence > candidates[best].confidence)) {
      best = i;
      best_d = d;
    }
  }
  r.chosen = best;
  r.state.update(candidates[best].feature);
  return r;
}

// ---- crop normalisation ----------------------------------------------------

void NormalizeOptions::validate() const {
  if (out_h == 0 || out_w == 0) throw ConfigError("output size must be positive");
  if (!(slim_ratio > 0.0)) throw ConfigError("slim ratio must be positive");
  if (!(shift >= 0.0 && shift <= 1.0)) throw ConfigError("shift must lie in [0, 1]");
}

std::string to_string(Placement p) {
  switch (p) {
    case Placement::center: return "center";
    case Placement::shifted_right: return "shifted_right";
    case Placement::shifted_left: return "shifted_left";
    case Placement::passthrough: return "passthrough";
  }
  return "?";
}

std::string CropProvenance::to_line() const {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "candidate=" << (candidate ? std::to_string(*candidate) : std::string("none"))
     << " placement=" << to_string(placement) << " box=" << source.x << "," << source.y << ","
     << source.w << "," << source.h << " clipped=" << clipped.x << "," << clipped.y << ","
     << clipped.w << "," << clipped.h << " scale=" << scale << " content=" << top << ","
     << left << "," << content_h << "," << content_w;
  return os.str();
}

namespace {

void check_frame(const Tensor& frame) {
  if (frame.rank() != 3) {
    throw DimensionError("frame must be C x H x W, got " + shape_string(frame.shape()));
  }
}

// Bilinear sample of channel c at continuous pixel-centre coordinates,
// restricted to the window [y0, y1) x [x0, x1).
double sample(const Tensor& img, std::size_t c, double y, double x, std::size_t y0,
              std::size_t y1, std::size_t x0, std::size_t x1) {
  const std::size_t W = img.dim(2);
  y = std::clamp(y, static_cast<double>(y0), static_cast<double>(y1 - 1));
  x = std::clamp(x, static_cast<double>(x0), static_cast<double>(x1 - 1));
  const auto ya = static_cast<std::size_t>(std::floor(y)), xa = static_cast<std::size_t>(std::floor(x));
  const std::size_t yb = std::min(ya + 1, y1 - 1), xb = std::min(xa + 1, x1 - 1);
  const double fy = y - static_cast<double>(ya), fx = x - static_cast<double>(xa);
  const double* base = img.data().data() + c * img.dim(1) * W;
  const double top = (1 - fx) * base[ya * W + xa] + fx * base[ya * W + xb];
  const double bottom = (1 - fx) * base[yb * W + xa] + fx * base[yb * W + xb];
  return (1 - fy) * top + fy * bottom;
}

// Resizes the integer window [y0,y1) x [x0,x1) of img into out at (top, left).
void resize_window(const Tensor& img, std::size_t y0, std::size_t y1, std::size_t x0,
                   std::size_t x1, Tensor& out, std::size_t top, std::size_t left,
                   std::size_t rh, std::size_t rw) {
  const std::size_t C = img.dim(0), OH = out.dim(1), OW = out.dim(2);
  const double sy = static_cast<double>(y1 - y0) / static_cast<double>(rh);
  const double sx = static_cast<double>(x1 - x0) / static_cast<double>(rw);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < rh; ++i) {
      const double y = static_cast<double>(y0) + (static_cast<double>(i) + 0.5) * sy - 0.5;
      for (std::size_t j = 0; j < rw; ++j) {
        const double x = static_cast<double>(x0) + (static_cast<double>(j) + 0.5) * sx - 0.5;
        out[(c * OH + top + i) * OW + left + j] = sample(img, c, y, x, y0, y1, x0, x1);
      }
    }
  }
}

}  // namespace

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  check_frame(image);
  Tensor out({image.dim(0), out_h, out_w});
  resize_window(image, 0, image.dim(1), 0, image.dim(2), out, 0, 0, out_h, out_w);
  return out;
}

AlignedFrame passthrough_frame(const Tensor& frame, const NormalizeOptions& opts) {
  opts.validate();
  check_frame(frame);
  AlignedFrame f;
  f.image = frame.dim(1) == opts.out_h && frame.dim(2) == opts.out_w
                ? frame
                : resize_bilinear(frame, opts.out_h, opts.out_w);
  f.mask = Tensor({opts.out_h, opts.out_w}, 1.0);
  f.provenance.placement = Placement::passthrough;
  f.provenance.content_h = opts.out_h;
  f.provenance.content_w = opts.out_w;
  f.provenance.scale = static_cast<double>(opts.out_h) / static_cast<double>(frame.dim(1));
  return f;
}

AlignedFrame normalize_crop(const Tensor& frame, const Box& box, const NormalizeOptions& opts) {
  opts.validate();
  check_frame(frame);
  const double FH = static_cast<double>(frame.dim(1)), FW = static_cast<double>(frame.dim(2));
  // Snap to the pixel grid, then clip to the frame.
  const double x0 = std::clamp(std::floor(box.x), 0.0, FW), y0 = std::clamp(std::floor(box.y), 0.0, FH);
  const double x1 = std::clamp(std::ceil(box.x + box.w), 0.0, FW);
  const double y1 = std::clamp(std::ceil(box.y + box.h), 0.0, FH);
  if (!(box.w > 0.0 && box.h > 0.0) || x1 - x0 < 1.0 || y1 - y0 < 1.0) {
    AlignedFrame f = passthrough_frame(frame, opts);
    f.provenance.source = box;
    return f;
  }
  const Box clipped{x0, y0, x1 - x0, y1 - y0};
  const double scale = std::min(static_cast<double>(opts.out_h) / clipped.h,
                                static_cast<double>(opts.out_w) / clipped.w);
  const auto fit = [](double v, std::size_t limit) {
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(v)), 1, limit);
  };
  const std::size_t rh = fit(clipped.h * scale, opts.out_h), rw = fit(clipped.w * scale, opts.out_w);

  Placement placement = Placement::center;
  if (clipped.h / clipped.w > opts.slim_ratio) {
    if (clipped.center_x() < FW / 3.0) placement = Placement::shifted_right;
    if (clipped.center_x() > 2.0 * FW / 3.0) placement = Placement::shifted_left;
  }
  const std::size_t free_w = opts.out_w - rw;
  double left_share = 0.5;
  if (placement == Placement::shifted_right) left_share = opts.shift;
  if (placement == Placement::shifted_left) left_share = 1.0 - opts.shift;
  const auto left = static_cast<std::size_t>(std::floor(left_share * static_cast<double>(free_w)));
  const std::size_t top = (opts.out_h - rh) / 2;

  AlignedFrame f;
  f.image = Tensor({frame.dim(0), opts.out_h, opts.out_w});
  f.mask = Tensor({opts.out_h, opts.out_w});
  resize_window(frame, static_cast<std::size_t>(y0), static_cast<std::size_t>(y1),
                static_cast<std::size_t>(x0), static_cast<std::size_t>(x1), f.image, top, left,
                rh, rw);
  for (std::size_t i = 0; i < rh; ++i)
    for (std::size_t j = 0; j < rw; ++j) f.mask[(top + i) * opts.out_w + left + j] = 1.0;
  f.provenance = {std::nullopt, box, clipped, placement, scale, top, left, rh, rw};
  return f;
}

TrackletAlignment process_tracklet(const std::vector<Tensor>& frames,
                                   const std::vector<std::vector<CandidateBox>>& candidates,
                                   double alpha, const NormalizeOptions& opts) {
  if (frames.empty()) throw ValidationError("tracklet has no frames");
  if (candidates.size() != frames.size()) {
    throw DimensionError("tracklet has " + std::to_string(frames.size()) + " frames but " +
                         std::to_string(candidates.size()) + " candidate lists");
  }
  TrackletAlignment out;
  out.state.alpha = alpha;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto& cands = candidates[k];
    std::optional<std::size_t> chosen;
    if (!out.state.initialized) {
      chosen = select_first_frame(cands);
      if (chosen) out.state.initialize(cands[*chosen].feature);
    } else {
      LinkResult r = link_frame(out.state, cands);
      chosen = r.chosen;
      out.state = std::move(r.state);
    }
    AlignedFrame f = chosen ? normalize_crop(frames[k], cands[*chosen].box, opts)
                            : passthrough_frame(frames[k], opts);
    f.provenance.candidate = chosen;
    out.frames.push_back(std::move(f));
    out.chosen.push_back(chosen);
  }
  return out;
}

// ---- synthetic detector ----------------------------------------------------

void SceneScript::validate() const {
  if (frames == 0) throw ConfigError("scene needs at least one frame");
  if (frame_h == 0 || frame_w == 0) throw ConfigError("scene frame size must be positive");
  if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
  std::size_t dim = identities.empty() ? 0 : identities.front().centroid.size();
  for (const auto& id : identities) {
    if (id.boxes.size() != frames) {
      throw ConfigError("identity " + std::to_string(id.id) + " scripts " +
                        std::to_string(id.boxes.size()) + " boxes for " + std::to_string(frames) +
                        " frames");
    }
    if (id.centroid.size() != dim) throw ConfigError("centroids differ in dimension");
  }
}

std::vector<SyntheticFrame> synthetic_detector(const SceneScript& script, Rng& rng) {
  script.validate();
  std::vector<SyntheticFrame> out(script.frames);
  for (std::size_t k = 0; k < script.frames; ++k) {
    SyntheticFrame& f = out[k];
    for (const auto& id : script.identities) {
      if (!id.boxes[k]) continue;
      CandidateBox c{k, *id.boxes[k], id.confidence, id.centroid};
      for (double& v : c.feature) v += script.noise * rng.normal();
      f.candidates.push_back(std::move(c));
      f.truth.push_back(id.id);
    }
    if (script.shuffle) {
      std::vector<std::size_t> order(f.candidates.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      SyntheticFrame shuffled;
      for (std::size_t i : order) {
        shuffled.candidates.push_back(f.candidates[i]);
        shuffled.truth.push_back(f.truth[i]);
      }
      f = std::move(shuffled);
    }
  }
  return out;
}

namespace {

std::pair<std::vector<double>, std::vector<double>> separated_centroids(Rng& rng, std::size_t dim,
                                                                        double separation) {
  std::vector<double> a(dim), dir(dim);
  double norm = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    a[i] = rng.normal();
    dir[i] = rng.normal();
    norm += dir[i] * dir[i];
  }
  norm = std::sqrt(norm);
  std::vector<double> b = a;
  for (std::size_t i = 0; i < dim; ++i) b[i] += separation * dir[i] / norm;
  return {a, b};
}

}  // namespace

SceneScript occluder_scene(Rng& rng, std::size_t dim, double noise) {
  SceneScript s;
  s.frames = 6;
  s.noise = noise;
  auto [a, b] = separated_centroids(rng, dim, 4.0);
  ScriptedIdentity target{1, a, {}, 0.8};
  ScriptedIdentity occluder{2, b, {}, 0.95};
  for (std::size_t k = 0; k < s.frames; ++k) {
    const double drift = 2.0 * static_cast<double>(k);
    target.boxes.push_back(Box{34.0 + drift, 40.0, 48.0, 180.0});
    if (k >= 2 && k <= 4) {
      occluder.boxes.push_back(Box{10.0 + drift, 8.0, 96.0, 240.0});
    } else {
      occluder.boxes.push_back(std::nullopt);
    }
  }
  s.identities = {target, occluder};
  return s;
}

SceneScript interleaved_scene(Rng& rng, std::size_t dim, double noise) {
  SceneScript s;
  s.frames = 4;
  s.noise = noise;
  auto [a, b] = separated_centroids(rng, dim, 4.0);
  ScriptedIdentity target{1, a, {}, 0.9};
  ScriptedIdentity other{2, b, {}, 0.9};
  for (std::size_t k = 0; k < s.frames; ++k) {
    const bool first = k == 0;
    target.boxes.push_back(Box{8.0, 30.0, first ? 60.0 : 40.0, first ? 200.0 : 150.0});
    other.boxes.push_back(Box{70.0, 20.0, first ? 40.0 : 56.0, first ? 150.0 : 220.0});
  }
  s.identities = {target, other};
  return s;
}

std::vector<Tensor> render_scene(const SceneScript& script) {
  script.validate();
  std::vector<Tensor> frames;
  for (std::size_t k = 0; k < script.frames; ++k) {
    Tensor img({3, script.frame_h, script.frame_w}, 0.1);
    for (const auto& id : script.identities) {
      if (!id.boxes[k]) continue;
      const Box& b = *id.boxes[k];
      const double shade = 0.2 * static_cast<double>(id.id + 1);
      const auto y0 = static_cast<std::size_t>(std::max(0.0, b.y));
      const auto x0 = static_cast<std::size_t>(std::max(0.0, b.x));
      const auto y1 = std::min<std::size_t>(script.frame_h, static_cast<std::size_t>(b.y + b.h));
      const auto x1 = std::min<std::size_t>(script.frame_w, static_cast<std::size_t>(b.x + b.w));
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x)
            img[(c * script.frame_h + y) * script.frame_w + x] = shade * static_cast<double>(c + 1);
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

// ---- files -----------------------------------------------------------------

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, '\t')) out.push_back(field);
  return out;
}

double parse_number(const std::string& text, std::size_t line_no, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("line " + std::to_string(line_no) + ": bad " + what + " '" + text + "'");
  }
}

std::size_t parse_index(const std::string& text, std::size_t line_no, const char* what) {
  const double v = parse_number(text, line_no, what);
  if (v < 0 || v != std::floor(v)) {
    throw ValidationError("line " + std::to_string(line_no) + ": " + what +
                          " must be a non-negative integer, got '" + text + "'");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

CandidateFile read_candidate_file(std::istream& is) {
  CandidateFile file;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("D=");
      if (!have_header && pos != std::string::npos) {
        file.dim = parse_index(line.substr(pos + 2), line_no, "feature dimension");
        have_header = true;
      }
      continue;
    }
    if (!have_header) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": record before the '# D=<n>' header");
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 7 + file.dim) {
      throw ValidationError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(7 + file.dim) + " tab-separated fields, found " +
                            std::to_string(fields.size()));
    }
    CandidateBox c;
    c.frame = parse_index(fields[1], line_no, "frame index");
    c.box = {parse_number(fields[2], line_no, "x"), parse_number(fields[3], line_no, "y"),
             parse_number(fields[4], line_no, "w"), parse_number(fields[5], line_no, "h")};
    if (!(c.box.w > 0 && c.box.h > 0)) {
      throw ValidationError("line " + std::to_string(line_no) + ": box width and height must be positive");
    }
    c.confidence = parse_number(fields[6], line_no, "confidence");
    if (c.confidence < 0 || c.confidence > 1) {
      throw ValidationError("line " + std::to_string(line_no) + ": confidence outside [0, 1]");
    }
    for (std::size_t i = 0; i < file.dim; ++i) {
      c.feature.push_back(parse_number(fields[7 + i], line_no, "feature value"));
    }
    file.tracklets[fields[0]].push_back(std::move(c));
  }
  if (!have_header) throw ValidationError("candidate file lacks the '# D=<n>' header");
  return file;
}

CandidateFile load_candidate_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open candidate file " + path.string());
  return read_candidate_file(is);
}

void write_candidate_file(std::ostream& os, const CandidateFile& file) {
  os << "# D=" << file.dim << "\n";
  os << std::setprecision(17);
  for (const auto& [tid, cands] : file.tracklets) {
    for (const auto& c : cands) {
      if (c.feature.size() != file.dim) throw DimensionError("candidate feature length mismatch");
      os << tid << '\t' << c.frame << '\t' << c.box.x << '\t' << c.box.y << '\t' << c.box.w
         << '\t' << c.box.h << '\t' << c.confidence;
      for (double v : c.feature) os << '\t' << v;
      os << '\n';
    }
  }
}

std::vector<std::vector<CandidateBox>> candidates_by_frame(const std::vector<CandidateBox>& all,
                                                           std::size_t frames) {
  std::vector<std::vector<CandidateBox>> out(frames);
  for (const auto& c : all) {
    if (c.frame >= frames) {
      throw ValidationError("candidate refers to frame " + std::to_string(c.frame) +
                            " but the tracklet has " + std::to_string(frames) + " frames");
    }
    out[c.frame].push_back(c);
  }
  return out;
}

std::vector<Tensor> load_frames(const std::filesystem::path& tracklet_dir) {
  std::vector<Tensor> frames;
  for (std::size_t k = 0;; ++k) {
    const auto p = tracklet_dir / ("frame_" + std::to_string(k) + ".aakt");
    if (!std::filesystem::exists(p)) break;
    frames.push_back(load_tensor(p));
  }
  if (frames.empty()) throw ValidationError("no frames found in " + tracklet_dir.string());
  return frames;
}

void save_frames(const std::filesystem::path& tracklet_dir, const std::vector<Tensor>& frames) {
  std::filesystem::create_directories(tracklet_dir);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    save_tensor(tracklet_dir / ("frame_" + std::to_string(k) + ".aakt"), frames[k]);
  }
}

void save_alignment(const std::filesystem::path& dir, const TrackletAlignment& alignment) {
  std::filesystem::create_directories(dir);
  std::ofstream log(dir / "provenance.txt");
  if (!log) throw ValidationError("cannot write " + (dir / "provenance.txt").string());
  for (std::size_t k = 0; k < alignment.frames.size(); ++k) {
    const auto& f = alignment.frames[k];
    save_tensor(dir / ("image_" + std::to_string(k) + ".aakt"), f.image);
    save_tensor(dir / ("mask_" + std::to_string(k) + ".aakt"), f.mask);
    log << "frame=" << k << ' ' << f.provenance.to_line() << '\n';
  }
}

}  // namespace cfaan
