#include "cfaan/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "cfaan/detect_link.hpp"
#include "cfaan/errors.hpp"
#include "cfaan/flops.hpp"
#include "cfaan/gradcheck.hpp"
#include "cfaan/reid_eval.hpp"
#include "cfaan/report.hpp"
#include "cfaan/tensor_io.hpp"
#include "cfaan/toy_train.hpp"

namespace cfaan {

namespace {

namespace fs = std::filesystem;

struct BenchFlags {
  std::string preset;
  std::string variant;
  std::size_t heads = 2;
  std::size_t scales = 4;
  std::size_t frames = 6;
  std::size_t last_stride = 1;
  std::string convention = "calibrated";
  bool calibrate = false;
  bool layers = false;
};

struct GradcheckFlags {
  std::uint64_t seed = 0;
  std::size_t seeds = 5;
  std::vector<std::string> suites;
  double tolerance = 1e-4;
  bool perturb = false;
};

struct AlignFlags {
  std::string candidates;
  std::string frames;
  std::string out;
  std::string tracklet;
  double alpha = 0.9;
  std::size_t out_h = 256;
  std::size_t out_w = 128;
  double slim_ratio = 3.0;
  double shift = 1.0;
};

struct EvalFlags {
  std::string meta;
  std::string distances;
  std::string corrections;
  std::string protocol = "new";
  bool compare = false;
};

struct DemoFlags {
  std::uint64_t seed = 1;
  std::size_t epochs = 40;
  std::size_t identities = 20;
  std::size_t chance_trials = 5;
  bool no_baseline = false;
};

std::string slug(const std::string& label) {
  std::string s;
  for (char c : label) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      s += char(std::tolower(static_cast<unsigned char>(c)));
    } else if (!s.empty() && s.back() != '_') {
      s += '_';
    }
  }
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s;
}

std::string gflops(double v) { return format_fixed(v, 3); }

std::string percent(double v) { return (v >= 0 ? "+" : "") + format_fixed(100.0 * v, 1) + "%"; }

std::string tolerance_pct(double v) { return format_fixed(100.0 * v, 1) + "%"; }

// ---- bench -----------------------------------------------------------------

void print_calibration(std::ostream& out, const BackboneSpec& spec, std::size_t frames) {
  const CalibrationReport cal = calibrate(spec, frames);
  TextTable t({"convention", "score", "all within", "ordering"});
  for (const auto& e : cal.entries) {
    t.add_row({e.convention.tag(), format_fixed(e.score, 3), e.all_within ? "yes" : "no",
               e.ordering_holds ? "yes" : "no"});
  }
  out << "Counting-convention sweep (score = worst |error| / tolerance)\n";
  t.print(out);
  out << '\n';
  TextTable best({"row", "target", "computed", "error", "tolerance"});
  for (const auto& r : cal.best().rows) {
    best.add_row({r.label, gflops(r.target_gflops), gflops(r.computed_gflops),
                  percent(r.relative_error()), tolerance_pct(r.tolerance)});
  }
  out << "Best fit: " << cal.best().convention.tag() << '\n';
  best.print(out);
  KeyValueBlock kv;
  kv.add("conventions", cal.entries.size());
  kv.add("best_convention", cal.best().convention.tag());
  kv.add("best_score", cal.best().score);
  kv.add("any_within_tolerance", cal.any_within());
  kv.add("ordering_holds_everywhere", cal.ordering_holds_everywhere());
  for (const auto& r : cal.best().rows) kv.add("best." + slug(r.label) + ".error", r.relative_error());
  kv.print(out);
}

void print_table2(std::ostream& out, const CountingConvention& conv, const BackboneSpec& spec,
                  std::size_t frames) {
  const auto rows = ablation_table(conv, spec, frames);
  TextTable t({"row", "target GFLOPs", "computed", "error", "tolerance", "status"});
  bool all = true;
  for (const auto& r : rows) {
    const std::string sign = r.is_baseline ? "" : "+";
    t.add_row({r.label, sign + gflops(r.target_gflops), sign + gflops(r.computed_gflops),
               percent(r.relative_error()), tolerance_pct(r.tolerance),
               r.within_tolerance() ? "ok" : "outside"});
    all = all && r.within_tolerance();
  }
  auto get = [&](const char* label) {
    return std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.label == label; })
        ->computed_gflops;
  };
  const bool ordering = get("cfaa S=4") < get("cfaa S=2") && get("cfaa S=2") < get("axial") &&
                        get("axial") < get("non-local");
  out << "Attention cost ablation, convention " << conv.tag() << "\n";
  t.print(out);
  out << "ordering cfaa S=4 < cfaa S=2 < axial < non-local: " << (ordering ? "holds" : "VIOLATED")
      << '\n';
  KeyValueBlock kv;
  kv.add("convention", conv.tag());
  for (const auto& r : rows) {
    kv.add(slug(r.label) + ".computed", r.computed_gflops);
    kv.add(slug(r.label) + ".error", r.relative_error());
  }
  kv.add("all_within_tolerance", all);
  kv.add("ordering_holds", ordering);
  kv.print(out);
}

void print_table4(std::ostream& out, const CountingConvention& conv, const BackboneSpec& spec,
                  std::size_t frames) {
  TextTable t({"model", "target GFLOPs", "computed", "error", "tolerance", "status"});
  KeyValueBlock kv;
  kv.add("convention", conv.tag());
  for (const auto& target : model_targets()) {
    const double got = to_gflops(model_flops(target.preset, spec, frames, conv).total());
    const double err = (got - target.target_gflops) / target.target_gflops;
    const bool ok = std::abs(err) <= target.tolerance;
    t.add_row({target.preset, gflops(target.target_gflops), gflops(got), percent(err),
               tolerance_pct(target.tolerance), ok ? "ok" : "outside"});
    kv.add(target.preset + ".computed", got);
    kv.add(target.preset + ".error", err);
  }
  out << "Full-model totals, convention " << conv.tag() << "\n";
  t.print(out);
  kv.print(out);
}

void print_layers(std::ostream& out, const FlopReport& r) {
  TextTable t({"layer", "kind", "GFLOPs"});
  for (const auto& row : r.rows) t.add_row({row.name, to_string(row.kind), format_fixed(to_gflops(row.flops), 6)});
  t.print(out);
}

int cmd_bench(const BenchFlags& f, std::ostream& out) {
  BackboneSpec spec;
  spec.last_stride = f.last_stride;
  spec.validate();
  if (f.frames == 0) throw ConfigError("--frames must be >= 1");
  if (f.calibrate) {
    print_calibration(out, spec, f.frames);
    return exit_ok;
  }
  const CountingConvention conv = CountingConvention::parse(f.convention);
  if (!f.preset.empty() && !f.variant.empty()) {
    throw ConfigError("--preset and --variant are mutually exclusive");
  }
  if (f.preset == "table2") {
    print_table2(out, conv, spec, f.frames);
    return exit_ok;
  }
  if (f.preset == "table4") {
    print_table4(out, conv, spec, f.frames);
    return exit_ok;
  }
  if (!f.preset.empty() && f.preset != "backbone") {
    const auto& names = model_presets();
    if (std::find(names.begin(), names.end(), f.preset) == names.end()) {
      throw ConfigError("unknown preset '" + f.preset +
                        "' (expected table2, table4, backbone, c2d, nonlocal, cfaan)");
    }
    const FlopReport r = model_flops(f.preset, spec, f.frames, conv);
    if (f.layers) print_layers(out, r);
    TextTable t({"model", "frames", "total GFLOPs", "delta"});
    t.add_row({f.preset, std::to_string(f.frames), gflops(to_gflops(r.total())),
               "+" + gflops(to_gflops(r.delta()))});
    t.print(out);
    KeyValueBlock kv;
    kv.add("preset", f.preset);
    kv.add("convention", conv.tag());
    kv.add("frames", f.frames);
    kv.add("total_flops", r.total());
    kv.add("total_gflops", to_gflops(r.total()));
    kv.add("delta_gflops", to_gflops(r.delta()));
    kv.print(out);
    return exit_ok;
  }

  const FlopReport backbone = backbone_flops(spec, f.frames, conv);
  std::uint64_t attention = 0;
  std::string label = "backbone";
  if (!f.variant.empty()) {
    VariantSpec v{parse_variant(f.variant), f.heads, f.scales};
    if (v.variant != AttentionVariant::cfaa && f.scales != 4 && f.scales != 1) {
      throw ConfigError("--scales only applies to --variant cfaa");
    }
    const FlopReport att =
        attention_flops(v, default_insertion_points(spec), f.frames, {}, conv);
    if (f.layers) print_layers(out, att);
    attention = att.total();
    label = to_string(v.variant);
    if (v.variant == AttentionVariant::cfaa) label += " S=" + std::to_string(v.scales);
    label += " M=" + std::to_string(v.heads);
  } else if (f.layers) {
    print_layers(out, backbone);
  }
  TextTable t({"model", "frames", "backbone", "attention", "total GFLOPs"});
  t.add_row({label, std::to_string(f.frames), gflops(to_gflops(backbone.total())),
             "+" + gflops(to_gflops(attention)), gflops(to_gflops(backbone.total() + attention))});
  t.print(out);
  KeyValueBlock kv;
  kv.add("model", label);
  kv.add("convention", conv.tag());
  kv.add("frames", f.frames);
  kv.add("backbone_flops", backbone.total());
  kv.add("attention_flops", attention);
  kv.add("total_flops", backbone.total() + attention);
  kv.add("total_gflops", to_gflops(backbone.total() + attention));
  kv.print(out);
  return exit_ok;
}

// ---- gradcheck -------------------------------------------------------------

int cmd_gradcheck(const GradcheckFlags& f, std::ostream& out, std::ostream& err) {
  GradcheckOptions o;
  o.seed = f.seed;
  o.seeds = f.seeds;
  o.suites = f.suites;
  o.tolerance = f.tolerance;
  o.perturb_analytic = f.perturb;
  const GradcheckReport r = run_gradchecks(o);
  TextTable t({"suite", "seed", "config", "entries", "worst rel. error", "status"});
  std::size_t failed = 0;
  for (const auto& c : r.cases) {
    std::ostringstream e;
    e << std::scientific << std::setprecision(2) << c.worst_error;
    t.add_row({c.suite, std::to_string(c.seed), c.config, std::to_string(c.checked), e.str(),
               c.passed ? "PASS" : "FAIL"});
    failed += c.passed ? 0 : 1;
  }
  out << "Finite-difference gradient checks (tolerance " << o.tolerance
      << (o.perturb_analytic ? ", analytic gradients perturbed" : "") << ")\n";
  t.print(out);
  const GradcheckCase& worst = r.worst();
  KeyValueBlock kv;
  kv.add("cases", r.cases.size());
  kv.add("failed", failed);
  kv.add("tolerance", o.tolerance);
  kv.add("worst_error", worst.worst_error);
  kv.add("worst_suite", worst.suite);
  kv.add("worst_seed", worst.seed);
  kv.add("worst_tensor", worst.worst_tensor);
  kv.add("result", r.passed() ? "PASS" : "FAIL");
  kv.print(out);
  if (!r.passed()) {
    err << "gradcheck failed: worst offender " << worst.suite << " seed " << worst.seed << " ("
        << worst.config << "), tensor " << worst.worst_tensor << " entry " << worst.worst_index
        << ", relative error " << worst.worst_error << '\n';
    return exit_invalid;
  }
  return exit_ok;
}

// ---- align -----------------------------------------------------------------

int cmd_align(const AlignFlags& f, std::ostream& out) {
  NormalizeOptions opts;
  opts.out_h = f.out_h;
  opts.out_w = f.out_w;
  opts.slim_ratio = f.slim_ratio;
  opts.shift = f.shift;
  opts.validate();
  if (!(f.alpha >= 0.0 && f.alpha <= 1.0)) throw ConfigError("--alpha must lie in [0, 1]");
  const CandidateFile file = load_candidate_file(f.candidates);
  if (!f.tracklet.empty() && !file.tracklets.count(f.tracklet)) {
    throw ValidationError("tracklet '" + f.tracklet + "' not in " + f.candidates);
  }
  TextTable t({"tracklet", "frames", "detected", "chosen per frame"});
  KeyValueBlock kv;
  std::size_t done = 0, total_frames = 0;
  for (const auto& [name, cands] : file.tracklets) {
    if (!f.tracklet.empty() && name != f.tracklet) continue;
    const std::vector<Tensor> frames = load_frames(fs::path(f.frames) / name);
    const TrackletAlignment a =
        process_tracklet(frames, candidates_by_frame(cands, frames.size()), f.alpha, opts);
    save_alignment(fs::path(f.out) / name, a);
    std::string chosen;
    std::size_t detected = 0;
    for (const auto& c : a.chosen) {
      if (!chosen.empty()) chosen += ',';
      chosen += c ? std::to_string(*c) : "-";
      detected += c ? 1 : 0;
    }
    t.add_row({name, std::to_string(frames.size()), std::to_string(detected), chosen});
    kv.add(name + ".chosen", chosen);
    ++done;
    total_frames += frames.size();
  }
  out << "Aligned tracklets written to " << f.out << "\n";
  t.print(out);
  kv.add("tracklets", done);
  kv.add("frames", total_frames);
  kv.print(out);
  return exit_ok;
}

// ---- eval ------------------------------------------------------------------

void add_metrics(TextTable& t, const std::string& label, const EvalResult& r) {
  t.add_row({label, format_fixed(r.mAP, 4), format_fixed(r.cmc_at(1), 4),
             format_fixed(r.cmc_at(5), 4), format_fixed(r.cmc_at(10), 4),
             std::to_string(r.evaluated), std::to_string(r.excluded)});
}

void add_metrics(KeyValueBlock& kv, const std::string& prefix, const EvalResult& r) {
  kv.add(prefix + "map", r.mAP, 12);
  kv.add(prefix + "rank1", r.cmc_at(1), 12);
  kv.add(prefix + "rank5", r.cmc_at(5), 12);
  kv.add(prefix + "rank10", r.cmc_at(10), 12);
  kv.add(prefix + "evaluated", r.evaluated);
  kv.add(prefix + "excluded", r.excluded);
}

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  const Protocol protocol = parse_protocol(f.protocol);
  const MetaFile meta = load_meta_file(f.meta);
  EvalDataset d{meta.query, meta.gallery, load_tensor(f.distances)};
  d.validate();
  LabelCorrections corrections;
  if (!f.corrections.empty()) corrections = load_corrections(f.corrections);
  const std::vector<std::string> header{"setting", "mAP", "CMC-1", "CMC-5", "CMC-10", "evaluated",
                                        "excluded"};
  if (f.compare) {
    const ProtocolDeltaReport rep = protocol_delta_report(d, corrections);
    TextTable t(header);
    add_metrics(t, "old protocol, original labels", rep.old_plain);
    add_metrics(t, "old protocol, corrected labels", rep.old_corrected);
    add_metrics(t, "new protocol, corrected labels", rep.new_corrected);
    add_metrics(t, "new protocol, ambiguity ignored", rep.new_ambiguity_ignored);
    t.print(out);
    out << '\n';
    TextTable q({"query", "tracklet", "corrections", "protocol", "total"});
    auto cell = [](const std::optional<double>& v) {
      return v ? (*v >= 0 ? "+" : "") + format_fixed(*v, 4) : std::string("excluded");
    };
    for (std::size_t i = 0; i < d.query.size(); ++i) {
      q.add_row({std::to_string(i), std::to_string(d.query[i].tracklet),
                 cell(rep.corrections_effect.ap_delta[i]), cell(rep.protocol_effect.ap_delta[i]),
                 cell(rep.total.ap_delta[i])});
    }
    out << "Per-query AP deltas\n";
    q.print(out);
    KeyValueBlock kv;
    add_metrics(kv, "old_plain.", rep.old_plain);
    add_metrics(kv, "old_corrected.", rep.old_corrected);
    add_metrics(kv, "new_corrected.", rep.new_corrected);
    add_metrics(kv, "new_ambiguity_ignored.", rep.new_ambiguity_ignored);
    kv.add("delta.corrections.map", rep.corrections_effect.map_delta, 12);
    kv.add("delta.protocol.map", rep.protocol_effect.map_delta, 12);
    kv.add("delta.total.map", rep.total.map_delta, 12);
    kv.add("delta.total.rank1", rep.total.rank1_delta, 12);
    kv.print(out);
    return exit_ok;
  }
  const EvalDataset used = corrections.empty() ? d : apply_corrections(d, corrections);
  const EvalResult r = evaluate(used, protocol);
  TextTable t(header);
  add_metrics(t, to_string(protocol) + " protocol" + (corrections.empty() ? "" : ", corrected"), r);
  t.print(out);
  KeyValueBlock kv;
  kv.add("protocol", to_string(protocol));
  kv.add("corrections", corrections.empty() ? std::string("none") : f.corrections);
  add_metrics(kv, "", r);
  for (std::size_t i = 0; i < r.ap.size(); ++i) {
    kv.add("ap." + std::to_string(i), r.ap[i] ? format_fixed(*r.ap[i], 12) : "excluded");
  }
  kv.print(out);
  return exit_ok;
}

// ---- demo ------------------------------------------------------------------

int cmd_demo(const DemoFlags& f, std::ostream& out) {
  DemoConfig c;
  c.data.identities = f.identities;
  c.data.seed = f.seed;
  c.train.seed = f.seed;
  c.train.epochs = f.epochs;
  c.chance_trials = f.chance_trials;
  c.baseline = !f.no_baseline;
  const DemoReport r = run_demo(c);
  const auto& curve = r.attention.training.epoch_loss;
  out << "Toy training: " << f.identities << " identities, seed " << f.seed << ", " << f.epochs
      << " epochs\n";
  if (!curve.empty()) {
    TextTable lt({"epoch", "loss"});
    for (std::size_t e = 0; e < curve.size(); ++e) {
      if (e == 0 || e + 1 == curve.size() || (e + 1) % 5 == 0) {
        lt.add_row({std::to_string(e + 1), format_fixed(curve[e], 4)});
      }
    }
    lt.print(out);
    out << '\n';
  }
  TextTable t({"model", "rank-1", "mAP"});
  t.add_row({"toy + CF-AA", format_fixed(r.attention.retrieval.cmc_at(1), 3),
             format_fixed(r.attention.retrieval.mAP, 3)});
  if (r.baseline) {
    t.add_row({"toy, no attention", format_fixed(r.baseline->retrieval.cmc_at(1), 3),
               format_fixed(r.baseline->retrieval.mAP, 3)});
  }
  if (r.chance.trials > 0) {
    t.add_row({"untrained (" + std::to_string(r.chance.trials) + " inits)",
               format_fixed(r.chance.rank1_mean, 3), format_fixed(r.chance.map_mean, 3)});
  }
  t.add_row({"random ranking", format_fixed(1.0 / double(f.identities), 3), "-"});
  t.print(out);
  KeyValueBlock kv;
  kv.add("seed", f.seed);
  kv.add("epochs", f.epochs);
  kv.add("loss_first", curve.empty() ? 0.0 : curve.front());
  kv.add("loss_last", curve.empty() ? 0.0 : curve.back());
  kv.add("loss_drop", r.loss_drop);
  kv.add("rank1", r.attention.retrieval.cmc_at(1));
  kv.add("map", r.attention.retrieval.mAP);
  if (r.baseline) {
    kv.add("baseline_rank1", r.baseline->retrieval.cmc_at(1));
    kv.add("baseline_map", r.baseline->retrieval.mAP);
  }
  if (r.chance.trials > 0) {
    kv.add("chance_rank1_mean", r.chance.rank1_mean);
    kv.add("chance_rank1_std", r.chance.rank1_std);
    kv.add("chance_map_mean", r.chance.map_mean);
  }
  kv.add("uniform_rank1", 1.0 / double(f.identities));
  kv.print(out);
  return exit_ok;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Coarse-to-fine axial attention toolkit: FLOP model, gradient checks, tracklet "
               "alignment, re-identification evaluation and a toy training demo.",
               "cfaan"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", "cfaan 0.1.0");
  std::size_t threads = 1;
  app.add_option("--threads", threads, "Upper bound on worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  BenchFlags bf;
  auto* bench = app.add_subcommand("bench", "Print analytic FLOP counts");
  bench->add_option("--preset", bf.preset,
                    "table2 (attention ablation), table4 (full models), backbone, c2d, "
                    "nonlocal or cfaan");
  bench->add_option("--variant", bf.variant,
                    "Attention variant: nonlocal3d, axial, axial-sinusoidal, axial-relative, cfaa");
  bench->add_option("--heads", bf.heads, "Heads per scale")->check(CLI::PositiveNumber)->capture_default_str();
  bench->add_option("--scales", bf.scales, "Scales of the cfaa variant")->check(CLI::PositiveNumber)->capture_default_str();
  bench->add_option("--frames", bf.frames, "Frames per tracklet")->check(CLI::PositiveNumber)->capture_default_str();
  bench->add_option("--last-stride", bf.last_stride, "Stride of the last backbone stage")
      ->check(CLI::Range(1, 2))
      ->capture_default_str();
  bench->add_option("--convention", bf.convention,
                    "default, exact, calibrated or key=value list (mac, softmax, bnrelu, proj, "
                    "positional)")
      ->capture_default_str();
  bench->add_flag("--calibrate", bf.calibrate, "Sweep every counting convention");
  bench->add_flag("--layers", bf.layers, "Also print per-layer counts");

  GradcheckFlags gf;
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  grad->add_option("--seed", gf.seed, "First seed")->capture_default_str();
  grad->add_option("--seeds", gf.seeds, "Configurations per suite")->check(CLI::PositiveNumber)->capture_default_str();
  grad->add_option("--suite", gf.suites,
                   "Restrict to suites: nonlocal, axial, axial_ps, cfaa, triplet, cross_entropy");
  grad->add_option("--tolerance", gf.tolerance, "Largest accepted relative error")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  grad->add_flag("--perturb-analytic", gf.perturb, "Corrupt analytic gradients to test the checker");

  AlignFlags af;
  auto* align = app.add_subcommand("align", "Detect-and-link alignment of tracklets");
  align->add_option("--candidates", af.candidates, "Candidate box file")->required()->check(CLI::ExistingFile);
  align->add_option("--frames", af.frames, "Directory of <tracklet>/frame_<k>.aakt frames")
      ->required()
      ->check(CLI::ExistingDirectory);
  align->add_option("--out", af.out, "Output directory")->required();
  align->add_option("--tracklet", af.tracklet, "Only align this tracklet");
  align->add_option("--alpha", af.alpha, "EMA weight of the running appearance feature")->capture_default_str();
  align->add_option("--height", af.out_h, "Output height")->check(CLI::PositiveNumber)->capture_default_str();
  align->add_option("--width", af.out_w, "Output width")->check(CLI::PositiveNumber)->capture_default_str();
  align->add_option("--slim-ratio", af.slim_ratio, "Height/width ratio above which a box is slim")->capture_default_str();
  align->add_option("--shift", af.shift, "Placement of slim boxes: 0.5 centres, 1.0 pushes to the far edge")
      ->capture_default_str();

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "CMC and mAP under the old or new protocol");
  eval->add_option("--meta", ef.meta, "Tracklet metadata file")->required()->check(CLI::ExistingFile);
  eval->add_option("--distances", ef.distances, "Query x gallery distance tensor (.aakt)")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--corrections", ef.corrections, "Label corrections file")->check(CLI::ExistingFile);
  eval->add_option("--protocol", ef.protocol, "old or new")->capture_default_str();
  eval->add_flag("--compare", ef.compare, "Report old/new protocol and correction deltas");

  DemoFlags df;
  auto* demo = app.add_subcommand("demo", "Train and evaluate the toy model on synthetic tracklets");
  demo->add_option("--seed", df.seed, "Seed for data, initialisation and training")->capture_default_str();
  demo->add_option("--epochs", df.epochs, "Training epochs")->capture_default_str();
  demo->add_option("--identities", df.identities, "Synthetic identities")->check(CLI::Range(2, 56))->capture_default_str();
  demo->add_option("--chance-trials", df.chance_trials, "Untrained initialisations for the chance estimate")
      ->capture_default_str();
  demo->add_flag("--no-baseline", df.no_baseline, "Skip the model without attention");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return exit_ok;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return exit_ok;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\nRun with --help for usage.\n";
    return exit_invalid;
  }

  try {
    if (*bench) return cmd_bench(bf, out);
    if (*grad) return cmd_gradcheck(gf, out, err);
    if (*align) return cmd_align(af, out);
    if (*eval) return cmd_eval(ef, out);
    if (*demo) return cmd_demo(df, out);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return exit_invalid;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return exit_internal;
  }
  err << "internal error: no subcommand ran\n";
  return exit_internal;
}

}  // namespace cfaan
