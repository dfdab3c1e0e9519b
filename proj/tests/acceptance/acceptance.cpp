// Acceptance run: prints one PASS/FAIL line per criterion, followed by the
// measured values it was judged on. Exit status is 0 iff every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cfaan/detect_link.hpp"
#include "cfaan/flops.hpp"
#include "cfaan/gradcheck.hpp"
#include "cfaan/reid_eval.hpp"
#include "cfaan/report.hpp"
#include "cfaan/rng.hpp"
#include "cfaan/tensor_io.hpp"
#include "cfaan/toy_train.hpp"
#include "../unit/eval_oracle.hpp"

using namespace cfaan;

namespace {

struct Outcome {
  bool passed = false;
  std::string note;  // qualifier shown next to the verdict
  std::vector<std::string> details;
};

struct Criterion {
  int number;
  std::string title;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string pct(double v) { return format_fixed(100.0 * v, 2) + "%"; }

// ---- 1: attention ablation cost -------------------------------------------

Outcome flop_ablation() {
  Outcome o;
  const auto rows = ablation_table(CountingConvention::calibrated());
  bool all = true;
  for (const auto& r : rows) {
    all = all && r.within_tolerance();
    o.details.push_back(r.label + ": target " + format_fixed(r.target_gflops, 3) + ", computed " +
                        format_fixed(r.computed_gflops, 3) + ", error " + pct(r.relative_error()) +
                        " (tolerance " + pct(r.tolerance) + ")");
  }
  const CalibrationReport cal = calibrate();
  const bool ordering = cal.ordering_holds_everywhere() && cal.best().ordering_holds;
  o.details.push_back("calibrated convention: " + CountingConvention::calibrated().tag());
  o.details.push_back("best-fit convention of " + std::to_string(cal.entries.size()) +
                      " swept: " + cal.best().convention.tag() + " (score " +
                      format_fixed(cal.best().score, 3) + ")");
  o.details.push_back(std::string("strict ordering cfaa S=4 < cfaa S=2 < axial < non-local: ") +
                      (ordering ? "holds under every convention" : "VIOLATED"));
  if (all) {
    o.details.push_back("every row within tolerance");
  } else {
    o.details.push_back(
        "no convention places every row within tolerance; fallback applies: best-fit errors "
        "are reported above and the ordering requirement decides");
  }
  o.passed = ordering && (all || !cal.any_within());
  if (!all) o.note = "via fallback";
  return o;
}

// ---- 2: full-model totals --------------------------------------------------

Outcome flop_models() {
  Outcome o;
  o.passed = true;
  const CountingConvention conv = CountingConvention::calibrated();
  for (const auto& t : model_targets()) {
    const double got = to_gflops(model_flops(t.preset, BackboneSpec{}, 6, conv).total());
    const double err = (got - t.target_gflops) / t.target_gflops;
    const bool ok = std::abs(err) <= t.tolerance;
    o.passed = o.passed && ok;
    o.details.push_back(t.preset + ": target " + format_fixed(t.target_gflops, 3) + ", computed " +
                        format_fixed(got, 3) + ", error " + pct(err) + " (tolerance " +
                        pct(t.tolerance) + ")" + (ok ? "" : " OUTSIDE"));
  }
  return o;
}

// ---- 3: gradient checks ----------------------------------------------------

Outcome gradients() {
  Outcome o;
  const GradcheckReport r = run_gradchecks(GradcheckOptions{});
  o.passed = r.passed();
  for (const auto& suite : gradcheck_suites()) {
    std::size_t n = 0, ok = 0;
    double worst = 0.0;
    for (const auto& c : r.cases) {
      if (c.suite != suite) continue;
      ++n;
      ok += c.passed ? 1 : 0;
      worst = std::max(worst, c.worst_error);
    }
    o.passed = o.passed && n >= 5 && ok == n;
    std::ostringstream s;
    s << suite << ": " << ok << "/" << n << " configs pass, worst relative error "
      << std::scientific << std::setprecision(2) << worst << " (tolerance 1e-4)";
    o.details.push_back(s.str());
  }
  return o;
}

// ---- 4: instrumented kernel counts -----------------------------------------

Outcome kernel_counts() {
  Outcome o;
  o.passed = true;
  Rng rng(4);
  const AttentionVariant variants[] = {AttentionVariant::nonlocal3d, AttentionVariant::axial,
                                       AttentionVariant::axial_sinusoidal,
                                       AttentionVariant::axial_relative, AttentionVariant::cfaa};
  for (AttentionVariant v : variants) {
    std::size_t cases = 0, equal = 0;
    for (std::size_t i = 0; i < 6; ++i) {
      VariantSpec spec{v, 1 + i % 2, v == AttentionVariant::cfaa ? 1 + i % 3 : 1};
      const std::size_t unit = spec.heads * spec.scales;
      AttentionConfig c;
      c.heads = spec.heads;
      c.scales = spec.scales;
      c.encoding = spec.encoding();
      c.c_in = 2 + rng.index(3);
      c.c_qk = unit * (1 + rng.index(2));
      c.c_out = unit * (1 + rng.index(2));
      c.frames = 1 + rng.index(3);
      c.height = (1 + rng.index(2)) << (spec.scales - 1);
      c.width = (1 + rng.index(2)) << (spec.scales - 1);
      ++cases;
      equal += count_oracle_multiplies(spec, c, 10 + i) == analytic_attention_counts(spec, c);
    }
    o.passed = o.passed && equal == cases;
    o.details.push_back(to_string(v) + ": " + std::to_string(equal) + "/" +
                        std::to_string(cases) + " configs with identical integer counts");
  }
  return o;
}

// ---- 5: evaluation oracle --------------------------------------------------

Outcome eval_oracle() {
  Outcome o;
  Rng rng(5);
  std::size_t compared = 0, agree = 0, with_corrections = 0;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const oracle::RandomInstance inst = oracle::random_instance(rng, 10, 30);
    std::vector<EvalDataset> sets{inst.dataset};
    if (!inst.corrections.empty()) {
      sets.push_back(apply_corrections(inst.dataset, inst.corrections));
      ++with_corrections;
    }
    for (const EvalDataset& d : sets) {
      for (Protocol p : {Protocol::old_protocol, Protocol::new_protocol}) {
        const EvalResult got = evaluate(d, p);
        const oracle::EvalTotals want = oracle::brute_force_eval(d, p == Protocol::new_protocol);
        double e = std::abs(got.mAP - want.mAP);
        for (std::size_t k = 0; k < want.cmc.size(); ++k) e = std::max(e, std::abs(got.cmc[k] - want.cmc[k]));
        for (std::size_t q = 0; q < want.ap.size(); ++q) {
          const bool excluded = want.ap[q] < 0;
          if (excluded != !got.ap[q].has_value()) e = 1.0;
          if (!excluded && got.ap[q]) e = std::max(e, std::abs(*got.ap[q] - want.ap[q]));
        }
        e = got.excluded == want.excluded ? e : 1.0;
        worst = std::max(worst, e);
        ++compared;
        agree += e <= 1e-12;
      }
    }
  }
  o.passed = agree == compared;
  std::ostringstream s;
  s << "100 instances (" << with_corrections << " with corrections), " << compared
    << " protocol/label evaluations, " << agree << " agree; largest difference "
    << std::scientific << std::setprecision(2) << worst << " (tolerance 1e-12)";
  o.details.push_back(s.str());
  return o;
}

// ---- 6: duplicate distractor -------------------------------------------------

Outcome duplicate_distractor() {
  Outcome o;
  const std::filesystem::path dir = std::filesystem::path(CFAAN_SOURCE_DIR) / "data/fixtures/duplicate_distractor";
  const MetaFile meta = load_meta_file(dir / "meta.txt");
  const EvalDataset d{meta.query, meta.gallery, load_tensor(dir / "distances.aakt")};
  const ProtocolDeltaReport r = protocol_delta_report(d, load_corrections(dir / "corrections.txt"));
  // By hand: the same-camera distractor copy ranks first, so the old protocol
  // sees the true match at rank 2 (AP 1/2); the new protocol drops the copy (AP 1).
  const double old_ap = *r.old_corrected.ap[0], new_ap = *r.new_corrected.ap[0];
  o.passed = std::abs(old_ap - 0.5) <= 1e-12 && std::abs(new_ap - 1.0) <= 1e-12 && new_ap > old_ap;
  o.details.push_back("affected query AP: old protocol " + format_fixed(old_ap, 4) +
                      " (expected 0.5000), new protocol " + format_fixed(new_ap, 4) +
                      " (expected 1.0000)");
  o.details.push_back("rank-1: old " + format_fixed(r.old_corrected.cmc_at(1), 4) + ", new " +
                      format_fixed(r.new_corrected.cmc_at(1), 4));
  return o;
}

// ---- 7: linking robustness ---------------------------------------------------

Outcome linking() {
  Outcome o;
  std::size_t follows = 0, ema_ok = 0;
  double worst_sum = 0.0, worst_recon = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const SceneScript scene = occluder_scene(rng);
    const auto det = synthetic_detector(scene, rng);
    std::vector<std::vector<CandidateBox>> cands;
    for (const auto& f : det) cands.push_back(f.candidates);
    const TrackletAlignment a = process_tracklet(render_scene(scene), cands);

    bool same = a.chosen[0].has_value();
    std::vector<const std::vector<double>*> folded;
    if (same) {
      const std::size_t target = det[0].truth[*a.chosen[0]];
      for (std::size_t k = 0; k < det.size(); ++k) {
        if (!a.chosen[k]) continue;
        folded.push_back(&det[k].candidates[*a.chosen[k]].feature);
        same = same && det[k].truth[*a.chosen[k]] == target;
      }
    }
    follows += same;

    // f_g must equal the weighted sum of every folded feature, weights summing to 1.
    const LinkState& s = a.state;
    double sum = 0.0;
    for (double w : s.weights) sum += w;
    double recon = 0.0;
    if (folded.size() == s.weights.size()) {
      for (std::size_t j = 0; j < s.f_g.size(); ++j) {
        double v = 0.0;
        for (std::size_t k = 0; k < folded.size(); ++k) v += s.weights[k] * (*folded[k])[j];
        recon = std::max(recon, std::abs(v - s.f_g[j]));
      }
    } else {
      recon = 1.0;
    }
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    worst_recon = std::max(worst_recon, recon);
    const bool convex = std::all_of(s.weights.begin(), s.weights.end(), [](double w) { return w >= 0; });
    ema_ok += convex && std::abs(sum - 1.0) <= 1e-12 && recon <= 1e-12;
  }
  o.passed = follows >= 99 && ema_ok == 100;
  o.details.push_back("track follows the frame-1 identity in " + std::to_string(follows) +
                      "/100 trials (required 99)");
  std::ostringstream s;
  s << "EMA weights non-negative, summing to 1 and reproducing f_g in " << ema_ok
    << "/100 trials; largest |sum - 1| " << std::scientific << std::setprecision(2) << worst_sum
    << ", largest reconstruction error " << worst_recon << " (rounding bound 1e-12)";
  o.details.push_back(s.str());
  return o;
}

// ---- 8: masked aggregation -------------------------------------------------

Outcome mask_invariance() {
  Outcome o;
  ToyModelSpec spec;
  spec.num_classes = 4;
  Rng init(8);
  const ToyModel model = init_toy_model(spec, init);
  std::size_t tracklets = 0, unchanged = 0, padded_pixels = 0;
  auto check = [&](const ToyTracklet& t, std::uint64_t seed) {
    ToyTracklet noisy = t;
    Rng noise(seed);
    const std::size_t HW = t.mask.height * t.mask.width;
    for (std::size_t k = 0; k < t.length(); ++k)
      for (std::size_t i = 0; i < HW; ++i)
        if (!t.mask.valid[k * HW + i]) {
          ++padded_pixels;
          for (std::size_t c = 0; c < 3; ++c) noisy.frames[k][c * HW + i] = noise.normal(0, 100);
        }
    ++tracklets;
    unchanged += tracklet_feature(model, noisy) == tracklet_feature(model, t);
  };

  // Tracklets whose masks come from the detect-and-link crop normalisation.
  NormalizeOptions norm;
  norm.out_h = spec.height;
  norm.out_w = spec.width;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const SceneScript scene = occluder_scene(rng);
    const auto det = synthetic_detector(scene, rng);
    std::vector<std::vector<CandidateBox>> cands;
    for (const auto& f : det) cands.push_back(f.candidates);
    const TrackletAlignment a = process_tracklet(render_scene(scene), cands, 0.9, norm);
    ToyTracklet t;
    Tensor masks({a.frames.size(), spec.height, spec.width});
    for (std::size_t k = 0; k < a.frames.size(); ++k) {
      t.frames.push_back(a.frames[k].image);
      for (std::size_t i = 0; i < spec.height * spec.width; ++i) {
        masks[k * spec.height * spec.width + i] = a.frames[k].mask[i];
      }
    }
    t.mask = ValidityMask::from_tensor(masks);
    t.flipped.assign(t.frames.size(), false);
    check(t, seed);
  }
  // Padded synthetic tracklets.
  ToyDataConfig dc;
  dc.identities = 4;
  dc.train_tracklets = 3;
  dc.padding_prob = 1.0;
  dc.seed = 8;
  const ToyDataset data = generate_toy_dataset(dc);
  for (const auto& t : data.train) check(t, t.id);

  o.passed = unchanged == tracklets && padded_pixels > 0;
  o.details.push_back(std::to_string(unchanged) + "/" + std::to_string(tracklets) +
                      " tracklets with bitwise-identical f_pre after replacing " +
                      std::to_string(padded_pixels) + " padded pixels by N(0, 100^2) noise");
  return o;
}

// ---- 9: toy end-to-end -----------------------------------------------------

Outcome toy_training() {
  Outcome o;
  o.passed = true;
  double att_sum = 0.0, base_sum = 0.0;
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  for (std::uint64_t seed : seeds) {
    DemoConfig c;
    c.data.seed = seed;
    c.train.seed = seed;
    c.chance_trials = 10;
    const DemoReport r = run_demo(c);
    const double r1 = r.attention.retrieval.cmc_at(1);
    const double b1 = r.baseline->retrieval.cmc_at(1);
    att_sum += r1;
    base_sum += b1;
    const bool ok = r.loss_drop >= 0.5 && r1 >= 0.9;
    o.passed = o.passed && ok;
    std::ostringstream s;
    s << "seed " << seed << ": loss " << format_fixed(r.attention.training.epoch_loss.front(), 3)
      << " -> " << format_fixed(r.attention.training.epoch_loss.back(), 3) << " (drop "
      << pct(r.loss_drop) << ", required 50%), rank-1 " << format_fixed(r1, 3) << " mAP "
      << format_fixed(r.attention.retrieval.mAP, 3) << " (required rank-1 0.9); baseline rank-1 "
      << format_fixed(b1, 3) << "; untrained rank-1 " << format_fixed(r.chance.rank1_mean, 3)
      << " +- " << format_fixed(r.chance.rank1_std, 3) << " over " << r.chance.trials
      << " inits, random ranking " << format_fixed(r.chance.uniform_rank1, 3);
    o.details.push_back(s.str());
  }
  const double n = double(seeds.size());
  o.passed = o.passed && att_sum >= base_sum;
  o.details.push_back("mean rank-1 over seeds: CF-AA " + format_fixed(att_sum / n, 3) +
                      ", no-attention baseline " + format_fixed(base_sum / n, 3) +
                      " (required CF-AA >= baseline)");
  return o;
}

// ---- 10: scope statement ---------------------------------------------------

Outcome scope_statement() {
  Outcome o;
  const std::string statement =
      "Accuracy on the MARS and DukeV benchmarks (86.5 mAP / 91.3 rank-1) is NOT reproduced; "
      "acceptance rests on criteria 1-9.";
  std::ifstream readme(std::filesystem::path(CFAAN_SOURCE_DIR) / "README.md");
  const std::string text{std::istreambuf_iterator<char>(readme), {}};
  const bool documented = text.find("NOT reproduced") != std::string::npos &&
                          text.find("86.5") != std::string::npos &&
                          text.find("91.3") != std::string::npos;
  o.passed = documented;
  o.details.push_back(statement);
  o.details.push_back(std::string("README carries the statement: ") + (documented ? "yes" : "no"));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::stoi(argv[i]));

  const std::vector<Criterion> criteria{
      {1, "attention cost ablation FLOPs", 1.0, flop_ablation},
      {2, "full-model FLOP totals", 1.0, flop_models},
      {3, "finite-difference gradient checks", 120.0, gradients},
      {4, "instrumented kernel counts equal analytic counts", 10.0, kernel_counts},
      {5, "evaluation equals brute-force oracle", 30.0, eval_oracle},
      {6, "duplicate-distractor protocol revision", 1.0, duplicate_distractor},
      {7, "detect-and-link robustness and EMA invariant", 30.0, linking},
      {8, "padded pixels leave f_pre unchanged", 10.0, mask_invariance},
      {9, "toy end-to-end training and retrieval", 900.0, toy_training},
      {10, "benchmark accuracy scope statement", 1.0, scope_statement},
  };

  bool all = true;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.number) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.passed = false;
      o.details.push_back(std::string("exception: ") + e.what());
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds <= c.budget_seconds;
    const bool ok = o.passed && in_time;
    all = all && ok;
    std::cout << "criterion " << c.number << ": " << (ok ? "PASS" : "FAIL")
              << (o.note.empty() ? "" : " (" + o.note + ")") << "  " << c.title
              << "  [" << format_fixed(seconds, 2) << " s of " << format_fixed(c.budget_seconds, 0)
              << " s" << (in_time ? "" : ", OVER BUDGET") << "]\n";
    for (const auto& d : o.details) std::cout << "    " << d << '\n';
    std::cout.flush();
  }
  return all ? 0 : 1;
}
