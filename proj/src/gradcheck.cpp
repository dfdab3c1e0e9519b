#include "cfaan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cfaan/aggregation.hpp"
#include "cfaan/attention.hpp"
#include "cfaan/errors.hpp"
#include "cfaan/rng.hpp"

namespace cfaan {

void GradcheckOptions::validate() const {
  if (seeds == 0) throw ConfigError("gradcheck needs at least one seed");
  if (!(tolerance > 0) || !(step > 0) || !(floor > 0)) {
    throw ConfigError("gradcheck tolerance, step and floor must be positive");
  }
  for (const auto& s : suites) {
    const auto& all = gradcheck_suites();
    if (std::find(all.begin(), all.end(), s) == all.end()) {
      throw ConfigError("unknown gradcheck suite '" + s + "'");
    }
  }
}

const std::vector<std::string>& gradcheck_suites() {
  static const std::vector<std::string> names{"nonlocal", "axial",   "axial_ps",
                                              "cfaa",     "triplet", "cross_entropy"};
  return names;
}

bool GradcheckReport::passed() const {
  return !cases.empty() &&
         std::all_of(cases.begin(), cases.end(), [](const GradcheckCase& c) { return c.passed; });
}

const GradcheckCase& GradcheckReport::worst() const {
  if (cases.empty()) throw ValidationError("empty gradcheck report");
  return *std::max_element(cases.begin(), cases.end(), [](const auto& a, const auto& b) {
    return a.worst_error < b.worst_error;
  });
}

Tensor finite_difference(Tensor& t, const std::function<double()>& loss, double step) {
  Tensor g(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double keep = t[i];
    t[i] = keep + step;
    const double up = loss();
    t[i] = keep - step;
    const double down = loss();
    t[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor,
                          std::size_t* where) {
  if (!analytic.same_shape(numeric)) throw DimensionError("gradient shapes differ");
  double worst = 0.0;
  std::size_t at = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    const double e = std::abs(analytic[i] - numeric[i]) / denom;
    if (e > worst || std::isnan(e)) {
      worst = e;
      at = i;
    }
  }
  if (where) *where = at;
  return worst;
}

namespace {

struct Checked {
  std::string name;
  Tensor* value;     // perturbed in place by the finite differences
  Tensor analytic;
};

GradcheckCase check(const GradcheckOptions& o, std::string suite, std::uint64_t seed,
                    std::string config, std::vector<Checked> tensors,
                    const std::function<double()>& loss) {
  GradcheckCase c{std::move(suite), seed, std::move(config)};
  if (o.perturb_analytic && !tensors.empty()) {
    double& v = tensors[0].analytic[0];
    v += 1e-2 * std::max(1.0, std::abs(v));
  }
  for (auto& t : tensors) {
    const Tensor numeric = finite_difference(*t.value, loss, o.step);
    std::size_t at = 0;
    const double e = max_relative_error(t.analytic, numeric, o.floor, &at);
    c.checked += numeric.size();
    if (e > c.worst_error || c.worst_tensor.empty()) {
      c.worst_error = e;
      c.worst_tensor = t.name;
      c.worst_index = at;
    }
  }
  c.passed = c.worst_error <= o.tolerance;
  return c;
}

template <typename Params>
void add_params(std::vector<Checked>& out, Params& p, Params& grads) {
  std::vector<std::pair<std::string, Tensor*>> values;
  for_each_tensor(p, "", [&](const std::string& n, Tensor& t) { values.emplace_back(n, &t); });
  std::size_t i = 0;
  for_each_tensor(grads, "", [&](const std::string&, Tensor& t) {
    out.push_back({values[i].first, values[i].second, t});
    ++i;
  });
}

std::string shape_of(const Tensor& x) { return shape_string(x.shape()); }

GradcheckCase nonlocal_case(const GradcheckOptions& o, std::uint64_t seed, std::size_t i) {
  Rng rng(seed);
  const std::size_t heads = 1 + i % 2, C = 2 + i % 2;
  Tensor x = random_uniform({C, 2, 2 + i % 2, 2}, -1, 1, rng);
  NonLocalParams p = init_nonlocal_params(C, 2, 2, rng);
  const Tensor probe = random_uniform(x.shape(), -1, 1, rng);
  auto loss = [&] { return dot(nonlocal_3d_forward(x, p, heads), probe); };
  NonLocalGradients g = nonlocal_3d_backward(x, p, probe, heads);
  std::vector<Checked> t{{"input", &x, g.input}};
  add_params(t, p, g.params);
  return check(o, "nonlocal", seed, "x=" + shape_of(x) + " heads=" + std::to_string(heads),
               std::move(t), loss);
}

GradcheckCase axial_case(const GradcheckOptions& o, std::uint64_t seed, std::size_t i) {
  Rng rng(seed);
  const Axis axis = static_cast<Axis>(i % 3);
  const LayerOptions opts{1 + i % 2, i % 2 ? Encoding::sinusoidal : Encoding::none};
  Tensor x = random_uniform({2, 3, 3, 2}, -1, 1, rng);
  AttentionLayerParams p = init_layer_params(2, 4, 2, opts, 0, rng);
  const Tensor probe = random_uniform({2, 3, 3, 2}, -1, 1, rng);
  auto loss = [&] { return dot(axial_forward(x, p, axis, opts), probe); };
  LayerGradients g = axial_backward(x, p, axis, opts, probe);
  std::vector<Checked> t{{"input", &x, g.input}};
  add_params(t, p, g.params);
  return check(o, "axial", seed,
               "x=" + shape_of(x) + " axis=" + to_string(axis) + " heads=" +
                   std::to_string(opts.heads) + " encoding=" + to_string(opts.encoding),
               std::move(t), loss);
}

GradcheckCase axial_ps_case(const GradcheckOptions& o, std::uint64_t seed, std::size_t i) {
  Rng rng(seed);
  const Axis axis = static_cast<Axis>(i % 3);
  const std::size_t heads = 1 + i % 2;
  Tensor x = random_uniform({2, 3, 4, 2}, -1, 1, rng);
  const std::size_t L = axis == Axis::T ? 3 : (axis == Axis::H ? 4 : 2);
  AttentionLayerParams p = init_layer_params(2, 4, 2, {heads, Encoding::relative}, L, rng);
  const Tensor probe = random_uniform({2, 3, 4, 2}, -1, 1, rng);
  auto loss = [&] { return dot(axial_ps_forward(x, p, axis, heads), probe); };
  LayerGradients g = axial_ps_backward(x, p, axis, heads, probe);
  std::vector<Checked> t{{"input", &x, g.input}};
  add_params(t, p, g.params);
  return check(o, "axial_ps", seed,
               "x=" + shape_of(x) + " axis=" + to_string(axis) + " heads=" + std::to_string(heads),
               std::move(t), loss);
}

GradcheckCase cfaa_case(const GradcheckOptions& o, std::uint64_t seed, std::size_t i) {
  Rng rng(seed);
  AttentionConfig c;
  c.scales = 1 + i % 3;
  c.heads = 1 + (i / 3) % 2;
  c.encoding = static_cast<Encoding>((i + 2) % 3);
  c.c_in = 2 * c.scales;
  c.c_qk = 2 * c.scales * c.heads;
  c.c_out = c.scales * c.heads;
  c.frames = 2;
  c.height = c.scales == 3 ? 4 : 3;
  c.width = c.scales == 3 ? 4 : 2;
  Tensor x = random_uniform({c.c_in, c.frames, c.height, c.width}, -1, 1, rng);
  CfaaParams p = init_cfaa_params(c, rng);
  const Tensor probe = random_uniform(x.shape(), -1, 1, rng);
  auto loss = [&] { return dot(cfaa_forward(x, p, c), probe); };
  CfaaGradients g = cfaa_backward(x, p, c, probe);
  std::vector<Checked> t{{"input", &x, g.input}};
  add_params(t, p, g.params);
  return check(o, "cfaa", seed,
               "x=" + shape_of(x) + " scales=" + std::to_string(c.scales) + " heads=" +
                   std::to_string(c.heads) + " encoding=" + to_string(c.encoding),
               std::move(t), loss);
}

GradcheckCase triplet_case(const GradcheckOptions& o, std::uint64_t seed, std::size_t i) {
  Rng rng(seed);
  const std::size_t P = 2 + i % 3, K = 2 + i % 2, C = 3;
  BatchLabels labels;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k < K; ++k) labels.identity.push_back(p);
  Tensor f = random_normal({P * K, C}, 1.0, rng);
  const double margin = 0.3 + 0.5 * double(i % 2);
  auto loss = [&] { return batch_hard_triplet(f, labels, margin).loss; };
  const LossResult r = batch_hard_triplet(f, labels, margin);
  std::ostringstream cfg;
  cfg << "P=" << P << " K=" << K << " C=" << C << " margin=" << margin;
  return check(o, "triplet", seed, cfg.str(), {{"features", &f, r.grad}}, loss);
}

GradcheckCase cross_entropy_case(const GradcheckOptions& o, std::uint64_t seed, std::size_t i) {
  Rng rng(seed);
  const std::size_t B = 5, classes = 3 + i % 3;
  Tensor logits = random_normal({B, classes}, 2.0, rng);
  std::vector<std::size_t> labels;
  for (std::size_t b = 0; b < B; ++b) labels.push_back(rng.index(classes));
  auto loss = [&] { return cross_entropy(logits, labels).loss; };
  const LossResult r = cross_entropy(logits, labels);
  return check(o, "cross_entropy", seed,
               "B=" + std::to_string(B) + " classes=" + std::to_string(classes),
               {{"logits", &logits, r.grad}}, loss);
}

}  // namespace

GradcheckReport run_gradchecks(const GradcheckOptions& options) {
  options.validate();
  GradcheckReport report;
  report.options = options;
  for (const auto& suite : gradcheck_suites()) {
    if (!options.suites.empty() &&
        std::find(options.suites.begin(), options.suites.end(), suite) == options.suites.end()) {
      continue;
    }
    for (std::size_t i = 0; i < options.seeds; ++i) {
      const std::uint64_t seed = options.seed + i;
      if (suite == "nonlocal") report.cases.push_back(nonlocal_case(options, seed, i));
      if (suite == "axial") report.cases.push_back(axial_case(options, seed, i));
      if (suite == "axial_ps") report.cases.push_back(axial_ps_case(options, seed, i));
      if (suite == "cfaa") report.cases.push_back(cfaa_case(options, seed, i));
      if (suite == "triplet") report.cases.push_back(triplet_case(options, seed, i));
      if (suite == "cross_entropy") report.cases.push_back(cross_entropy_case(options, seed, i));
    }
  }
  return report;
}

}  // namespace cfaan
