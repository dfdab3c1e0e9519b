#include "cfaan/reid_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "cfaan/errors.hpp"

namespace cfaan {

namespace {

bool contains(const std::vector<std::uint64_t>& v, std::uint64_t x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

void add_unique(std::vector<std::uint64_t>& v, std::uint64_t x) {
  if (!contains(v, x)) v.push_back(x);
}

}  // namespace

void EvalDataset::validate() const {
  if (query.empty() || gallery.empty()) throw ValidationError("dataset needs queries and gallery");
  if (distances.rank() != 2 || distances.dim(0) != query.size() ||
      distances.dim(1) != gallery.size()) {
    throw DimensionError("distance matrix is " + shape_string(distances.shape()) + ", expected " +
                         shape_string({query.size(), gallery.size()}));
  }
  ensure_finite(distances, "distance matrix");
  for (const auto* side : {&query, &gallery}) {
    for (const auto& m : *side) {
      if (contains(m.ambiguous, m.identity)) {
        throw ValidationError("tracklet " + std::to_string(m.tracklet) +
                              " lists its own identity as ambiguous");
      }
    }
  }
}

// ---- corrections -----------------------------------------------------------

std::vector<std::string> LabelCorrections::conflicts() const {
  std::vector<std::string> out;
  std::map<std::uint64_t, std::uint64_t> target;
  for (const auto& r : relabels) {
    auto [it, fresh] = target.emplace(r.tracklet, r.identity);
    if (!fresh && it->second != r.identity) {
      out.push_back("tracklet " + std::to_string(r.tracklet) + " relabelled to both " +
                    std::to_string(it->second) + " and " + std::to_string(r.identity));
    }
  }
  for (const auto& a : ambiguities) {
    auto it = target.find(a.tracklet);
    if (it != target.end() && it->second == a.identity) {
      out.push_back("tracklet " + std::to_string(a.tracklet) + " relabelled to " +
                    std::to_string(a.identity) + " and also given it as an ambiguous identity");
    }
    if (a.identity == 0) {
      out.push_back("tracklet " + std::to_string(a.tracklet) +
                    " given the distractor label as an ambiguous identity");
    }
  }
  for (const auto& d : duplicates) {
    if (d.a == d.b) out.push_back("tracklet " + std::to_string(d.a) + " marked as its own duplicate");
  }
  return out;
}

LabelCorrections read_corrections(std::istream& is) {
  LabelCorrections c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind) || kind[0] == '#') continue;
    auto fail = [&](const std::string& msg) {
      throw ValidationError("corrections line " + std::to_string(line_no) + ": " + msg);
    };
    std::uint64_t a = 0, b = 0;
    std::string extra;
    if (kind == "VERSION") {
      if (!(ls >> a) || (ls >> extra)) fail("expected 'VERSION n'");
      if (c.version && a < *c.version) fail("versions must not decrease");
      c.version = a;
      continue;
    }
    if (!(ls >> a >> b) || (ls >> extra)) fail("expected '" + kind + " <a> <b>'");
    if (kind == "RELABEL") {
      c.relabels.push_back({a, b});
    } else if (kind == "AMBIG") {
      c.ambiguities.push_back({a, b});
    } else if (kind == "DUPDIST") {
      c.duplicates.push_back({a, b});
    } else {
      fail("unknown record '" + kind + "'");
    }
  }
  return c;
}

LabelCorrections load_corrections(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open corrections file " + path.string());
  return read_corrections(is);
}

EvalDataset apply_corrections(const EvalDataset& dataset, const LabelCorrections& corrections) {
  std::vector<std::string> problems = corrections.conflicts();
  std::set<std::uint64_t> known;
  for (const auto* side : {&dataset.query, &dataset.gallery})
    for (const auto& m : *side) known.insert(m.tracklet);
  auto check_known = [&](std::uint64_t tid, const char* kind) {
    if (!known.count(tid)) {
      problems.push_back(std::string(kind) + " refers to unknown tracklet " + std::to_string(tid));
    }
  };
  for (const auto& r : corrections.relabels) check_known(r.tracklet, "RELABEL");
  for (const auto& a : corrections.ambiguities) check_known(a.tracklet, "AMBIG");
  for (const auto& d : corrections.duplicates) {
    check_known(d.a, "DUPDIST");
    check_known(d.b, "DUPDIST");
  }

  EvalDataset out = dataset;
  for (auto* side : {&out.query, &out.gallery}) {
    for (auto& m : *side) {
      for (const auto& r : corrections.relabels) {
        if (r.tracklet == m.tracklet) m.identity = r.identity;
      }
      for (const auto& a : corrections.ambiguities) {
        if (a.tracklet == m.tracklet) add_unique(m.ambiguous, a.identity);
      }
      for (const auto& d : corrections.duplicates) {
        if (d.a == m.tracklet) add_unique(m.duplicates, d.b);
        if (d.b == m.tracklet) add_unique(m.duplicates, d.a);
      }
      if (contains(m.ambiguous, m.identity)) {
        problems.push_back("tracklet " + std::to_string(m.tracklet) + " would list its identity " +
                           std::to_string(m.identity) + " as ambiguous");
      }
    }
  }
  if (!problems.empty()) {
    std::string msg = "conflicting corrections:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
  return out;
}

// ---- evaluation ------------------------------------------------------------

std::string to_string(Protocol p) { return p == Protocol::old_protocol ? "old" : "new"; }

Protocol parse_protocol(const std::string& text) {
  if (text == "old") return Protocol::old_protocol;
  if (text == "new") return Protocol::new_protocol;
  throw ConfigError("unknown protocol '" + text + "' (expected old or new)");
}

bool is_primary_match(const TrackletMeta& q, const TrackletMeta& g) {
  return g.identity != 0 && q.identity == g.identity;
}

bool is_match(const TrackletMeta& q, const TrackletMeta& g) {
  if (g.identity == 0) return false;
  if (q.identity == g.identity) return true;
  if (contains(q.ambiguous, g.identity)) return true;
  return q.identity != 0 && contains(g.ambiguous, q.identity);
}

bool is_ignored(const TrackletMeta& q, const TrackletMeta& g, Protocol protocol) {
  if (q.camera != g.camera) return false;
  if (q.identity == g.identity) return true;
  if (protocol == Protocol::old_protocol) return false;
  return contains(g.duplicates, q.tracklet) || contains(q.duplicates, g.tracklet);
}

double EvalResult::cmc_at(std::size_t k) const {
  if (k == 0 || cmc.empty()) throw ConfigError("CMC rank must be >= 1");
  return cmc[std::min(k, cmc.size()) - 1];
}

EvalResult evaluate(const EvalDataset& dataset, Protocol protocol, AmbiguityMode ambiguity) {
  dataset.validate();
  const std::size_t Q = dataset.query.size(), G = dataset.gallery.size();
  EvalResult r;
  r.cmc.assign(G, 0.0);
  r.ap.assign(Q, std::nullopt);
  std::vector<std::size_t> first_hit_counts(G, 0);
  double ap_sum = 0.0;
  std::vector<std::size_t> order(G);
  for (std::size_t q = 0; q < Q; ++q) {
    const TrackletMeta& qm = dataset.query[q];
    const double* d = &dataset.distances[q * G];
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
    std::size_t rank = 0, hits = 0, first_hit = 0;
    double precision_sum = 0.0;
    for (std::size_t g : order) {
      const TrackletMeta& gm = dataset.gallery[g];
      if (is_ignored(qm, gm, protocol)) continue;
      const bool match = is_match(qm, gm);
      if (match && ambiguity == AmbiguityMode::ignored && !is_primary_match(qm, gm)) continue;
      ++rank;
      if (match) {
        ++hits;
        if (hits == 1) first_hit = rank;
        precision_sum += static_cast<double>(hits) / static_cast<double>(rank);
      }
    }
    if (hits == 0) {
      ++r.excluded;
      continue;
    }
    const double ap = precision_sum / static_cast<double>(hits);
    r.ap[q] = ap;
    ap_sum += ap;
    ++r.evaluated;
    ++first_hit_counts[first_hit - 1];
  }
  if (r.evaluated > 0) {
    r.mAP = ap_sum / static_cast<double>(r.evaluated);
    std::size_t cumulative = 0;
    for (std::size_t k = 0; k < G; ++k) {
      cumulative += first_hit_counts[k];
      r.cmc[k] = static_cast<double>(cumulative) / static_cast<double>(r.evaluated);
    }
  }
  return r;
}

EvalComparison compare(const EvalResult& a, const EvalResult& b) {
  if (a.ap.size() != b.ap.size()) throw DimensionError("compared results differ in query count");
  EvalComparison c;
  c.map_delta = b.mAP - a.mAP;
  c.rank1_delta = (b.cmc.empty() ? 0.0 : b.cmc[0]) - (a.cmc.empty() ? 0.0 : a.cmc[0]);
  for (std::size_t q = 0; q < a.ap.size(); ++q) {
    if (a.ap[q] && b.ap[q]) {
      c.ap_delta.push_back(*b.ap[q] - *a.ap[q]);
    } else {
      c.ap_delta.push_back(std::nullopt);
    }
  }
  return c;
}

ProtocolDeltaReport protocol_delta_report(const EvalDataset& dataset,
                                          const LabelCorrections& corrections) {
  ProtocolDeltaReport r;
  const EvalDataset corrected = apply_corrections(dataset, corrections);
  r.old_plain = evaluate(dataset, Protocol::old_protocol);
  r.old_corrected = evaluate(corrected, Protocol::old_protocol);
  r.new_corrected = evaluate(corrected, Protocol::new_protocol);
  r.corrections_effect = compare(r.old_plain, r.old_corrected);
  r.protocol_effect = compare(r.old_corrected, r.new_corrected);
  r.total = compare(r.old_plain, r.new_corrected);
  r.new_ambiguity_ignored = evaluate(corrected, Protocol::new_protocol, AmbiguityMode::ignored);
  return r;
}

// ---- metadata file ---------------------------------------------------------

MetaFile read_meta_file(std::istream& is) {
  MetaFile meta;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string role;
    if (!(ls >> role) || role[0] == '#') continue;
    auto fail = [&](const std::string& msg) {
      throw ValidationError("metadata line " + std::to_string(line_no) + ": " + msg);
    };
    TrackletMeta m;
    if (!(ls >> m.tracklet >> m.identity >> m.camera)) {
      fail("expected 'role tracklet identity camera [ambiguous ids]'");
    }
    std::string amb, extra;
    if (ls >> amb) {
      if (ls >> extra) fail("too many fields");
      if (amb != "-") {
        std::istringstream as(amb);
        std::string item;
        while (std::getline(as, item, ',')) {
          try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            add_unique(m.ambiguous, v);
          } catch (const std::exception&) {
            fail("bad ambiguous identity '" + item + "'");
          }
        }
      }
    }
    if (contains(m.ambiguous, m.identity)) fail("ambiguous ids repeat the primary identity");
    if (role == "query") {
      meta.query.push_back(std::move(m));
    } else if (role == "gallery") {
      meta.gallery.push_back(std::move(m));
    } else {
      fail("role must be query or gallery, got '" + role + "'");
    }
  }
  return meta;
}

MetaFile load_meta_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open metadata file " + path.string());
  return read_meta_file(is);
}

void write_meta_file(std::ostream& os, const MetaFile& meta) {
  auto emit = [&](const char* role, const TrackletMeta& m) {
    os << role << ' ' << m.tracklet << ' ' << m.identity << ' ' << m.camera;
    if (!m.ambiguous.empty()) {
      os << ' ';
      for (std::size_t i = 0; i < m.ambiguous.size(); ++i) os << (i ? "," : "") << m.ambiguous[i];
    }
    os << '\n';
  };
  for (const auto& m : meta.query) emit("query", m);
  for (const auto& m : meta.gallery) emit("gallery", m);
}

}  // namespace cfaan
