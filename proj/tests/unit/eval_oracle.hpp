#pragma once

// Brute-force CMC/mAP reference and random instance generator. The oracle
// never sorts: the rank of an entry is the number of kept entries that come
// before it under the (distance, gallery index) order.

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

#include "cfaan/reid_eval.hpp"
#include "cfaan/rng.hpp"

namespace oracle {

struct EvalTotals {
  double mAP = 0.0;
  std::vector<double> cmc;
  std::vector<double> ap;  // -1 for excluded queries
  std::size_t excluded = 0;
};

inline bool has(const std::vector<std::uint64_t>& v, std::uint64_t x) {
  for (auto e : v)
    if (e == x) return true;
  return false;
}

inline EvalTotals brute_force_eval(const cfaan::EvalDataset& d, bool new_protocol) {
  const std::size_t Q = d.query.size(), G = d.gallery.size();
  EvalTotals out;
  out.cmc.assign(G, 0.0);
  std::size_t evaluated = 0;
  double ap_total = 0.0;
  for (std::size_t q = 0; q < Q; ++q) {
    const auto& qm = d.query[q];
    std::vector<bool> keep(G), pos(G);
    for (std::size_t g = 0; g < G; ++g) {
      const auto& gm = d.gallery[g];
      const bool same_cam = qm.camera == gm.camera;
      bool drop = same_cam && qm.identity == gm.identity;
      if (new_protocol && same_cam &&
          (has(gm.duplicates, qm.tracklet) || has(qm.duplicates, gm.tracklet)))
        drop = true;
      keep[g] = !drop;
      pos[g] = gm.identity != 0 && (gm.identity == qm.identity || has(qm.ambiguous, gm.identity) ||
                                    (qm.identity != 0 && has(gm.ambiguous, qm.identity)));
    }
    auto before = [&](std::size_t a, std::size_t b) {
      const double da = d.distances[q * G + a], db = d.distances[q * G + b];
      return da < db || (da == db && a < b);
    };
    double sum = 0.0;
    std::size_t npos = 0, best_rank = G + 1;
    for (std::size_t g = 0; g < G; ++g) {
      if (!keep[g] || !pos[g]) continue;
      std::size_t rank = 1, hits = 1;
      for (std::size_t o = 0; o < G; ++o) {
        if (o == g || !keep[o] || !before(o, g)) continue;
        ++rank;
        if (pos[o]) ++hits;
      }
      sum += double(hits) / double(rank);
      ++npos;
      best_rank = std::min(best_rank, rank);
    }
    if (npos == 0) {
      out.ap.push_back(-1.0);
      ++out.excluded;
      continue;
    }
    out.ap.push_back(sum / double(npos));
    ap_total += sum / double(npos);
    ++evaluated;
    for (std::size_t k = best_rank; k <= G; ++k) out.cmc[k - 1] += 1.0;
  }
  if (evaluated) {
    out.mAP = ap_total / double(evaluated);
    for (auto& c : out.cmc) c /= double(evaluated);
  }
  return out;
}

struct RandomInstance {
  cfaan::EvalDataset dataset;
  cfaan::LabelCorrections corrections;
};

// Small identity and camera pools so same-camera, distractor, ambiguous and
// tied-distance cases all occur. Corrections are consistent by construction.
inline RandomInstance random_instance(cfaan::Rng& rng, std::size_t max_q = 10,
                                      std::size_t max_g = 30) {
  RandomInstance inst;
  auto& d = inst.dataset;
  const std::size_t Q = 1 + rng.index(max_q), G = 1 + rng.index(max_g);
  std::uint64_t next_tid = 1;
  auto make = [&]() {
    cfaan::TrackletMeta m;
    m.tracklet = next_tid++;
    m.identity = rng.index(6);
    m.camera = 1 + rng.index(3);
    if (rng.uniform() < 0.15) {
      const std::uint64_t a = 1 + rng.index(6);
      if (a != m.identity) m.ambiguous.push_back(a);
    }
    return m;
  };
  for (std::size_t i = 0; i < Q; ++i) d.query.push_back(make());
  for (std::size_t i = 0; i < G; ++i) d.gallery.push_back(make());
  d.distances = cfaan::Tensor({Q, G});
  for (std::size_t i = 0; i < Q * G; ++i) d.distances[i] = double(rng.index(12)) / 4.0;

  if (rng.uniform() < 0.5) return inst;
  auto& c = inst.corrections;
  c.version = 1;
  std::vector<cfaan::TrackletMeta*> all;
  for (auto& m : d.query) all.push_back(&m);
  for (auto& m : d.gallery) all.push_back(&m);
  std::set<std::uint64_t> relabelled;
  std::vector<std::uint64_t> final_id(next_tid);
  for (auto* m : all) final_id[m->tracklet] = m->identity;
  for (int i = 0, n = int(rng.index(4)); i < n; ++i) {
    auto* m = all[rng.index(all.size())];
    if (!relabelled.insert(m->tracklet).second) continue;
    const std::uint64_t id = rng.index(7);
    if (has(m->ambiguous, id)) continue;
    c.relabels.push_back({m->tracklet, id});
    final_id[m->tracklet] = id;
  }
  for (int i = 0, n = int(rng.index(4)); i < n; ++i) {
    auto* m = all[rng.index(all.size())];
    const std::uint64_t id = 1 + rng.index(6);
    if (id == final_id[m->tracklet]) continue;
    c.ambiguities.push_back({m->tracklet, id});
  }
  for (int i = 0, n = int(rng.index(5)); i < n; ++i) {
    const auto& q = d.query[rng.index(Q)];
    const auto& g = d.gallery[rng.index(G)];
    c.duplicates.push_back({q.tracklet, g.tracklet});
  }
  return inst;
}

}  // namespace oracle
