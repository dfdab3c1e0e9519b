#include <doctest.h>

#include <sstream>

#include "cfaan/errors.hpp"
#include "cfaan/reid_eval.hpp"
#include "eval_oracle.hpp"

using namespace cfaan;

namespace {

TrackletMeta meta(std::uint64_t tid, std::uint64_t id, std::uint64_t cam,
                  std::vector<std::uint64_t> amb = {}) {
  TrackletMeta m;
  m.tracklet = tid;
  m.identity = id;
  m.camera = cam;
  m.ambiguous = std::move(amb);
  return m;
}

EvalDataset dataset(std::vector<TrackletMeta> q, std::vector<TrackletMeta> g,
                    std::vector<double> d) {
  Tensor dist({q.size(), g.size()}, std::move(d));
  return EvalDataset{std::move(q), std::move(g), std::move(dist)};
}

// Query 100 sees a same-camera distractor copy of itself (tracklet 200) first.
EvalDataset duplicate_fixture() {
  return dataset({meta(100, 5, 1)}, {meta(200, 0, 1), meta(201, 5, 2), meta(202, 9, 2)},
                 {0.1, 0.2, 0.3});
}

void check_against_oracle(const EvalDataset& d, Protocol p) {
  const EvalResult r = evaluate(d, p);
  const oracle::EvalTotals o = oracle::brute_force_eval(d, p == Protocol::new_protocol);
  CHECK(r.excluded == o.excluded);
  CHECK(std::abs(r.mAP - o.mAP) <= 1e-12);
  REQUIRE(r.cmc.size() == o.cmc.size());
  for (std::size_t k = 0; k < r.cmc.size(); ++k) CHECK(std::abs(r.cmc[k] - o.cmc[k]) <= 1e-12);
  for (std::size_t q = 0; q < r.ap.size(); ++q) {
    if (o.ap[q] < 0) {
      CHECK_FALSE(r.ap[q]);
    } else {
      REQUIRE(r.ap[q]);
      CHECK(std::abs(*r.ap[q] - o.ap[q]) <= 1e-12);
    }
  }
}

}  // namespace

TEST_CASE("AP arithmetic on a single query") {
  EvalDataset d = dataset({meta(1, 3, 1)}, {meta(10, 3, 2), meta(11, 4, 2), meta(12, 3, 3)},
                          {0.1, 0.2, 0.3});
  EvalResult r = evaluate(d, Protocol::old_protocol);
  CHECK(r.mAP == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-15));
  CHECK(r.cmc_at(1) == 1.0);
  CHECK(r.evaluated == 1);
}

TEST_CASE("distractor duplicate under both protocols") {
  LabelCorrections c;
  c.duplicates.push_back({100, 200});
  EvalDataset corrected = apply_corrections(duplicate_fixture(), c);
  EvalResult old_r = evaluate(corrected, Protocol::old_protocol);
  EvalResult new_r = evaluate(corrected, Protocol::new_protocol);
  CHECK(*old_r.ap[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(*new_r.ap[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(old_r.cmc_at(1) == 0.0);
  CHECK(new_r.cmc_at(1) == 1.0);
  check_against_oracle(corrected, Protocol::old_protocol);
  check_against_oracle(corrected, Protocol::new_protocol);

  ProtocolDeltaReport rep = protocol_delta_report(duplicate_fixture(), c);
  REQUIRE(rep.total.ap_delta[0]);
  CHECK(*rep.total.ap_delta[0] == doctest::Approx(0.5));
  CHECK(*rep.protocol_effect.ap_delta[0] == doctest::Approx(0.5));
  CHECK(*rep.corrections_effect.ap_delta[0] == 0.0);
  EvalComparison back = compare(rep.new_corrected, rep.old_corrected);
  CHECK(back.map_delta == -rep.protocol_effect.map_delta);
  CHECK(back.rank1_delta == -rep.protocol_effect.rank1_delta);

  // Without the marker the new protocol keeps the distractor.
  CHECK(*evaluate(duplicate_fixture(), Protocol::new_protocol).ap[0] == doctest::Approx(0.5));
}

TEST_CASE("no corrections and equal protocols give zero deltas") {
  Rng rng(5);
  oracle::RandomInstance inst = oracle::random_instance(rng);
  ProtocolDeltaReport rep = protocol_delta_report(inst.dataset, {});
  CHECK(rep.corrections_effect.map_delta == 0.0);
  CHECK(rep.corrections_effect.rank1_delta == 0.0);
  for (const auto& a : rep.corrections_effect.ap_delta)
    if (a) CHECK(*a == 0.0);
}

TEST_CASE("corrections") {
  EvalDataset d = dataset({meta(1, 318, 1)}, {meta(3, 318, 2), meta(7, 184, 3)}, {0.4, 0.2});
  SUBCASE("empty corrections leave the dataset unchanged") {
    EvalDataset out = apply_corrections(d, {});
    CHECK(out.query == d.query);
    CHECK(out.gallery == d.gallery);
  }
  SUBCASE("relabel and ambiguity") {
    LabelCorrections c;
    c.relabels.push_back({7, 142});
    c.ambiguities.push_back({3, 322});
    EvalDataset out = apply_corrections(d, c);
    CHECK(out.gallery[1].identity == 142);
    CHECK(out.gallery[0].ambiguous == std::vector<std::uint64_t>{322});
    CHECK(d.gallery[1].identity == 184);
    CHECK(is_match(meta(9, 322, 1), out.gallery[0]));
    CHECK(is_match(meta(9, 318, 1), out.gallery[0]));
  }
  SUBCASE("conflicts are listed") {
    LabelCorrections c;
    c.relabels = {{7, 142}, {7, 150}};
    c.ambiguities = {{7, 142}};
    c.duplicates = {{3, 3}};
    CHECK(c.conflicts().size() == 3);
    try {
      apply_corrections(d, c);
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("tracklet 7") != std::string::npos);
    }
    LabelCorrections unknown;
    unknown.relabels = {{99, 1}};
    CHECK_THROWS_AS(apply_corrections(d, unknown), ValidationError);
  }
  SUBCASE("file format") {
    std::stringstream ss("# fixes\nVERSION 2\nRELABEL 7 142\n\nAMBIG 3 322\nDUPDIST 1 3\n");
    LabelCorrections c = read_corrections(ss);
    CHECK(*c.version == 2);
    CHECK(c.relabels.size() == 1);
    CHECK(c.ambiguities[0].identity == 322);
    CHECK(c.duplicates[0].b == 3);
    std::stringstream bad("RELABEL 7\n");
    CHECK_THROWS_AS(read_corrections(bad), ValidationError);
    std::stringstream odd("SWAP 1 2\n");
    CHECK_THROWS_AS(read_corrections(odd), ValidationError);
  }
}

TEST_CASE("matching and ignore rules") {
  CHECK_FALSE(is_match(meta(1, 0, 1), meta(2, 0, 2)));
  CHECK(is_match(meta(1, 4, 1, {5}), meta(2, 5, 2)));
  CHECK(is_match(meta(1, 5, 1), meta(2, 4, 2, {5})));
  CHECK(is_ignored(meta(1, 4, 1), meta(2, 4, 1), Protocol::old_protocol));
  CHECK_FALSE(is_ignored(meta(1, 4, 1), meta(2, 4, 2), Protocol::old_protocol));

  EvalDataset d = dataset({meta(1, 4, 1, {5})}, {meta(2, 5, 2), meta(3, 6, 2)}, {0.2, 0.1});
  EvalDataset mirrored = dataset({meta(1, 4, 1)}, {meta(2, 5, 2, {4}), meta(3, 6, 2)}, {0.2, 0.1});
  CHECK(evaluate(d, Protocol::new_protocol).mAP == evaluate(mirrored, Protocol::new_protocol).mAP);
  CHECK(evaluate(d, Protocol::new_protocol).mAP == doctest::Approx(0.5));
  CHECK(evaluate(d, Protocol::new_protocol, AmbiguityMode::ignored).evaluated == 0);
}

TEST_CASE("exclusion and validation") {
  EvalDataset d = dataset({meta(1, 4, 1), meta(2, 9, 1)}, {meta(3, 4, 2), meta(4, 9, 1)},
                          {0.1, 0.2, 0.3, 0.4});
  EvalResult r = evaluate(d, Protocol::old_protocol);
  CHECK(r.excluded == 1);
  CHECK(r.evaluated == 1);
  CHECK_FALSE(r.ap[1]);
  CHECK(r.mAP == 1.0);

  EvalDataset wrong = d;
  wrong.distances = Tensor({2, 3});
  CHECK_THROWS_AS(evaluate(wrong, Protocol::old_protocol), DimensionError);
  EvalDataset nan = d;
  nan.distances[0] = std::nan("");
  CHECK_THROWS_AS(evaluate(nan, Protocol::old_protocol), std::exception);
  CHECK_THROWS_AS(parse_protocol("newer"), ConfigError);
}

TEST_CASE("random instances match the brute-force oracle") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    oracle::RandomInstance inst = oracle::random_instance(rng);
    EvalDataset corrected = apply_corrections(inst.dataset, inst.corrections);
    for (Protocol p : {Protocol::old_protocol, Protocol::new_protocol}) {
      check_against_oracle(inst.dataset, p);
      check_against_oracle(corrected, p);
    }
  }
}

TEST_CASE("metric properties") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    EvalDataset d = oracle::random_instance(rng).dataset;
    EvalResult r = evaluate(d, Protocol::new_protocol);
    CHECK(r.mAP >= 0.0);
    CHECK(r.mAP <= 1.0);
    for (std::size_t k = 1; k < r.cmc.size(); ++k) CHECK(r.cmc[k] >= r.cmc[k - 1]);

    // Gallery permutation, with distances breaking no ties.
    const std::size_t Q = d.query.size(), G = d.gallery.size();
    for (std::size_t i = 0; i < Q * G; ++i) d.distances[i] = rng.uniform();
    EvalResult base = evaluate(d, Protocol::old_protocol);
    std::vector<std::size_t> perm(G);
    for (std::size_t i = 0; i < G; ++i) perm[i] = i;
    rng.shuffle(perm);
    EvalDataset p = d;
    for (std::size_t g = 0; g < G; ++g) {
      p.gallery[g] = d.gallery[perm[g]];
      for (std::size_t q = 0; q < Q; ++q) p.distances[q * G + g] = d.distances[q * G + perm[g]];
    }
    EvalResult permuted = evaluate(p, Protocol::old_protocol);
    CHECK(std::abs(permuted.mAP - base.mAP) < 1e-15);
    CHECK(permuted.cmc == base.cmc);

    // An extra same-camera same-identity entry is ignored by the query it copies.
    EvalDataset extra = d;
    TrackletMeta twin = d.query[0];
    twin.tracklet = 9999;
    extra.gallery.push_back(twin);
    extra.distances = Tensor({Q, G + 1});
    for (std::size_t q = 0; q < Q; ++q) {
      for (std::size_t g = 0; g < G; ++g) extra.distances[q * (G + 1) + g] = d.distances[q * G + g];
      extra.distances[q * (G + 1) + G] = 0.0;
    }
    extra.query.resize(1);
    extra.distances = slice_channels(extra.distances, 0, 1);
    EvalDataset single = d;
    single.query.resize(1);
    single.distances = slice_channels(d.distances, 0, 1);
    EvalResult alone = evaluate(single, Protocol::old_protocol);
    EvalResult with_twin = evaluate(extra, Protocol::old_protocol);
    CHECK(with_twin.mAP == alone.mAP);
    for (std::size_t k = 0; k < G; ++k) CHECK(with_twin.cmc[k] == alone.cmc[k]);
  }
}

TEST_CASE("metadata file") {
  std::stringstream ss("query 1 318 1 322\n# note\ngallery 3 318 2\ngallery 7 0 3 -\n");
  MetaFile m = read_meta_file(ss);
  REQUIRE(m.query.size() == 1);
  CHECK(m.query[0].ambiguous == std::vector<std::uint64_t>{322});
  CHECK(m.gallery.size() == 2);
  std::stringstream out;
  write_meta_file(out, m);
  MetaFile back = read_meta_file(out);
  CHECK(back.query == m.query);
  CHECK(back.gallery == m.gallery);
  std::stringstream bad("query 1 318 1\nprobe 2 1 1\n");
  try {
    read_meta_file(bad);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::stringstream self("query 1 5 1 5\n");
  CHECK_THROWS_AS(read_meta_file(self), ValidationError);
}
