#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cfaan/cli.hpp"
#include "cfaan/reid_eval.hpp"
#include "cfaan/tensor_io.hpp"
#include "eval_oracle.hpp"

using namespace cfaan;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// key=value lines of the last block delimited by "---".
std::map<std::string, std::string> block(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos && line.find(' ') == std::string::npos) {
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  return kv;
}

double num(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  REQUIRE_MESSAGE(it != kv.end(), "missing key " << key);
  return std::stod(it->second);
}

fs::path fixture(const std::string& name) { return fs::path(CFAAN_SOURCE_DIR) / "data/fixtures" / name; }

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cfaan_cli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("help output matches the snapshot") {
  const Run r = run({"--help"});
  CHECK(r.code == exit_ok);
  CHECK(r.out == read_file(fs::path(CFAAN_SOURCE_DIR) / "tests/snapshots/help.txt"));
}

TEST_CASE("parse errors and bad input exit with 1") {
  CHECK(run({}).code == exit_invalid);
  CHECK(run({"bench", "--bogus"}).code == exit_invalid);
  CHECK(run({"frobnicate"}).code == exit_invalid);
  const Run bad = run({"bench", "--preset", "table9"});
  CHECK(bad.code == exit_invalid);
  CHECK(bad.err.find("unknown preset") != std::string::npos);
  CHECK(run({"--threads", "0", "bench"}).code == exit_invalid);
  CHECK(run({"bench", "--convention", "mac=3"}).code == exit_invalid);
  CHECK(run({"bench", "--preset", "table2", "--variant", "axial"}).code == exit_invalid);
}

TEST_CASE("bench table2 lists the seven ablation rows") {
  const Run r = run({"bench", "--preset", "table2"});
  REQUIRE(r.code == exit_ok);
  const auto kv = block(r.out);
  for (const char* k : {"baseline", "non_local", "axial", "axial_sinusoidal", "axial_relative",
                        "cfaa_s_2", "cfaa_s_4"}) {
    CHECK(kv.count(std::string(k) + ".computed") == 1);
  }
  CHECK(kv.at("ordering_holds") == "true");
  CHECK(std::abs(num(kv, "non_local.error")) <= 0.10);
}

TEST_CASE("bench cfaa with one scale equals axial with relative encoding") {
  const auto a = block(run({"bench", "--variant", "cfaa", "--scales", "1"}).out);
  const auto b = block(run({"bench", "--variant", "axial-relative"}).out);
  CHECK(a.at("attention_flops") == b.at("attention_flops"));
  CHECK(a.at("total_flops") == b.at("total_flops"));
}

TEST_CASE("bench backbone is linear in the frame count") {
  const auto one = block(run({"bench", "--frames", "1"}).out);
  const auto six = block(run({"bench", "--frames", "6"}).out);
  CHECK(std::stoull(six.at("backbone_flops")) == 6 * std::stoull(one.at("backbone_flops")));
}

TEST_CASE("bench calibrate sweeps every convention") {
  const Run r = run({"bench", "--calibrate"});
  REQUIRE(r.code == exit_ok);
  const auto kv = block(r.out);
  CHECK(num(kv, "conventions") == 32);
  CHECK(kv.at("ordering_holds_everywhere") == "true");
}

TEST_CASE("gradcheck passes, detects injected faults and is deterministic") {
  const Run ok = run({"gradcheck"});
  CHECK(ok.code == exit_ok);
  CHECK(block(ok.out).at("result") == "PASS");
  const Run bad = run({"gradcheck", "--perturb-analytic"});
  CHECK(bad.code == exit_invalid);
  CHECK(bad.err.find("worst offender") != std::string::npos);
  const Run a = run({"gradcheck", "--seed", "7", "--suite", "cfaa", "--suite", "triplet"});
  const Run b = run({"gradcheck", "--seed", "7", "--suite", "cfaa", "--suite", "triplet"});
  CHECK(a.code == exit_ok);
  CHECK(a.out == b.out);
  CHECK(num(block(a.out), "cases") == 10);
}

TEST_CASE("eval on the fixture agrees with the brute-force oracle") {
  const fs::path dir = fixture("eval");
  const MetaFile meta = load_meta_file(dir / "meta.txt");
  const EvalDataset d{meta.query, meta.gallery, load_tensor(dir / "distances.aakt")};
  const EvalDataset corrected = apply_corrections(d, load_corrections(dir / "corrections.txt"));

  for (const char* protocol : {"old", "new"}) {
    const Run r = run({"eval", "--meta", (dir / "meta.txt").string(), "--distances",
                       (dir / "distances.aakt").string(), "--corrections",
                       (dir / "corrections.txt").string(), "--protocol", protocol});
    REQUIRE(r.code == exit_ok);
    const auto kv = block(r.out);
    const oracle::EvalTotals o = oracle::brute_force_eval(corrected, std::string(protocol) == "new");
    CHECK(num(kv, "map") == doctest::Approx(o.mAP).epsilon(1e-10));
    CHECK(num(kv, "rank1") == doctest::Approx(o.cmc[0]).epsilon(1e-10));
    CHECK(num(kv, "rank5") == doctest::Approx(o.cmc[4]).epsilon(1e-10));
    CHECK(num(kv, "excluded") == o.excluded);
  }
}

TEST_CASE("eval --compare on the duplicate-distractor fixture") {
  const fs::path dir = fixture("duplicate_distractor");
  const Run r = run({"eval", "--meta", (dir / "meta.txt").string(), "--distances",
                     (dir / "distances.aakt").string(), "--corrections",
                     (dir / "corrections.txt").string(), "--compare"});
  REQUIRE(r.code == exit_ok);
  const auto kv = block(r.out);
  CHECK(num(kv, "old_corrected.map") == doctest::Approx(0.5));
  CHECK(num(kv, "new_corrected.map") == doctest::Approx(1.0));
  CHECK(num(kv, "delta.protocol.map") == doctest::Approx(0.5));
  CHECK(num(kv, "delta.total.rank1") == doctest::Approx(1.0));
}

TEST_CASE("eval rejects a malformed metadata file with its line number") {
  const fs::path dir = scratch("badmeta");
  fs::create_directories(dir);
  std::ofstream(dir / "meta.txt") << "query 1 1 1 -\ngallery x 1 2 -\n";
  const Run r = run({"eval", "--meta", (dir / "meta.txt").string(), "--distances",
                     (fixture("duplicate_distractor") / "distances.aakt").string()});
  CHECK(r.code == exit_invalid);
  CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("align writes one frame per input frame and is reproducible") {
  const fs::path dir = fixture("align");
  const fs::path out1 = scratch("align1"), out2 = scratch("align2");
  for (const auto& out : {out1, out2}) {
    const Run r = run({"align", "--candidates", (dir / "candidates.tsv").string(), "--frames",
                       (dir / "frames").string(), "--out", out.string(), "--height", "64",
                       "--width", "32"});
    REQUIRE(r.code == exit_ok);
    CHECK(block(r.out).at("t001.chosen") == "0,0,0,0");
    CHECK(block(r.out).at("t002.chosen") == "0,-,0");
  }
  for (const char* t : {"t001", "t002"}) {
    std::size_t frames = 0;
    while (fs::exists(dir / "frames" / t / ("frame_" + std::to_string(frames) + ".aakt"))) ++frames;
    for (std::size_t k = 0; k < frames; ++k) {
      const std::string image = "image_" + std::to_string(k) + ".aakt";
      const std::string mask = "mask_" + std::to_string(k) + ".aakt";
      REQUIRE(fs::exists(out1 / t / image));
      CHECK(read_file(out1 / t / image) == read_file(out2 / t / image));
      CHECK(read_file(out1 / t / mask) == read_file(out2 / t / mask));
    }
    CHECK(read_file(out1 / t / "provenance.txt") == read_file(out2 / t / "provenance.txt"));
  }
  // The larger occluder in frame 2 does not take over the tracklet.
  const std::string log = read_file(out1 / "t001" / "provenance.txt");
  CHECK(log.find("frame=2 candidate=0") != std::string::npos);
}

TEST_CASE("align reports malformed candidate records with their line number") {
  const fs::path dir = scratch("badcand");
  fs::create_directories(dir);
  std::ofstream(dir / "c.tsv") << "# D=1\nt\t0\t0\t0\t4\t8\t0.9\n";
  const Run r = run({"align", "--candidates", (dir / "c.tsv").string(), "--frames",
                     (fixture("align") / "frames").string(), "--out", (dir / "out").string()});
  CHECK(r.code == exit_invalid);
  CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("demo runs a short seeded training") {
  const std::vector<std::string> args{"demo", "--epochs", "2", "--identities", "4",
                                      "--chance-trials", "1", "--no-baseline"};
  const Run a = run(args);
  const Run b = run(args);
  REQUIRE(a.code == exit_ok);
  CHECK(a.out == b.out);
  const auto kv = block(a.out);
  CHECK(num(kv, "uniform_rank1") == doctest::Approx(0.25));
  CHECK(kv.count("baseline_rank1") == 0);
}
