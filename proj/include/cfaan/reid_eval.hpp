#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cfaan/tensor.hpp"

namespace cfaan {

/// Identity 0 marks a distractor tracklet.
struct TrackletMeta {
  std::uint64_t tracklet = 0;
  std::uint64_t identity = 0;
  std::uint64_t camera = 0;
  std::vector<std::uint64_t> ambiguous;   // extra acceptable identities
  std::vector<std::uint64_t> duplicates;  // tracklets this one duplicates

  bool operator==(const TrackletMeta&) const = default;
};

struct EvalDataset {
  std::vector<TrackletMeta> query;
  std::vector<TrackletMeta> gallery;
  Tensor distances;  // |Q| x |G|, smaller means more similar

  void validate() const;
};

struct LabelCorrections {
  struct Relabel {
    std::uint64_t tracklet;
    std::uint64_t identity;
  };
  struct Ambiguity {
    std::uint64_t tracklet;
    std::uint64_t identity;
  };
  struct Duplicate {
    std::uint64_t a;
    std::uint64_t b;
  };

  std::optional<std::uint64_t> version;
  std::vector<Relabel> relabels;
  std::vector<Ambiguity> ambiguities;
  std::vector<Duplicate> duplicates;

  bool empty() const { return relabels.empty() && ambiguities.empty() && duplicates.empty(); }
  /// Returns a description of every internal conflict; empty when consistent.
  std::vector<std::string> conflicts() const;
};

/// Records: "VERSION n", "RELABEL tid id", "AMBIG tid id", "DUPDIST tid_a tid_b".
/// Blank lines and '#' comments are skipped.
LabelCorrections read_corrections(std::istream& is);
LabelCorrections load_corrections(const std::filesystem::path& path);

/// Returns a corrected copy. Relabels apply to every meta carrying the
/// tracklet id; duplicate markers are recorded on both tracklets.
EvalDataset apply_corrections(const EvalDataset& dataset, const LabelCorrections& corrections);

enum class Protocol { old_protocol, new_protocol };
std::string to_string(Protocol p);
Protocol parse_protocol(const std::string& text);

/// How a match made only through an ambiguity set is scored.
enum class AmbiguityMode { positive, ignored };

/// True when g shares q's primary identity (distractors never match).
bool is_primary_match(const TrackletMeta& q, const TrackletMeta& g);
/// True when g counts as a correct match for q, ambiguity sets included.
bool is_match(const TrackletMeta& q, const TrackletMeta& g);
/// True when g is dropped from q's ranking under the protocol.
bool is_ignored(const TrackletMeta& q, const TrackletMeta& g, Protocol protocol);

struct EvalResult {
  double mAP = 0.0;
  std::vector<double> cmc;                // cmc[k-1] = CMC(k), k = 1..|G|
  std::vector<std::optional<double>> ap;  // per query; empty when excluded
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // queries with no valid positive

  double cmc_at(std::size_t k) const;
};

EvalResult evaluate(const EvalDataset& dataset, Protocol protocol,
                    AmbiguityMode ambiguity = AmbiguityMode::positive);

struct EvalComparison {
  double map_delta = 0.0;
  double rank1_delta = 0.0;
  std::vector<std::optional<double>> ap_delta;  // empty when either side excluded the query
};

/// b minus a, query by query.
EvalComparison compare(const EvalResult& a, const EvalResult& b);

struct ProtocolDeltaReport {
  EvalResult old_plain;      // old protocol, original labels
  EvalResult old_corrected;  // old protocol, corrected labels
  EvalResult new_corrected;  // new protocol, corrected labels
  EvalComparison corrections_effect;  // old_plain -> old_corrected
  EvalComparison protocol_effect;     // old_corrected -> new_corrected
  EvalComparison total;               // old_plain -> new_corrected
  /// New protocol with ambiguity-only matches dropped instead of scored.
  EvalResult new_ambiguity_ignored;
};

ProtocolDeltaReport protocol_delta_report(const EvalDataset& dataset,
                                          const LabelCorrections& corrections);

/// Metadata lines: "query|gallery tid identity camera [amb1,amb2,...]".
struct MetaFile {
  std::vector<TrackletMeta> query;
  std::vector<TrackletMeta> gallery;
};
MetaFile read_meta_file(std::istream& is);
MetaFile load_meta_file(const std::filesystem::path& path);
void write_meta_file(std::ostream& os, const MetaFile& meta);

}  // namespace cfaan
