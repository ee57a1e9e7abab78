#pragma once

#include <array>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ooc/common.hpp"

namespace ooc {

enum class Partition { Train, Val, Test };

inline std::string_view partition_name(Partition p) {
  switch (p) {
    case Partition::Train: return "train";
    case Partition::Val: return "val";
    case Partition::Test: return "test";
  }
  return "?";
}

inline std::optional<Partition> parse_partition(std::string_view name) {
  if (name == "train") return Partition::Train;
  if (name == "val") return Partition::Val;
  if (name == "test") return Partition::Test;
  return std::nullopt;
}

// Named NewsCLIPpings splits. Custom names are allowed anywhere a split name is
// taken; these are the keys the shipped baseline table joins on.
namespace splits {
inline constexpr std::string_view kSemanticsClipTextImage = "Semantics/CLIP Text-Image";
inline constexpr std::string_view kSemanticsClipTextText = "Semantics/CLIP Text-Text";
inline constexpr std::string_view kPersonSbertWk = "Person/SBERT-WK Text-Text";
inline constexpr std::string_view kSceneResNetPlace = "Scene/ResNet Place";
inline constexpr std::string_view kMergedBalanced = "Merged/Balanced";

inline constexpr std::array<std::string_view, 5> kAll = {
    kSemanticsClipTextImage, kSemanticsClipTextText, kPersonSbertWk, kSceneResNetPlace,
    kMergedBalanced};
}  // namespace splits

using PartitionCounts = std::map<Partition, std::size_t>;

// Published train/val/test sizes of the named splits.
inline std::optional<PartitionCounts> published_split_sizes(std::string_view split_name) {
  auto make = [](std::size_t tr, std::size_t va, std::size_t te) {
    return PartitionCounts{{Partition::Train, tr}, {Partition::Val, va}, {Partition::Test, te}};
  };
  if (split_name == splits::kSemanticsClipTextImage) return make(453128, 47248, 47288);
  if (split_name == splits::kSemanticsClipTextText) return make(516072, 53876, 54164);
  if (split_name == splits::kPersonSbertWk) return make(17768, 1756, 1816);
  if (split_name == splits::kSceneResNetPlace) return make(124860, 13588, 13636);
  if (split_name == splits::kMergedBalanced) return make(71072, 7024, 7264);
  return std::nullopt;
}

struct Sample {
  std::string id;
  std::string image_ref;
  std::string caption;
  Label label = Label::Match;
  Partition split = Partition::Train;
  std::optional<std::string> source;

  bool operator==(const Sample&) const = default;
};

struct SplitManifest {
  std::string split_name;
  std::map<Partition, std::vector<Sample>> partitions;
  std::optional<PartitionCounts> declared_counts;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [_, samples] : partitions) n += samples.size();
    return n;
  }

  bool operator==(const SplitManifest&) const = default;
};

enum class AnswerToken { Yes, No };

inline std::string_view token_text(AnswerToken t) { return t == AnswerToken::Yes ? "Yes" : "No"; }

inline AnswerToken label_to_token(Label label) {
  return label == Label::Match ? AnswerToken::Yes : AnswerToken::No;
}

inline Label token_label(AnswerToken t) {
  return t == AnswerToken::Yes ? Label::Match : Label::Mismatch;
}

// Restructured (image, caption, label) triple. The id travels along so that
// encoding failures can name the record.
struct FineTuneRecord {
  std::string id;
  std::string image_ref;
  std::string caption;
  AnswerToken label_token = AnswerToken::Yes;

  bool operator==(const FineTuneRecord&) const = default;
};

namespace detail {

inline Sample parse_sample_line(std::size_t line_no, const std::string& line) {
  const auto at = [line_no](const std::string& msg) {
    return DataError("line " + std::to_string(line_no) + ": " + msg);
  };
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error&) {
    throw at("malformed record");
  }
  if (!obj.is_object()) throw at("malformed record: expected an object");

  static const std::set<std::string> allowed = {"id", "image", "caption", "label", "split",
                                                "source"};
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw at("unknown key '" + key + "'");
  }
  auto required_string = [&](const char* key) -> std::string {
    if (!obj.contains(key)) throw at(std::string("missing key '") + key + "'");
    if (!obj[key].is_string()) throw at(std::string("key '") + key + "' must be a string");
    return obj[key].get<std::string>();
  };

  Sample s;
  s.id = required_string("id");
  s.image_ref = required_string("image");
  s.caption = required_string("caption");
  if (trim(s.caption).empty()) throw at("empty caption");

  if (!obj.contains("label")) throw at("missing key 'label'");
  const auto& label = obj["label"];
  if (!label.is_number_integer()) throw at("unknown label " + label.dump());
  const auto value = label.get<long long>();
  if (value != 0 && value != 1) throw at("unknown label " + std::to_string(value));
  s.label = static_cast<Label>(value);

  const auto split = required_string("split");
  const auto partition = parse_partition(split);
  if (!partition) throw at("unknown split '" + split + "'");
  s.split = *partition;

  if (obj.contains("source")) {
    if (!obj["source"].is_string()) throw at("key 'source' must be a string");
    s.source = obj["source"].get<std::string>();
  }
  return s;
}

}  // namespace detail

inline void check_declared_counts(const SplitManifest& manifest) {
  if (!manifest.declared_counts) return;
  for (const auto& [partition, expected] : *manifest.declared_counts) {
    const auto it = manifest.partitions.find(partition);
    const std::size_t actual = it == manifest.partitions.end() ? 0 : it->second.size();
    if (actual != expected) {
      throw DataError("partition '" + std::string(partition_name(partition)) + "' has " +
                      std::to_string(actual) + " samples, declared " + std::to_string(expected));
    }
  }
}

// Parses a line-delimited manifest. Blank lines and '#' comments are skipped.
inline SplitManifest load_manifest(std::istream& source, std::string split_name = {},
                                   std::optional<PartitionCounts> declared = std::nullopt) {
  SplitManifest manifest;
  manifest.split_name = std::move(split_name);
  manifest.declared_counts = std::move(declared);
  std::set<std::string> seen;
  detail::for_each_record_line(source, [&](std::size_t line_no, const std::string& line) {
    Sample s = detail::parse_sample_line(line_no, line);
    if (!seen.insert(s.id).second) {
      throw DataError("line " + std::to_string(line_no) + ": duplicate id '" + s.id + "'");
    }
    manifest.partitions[s.split].push_back(std::move(s));
  });
  check_declared_counts(manifest);
  return manifest;
}

inline SplitManifest load_manifest_file(const std::string& path, std::string split_name = {},
                                        std::optional<PartitionCounts> declared = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  return load_manifest(in, std::move(split_name), std::move(declared));
}

inline json sample_to_json(const Sample& s) {
  json obj = {{"id", s.id},
              {"image", s.image_ref},
              {"caption", s.caption},
              {"label", label_index(s.label)},
              {"split", partition_name(s.split)}};
  if (s.source) obj["source"] = *s.source;
  return obj;
}

inline std::string serialize_manifest(const SplitManifest& manifest) {
  std::string out;
  for (const auto& [_, samples] : manifest.partitions) {
    for (const auto& s : samples) {
      out += sample_to_json(s).dump();
      out += '\n';
    }
  }
  return out;
}

struct PartitionStats {
  std::size_t total = 0;
  std::size_t n_match = 0;
  std::size_t n_mismatch = 0;
  // #MATCH / total; absent for an empty partition.
  std::optional<double> balance;
};

inline std::map<Partition, PartitionStats> split_stats(const SplitManifest& manifest) {
  std::map<Partition, PartitionStats> stats;
  if (manifest.declared_counts) {
    for (const auto& [p, _] : *manifest.declared_counts) stats[p];
  }
  for (const auto& [partition, samples] : manifest.partitions) {
    auto& st = stats[partition];
    for (const auto& s : samples) {
      ++st.total;
      (s.label == Label::Match ? st.n_match : st.n_mismatch) += 1;
    }
  }
  for (auto& [_, st] : stats) {
    if (st.total > 0) st.balance = static_cast<double>(st.n_match) / static_cast<double>(st.total);
  }
  return stats;
}

inline std::string format_split_stats(const SplitManifest& manifest) {
  std::ostringstream os;
  os << "split: " << (manifest.split_name.empty() ? "(unnamed)" : manifest.split_name) << '\n';
  os << std::left << std::setw(8) << "part" << std::right << std::setw(10) << "total"
     << std::setw(10) << "match" << std::setw(10) << "mismatch" << std::setw(10) << "balance"
     << '\n';
  for (const auto& [partition, st] : split_stats(manifest)) {
    os << std::left << std::setw(8) << partition_name(partition) << std::right << std::setw(10)
       << st.total << std::setw(10) << st.n_match << std::setw(10) << st.n_mismatch
       << std::setw(10);
    if (st.balance) {
      std::ostringstream b;
      b << std::fixed << std::setprecision(4) << *st.balance;
      os << b.str();
    } else {
      os << "n/a";
    }
    os << '\n';
  }
  return os.str();
}

inline std::vector<FineTuneRecord> restructure_for_finetune(const SplitManifest& manifest,
                                                            Partition partition) {
  const auto it = manifest.partitions.find(partition);
  if (it == manifest.partitions.end()) {
    throw DataError("unknown partition '" + std::string(partition_name(partition)) + "'");
  }
  std::vector<FineTuneRecord> records;
  records.reserve(it->second.size());
  for (const auto& s : it->second) {
    records.push_back({s.id, s.image_ref, s.caption, label_to_token(s.label)});
  }
  return records;
}

inline std::vector<FineTuneRecord> restructure_for_finetune(const SplitManifest& manifest,
                                                            std::string_view partition) {
  const auto p = parse_partition(partition);
  if (!p) throw DataError("unknown partition '" + std::string(partition) + "'");
  return restructure_for_finetune(manifest, *p);
}

// Fine-tune record files: one {id, image, caption, label:"Yes"|"No"} per line.
inline std::string serialize_records(const std::vector<FineTuneRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    json obj = {{"id", r.id},
                {"image", r.image_ref},
                {"caption", r.caption},
                {"label", token_text(r.label_token)}};
    out += obj.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<FineTuneRecord> load_records(std::istream& in) {
  std::vector<FineTuneRecord> records;
  detail::for_each_record_line(in, [&](std::size_t line_no, const std::string& line) {
    const auto at = [line_no](const std::string& msg) {
      return DataError("line " + std::to_string(line_no) + ": " + msg);
    };
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error&) {
      throw at("malformed record");
    }
    for (const char* key : {"id", "image", "caption", "label"}) {
      if (!obj.is_object() || !obj.contains(key) || !obj[key].is_string()) {
        throw at(std::string("missing or non-string key '") + key + "'");
      }
    }
    const auto token = obj["label"].get<std::string>();
    if (token != "Yes" && token != "No") throw at("label token must be \"Yes\" or \"No\"");
    records.push_back({obj["id"].get<std::string>(), obj["image"].get<std::string>(),
                       obj["caption"].get<std::string>(),
                       token == "Yes" ? AnswerToken::Yes : AnswerToken::No});
  });
  return records;
}

inline std::vector<FineTuneRecord> load_records_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open record file: " + path);
  return load_records(in);
}

}  // namespace ooc
