#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ooc/common.hpp"
#include "ooc/extractor.hpp"

namespace ooc {

enum class Predicted { Match, Mismatch, Unknown };

inline std::string_view predicted_name(Predicted p) {
  switch (p) {
    case Predicted::Match: return "MATCH";
    case Predicted::Mismatch: return "MISMATCH";
    case Predicted::Unknown: return "UNKNOWN";
  }
  return "?";
}

inline Predicted to_predicted(Label l) {
  return l == Label::Match ? Predicted::Match : Predicted::Mismatch;
}

inline Predicted to_predicted(VerdictValue v) {
  switch (v) {
    case VerdictValue::Yes: return Predicted::Match;
    case VerdictValue::No: return Predicted::Mismatch;
    case VerdictValue::Unknown: return Predicted::Unknown;
  }
  return Predicted::Unknown;
}

struct PredictionRecord {
  std::string id;
  Label true_label = Label::Match;
  Predicted predicted = Predicted::Unknown;
  // p(mismatch); higher means more confidently out of context.
  std::optional<double> score;

  bool correct() const { return predicted == to_predicted(true_label); }
  bool operator==(const PredictionRecord&) const = default;
};

struct MetricsReport {
  std::string system_name;
  std::string split_name;
  std::string extractor_version;
  double accuracy = 0.0;
  std::optional<double> pristine;   // accuracy on true MATCH records
  std::optional<double> falsified;  // accuracy on true MISMATCH records
  std::optional<double> auc;
  double unknown_rate = 0.0;
  std::size_t n_total = 0;
  std::size_t n_match = 0;
  std::size_t n_mismatch = 0;
  std::size_t correct_match = 0;
  std::size_t correct_mismatch = 0;
  std::size_t n_unknown = 0;
};

// Exact AUC as a fraction: twice the Mann-Whitney count over 2 * n_pos * n_neg.
struct AucFraction {
  std::uint64_t twice_wins = 0;
  std::uint64_t twice_pairs = 0;
  double value() const { return static_cast<double>(twice_wins) / static_cast<double>(twice_pairs); }
};

namespace detail {
inline void require_auc_input(std::span<const PredictionRecord> records) {
  std::size_t pos = 0;
  std::size_t neg = 0;
  for (const auto& r : records) {
    if (!r.score) throw DataError("auc: record '" + r.id + "' has no score");
    (r.true_label == Label::Mismatch ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0) throw DataError("auc: both classes are required");
}
}  // namespace detail

// Rank-based (midrank) AUC in O(n log n). MISMATCH is the positive class; ties
// count one half.
inline AucFraction auc_fraction(std::span<const PredictionRecord> records) {
  detail::require_auc_input(records);
  std::vector<std::pair<double, bool>> scored;
  scored.reserve(records.size());
  std::uint64_t n_pos = 0;
  for (const auto& r : records) {
    const bool positive = r.true_label == Label::Mismatch;
    scored.emplace_back(*r.score, positive);
    n_pos += positive ? 1 : 0;
  }
  const std::uint64_t n_neg = scored.size() - n_pos;
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // Sum of doubled midranks of the positives; ranks are 1-based.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < scored.size();) {
    std::size_t j = i;
    std::uint64_t positives = 0;
    while (j < scored.size() && scored[j].first == scored[i].first) {
      positives += scored[j].second ? 1 : 0;
      ++j;
    }
    // Doubled midrank of the tie block [i, j): (i+1) + j.
    twice_rank_sum += positives * (static_cast<std::uint64_t>(i) + 1 + j);
    i = j;
  }
  return {twice_rank_sum - n_pos * (n_pos + 1), 2 * n_pos * n_neg};
}

inline double auc(std::span<const PredictionRecord> records) {
  return auc_fraction(records).value();
}

inline MetricsReport score_predictions(std::span<const PredictionRecord> records,
                                       std::string system_name = {}, std::string split_name = {},
                                       std::string extractor_version = {}) {
  if (records.empty()) throw DataError("no prediction records");
  MetricsReport m;
  m.system_name = std::move(system_name);
  m.split_name = std::move(split_name);
  m.extractor_version = std::move(extractor_version);
  const bool first_scored = records.front().score.has_value();
  for (const auto& r : records) {
    if (r.score.has_value() != first_scored) {
      throw DataError("scores must be present on all records or on none");
    }
    if (r.score && !(*r.score >= 0.0 && *r.score <= 1.0)) {
      throw DataError("record '" + r.id + "': score outside [0,1]");
    }
    ++m.n_total;
    if (r.predicted == Predicted::Unknown) ++m.n_unknown;
    if (r.true_label == Label::Match) {
      ++m.n_match;
      if (r.correct()) ++m.correct_match;
    } else {
      ++m.n_mismatch;
      if (r.correct()) ++m.correct_mismatch;
    }
  }
  const auto n = static_cast<double>(m.n_total);
  m.accuracy = static_cast<double>(m.correct_match + m.correct_mismatch) / n;
  m.unknown_rate = static_cast<double>(m.n_unknown) / n;
  if (m.n_match) m.pristine = static_cast<double>(m.correct_match) / static_cast<double>(m.n_match);
  if (m.n_mismatch) {
    m.falsified = static_cast<double>(m.correct_mismatch) / static_cast<double>(m.n_mismatch);
  }
  if (first_scored && m.n_match && m.n_mismatch) m.auc = auc(records);
  return m;
}

inline json metrics_to_json(const MetricsReport& m) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"system", m.system_name},
          {"split", m.split_name},
          {"extractor_version", m.extractor_version},
          {"accuracy", m.accuracy},
          {"pristine", opt(m.pristine)},
          {"falsified", opt(m.falsified)},
          {"auc", opt(m.auc)},
          {"unknown_rate", m.unknown_rate},
          {"n_total", m.n_total},
          {"n_match", m.n_match},
          {"n_mismatch", m.n_mismatch},
          {"n_unknown", m.n_unknown}};
}

// Predictions file: one {id, true_label, predicted, score?} per line.
inline json prediction_to_json(const PredictionRecord& r) {
  json j = {{"id", r.id},
            {"true_label", label_name(r.true_label)},
            {"predicted", predicted_name(r.predicted)}};
  if (r.score) j["score"] = *r.score;
  return j;
}

inline std::string serialize_predictions(std::span<const PredictionRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += prediction_to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<PredictionRecord> load_predictions(std::istream& in) {
  std::vector<PredictionRecord> out;
  detail::for_each_record_line(in, [&](std::size_t line_no, const std::string& line) {
    const auto at = [line_no](const std::string& msg) {
      return DataError("predictions line " + std::to_string(line_no) + ": " + msg);
    };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw at("malformed record");
    }
    if (!j.is_object()) throw at("expected an object");
    PredictionRecord r;
    try {
      r.id = j.at("id").get<std::string>();
      const auto t = j.at("true_label").get<std::string>();
      if (t == "MATCH") {
        r.true_label = Label::Match;
      } else if (t == "MISMATCH") {
        r.true_label = Label::Mismatch;
      } else {
        throw at("unknown true_label '" + t + "'");
      }
      const auto p = j.at("predicted").get<std::string>();
      if (p == "MATCH") {
        r.predicted = Predicted::Match;
      } else if (p == "MISMATCH") {
        r.predicted = Predicted::Mismatch;
      } else if (p == "UNKNOWN") {
        r.predicted = Predicted::Unknown;
      } else {
        throw at("unknown predicted value '" + p + "'");
      }
      if (j.contains("score") && !j["score"].is_null()) r.score = j["score"].get<double>();
    } catch (const json::exception& e) {
      throw at(e.what());
    }
    out.push_back(std::move(r));
  });
  return out;
}

inline std::vector<PredictionRecord> load_predictions_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions file: " + path);
  return load_predictions(in);
}

// ---------------------------------------------------------------------------
// Baselines and the comparison table.

struct BaselineRow {
  std::string split_name;
  std::string system_name;
  double accuracy = 0.0;
  std::optional<double> pristine;
  std::optional<double> falsified;
};

inline constexpr std::string_view kNewsClippingsSystem = "NewsCLIPpings";
inline constexpr std::string_view kZeroShotSystem = "MiniGPT-4 zero-shot";

struct BaselineTable {
  std::vector<BaselineRow> rows;

  std::vector<const BaselineRow*> for_split(std::string_view split) const {
    std::vector<const BaselineRow*> out;
    for (const auto& r : rows) {
      if (r.split_name == split) out.push_back(&r);
    }
    return out;
  }

  const BaselineRow* find(std::string_view split, std::string_view system) const {
    for (const auto& r : rows) {
      if (r.split_name == split && r.system_name == system) return &r;
    }
    return nullptr;
  }

  static BaselineTable from_json(const json& j) {
    BaselineTable t;
    try {
      for (const auto& row : j.at("rows")) {
        BaselineRow r;
        r.split_name = row.at("split").get<std::string>();
        r.system_name = row.at("system").get<std::string>();
        r.accuracy = row.at("accuracy").get<double>();
        if (row.contains("pristine") && !row["pristine"].is_null()) {
          r.pristine = row["pristine"].get<double>();
        }
        if (row.contains("falsified") && !row["falsified"].is_null()) {
          r.falsified = row["falsified"].get<double>();
        }
        t.rows.push_back(std::move(r));
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("baseline table: ") + e.what());
    }
    return t;
  }

  json to_json() const {
    json rows_json = json::array();
    for (const auto& r : rows) {
      rows_json.push_back({{"split", r.split_name},
                           {"system", r.system_name},
                           {"accuracy", r.accuracy},
                           {"pristine", r.pristine ? json(*r.pristine) : json(nullptr)},
                           {"falsified", r.falsified ? json(*r.falsified) : json(nullptr)}});
    }
    return {{"rows", rows_json}};
  }

  static BaselineTable load(const std::string& path) {
    try {
      return from_json(json::parse(detail::read_file_text(path)));
    } catch (const json::parse_error& e) {
      throw ConfigError("baseline table " + path + ": " + e.what());
    }
  }

  // Published NewsCLIPpings results and MiniGPT-4 zero-shot results per split.
  static BaselineTable published() {
    struct R {
      std::string_view split;
      double nc[3];
      double zs[3];
    };
    static constexpr R kRows[] = {
        {"Semantics/CLIP Text-Image", {0.68, 0.74, 0.61}, {0.60, 0.59, 0.61}},
        {"Semantics/CLIP Text-Text", {0.72, 0.74, 0.70}, {0.62, 0.60, 0.63}},
        {"Person/SBERT-WK Text-Text", {0.63, 0.70, 0.57}, {0.55, 0.54, 0.56}},
        {"Scene/ResNet Place", {0.71, 0.77, 0.65}, {0.65, 0.63, 0.67}},
        {"Merged/Balanced", {0.65, 0.67, 0.64}, {0.63, 0.62, 0.64}},
    };
    BaselineTable t;
    for (const auto& r : kRows) {
      t.rows.push_back({std::string(r.split), std::string(kNewsClippingsSystem), r.nc[0], r.nc[1],
                        r.nc[2]});
      t.rows.push_back({std::string(r.split), std::string(kZeroShotSystem), r.zs[0], r.zs[1],
                        r.zs[2]});
    }
    return t;
  }
};

enum class ReportRole { Ours, ZeroShot };

struct RoleReport {
  ReportRole role = ReportRole::Ours;
  MetricsReport metrics;
};

struct ComparisonRow {
  std::string split_name;
  std::optional<BaselineRow> newsclippings;
  // A measured zero-shot report takes precedence over the published row.
  std::optional<BaselineRow> zero_shot;
  std::optional<MetricsReport> ours;
  std::optional<double> gain;
  bool flagged = false;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
  std::vector<std::string> warnings;
  double gain_threshold = 0.08;
  std::string text;
  json structured;
};

// Gains within this distance of the threshold count as meeting it.
inline constexpr double kGainEpsilon = 1e-9;

namespace detail {

inline std::string fmt_fraction(const std::optional<double>& v, int width) {
  std::ostringstream os;
  os << std::right << std::setw(width);
  if (v) {
    std::ostringstream num;
    num << std::fixed << std::setprecision(2) << *v;
    os << num.str();
  } else {
    os << "";
  }
  return os.str();
}

inline std::string render_comparison(const ComparisonReport& report) {
  std::ostringstream os;
  constexpr int kSplitWidth = 28;
  constexpr int kCol = 6;
  os << std::left << std::setw(kSplitWidth) << "" << " | " << std::setw(3 * kCol)
     << "NewsCLIPpings" << " | " << std::setw(3 * kCol) << "Zero-shot" << " | "
     << std::setw(4 * kCol) << "Our Method" << " | " << std::setw(kCol + 1) << "Gain"
     << "\n";
  os << std::left << std::setw(kSplitWidth) << "Split" << " | ";
  for (int g = 0; g < 2; ++g) {
    os << std::right << std::setw(kCol) << "ACC" << std::setw(kCol) << "P" << std::setw(kCol)
       << "F" << " | ";
  }
  os << std::right << std::setw(kCol) << "ACC" << std::setw(kCol) << "P" << std::setw(kCol)
     << "F" << std::setw(kCol) << "AUC" << " | " << std::setw(kCol + 1) << "" << "\n";
  os << std::string(kSplitWidth + 3 + 3 * kCol + 3 + 3 * kCol + 3 + 4 * kCol + 3 + kCol + 1 + 2,
                    '-')
     << "\n";
  for (const auto& row : report.rows) {
    os << std::left << std::setw(kSplitWidth) << row.split_name << " | ";
    for (const auto* b : {&row.newsclippings, &row.zero_shot}) {
      if (*b) {
        os << fmt_fraction((*b)->accuracy, kCol) << fmt_fraction((*b)->pristine, kCol)
           << fmt_fraction((*b)->falsified, kCol);
      } else {
        os << std::string(3 * kCol, ' ');
      }
      os << " | ";
    }
    if (row.ours) {
      os << fmt_fraction(row.ours->accuracy, kCol) << fmt_fraction(row.ours->pristine, kCol)
         << fmt_fraction(row.ours->falsified, kCol) << fmt_fraction(row.ours->auc, kCol);
    } else {
      os << std::string(4 * kCol, ' ');
    }
    os << " | " << fmt_fraction(row.gain, kCol) << (row.flagged ? " *" : "  ") << "\n";
  }
  std::ostringstream thr;
  thr << std::fixed << std::setprecision(2) << report.gain_threshold;
  os << "* gain over the strongest baseline >= " << thr.str() << "\n";
  return os.str();
}

inline json baseline_json(const std::optional<BaselineRow>& b) {
  if (!b) return nullptr;
  return {{"system", b->system_name},
          {"accuracy", b->accuracy},
          {"pristine", b->pristine ? json(*b->pristine) : json(nullptr)},
          {"falsified", b->falsified ? json(*b->falsified) : json(nullptr)}};
}

}  // namespace detail

// Joins reports with baselines on split name. Rows follow the order splits
// first appear in the reports.
inline ComparisonReport compare_report(std::span<const RoleReport> reports,
                                       const BaselineTable& baselines,
                                       double gain_threshold = 0.08) {
  if (reports.empty()) throw DataError("compare_report: no reports");
  ComparisonReport out;
  out.gain_threshold = gain_threshold;

  std::vector<std::string> split_order;
  for (const auto& r : reports) {
    if (std::find(split_order.begin(), split_order.end(), r.metrics.split_name) ==
        split_order.end()) {
      split_order.push_back(r.metrics.split_name);
    }
  }

  for (const auto& split : split_order) {
    ComparisonRow row;
    row.split_name = split;
    if (const auto* b = baselines.find(split, kNewsClippingsSystem)) row.newsclippings = *b;
    if (const auto* b = baselines.find(split, kZeroShotSystem)) row.zero_shot = *b;
    for (const auto& r : reports) {
      if (r.metrics.split_name != split) continue;
      if (r.role == ReportRole::Ours) {
        row.ours = r.metrics;
      } else {
        row.zero_shot = BaselineRow{split, r.metrics.system_name, r.metrics.accuracy,
                                    r.metrics.pristine, r.metrics.falsified};
      }
    }
    const auto published = baselines.for_split(split);
    if (published.empty()) {
      out.warnings.push_back("no baseline for split '" + split + "'");
    }
    std::optional<double> strongest;
    for (const auto* b : {&row.newsclippings, &row.zero_shot}) {
      if (*b) strongest = std::max(strongest.value_or((*b)->accuracy), (*b)->accuracy);
    }
    for (const auto* b : published) {
      strongest = std::max(strongest.value_or(b->accuracy), b->accuracy);
    }
    if (row.ours && strongest) {
      row.gain = row.ours->accuracy - *strongest;
      row.flagged = *row.gain + kGainEpsilon >= gain_threshold;
    }
    out.rows.push_back(std::move(row));
  }

  out.text = detail::render_comparison(out);
  json rows = json::array();
  for (const auto& row : out.rows) {
    rows.push_back({{"split", row.split_name},
                    {"newsclippings", detail::baseline_json(row.newsclippings)},
                    {"zero_shot", detail::baseline_json(row.zero_shot)},
                    {"ours", row.ours ? metrics_to_json(*row.ours) : json(nullptr)},
                    {"gain", row.gain ? json(*row.gain) : json(nullptr)},
                    {"flagged", row.flagged}});
  }
  out.structured = {{"gain_threshold", gain_threshold},
                    {"rows", rows},
                    {"warnings", out.warnings}};
  return out;
}

}  // namespace ooc
