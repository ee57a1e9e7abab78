#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "ooc/chat_backend.hpp"
#include "ooc/checkpoint.hpp"
#include "ooc/evaluator.hpp"
#include "ooc/extractor.hpp"
#include "ooc/manifest.hpp"
#include "ooc/run_config.hpp"
#include "ooc/trainer.hpp"

namespace ooc::pipeline {

namespace fs = std::filesystem;

// Exclusive claim on an output directory for the lifetime of one command.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".ooc.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("output directory " + dir.string() + " is not writable");
    file_ = std::fopen(path_.c_str(), "wx");
    if (file_ == nullptr) {
      throw ConfigError("output directory " + dir.string() +
                        " is locked by another command (remove " + path_.string() +
                        " if stale)");
    }
  }
  ~OutputLock() {
    if (file_ != nullptr) {
      std::fclose(file_);
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
  std::FILE* file_ = nullptr;
};

inline std::string records_file_name(Partition p) {
  return "records-" + std::string(partition_name(p)) + ".jsonl";
}

inline std::string finetuned_predictions_name(Partition p) {
  return "predictions-finetuned-" + std::string(partition_name(p)) + ".jsonl";
}

inline std::string zeroshot_predictions_name(Partition p) {
  return "predictions-zeroshot-" + std::string(partition_name(p)) + ".jsonl";
}

inline std::string transcript_name(Partition p) {
  return "transcript-" + std::string(partition_name(p)) + ".jsonl";
}

// Stable artifacts: the resolved config. Volatile facts go to a sidecar.
inline void write_run_metadata(const RunConfig& config, std::string_view command) {
  const std::string name(command);
  detail::write_file_text((config.output_dir / ("run_config." + name + ".json")).string(),
                          run_config_to_json(config).dump(2) + "\n");
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  const json meta = {{"command", name}, {"finished_at", stamp}};
  detail::write_file_text((config.output_dir / ("run_meta." + name + ".json")).string(),
                          meta.dump(2) + "\n");
}

inline Lexicon load_lexicon(const RunConfig& config) {
  return config.lexicon ? Lexicon::load(config.lexicon->string()) : Lexicon::builtin();
}

inline SplitManifest load_config_manifest(const RunConfig& config) {
  return load_manifest_file(config.manifest.string(), config.split_name, config.declared_counts);
}

// prepare: validate the manifest, print split statistics, and write one
// fine-tune record file per partition.
inline int cmd_prepare(const RunConfig& config, std::ostream& out) {
  config.validate();
  OutputLock lock(config.output_dir);
  const auto manifest = load_config_manifest(config);
  out << format_split_stats(manifest);

  std::vector<Partition> parts;
  if (config.prepare_partition) {
    parts.push_back(*config.prepare_partition);
  } else {
    for (const auto& [p, _] : manifest.partitions) parts.push_back(p);
  }
  for (const auto p : parts) {
    const auto records = restructure_for_finetune(manifest, p);
    const auto path = config.output_dir / records_file_name(p);
    detail::write_file_text(path.string(), serialize_records(records));
    out << "wrote " << records.size() << " records to " << path.string() << '\n';
  }
  write_run_metadata(config, "prepare");
  return 0;
}

inline std::vector<FineTuneRecord> load_prepared(const RunConfig& config, Partition p,
                                                 bool required) {
  const auto path = config.output_dir / records_file_name(p);
  if (!fs::exists(path)) {
    if (required) {
      throw DataError("missing " + path.string() + " (run 'prepare' first)");
    }
    return {};
  }
  return load_records_file(path.string());
}

inline std::vector<PredictionRecord> predict_records(const DetectorModel& model,
                                                     std::span<const FineTuneRecord> records,
                                                     const ImageLoader& loader) {
  std::vector<PredictionRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const auto enc = encode_record(model, r, loader);
    const auto pass = forward(model, fused_input(model, enc));
    const auto p = predict_from_logits({pass.logits[0], pass.logits[1]});
    out.push_back({r.id, enc.label, to_predicted(p.label), p.p_mismatch()});
  }
  return out;
}

// finetune: train projection and classifier, checkpoint every epoch, audit the
// freeze contract, and score the evaluation partition when it was prepared.
inline int cmd_finetune(const RunConfig& config, std::ostream& out) {
  config.validate();
  OutputLock lock(config.output_dir);
  const auto train = load_prepared(config, config.train_partition, true);
  const auto val = config.val_partition == config.train_partition
                       ? std::vector<FineTuneRecord>{}
                       : load_prepared(config, config.val_partition, false);

  DetectorModel model = DetectorModel::initialize(config.hidden_dim, config.seed);
  model.meta.prompt_template = config.prompt_template;
  model.meta.question = config.question;
  for (const auto& e : config.unfrozen_encoders) {
    (e == "vision" ? model.vision : model.text).set_frozen(false);
  }

  FineTuneOptions options;
  options.load_image = file_image_loader(config.resolved_image_root());
  options.output_dir = config.output_dir / "checkpoints";
  const auto result = fine_tune(model, train, val, config.train, options);

  out << "gradient audit: " << result.audit.parameters_checked
      << " parameters, max relative error " << result.audit.max_relative_error << '\n';
  for (const auto& s : result.history) {
    out << "epoch " << s.epoch << ": loss " << s.mean_loss << ", train acc " << s.train_accuracy;
    if (s.val_accuracy) out << ", val acc " << *s.val_accuracy;
    out << ", iterations " << s.iterations << '\n';
  }

  const auto report = verify_frozen(result.initial_snapshot, result.model,
                                    result.had_nonzero_update);
  out << report.to_string();
  detail::write_file_text((config.output_dir / "freeze_report.txt").string(), report.to_string());
  if (!report.passed) throw RuntimeFailure("freeze contract violated");

  if (config.eval_partition != config.train_partition) {
    const auto eval = load_prepared(config, config.eval_partition, false);
    if (!eval.empty()) {
      const auto preds = predict_records(result.model, eval, options.load_image);
      const auto path = config.output_dir / finetuned_predictions_name(config.eval_partition);
      detail::write_file_text(path.string(), serialize_predictions(preds));
      out << "wrote " << preds.size() << " predictions to " << path.string() << '\n';
    }
  }
  write_run_metadata(config, "finetune");
  return 0;
}

struct ZeroShotSummary {
  std::size_t answered = 0;
  std::size_t errors = 0;
  std::size_t resumed = 0;
};

// zeroshot: probe the remote backend over the evaluation partition and turn
// free-text answers into verdicts.
inline int cmd_zeroshot(const RunConfig& config, std::ostream& out,
                        ZeroShotSummary* summary = nullptr) {
  config.validate();
  if (config.backend != BackendKind::Remote) {
    throw ConfigError("zeroshot requires backend 'remote'");
  }
  OutputLock lock(config.output_dir);
  const auto manifest = load_config_manifest(config);
  const auto it = manifest.partitions.find(config.eval_partition);
  if (it == manifest.partitions.end()) {
    throw DataError("unknown partition '" + std::string(partition_name(config.eval_partition)) +
                    "'");
  }
  const auto& samples = it->second;
  const Lexicon lexicon = load_lexicon(config);
  const auto outcomes =
      batch_probe(config.remote, samples, config.prompt_template, config.question,
                  config.output_dir / transcript_name(config.eval_partition),
                  file_image_loader(config.resolved_image_root()));

  ZeroShotSummary s;
  std::vector<PredictionRecord> preds;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& o = outcomes[i];
    if (!o.ok()) {
      ++s.errors;
      continue;
    }
    ++s.answered;
    s.resumed += o.resumed ? 1 : 0;
    const auto verdict = extract_verdict(o.exchange->raw_response, lexicon);
    preds.push_back({samples[i].id, samples[i].label, to_predicted(verdict.value), std::nullopt});
  }
  const auto path = config.output_dir / zeroshot_predictions_name(config.eval_partition);
  detail::write_file_text(path.string(), serialize_predictions(preds));
  out << "answered " << s.answered << " (" << s.resumed << " resumed), errors " << s.errors
      << ", extractor " << lexicon.version << '\n';
  if (summary) *summary = s;
  write_run_metadata(config, "zeroshot");
  if (s.answered == 0) throw BackendError(BackendFailure::Transient, "no sample was answered", 0);
  return 0;
}

struct PredictionInput {
  ReportRole role = ReportRole::Ours;
  fs::path path;
};

inline std::string role_system_name(ReportRole role) {
  return role == ReportRole::Ours ? "Our Method" : "Zero-shot";
}

// evaluate: score prediction files and render the comparison table. Missing
// baselines only warn.
inline int cmd_evaluate(const RunConfig& config, std::vector<PredictionInput> inputs,
                        std::ostream& out, std::ostream& err) {
  OutputLock lock(config.output_dir);
  if (inputs.empty()) {
    const auto ours = config.output_dir / finetuned_predictions_name(config.eval_partition);
    const auto zs = config.output_dir / zeroshot_predictions_name(config.eval_partition);
    if (fs::exists(ours)) inputs.push_back({ReportRole::Ours, ours});
    if (fs::exists(zs)) inputs.push_back({ReportRole::ZeroShot, zs});
    if (inputs.empty()) throw DataError("no prediction files found in " + config.output_dir.string());
  }
  const Lexicon lexicon = load_lexicon(config);
  const BaselineTable baselines =
      config.baselines ? BaselineTable::load(config.baselines->string()) : BaselineTable::published();

  std::vector<RoleReport> reports;
  json metrics = json::array();
  for (const auto& in : inputs) {
    const auto records = load_predictions_file(in.path.string());
    if (records.empty()) throw DataError("predictions file " + in.path.string() + " is empty");
    auto m = score_predictions(records, role_system_name(in.role), config.split_name,
                               lexicon.version);
    metrics.push_back(metrics_to_json(m));
    reports.push_back({in.role, std::move(m)});
  }
  const auto cmp = compare_report(reports, baselines, config.gain_threshold);
  for (const auto& w : cmp.warnings) err << "warning: " << w << '\n';
  out << cmp.text;

  detail::write_file_text((config.output_dir / "report.txt").string(), cmp.text);
  json structured = cmp.structured;
  structured["reports"] = metrics;
  detail::write_file_text((config.output_dir / "report.json").string(), structured.dump(2) + "\n");
  write_run_metadata(config, "evaluate");
  return 0;
}

}  // namespace ooc::pipeline
