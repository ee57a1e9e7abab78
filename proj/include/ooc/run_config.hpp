#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ooc/chat_backend.hpp"
#include "ooc/manifest.hpp"
#include "ooc/prompt.hpp"
#include "ooc/trainer.hpp"

namespace ooc {

enum class BackendKind { Toy, Remote };

struct RunConfig {
  std::filesystem::path manifest;
  std::string split_name;
  std::optional<PartitionCounts> declared_counts;
  Partition train_partition = Partition::Train;
  Partition val_partition = Partition::Val;
  Partition eval_partition = Partition::Test;
  // Restricts `prepare` to one partition.
  std::optional<Partition> prepare_partition;
  PromptTemplate prompt_template = PromptTemplate::default_template();
  std::string question{kDefaultQuestion};
  TrainConfig train;
  Eigen::Index hidden_dim = 64;
  std::vector<std::string> unfrozen_encoders;
  BackendKind backend = BackendKind::Toy;
  ChatBackendConfig remote;
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> image_root;
  std::optional<std::filesystem::path> lexicon;
  std::optional<std::filesystem::path> baselines;
  double gain_threshold = 0.08;
  std::uint64_t seed = 0;

  std::filesystem::path resolved_image_root() const {
    if (image_root) return *image_root;
    return manifest.parent_path();
  }

  void validate() const {
    if (manifest.empty()) throw ConfigError("config: 'manifest' is required");
    train.validate();
    if (hidden_dim <= 0) throw ConfigError("config: hidden_dim must be positive");
    for (const auto& e : unfrozen_encoders) {
      if (e != "vision" && e != "text") throw ConfigError("config: unknown encoder '" + e + "'");
    }
    if (backend == BackendKind::Remote) remote.validate();
  }
};

namespace detail {

inline Partition partition_from_config(const json& j, const char* key) {
  const auto name = j.get<std::string>();
  const auto p = parse_partition(name);
  if (!p) throw ConfigError(std::string("config: unknown partition '") + name + "' for " + key);
  return *p;
}

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + where);
  }
}

inline std::filesystem::path resolve_path(const std::filesystem::path& base,
                                          const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

}  // namespace detail

// Relative paths inside the file are resolved against base_dir.
inline RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config: expected an object");
    detail::reject_unknown_keys(
        j,
        {"manifest", "split_name", "declared_counts", "partitions", "template", "question",
         "train", "backend", "toy", "remote", "output_dir", "image_root", "lexicon", "baselines",
         "gain_threshold", "seed"},
        "top level");
    if (j.contains("manifest")) {
      c.manifest = detail::resolve_path(base_dir, j["manifest"].get<std::string>());
    }
    c.split_name = j.value("split_name", std::string());
    if (j.contains("declared_counts")) {
      PartitionCounts counts;
      for (const auto& [name, v] : j["declared_counts"].items()) {
        const auto p = parse_partition(name);
        if (!p) throw ConfigError("config: unknown partition '" + name + "' in declared_counts");
        counts[*p] = v.get<std::size_t>();
      }
      c.declared_counts = std::move(counts);
    }
    if (j.contains("partitions")) {
      const auto& p = j["partitions"];
      detail::reject_unknown_keys(p, {"train", "val", "eval"}, "partitions");
      if (p.contains("train")) c.train_partition = detail::partition_from_config(p["train"], "train");
      if (p.contains("val")) c.val_partition = detail::partition_from_config(p["val"], "val");
      if (p.contains("eval")) c.eval_partition = detail::partition_from_config(p["eval"], "eval");
    }
    if (j.contains("template")) {
      const auto& t = j["template"];
      detail::reject_unknown_keys(t, {"id", "text"}, "template");
      c.prompt_template = PromptTemplate(t.at("id").get<std::string>(),
                                         t.at("text").get<std::string>());
    }
    c.question = j.value("question", std::string(kDefaultQuestion));
    c.seed = j.value("seed", std::uint64_t{0});
    c.train.seed = c.seed;
    if (j.contains("train")) {
      const auto& t = j["train"];
      detail::reject_unknown_keys(t,
                                  {"batch_size", "epochs", "learning_rate", "class_weights",
                                   "shuffle", "keep_last", "hidden_dim", "unfrozen_encoders",
                                   "audit_gradients"},
                                  "train");
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      if (t.contains("class_weights")) {
        const auto w = t["class_weights"].get<std::vector<double>>();
        if (w.size() != 2) throw ConfigError("config: class_weights needs two entries");
        c.train.class_weights = {w[0], w[1]};
      }
      c.train.shuffle = t.value("shuffle", c.train.shuffle);
      c.train.keep_last = t.value("keep_last", c.train.keep_last);
      c.train.audit_gradients = t.value("audit_gradients", c.train.audit_gradients);
      c.hidden_dim = t.value("hidden_dim", c.hidden_dim);
      c.unfrozen_encoders = t.value("unfrozen_encoders", std::vector<std::string>{});
    }
    const auto backend = j.value("backend", std::string("toy"));
    if (backend == "toy") {
      c.backend = BackendKind::Toy;
    } else if (backend == "remote") {
      c.backend = BackendKind::Remote;
      if (!j.contains("remote")) throw ConfigError("config: backend 'remote' needs a remote block");
    } else {
      throw ConfigError("config: unknown backend '" + backend + "'");
    }
    if (j.contains("remote")) {
      const auto& r = j["remote"];
      detail::reject_unknown_keys(r,
                                  {"endpoint", "auth_env_var", "timeout", "max_retries",
                                   "backoff_base", "max_in_flight"},
                                  "remote");
      c.remote.endpoint = r.value("endpoint", std::string());
      c.remote.auth_env_var = r.value("auth_env_var", std::string());
      c.remote.timeout_seconds = r.value("timeout", c.remote.timeout_seconds);
      c.remote.max_retries = r.value("max_retries", c.remote.max_retries);
      c.remote.backoff_base_seconds = r.value("backoff_base", c.remote.backoff_base_seconds);
      c.remote.max_in_flight = r.value("max_in_flight", c.remote.max_in_flight);
    }
    if (j.contains("output_dir")) {
      c.output_dir = detail::resolve_path(base_dir, j["output_dir"].get<std::string>());
    }
    if (j.contains("image_root") && !j["image_root"].is_null()) {
      c.image_root = detail::resolve_path(base_dir, j["image_root"].get<std::string>());
    }
    if (j.contains("lexicon") && !j["lexicon"].is_null()) {
      c.lexicon = detail::resolve_path(base_dir, j["lexicon"].get<std::string>());
    }
    if (j.contains("baselines") && !j["baselines"].is_null()) {
      c.baselines = detail::resolve_path(base_dir, j["baselines"].get<std::string>());
    }
    c.gain_threshold = j.value("gain_threshold", c.gain_threshold);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(detail::read_file_text(path.string()));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

// The resolved configuration, echoed into every output directory. Only the
// active backend block appears.
inline json run_config_to_json(const RunConfig& c) {
  json j;
  j["manifest"] = c.manifest.string();
  j["split_name"] = c.split_name;
  if (c.declared_counts) {
    json counts = json::object();
    for (const auto& [p, n] : *c.declared_counts) counts[std::string(partition_name(p))] = n;
    j["declared_counts"] = counts;
  }
  j["partitions"] = {{"train", partition_name(c.train_partition)},
                     {"val", partition_name(c.val_partition)},
                     {"eval", partition_name(c.eval_partition)}};
  j["template"] = {{"id", c.prompt_template.id()}, {"text", c.prompt_template.text()}};
  j["question"] = c.question;
  j["train"] = {{"batch_size", c.train.batch_size},
                {"epochs", c.train.epochs},
                {"learning_rate", c.train.learning_rate},
                {"class_weights", {c.train.class_weights.match, c.train.class_weights.mismatch}},
                {"shuffle", c.train.shuffle},
                {"keep_last", c.train.keep_last},
                {"hidden_dim", c.hidden_dim},
                {"unfrozen_encoders", c.unfrozen_encoders},
                {"audit_gradients", c.train.audit_gradients}};
  if (c.backend == BackendKind::Toy) {
    j["backend"] = "toy";
  } else {
    j["backend"] = "remote";
    j["remote"] = {{"endpoint", c.remote.endpoint},
                   {"auth_env_var", c.remote.auth_env_var},
                   {"timeout", c.remote.timeout_seconds},
                   {"max_retries", c.remote.max_retries},
                   {"backoff_base", c.remote.backoff_base_seconds},
                   {"max_in_flight", c.remote.max_in_flight}};
  }
  j["output_dir"] = c.output_dir.string();
  j["image_root"] = c.resolved_image_root().string();
  j["lexicon"] = c.lexicon ? json(c.lexicon->string()) : json(nullptr);
  j["baselines"] = c.baselines ? json(c.baselines->string()) : json(nullptr);
  j["gain_threshold"] = c.gain_threshold;
  j["seed"] = c.seed;
  return j;
}

}  // namespace ooc
