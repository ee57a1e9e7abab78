// ooc: prepare -> (finetune | zeroshot) -> evaluate.
//
// Exit codes: 0 ok, 1 runtime failure, 2 config error, 3 data error,
// 4 backend error.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ooc/ooc.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<std::string> partition;
  std::optional<std::string> backend;
  std::optional<std::string> out;
};

void add_common_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Run configuration file")->required();
  cmd->add_option("--epochs", o.epochs, "Override train.epochs");
  cmd->add_option("--batch-size", o.batch_size, "Override train.batch_size");
  cmd->add_option("--lr", o.lr, "Override train.learning_rate");
  cmd->add_option("--partition", o.partition, "Partition to prepare or evaluate");
  cmd->add_option("--backend", o.backend, "toy | remote");
  cmd->add_option("--out", o.out, "Output directory");
}

ooc::RunConfig resolve(const Overrides& o, bool partition_is_eval) {
  auto config = ooc::load_run_config(o.config);
  if (o.epochs) config.train.epochs = *o.epochs;
  if (o.batch_size) config.train.batch_size = *o.batch_size;
  if (o.lr) config.train.learning_rate = *o.lr;
  if (o.partition) {
    const auto p = ooc::parse_partition(*o.partition);
    if (!p) throw ooc::ConfigError("unknown partition '" + *o.partition + "'");
    (partition_is_eval ? config.eval_partition : config.prepare_partition.emplace()) = *p;
  }
  if (o.backend) {
    if (*o.backend == "toy") {
      config.backend = ooc::BackendKind::Toy;
    } else if (*o.backend == "remote") {
      config.backend = ooc::BackendKind::Remote;
    } else {
      throw ooc::ConfigError("unknown backend '" + *o.backend + "'");
    }
  }
  if (o.out) config.output_dir = *o.out;
  return config;
}

std::vector<ooc::pipeline::PredictionInput> parse_prediction_inputs(
    const std::vector<std::string>& specs) {
  std::vector<ooc::pipeline::PredictionInput> inputs;
  for (const auto& spec : specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) {
      throw ooc::ConfigError("--predictions expects ROLE=PATH, got '" + spec + "'");
    }
    const auto role = spec.substr(0, eq);
    if (role == "ours") {
      inputs.push_back({ooc::ReportRole::Ours, spec.substr(eq + 1)});
    } else if (role == "zeroshot") {
      inputs.push_back({ooc::ReportRole::ZeroShot, spec.substr(eq + 1)});
    } else {
      throw ooc::ConfigError("unknown prediction role '" + role + "' (ours | zeroshot)");
    }
  }
  return inputs;
}

int write_synthetic(const std::string& dir, const ooc::synthetic::Options& opt) {
  const auto corpus = ooc::synthetic::generate(opt);
  const auto manifest = ooc::synthetic::write(corpus, dir);
  const ooc::json config = {{"manifest", "manifest.jsonl"},
                            {"split_name", "synthetic"},
                            {"output_dir", "out"},
                            {"seed", opt.seed}};
  ooc::detail::write_file_text((std::filesystem::path(dir) / "config.json").string(),
                               config.dump(2) + "\n");
  std::cout << "wrote " << corpus.manifest.size() << " samples to " << manifest.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Out-of-context image-caption detection toolkit"};
  app.require_subcommand(1);

  Overrides prepare_o, finetune_o, zeroshot_o, evaluate_o;
  auto* prepare = app.add_subcommand("prepare", "Validate a manifest and write fine-tune records");
  add_common_flags(prepare, prepare_o);
  auto* finetune = app.add_subcommand("finetune", "Train the projection and classifier");
  add_common_flags(finetune, finetune_o);
  auto* zeroshot = app.add_subcommand("zeroshot", "Probe a remote chat backend zero-shot");
  add_common_flags(zeroshot, zeroshot_o);
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions and render the report");
  add_common_flags(evaluate, evaluate_o);
  std::vector<std::string> prediction_specs;
  evaluate->add_option("--predictions", prediction_specs, "ROLE=PATH with ROLE ours|zeroshot");

  std::string synth_dir;
  ooc::synthetic::Options synth_opt;
  auto* synth = app.add_subcommand("synth", "Write a synthetic demo dataset and config");
  synth->add_option("--out", synth_dir, "Target directory")->required();
  synth->add_option("--train", synth_opt.n_train, "Training samples");
  synth->add_option("--val", synth_opt.n_val, "Validation samples");
  synth->add_option("--test", synth_opt.n_test, "Test samples");
  synth->add_option("--seed", synth_opt.seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ooc::ErrorKind::Config);
  }

  try {
    if (*prepare) return ooc::pipeline::cmd_prepare(resolve(prepare_o, false), std::cout);
    if (*finetune) return ooc::pipeline::cmd_finetune(resolve(finetune_o, true), std::cout);
    if (*zeroshot) return ooc::pipeline::cmd_zeroshot(resolve(zeroshot_o, true), std::cout);
    if (*evaluate) {
      return ooc::pipeline::cmd_evaluate(resolve(evaluate_o, true),
                                         parse_prediction_inputs(prediction_specs), std::cout,
                                         std::cerr);
    }
    if (*synth) return write_synthetic(synth_dir, synth_opt);
  } catch (const ooc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ooc::ErrorKind::Runtime);
  }
  return 0;
}
