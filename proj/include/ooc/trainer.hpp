#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ooc/checkpoint.hpp"
#include "ooc/model.hpp"

namespace ooc {

struct ClassWeights {
  double match = 1.0;
  double mismatch = 1.0;

  double operator[](Label y) const { return y == Label::Match ? match : mismatch; }
  bool operator==(const ClassWeights&) const = default;
};

struct TrainConfig {
  std::size_t batch_size = 4;
  std::size_t epochs = 30;
  double learning_rate = 0.2;
  ClassWeights class_weights;
  std::uint64_t seed = 0;
  bool shuffle = true;
  std::size_t keep_last = 3;
  bool audit_gradients = true;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning_rate must be finite and non-negative");
    }
    if (!(class_weights.match > 0.0) || !(class_weights.mismatch > 0.0)) {
      throw ConfigError("class weights must be positive");
    }
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_accuracy;
  std::size_t iterations = 0;
};

inline json epoch_stats_to_json(const EpochStats& s) {
  json j = {{"epoch", s.epoch},
            {"mean_loss", s.mean_loss},
            {"train_accuracy", s.train_accuracy},
            {"iterations", s.iterations}};
  j["val_accuracy"] = s.val_accuracy ? json(*s.val_accuracy) : json(nullptr);
  return j;
}

inline std::size_t iterations_per_epoch(std::size_t n_records, std::size_t batch_size) {
  return (n_records + batch_size - 1) / batch_size;
}

// Weighted-mean cross-entropy over two classes:
//   l_n = -w_{y_n} log softmax(x_n)_{y_n},   loss = sum l_n / sum w_{y_n}
// evaluated as w (logsumexp(x) - x_y) with the max subtracted first.
template <typename T = double>
T sample_cross_entropy(T z0, T z1, Label y) {
  using std::exp;
  using std::log;
  const T m = std::max(z0, z1);
  const T lse = m + log(exp(z0 - m) + exp(z1 - m));
  return lse - (y == Label::Match ? z0 : z1);
}

inline double cross_entropy(std::span<const Logits> logits, std::span<const Label> targets,
                            const ClassWeights& weights = {}) {
  if (logits.empty()) throw DataError("cross_entropy: empty batch");
  if (logits.size() != targets.size()) throw DataError("cross_entropy: size mismatch");
  double total = 0.0;
  double weight_sum = 0.0;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    if (!std::isfinite(logits[n].match) || !std::isfinite(logits[n].mismatch)) {
      throw DataError("cross_entropy: non-finite logits");
    }
    const double w = weights[targets[n]];
    total += w * sample_cross_entropy(logits[n].match, logits[n].mismatch, targets[n]);
    weight_sum += w;
  }
  return total / weight_sum;
}

// Record with its frozen-encoder features. Gains are applied at forward time so
// that an unfrozen encoder actually trains.
struct EncodedRecord {
  std::string id;
  FeatureVector image_raw;
  FeatureVector text_raw;
  Label label = Label::Match;
};

inline std::string record_prompt(const DetectorModel& model, const FineTuneRecord& record) {
  return build_prompt(model.meta.prompt_template, model.meta.question, record.caption);
}

inline EncodedRecord encode_record(const DetectorModel& model, const FineTuneRecord& record,
                                   const ImageLoader& load_image) {
  try {
    const Bytes image = load_image(record.image_ref);
    if (image.empty()) throw DataError("empty image bytes");
    return {record.id, model.vision.raw_features(image),
            model.text.raw_features(as_bytes(record_prompt(model, record))),
            token_label(record.label_token)};
  } catch (const Error& e) {
    throw DataError("record '" + record.id + "': " + e.what());
  }
}

inline std::vector<EncodedRecord> encode_records(const DetectorModel& model,
                                                 std::span<const FineTuneRecord> records,
                                                 const ImageLoader& load_image) {
  std::vector<EncodedRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode_record(model, r, load_image));
  return out;
}

inline Eigen::VectorXd fused_input(const DetectorModel& model, const EncodedRecord& r) {
  return fuse(r.image_raw.cwiseProduct(model.vision.gains()),
              r.text_raw.cwiseProduct(model.text.gains()));
}

struct Gradients {
  Eigen::MatrixXd projection_weight;
  Eigen::VectorXd projection_bias;
  Eigen::MatrixXd classifier_weight;
  Eigen::Vector2d classifier_bias;
  Eigen::VectorXd vision_gains;
  Eigen::VectorXd text_gains;

  double max_abs() const {
    double m = 0.0;
    for (const Eigen::MatrixXd* g : {&projection_weight, &classifier_weight}) {
      if (g->size()) m = std::max(m, g->cwiseAbs().maxCoeff());
    }
    for (const Eigen::VectorXd* g : {&projection_bias, &vision_gains, &text_gains}) {
      if (g->size()) m = std::max(m, g->cwiseAbs().maxCoeff());
    }
    return std::max(m, classifier_bias.cwiseAbs().maxCoeff());
  }
};

struct LossAndGradients {
  double loss = 0.0;
  double weight_sum = 0.0;
  Gradients grads;
};

// Analytic backpropagation of the weighted-mean cross-entropy.
inline LossAndGradients loss_and_gradients(const DetectorModel& model,
                                           std::span<const EncodedRecord> batch,
                                           const ClassWeights& weights) {
  if (batch.empty()) throw DataError("empty batch");
  LossAndGradients out;
  auto& g = out.grads;
  g.projection_weight = Eigen::MatrixXd::Zero(model.projection_weight.rows(),
                                              model.projection_weight.cols());
  g.projection_bias = Eigen::VectorXd::Zero(model.projection_bias.size());
  g.classifier_weight = Eigen::MatrixXd::Zero(2, model.classifier_weight.cols());
  g.classifier_bias = Eigen::Vector2d::Zero();
  const bool vision_trains = !model.vision.frozen();
  const bool text_trains = !model.text.frozen();
  if (vision_trains) g.vision_gains = Eigen::VectorXd::Zero(model.vision.output_dim());
  if (text_trains) g.text_gains = Eigen::VectorXd::Zero(model.text.output_dim());

  for (const auto& r : batch) out.weight_sum += weights[r.label];

  for (const auto& r : batch) {
    const auto pass = forward(model, fused_input(model, r));
    const double z0 = pass.logits[0];
    const double z1 = pass.logits[1];
    if (!std::isfinite(z0) || !std::isfinite(z1)) {
      throw DataError("record '" + r.id + "': non-finite logits");
    }
    const double w = weights[r.label] / out.weight_sum;
    out.loss += w * sample_cross_entropy(z0, z1, r.label);

    const double p_match = 1.0 / (1.0 + std::exp(z1 - z0));
    Eigen::Vector2d dz(p_match, 1.0 - p_match);
    dz[label_index(r.label)] -= 1.0;
    dz *= w;

    g.classifier_weight.noalias() += dz * pass.hidden.transpose();
    g.classifier_bias += dz;
    Eigen::VectorXd da = model.classifier_weight.transpose() * dz;
    for (Eigen::Index j = 0; j < da.size(); ++j) {
      da[j] *= activation_slope(model.activation, pass.hidden[j]);
    }
    g.projection_weight.noalias() += da * pass.input.transpose();
    g.projection_bias += da;

    if (vision_trains || text_trains) {
      const Eigen::VectorXd dx = model.projection_weight.transpose() * da;
      const auto dv = model.vision.output_dim();
      if (vision_trains) g.vision_gains += dx.head(dv).cwiseProduct(r.image_raw);
      if (text_trains) g.text_gains += dx.tail(model.text.output_dim()).cwiseProduct(r.text_raw);
    }
  }
  return out;
}

inline void apply_gradients(DetectorModel& model, const Gradients& g, double learning_rate) {
  if (learning_rate == 0.0) return;
  model.projection_weight -= learning_rate * g.projection_weight;
  model.projection_bias -= learning_rate * g.projection_bias;
  model.classifier_weight -= learning_rate * g.classifier_weight;
  model.classifier_bias -= learning_rate * g.classifier_bias;
  if (!model.vision.frozen() && g.vision_gains.size()) {
    model.vision.mutable_gains() -= learning_rate * g.vision_gains;
  }
  if (!model.text.frozen() && g.text_gains.size()) {
    model.text.mutable_gains() -= learning_rate * g.text_gains;
  }
}

struct StepResult {
  double loss = 0.0;  // before the update
  double weight_sum = 0.0;
  double max_abs_gradient = 0.0;
};

inline StepResult train_step_encoded(DetectorModel& model, std::span<const EncodedRecord> batch,
                                     const TrainConfig& config) {
  auto lg = loss_and_gradients(model, batch, config.class_weights);
  apply_gradients(model, lg.grads, config.learning_rate);
  return {lg.loss, lg.weight_sum, lg.grads.max_abs()};
}

// One plain gradient-descent step on a batch; returns the pre-update loss.
inline double train_step(DetectorModel& model, std::span<const FineTuneRecord> batch,
                         const TrainConfig& config, const ImageLoader& load_image) {
  config.validate();
  model.validate();
  const auto encoded = encode_records(model, batch, load_image);
  return train_step_encoded(model, encoded, config).loss;
}

// ---------------------------------------------------------------------------
// Finite-difference audit of the analytic gradient.

inline constexpr double kAuditStep = 1e-5;
inline constexpr double kAuditTolerance = 1e-4;
// Denominator floor for the relative error; both gradients below it compare
// on an absolute scale of kAuditTolerance * kAuditFloor.
inline constexpr double kAuditFloor = 1e-8;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kAuditFloor});
  return std::abs(analytic - numeric) / denom;
}

struct GradientAudit {
  std::size_t parameters_checked = 0;
  double max_relative_error = 0.0;
  std::string worst_parameter;

  bool passed(double tolerance = kAuditTolerance) const {
    return max_relative_error <= tolerance;
  }
};

// Central differences of the loss for every projection and classifier entry.
// The loss is re-evaluated in long double, updating only the activations a
// perturbed parameter touches.
inline GradientAudit audit_gradients(const DetectorModel& model,
                                     std::span<const EncodedRecord> batch,
                                     const ClassWeights& weights, double step = kAuditStep) {
  using LD = long double;
  const auto analytic = loss_and_gradients(model, batch, weights).grads;
  const std::size_t n = batch.size();
  const Eigen::Index h = model.hidden_dim();

  std::vector<ForwardPass<LD>> passes;
  std::vector<LD> w(n);
  LD weight_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    passes.push_back(forward<LD>(model, fused_input(model, batch[i])));
    w[i] = static_cast<LD>(weights[batch[i].label]);
    weight_sum += w[i];
  }
  const Eigen::Matrix<LD, Eigen::Dynamic, Eigen::Dynamic> wc = model.classifier_weight.cast<LD>();

  // Loss with sample i's logits replaced by z(i).
  auto loss_with = [&](const auto& logits_of) {
    LD total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Matrix<LD, 2, 1> z = logits_of(i);
      total += w[i] * sample_cross_entropy<LD>(z[0], z[1], batch[i].label);
    }
    return total / weight_sum;
  };

  GradientAudit audit;
  auto record = [&](double a, LD plus, LD minus, const std::string& name) {
    const double numeric = static_cast<double>((plus - minus) / (2 * static_cast<LD>(step)));
    const double err = relative_error(a, numeric);
    ++audit.parameters_checked;
    if (err > audit.max_relative_error || audit.worst_parameter.empty()) {
      audit.max_relative_error = err;
      audit.worst_parameter = name;
    }
  };
  const LD d = static_cast<LD>(step);

  for (int c = 0; c < 2; ++c) {
    for (Eigen::Index j = 0; j < h; ++j) {
      auto shifted = [&](LD delta) {
        return loss_with([&](std::size_t i) {
          Eigen::Matrix<LD, 2, 1> z = passes[i].logits;
          z[c] += delta * passes[i].hidden[j];
          return z;
        });
      };
      record(analytic.classifier_weight(c, j), shifted(d), shifted(-d),
             "classifier.weight[" + std::to_string(c) + "," + std::to_string(j) + "]");
    }
    auto shifted = [&](LD delta) {
      return loss_with([&](std::size_t i) {
        Eigen::Matrix<LD, 2, 1> z = passes[i].logits;
        z[c] += delta;
        return z;
      });
    };
    record(analytic.classifier_bias[c], shifted(d), shifted(-d),
           "classifier.bias[" + std::to_string(c) + "]");
  }

  const Eigen::Index in_dim = model.projection_weight.cols();
  for (Eigen::Index j = 0; j < h; ++j) {
    // k == in_dim stands for the bias entry.
    for (Eigen::Index k = 0; k <= in_dim; ++k) {
      auto shifted = [&](LD delta) {
        return loss_with([&](std::size_t i) {
          const LD x = k == in_dim ? LD(1) : passes[i].input[k];
          const LD a = passes[i].pre_activation[j] + delta * x;
          const LD moved = apply_activation(model.activation, a) - passes[i].hidden[j];
          Eigen::Matrix<LD, 2, 1> z = passes[i].logits;
          z[0] += wc(0, j) * moved;
          z[1] += wc(1, j) * moved;
          return z;
        });
      };
      const double a = k == in_dim ? analytic.projection_bias[j] : analytic.projection_weight(j, k);
      record(a, shifted(d), shifted(-d),
             k == in_dim ? "projection.bias[" + std::to_string(j) + "]"
                         : "projection.weight[" + std::to_string(j) + "," + std::to_string(k) +
                               "]");
    }
  }
  return audit;
}

// ---------------------------------------------------------------------------
// Freeze verification.

struct GroupChange {
  std::string name;
  bool trainable = false;
  bool changed = false;
};

struct FreezeReport {
  std::vector<GroupChange> groups;
  bool passed = true;
  std::vector<std::string> failures;
  std::string note;

  std::string to_string() const {
    std::ostringstream os;
    for (const auto& g : groups) {
      os << g.name << " (" << (g.trainable ? "trainable" : "frozen")
         << "): changed=" << (g.changed ? "yes" : "no") << '\n';
    }
    if (!note.empty()) os << "note: " << note << '\n';
    for (const auto& f : failures) os << "FAIL: " << f << '\n';
    os << (passed ? "freeze check passed" : "freeze check FAILED") << '\n';
    return os.str();
  }
};

// expect_update: the run had lr > 0 and a nonzero gradient, so some trainable
// group must have moved.
inline FreezeReport verify_frozen(const std::vector<ParameterGroup>& before,
                                  const DetectorModel& after, bool expect_update) {
  const auto now = snapshot_parameters(after);
  if (now.size() != before.size()) throw DataError("snapshot group count mismatch");
  FreezeReport report;
  bool any_trainable_changed = false;
  for (std::size_t i = 0; i < now.size(); ++i) {
    if (now[i].name != before[i].name || now[i].shape != before[i].shape) {
      throw DataError("snapshot shape mismatch for group '" + before[i].name + "'");
    }
    const bool changed = now[i].fingerprint != before[i].fingerprint;
    report.groups.push_back({now[i].name, now[i].trainable, changed});
    if (now[i].trainable) {
      any_trainable_changed = any_trainable_changed || changed;
    } else if (changed) {
      report.failures.push_back("frozen group '" + now[i].name + "' changed");
    }
  }
  if (!after.vision.frozen()) {
    report.failures.push_back("frozen group 'vision_encoder' is marked trainable");
  }
  if (!after.text.frozen()) {
    report.failures.push_back("frozen group 'text_encoder' is marked trainable");
  }
  if (!any_trainable_changed) {
    if (expect_update) {
      report.failures.push_back("no trainable group changed despite a nonzero update");
    } else {
      report.note = "no-op training: all parameter groups unchanged";
    }
  }
  report.passed = report.failures.empty();
  return report;
}

// ---------------------------------------------------------------------------
// Fine-tuning loop.

struct FineTuneOptions {
  ImageLoader load_image = file_image_loader();
  // Per-epoch checkpoints and history go here when set.
  std::optional<std::filesystem::path> output_dir;
};

struct FineTuneResult {
  DetectorModel model;
  std::vector<EpochStats> history;
  GradientAudit audit;
  std::vector<ParameterGroup> initial_snapshot;
  bool had_nonzero_update = false;
  std::vector<std::string> checkpoints;
};

// Thrown when checkpointing fails mid-run; carries the epochs completed so far.
class TrainingAborted : public RuntimeFailure {
 public:
  TrainingAborted(const std::string& what, std::vector<EpochStats> history)
      : RuntimeFailure(what), history_(std::move(history)) {}
  const std::vector<EpochStats>& history() const { return history_; }

 private:
  std::vector<EpochStats> history_;
};

inline double accuracy_on(const DetectorModel& model, std::span<const EncodedRecord> records) {
  if (records.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& r : records) {
    const auto pass = forward(model, fused_input(model, r));
    const auto p = predict_from_logits({pass.logits[0], pass.logits[1]});
    if (p.label == r.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

inline std::string checkpoint_name(std::size_t epoch) {
  return "ckpt-epoch" + std::to_string(epoch) + ".json";
}

inline FineTuneResult fine_tune(DetectorModel model, std::span<const FineTuneRecord> train,
                                std::span<const FineTuneRecord> val, const TrainConfig& config,
                                const FineTuneOptions& options = {}) {
  config.validate();
  model.validate();
  if (train.empty()) throw DataError("fine_tune: no training records");

  FineTuneResult result;
  result.initial_snapshot = snapshot_parameters(model);
  const auto train_enc = encode_records(model, train, options.load_image);
  const auto val_enc = encode_records(model, val, options.load_image);

  if (config.audit_gradients) {
    const std::size_t n_audit = std::min(config.batch_size, train_enc.size());
    result.audit = audit_gradients(model, std::span(train_enc).first(n_audit),
                                   config.class_weights);
    if (!result.audit.passed()) {
      throw RuntimeFailure("gradient audit failed: relative error " +
                           std::to_string(result.audit.max_relative_error) + " at " +
                           result.audit.worst_parameter);
    }
  }

  std::filesystem::path history_path;
  if (options.output_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*options.output_dir, ec);
    history_path = *options.output_dir / "history.jsonl";
    std::ofstream(history_path, std::ios::trunc);
  }

  std::vector<std::size_t> order(train_enc.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(config.seed);
  std::vector<EncodedRecord> batch;
  std::optional<double> best_score;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    stats.epoch = epoch;
    double loss_total = 0.0;
    double weight_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(train_enc[order[i]]);
      const auto step = train_step_encoded(model, batch, config);
      loss_total += step.loss * step.weight_sum;
      weight_total += step.weight_sum;
      if (config.learning_rate > 0.0 && step.max_abs_gradient > 0.0) {
        result.had_nonzero_update = true;
      }
      ++stats.iterations;
    }
    stats.mean_loss = loss_total / weight_total;
    stats.train_accuracy = accuracy_on(model, train_enc);
    if (!val_enc.empty()) stats.val_accuracy = accuracy_on(model, val_enc);
    model.meta.epoch = static_cast<int>(epoch);
    result.history.push_back(stats);

    if (options.output_dir) {
      try {
        {
          std::ofstream hist(history_path, std::ios::app);
          hist << epoch_stats_to_json(stats).dump() << '\n';
          if (!hist) throw RuntimeFailure("cannot append to " + history_path.string());
        }
        const auto path = *options.output_dir / checkpoint_name(epoch);
        save_checkpoint(model, path.string());
        result.checkpoints.push_back(path.string());
        if (epoch > config.keep_last && config.keep_last > 0) {
          std::filesystem::remove(*options.output_dir / checkpoint_name(epoch - config.keep_last));
        }
        // Best by validation accuracy, or by training loss without a validation set.
        const double score = stats.val_accuracy ? *stats.val_accuracy : -stats.mean_loss;
        if (!best_score || score > *best_score) {
          best_score = score;
          save_checkpoint(model, (*options.output_dir / "ckpt-best.json").string());
        }
      } catch (const std::exception& e) {
        throw TrainingAborted(std::string("checkpointing failed: ") + e.what(), result.history);
      }
    }
  }
  result.model = std::move(model);
  return result;
}

}  // namespace ooc
