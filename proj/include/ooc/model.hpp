#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ooc/encoders.hpp"
#include "ooc/manifest.hpp"
#include "ooc/prompt.hpp"

namespace ooc {

enum class Activation { Tanh, Identity };

inline std::string_view activation_name(Activation a) {
  return a == Activation::Tanh ? "tanh" : "identity";
}

struct ModelMetadata {
  PromptTemplate prompt_template = PromptTemplate::default_template();
  std::string question{kDefaultQuestion};
  std::uint64_t seed = 0;
  int epoch = 0;

  bool operator==(const ModelMetadata&) const = default;
};

// Frozen encoders, concatenation fusion, a trainable projection with a
// pointwise nonlinearity, and a trainable two-logit head:
//
//   hidden = act(W_p [f_img; f_txt] + b_p)
//   logits = W_c hidden + b_c            (index 0: match, 1: mismatch)
struct DetectorModel {
  EncoderBackend vision = EncoderBackend::byte_histogram();
  EncoderBackend text = EncoderBackend::trigram_hash();
  Eigen::MatrixXd projection_weight;  // hidden x (d_img + d_txt)
  Eigen::VectorXd projection_bias;    // hidden
  Eigen::MatrixXd classifier_weight;  // 2 x hidden
  Eigen::Vector2d classifier_bias = Eigen::Vector2d::Zero();
  Activation activation = Activation::Tanh;
  ModelMetadata meta;

  Eigen::Index input_dim() const { return vision.output_dim() + text.output_dim(); }
  Eigen::Index hidden_dim() const { return projection_weight.rows(); }

  // Throws DataError on inconsistent dimensions or non-finite weights.
  void validate() const {
    const auto h = projection_weight.rows();
    if (h <= 0) throw DataError("projection has no hidden units");
    if (projection_weight.cols() != input_dim()) {
      throw DataError("projection expects input dimension " +
                      std::to_string(projection_weight.cols()) + " but encoders produce " +
                      std::to_string(input_dim()));
    }
    if (projection_bias.size() != h) throw DataError("projection bias dimension mismatch");
    if (classifier_weight.rows() != 2 || classifier_weight.cols() != h) {
      throw DataError("classifier weight must be 2 x " + std::to_string(h));
    }
    if (!projection_weight.allFinite() || !projection_bias.allFinite() ||
        !classifier_weight.allFinite() || !classifier_bias.allFinite()) {
      throw DataError("model weights are not finite");
    }
  }

  // Uniform [-scale, scale] initialization from a seeded generator.
  static DetectorModel initialize(EncoderBackend vision, EncoderBackend text, Eigen::Index hidden,
                                  std::uint64_t seed, double scale = 0.05) {
    if (hidden <= 0) throw ConfigError("hidden width must be positive");
    DetectorModel m;
    m.vision = std::move(vision);
    m.text = std::move(text);
    m.meta.seed = seed;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-scale, scale);
    auto fill = [&](auto& mat) {
      for (Eigen::Index i = 0; i < mat.size(); ++i) mat.data()[i] = dist(rng);
    };
    m.projection_weight.resize(hidden, m.input_dim());
    m.projection_bias.resize(hidden);
    m.classifier_weight.resize(2, hidden);
    fill(m.projection_weight);
    fill(m.projection_bias);
    fill(m.classifier_weight);
    fill(m.classifier_bias);
    return m;
  }

  static DetectorModel initialize(Eigen::Index hidden, std::uint64_t seed) {
    return initialize(EncoderBackend::byte_histogram(), EncoderBackend::trigram_hash(), hidden,
                      seed);
  }
};

struct Logits {
  double match = 0.0;
  double mismatch = 0.0;

  double operator[](int i) const { return i == 0 ? match : mismatch; }
  bool operator==(const Logits&) const = default;
};

// Activations of one forward pass, kept for backpropagation.
template <typename T>
struct ForwardPass {
  Eigen::Matrix<T, Eigen::Dynamic, 1> input;
  Eigen::Matrix<T, Eigen::Dynamic, 1> pre_activation;
  Eigen::Matrix<T, Eigen::Dynamic, 1> hidden;
  Eigen::Matrix<T, 2, 1> logits;
};

template <typename T>
T apply_activation(Activation a, T x) {
  using std::tanh;
  return a == Activation::Tanh ? tanh(x) : x;
}

// Derivative expressed through the activation output.
template <typename T>
T activation_slope(Activation a, T out) {
  return a == Activation::Tanh ? T(1) - out * out : T(1);
}

inline Eigen::VectorXd fuse(const FeatureVector& image, const FeatureVector& text) {
  Eigen::VectorXd x(image.size() + text.size());
  x << image, text;
  return x;
}

template <typename T = double>
ForwardPass<T> forward(const DetectorModel& model, const Eigen::VectorXd& fused) {
  if (fused.size() != model.projection_weight.cols()) {
    throw DataError("fused feature dimension " + std::to_string(fused.size()) +
                    " does not match projection input " +
                    std::to_string(model.projection_weight.cols()));
  }
  ForwardPass<T> pass;
  pass.input = fused.cast<T>();
  if constexpr (std::is_same_v<T, double>) {
    pass.pre_activation = model.projection_weight * pass.input + model.projection_bias;
    pass.hidden = pass.pre_activation.unaryExpr(
        [a = model.activation](double v) { return apply_activation(a, v); });
    pass.logits = model.classifier_weight * pass.hidden + model.classifier_bias;
  } else {
    pass.pre_activation = model.projection_weight.cast<T>() * pass.input +
                          model.projection_bias.cast<T>();
    pass.hidden = pass.pre_activation.unaryExpr(
        [a = model.activation](T v) { return apply_activation(a, v); });
    pass.logits = model.classifier_weight.cast<T>() * pass.hidden + model.classifier_bias.cast<T>();
  }
  return pass;
}

inline Logits classify_features(const DetectorModel& model, const FeatureVector& image,
                                const FeatureVector& text) {
  const auto pass = forward(model, fuse(image, text));
  const Logits out{pass.logits[0], pass.logits[1]};
  if (!std::isfinite(out.match) || !std::isfinite(out.mismatch)) {
    throw DataError("non-finite logits");
  }
  return out;
}

inline Logits classify(const DetectorModel& model, std::span<const std::uint8_t> image,
                       std::string_view prompt) {
  if (model.vision.output_dim() + model.text.output_dim() != model.projection_weight.cols()) {
    throw DataError("encoder dimensions do not match the projection");
  }
  return classify_features(model, encode_image(model.vision, image),
                           encode_text(model.text, prompt));
}

struct Prediction {
  Label label = Label::Mismatch;
  double p_match = 0.5;

  double p_mismatch() const { return 1.0 - p_match; }
};

// Equal logits resolve to MISMATCH.
inline Prediction predict_from_logits(const Logits& logits) {
  Prediction p;
  p.label = logits.match > logits.mismatch ? Label::Match : Label::Mismatch;
  p.p_match = 1.0 / (1.0 + std::exp(logits.mismatch - logits.match));
  return p;
}

inline Prediction predict(const DetectorModel& model, std::span<const std::uint8_t> image,
                          std::string_view prompt) {
  return predict_from_logits(classify(model, image, prompt));
}

// Parameter groups for the freeze audit.
struct ParameterGroup {
  std::string name;
  bool trainable = false;
  std::uint64_t fingerprint = 0;
  std::vector<Eigen::Index> shape;
};

namespace detail {
template <typename Derived>
void hash_matrix(Fnv1a& h, const Eigen::MatrixBase<Derived>& m) {
  const Eigen::MatrixXd dense = m;
  h.update_value(dense.rows());
  h.update_value(dense.cols());
  h.update(dense.data(), static_cast<std::size_t>(dense.size()) * sizeof(double));
}
}  // namespace detail

inline std::vector<ParameterGroup> snapshot_parameters(const DetectorModel& model) {
  std::vector<ParameterGroup> groups;
  groups.push_back({"vision_encoder", false, model.vision.fingerprint(),
                    {model.vision.output_dim()}});
  groups.push_back({"text_encoder", false, model.text.fingerprint(), {model.text.output_dim()}});

  detail::Fnv1a proj;
  detail::hash_matrix(proj, model.projection_weight);
  detail::hash_matrix(proj, model.projection_bias);
  groups.push_back({"projection", true, proj.state,
                    {model.projection_weight.rows(), model.projection_weight.cols()}});

  detail::Fnv1a cls;
  detail::hash_matrix(cls, model.classifier_weight);
  detail::hash_matrix(cls, model.classifier_bias);
  groups.push_back({"classifier", true, cls.state,
                    {model.classifier_weight.rows(), model.classifier_weight.cols()}});
  return groups;
}

}  // namespace ooc
