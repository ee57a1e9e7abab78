#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <string_view>

#include "ooc/common.hpp"

namespace ooc {

using FeatureVector = Eigen::VectorXd;

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

inline std::span<const std::uint8_t> as_bytes(std::string_view text) {
  return {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()};
}

// A frozen feature extractor. The toy kinds are deterministic and
// dependency-free; Custom wraps any callable and is used for fixtures.
//
// The per-dimension gain vector is the backend's parameter tensor. It stays at
// its initial value unless the backend is explicitly unfrozen, which the freeze
// audit treats as a contract violation.
class EncoderBackend {
 public:
  enum class Kind { ByteHistogram, TrigramHash, Custom };
  using Fn = std::function<FeatureVector(std::span<const std::uint8_t>)>;

  static constexpr std::string_view kByteHistogramName = "byte-histogram-256";
  static constexpr std::string_view kTrigramHashName = "char-trigram-hash-256";

  // Normalized 256-bin histogram of byte values (entries sum to 1).
  static EncoderBackend byte_histogram() {
    return EncoderBackend(Kind::ByteHistogram, std::string(kByteHistogramName), 256, {});
  }

  // Character trigrams hashed into 256 buckets, L2-normalized.
  static EncoderBackend trigram_hash() {
    return EncoderBackend(Kind::TrigramHash, std::string(kTrigramHashName), 256, {});
  }

  static EncoderBackend custom(std::string name, Eigen::Index dim, Fn fn) {
    if (dim <= 0) throw ConfigError("encoder output_dim must be positive");
    return EncoderBackend(Kind::Custom, std::move(name), dim, std::move(fn));
  }

  // Toy backends by registered name, used when restoring checkpoints.
  static EncoderBackend by_name(std::string_view name) {
    if (name == kByteHistogramName) return byte_histogram();
    if (name == kTrigramHashName) return trigram_hash();
    throw ConfigError("unknown encoder backend '" + std::string(name) + "'");
  }

  const std::string& name() const { return name_; }
  Eigen::Index output_dim() const { return dim_; }
  Kind kind() const { return kind_; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen) { frozen_ = frozen; }
  const Eigen::VectorXd& gains() const { return gains_; }
  Eigen::VectorXd& mutable_gains() { return gains_; }

  // Feature before the gain is applied.
  FeatureVector raw_features(std::span<const std::uint8_t> input) const {
    FeatureVector v;
    switch (kind_) {
      case Kind::ByteHistogram: v = histogram(input); break;
      case Kind::TrigramHash: v = trigrams(input); break;
      case Kind::Custom: v = fn_(input); break;
    }
    if (v.size() != dim_) {
      throw DataError("encoder '" + name_ + "' produced dimension " + std::to_string(v.size()) +
                      ", expected " + std::to_string(dim_));
    }
    if (!v.allFinite()) throw DataError("encoder '" + name_ + "' produced non-finite features");
    return v;
  }

  FeatureVector encode(std::span<const std::uint8_t> input) const {
    return raw_features(input).cwiseProduct(gains_);
  }

  // Fingerprint over everything that defines the backend's behaviour.
  std::uint64_t fingerprint() const {
    detail::Fnv1a h;
    h.update(name_);
    h.update_value(static_cast<int>(kind_));
    h.update_value(dim_);
    h.update_value(frozen_);
    h.update(gains_.data(), static_cast<std::size_t>(gains_.size()) * sizeof(double));
    return h.state;
  }

 private:
  EncoderBackend(Kind kind, std::string name, Eigen::Index dim, Fn fn)
      : kind_(kind),
        name_(std::move(name)),
        dim_(dim),
        gains_(Eigen::VectorXd::Ones(dim)),
        fn_(std::move(fn)) {}

  static FeatureVector histogram(std::span<const std::uint8_t> input) {
    FeatureVector v = FeatureVector::Zero(256);
    if (input.empty()) return v;
    for (auto b : input) v[b] += 1.0;
    return v / static_cast<double>(input.size());
  }

  static FeatureVector trigrams(std::span<const std::uint8_t> input) {
    FeatureVector v = FeatureVector::Zero(256);
    if (input.size() < 3) return v;
    for (std::size_t i = 0; i + 3 <= input.size(); ++i) {
      detail::Fnv1a h;
      h.update(input.data() + i, 3);
      v[static_cast<Eigen::Index>(h.state % 256)] += 1.0;
    }
    return v / v.norm();
  }

  Kind kind_;
  std::string name_;
  Eigen::Index dim_;
  bool frozen_ = true;
  Eigen::VectorXd gains_;
  Fn fn_;
};

inline FeatureVector encode_image(const EncoderBackend& backend,
                                  std::span<const std::uint8_t> image) {
  if (image.empty()) throw DataError("empty image bytes");
  return backend.encode(image);
}

inline FeatureVector encode_text(const EncoderBackend& backend, std::string_view text) {
  return backend.encode(as_bytes(text));
}

}  // namespace ooc
