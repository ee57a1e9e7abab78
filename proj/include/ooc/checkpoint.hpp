#pragma once

#include <string>

#include "ooc/model.hpp"

namespace ooc {

inline constexpr std::string_view kCheckpointFormat = "ooc-detector-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw DataError("checkpoint: '" + what + "' must be a matrix");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw DataError("checkpoint: ragged matrix '" + what + "'");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline Eigen::VectorXd vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw DataError("checkpoint: '" + what + "' must be a vector");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

inline json backend_to_json(const EncoderBackend& b) {
  return {{"name", b.name()},
          {"dim", b.output_dim()},
          {"frozen", b.frozen()},
          {"gains", vector_to_json(b.gains())}};
}

inline EncoderBackend backend_from_json(const json& j) {
  EncoderBackend b = EncoderBackend::by_name(j.at("name").get<std::string>());
  if (j.at("dim").get<Eigen::Index>() != b.output_dim()) {
    throw DataError("checkpoint: backend '" + b.name() + "' dimension mismatch");
  }
  Eigen::VectorXd gains = vector_from_json(j.at("gains"), "gains");
  if (gains.size() != b.output_dim()) {
    throw DataError("checkpoint: backend '" + b.name() + "' gain dimension mismatch");
  }
  b.mutable_gains() = std::move(gains);
  b.set_frozen(j.at("frozen").get<bool>());
  return b;
}

}  // namespace detail

inline json checkpoint_to_json(const DetectorModel& model) {
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"vision_backend", detail::backend_to_json(model.vision)},
          {"text_backend", detail::backend_to_json(model.text)},
          {"activation", activation_name(model.activation)},
          {"projection",
           {{"weight", detail::matrix_to_json(model.projection_weight)},
            {"bias", detail::vector_to_json(model.projection_bias)}}},
          {"classifier",
           {{"weight", detail::matrix_to_json(model.classifier_weight)},
            {"bias", detail::vector_to_json(model.classifier_bias)}}},
          {"metadata",
           {{"template_id", model.meta.prompt_template.id()},
            {"template_text", model.meta.prompt_template.text()},
            {"question", model.meta.question},
            {"seed", model.meta.seed},
            {"epoch", model.meta.epoch}}}};
}

inline DetectorModel checkpoint_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) {
      throw DataError("checkpoint: unexpected format tag");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw DataError("checkpoint: unsupported version " + j.at("version").dump());
    }
    DetectorModel m;
    m.vision = detail::backend_from_json(j.at("vision_backend"));
    m.text = detail::backend_from_json(j.at("text_backend"));
    const auto act = j.at("activation").get<std::string>();
    if (act == "tanh") {
      m.activation = Activation::Tanh;
    } else if (act == "identity") {
      m.activation = Activation::Identity;
    } else {
      throw DataError("checkpoint: unknown activation '" + act + "'");
    }
    m.projection_weight = detail::matrix_from_json(j.at("projection").at("weight"), "projection");
    m.projection_bias = detail::vector_from_json(j.at("projection").at("bias"), "projection bias");
    m.classifier_weight = detail::matrix_from_json(j.at("classifier").at("weight"), "classifier");
    const Eigen::VectorXd cb =
        detail::vector_from_json(j.at("classifier").at("bias"), "classifier bias");
    if (cb.size() != 2) throw DataError("checkpoint: classifier bias must have 2 entries");
    m.classifier_bias = cb;
    const auto& meta = j.at("metadata");
    m.meta.prompt_template = PromptTemplate(meta.at("template_id").get<std::string>(),
                                            meta.at("template_text").get<std::string>());
    m.meta.question = meta.at("question").get<std::string>();
    m.meta.seed = meta.at("seed").get<std::uint64_t>();
    m.meta.epoch = meta.at("epoch").get<int>();
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

inline std::string serialize_checkpoint(const DetectorModel& model) {
  return checkpoint_to_json(model).dump(1) + "\n";
}

inline void save_checkpoint(const DetectorModel& model, const std::string& path) {
  detail::write_file_text(path, serialize_checkpoint(model));
}

inline DetectorModel load_checkpoint(const std::string& path) {
  json j;
  try {
    j = json::parse(detail::read_file_text(path));
  } catch (const json::parse_error& e) {
    throw DataError("checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace ooc
