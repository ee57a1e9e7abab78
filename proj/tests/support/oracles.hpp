#pragma once

// Independent reference computations used to freeze expected values. Nothing
// here calls into the library's numeric paths.

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// -log softmax(z)_y written directly from the definition.
inline long double softmax_cross_entropy(long double z0, long double z1, int y) {
  const long double num = std::exp(y == 0 ? z0 : z1);
  return -std::log(num / (std::exp(z0) + std::exp(z1)));
}

struct ScoredLabel {
  double score;
  bool positive;  // true MISMATCH
};

// Pairwise AUC count: returns (2 * wins + ties, 2 * n_pos * n_neg).
inline std::pair<std::uint64_t, std::uint64_t> brute_force_auc(std::span<const ScoredLabel> xs) {
  std::uint64_t twice = 0;
  std::uint64_t pairs = 0;
  for (const auto& p : xs) {
    if (!p.positive) continue;
    for (const auto& n : xs) {
      if (n.positive) continue;
      ++pairs;
      if (p.score > n.score) {
        twice += 2;
      } else if (p.score == n.score) {
        twice += 1;
      }
    }
  }
  return {twice, 2 * pairs};
}

// Plain-loop forward pass and weighted-mean cross-entropy in long double.
struct DenseParams {
  std::vector<std::vector<long double>> wp;  // hidden x in
  std::vector<long double> bp;
  std::vector<std::vector<long double>> wc;  // 2 x hidden
  std::vector<long double> bc;
  bool tanh_activation = true;
};

inline long double batch_loss(const DenseParams& p,
                              const std::vector<std::vector<long double>>& inputs,
                              const std::vector<int>& labels,
                              const std::vector<long double>& class_weight) {
  long double total = 0;
  long double wsum = 0;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    std::vector<long double> hidden(p.wp.size());
    for (std::size_t j = 0; j < p.wp.size(); ++j) {
      long double a = p.bp[j];
      for (std::size_t k = 0; k < inputs[n].size(); ++k) a += p.wp[j][k] * inputs[n][k];
      hidden[j] = p.tanh_activation ? std::tanh(a) : a;
    }
    long double z[2];
    for (int c = 0; c < 2; ++c) {
      z[c] = p.bc[c];
      for (std::size_t j = 0; j < hidden.size(); ++j) z[c] += p.wc[c][j] * hidden[j];
    }
    const long double w = class_weight[labels[n]];
    total += w * softmax_cross_entropy(z[0], z[1], labels[n]);
    wsum += w;
  }
  return total / wsum;
}

// Central difference of batch_loss with respect to one scalar parameter.
inline long double central_difference(DenseParams& p, long double& param,
                                      const std::vector<std::vector<long double>>& inputs,
                                      const std::vector<int>& labels,
                                      const std::vector<long double>& class_weight,
                                      long double step) {
  const long double saved = param;
  param = saved + step;
  const long double up = batch_loss(p, inputs, labels, class_weight);
  param = saved - step;
  const long double down = batch_loss(p, inputs, labels, class_weight);
  param = saved;
  return (up - down) / (2 * step);
}

inline std::vector<std::vector<long double>> to_rows(const Eigen::MatrixXd& m) {
  std::vector<std::vector<long double>> rows(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) rows[static_cast<std::size_t>(r)].push_back(m(r, c));
  }
  return rows;
}

inline std::vector<long double> to_vec(const Eigen::VectorXd& v) {
  return std::vector<long double>(v.data(), v.data() + v.size());
}

}  // namespace oracle
