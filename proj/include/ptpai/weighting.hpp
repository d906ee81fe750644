#pragma once

#include <cmath>
#include <vector>

#include "ptpai/common.hpp"

namespace ptpai {

inline constexpr double kProbEps = 1e-7;

inline double clamp_prob(double p) {
  return std::min(std::max(p, kProbEps), 1.0 - kProbEps);
}

// Class/instance weights for one training state. omega_c is refreshed once
// per epoch over the full target split; the instance weights are per batch.
struct WeightState {
  Vector omega_c;   // [|Cs|], max-normalized
  Vector omega_si;  // per source row in the batch, mean-normalized
  Vector omega_ti;  // per target row in the batch
};

// omega_c = mean of target pseudo-label rows, then divided by its maximum.
inline Vector class_level_weights(const Matrix& target_probs) {
  require(target_probs.rows() > 0, ErrorCode::invalid_input,
          "class weights: no target predictions");
  Vector w = target_probs.colwise().mean().transpose();
  double mx = w.maxCoeff();
  require(mx > 0.0, ErrorCode::invalid_input,
          "class weights: degenerate prediction mean");
  return w / mx;
}

// w_i = 1 - domain_score_i, normalized to unit mean within the mini-batch.
inline Vector source_instance_weights(const Vector& domain_scores) {
  require(domain_scores.size() > 0, ErrorCode::invalid_input,
          "source weights: empty scores");
  Vector w = (1.0 - domain_scores.array()).matrix();
  double mean = w.mean();
  require(mean > 0.0, ErrorCode::degenerate_weights,
          "source weights: all domain scores saturated at 1");
  return w / mean;
}

// w_j = max_c pseudo_prob[j, c].
inline Vector target_instance_weights(const Matrix& target_probs) {
  return target_probs.rowwise().maxCoeff();
}

// Binary cross-entropy losses of the auxiliary classifier (leaky-softmax
// against one-hot source labels, all classes) and the auxiliary domain
// discriminator (class-sum scores: source -> 1, target -> 0).
inline std::pair<double, double> auxiliary_losses(
    const Matrix& src_leaky, const std::vector<int>& src_labels,
    const Vector& src_scores, const Vector& tgt_scores) {
  const int ns = static_cast<int>(src_leaky.rows());
  const int nc = static_cast<int>(src_leaky.cols());
  require(ns > 0 && static_cast<int>(src_labels.size()) == ns,
          ErrorCode::shape, "aux losses: label/batch mismatch");
  require(src_scores.size() == ns, ErrorCode::shape,
          "aux losses: score/batch mismatch");
  require(tgt_scores.size() > 0, ErrorCode::invalid_input,
          "aux losses: no target scores");

  double l_gy = 0.0;
  for (int i = 0; i < ns; ++i) {
    const int yi = src_labels[static_cast<std::size_t>(i)];
    require(yi >= 0 && yi < nc, ErrorCode::invalid_input,
            "aux losses: label out of range");
    for (int c = 0; c < nc; ++c) {
      const double q = clamp_prob(src_leaky(i, c));
      l_gy -= c == yi ? std::log(q) : std::log(1.0 - q);
    }
  }
  l_gy /= ns;

  double l_gd = 0.0;
  for (int i = 0; i < ns; ++i) l_gd -= std::log(clamp_prob(src_scores[i]));
  l_gd /= ns;
  double l_gd_t = 0.0;
  for (int j = 0; j < tgt_scores.size(); ++j)
    l_gd_t -= std::log(1.0 - clamp_prob(tgt_scores[j]));
  l_gd += l_gd_t / static_cast<double>(tgt_scores.size());

  return {l_gy, l_gd};
}

}  // namespace ptpai
