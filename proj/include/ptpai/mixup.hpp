#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "ptpai/common.hpp"

namespace ptpai {

struct MixConfig {
  double alpha1 = 0.5;  // Beta shape parameters for the feature mix factor
  double alpha2 = 0.5;
  double decision_boundary = 0.5;  // m, (0, 1)
  bool plain_mixup = false;        // ablation: lambda_y := lambda_e
};

inline void validate(const MixConfig& cfg) {
  require(cfg.alpha1 > 0.0 && cfg.alpha2 > 0.0, ErrorCode::config,
          "mix config: Beta shape parameters must be > 0");
  require(cfg.decision_boundary > 0.0 && cfg.decision_boundary < 1.0,
          ErrorCode::config, "mix config: decision boundary must lie in (0,1)");
}

// lambda_e ~ Beta(alpha1, alpha2), sampled via two Gamma draws.
inline double sample_mix_factor(const MixConfig& cfg, Rng& rng) {
  validate(cfg);
  std::gamma_distribution<double> ga(cfg.alpha1, 1.0);
  std::gamma_distribution<double> gb(cfg.alpha2, 1.0);
  double x = ga(rng);
  double y = gb(rng);
  if (x + y <= 0.0) return 0.5;  // both draws underflowed
  return x / (x + y);
}

// Label-mix reassignment: when the pair is strongly imbalanced the larger of
// {lambda_e, 1-lambda_e} is moved onto the minority pseudo-label.
inline double label_mix_factor(double lambda_e, double n_i, double n_j,
                               double m) {
  require(n_i >= 1.0 && n_j >= 1.0, ErrorCode::invalid_input,
          "label mix: class counts must be >= 1");
  require(lambda_e >= 0.0 && lambda_e <= 1.0, ErrorCode::invalid_input,
          "label mix: lambda_e must lie in [0,1]");
  const double ratio = n_i / n_j;
  if (ratio <= m) return std::max(lambda_e, 1.0 - lambda_e);
  if (ratio >= 1.0 / m) return std::min(lambda_e, 1.0 - lambda_e);
  return lambda_e;
}

// Cache of one RF-Mixup application; enough to route gradients back to the
// unmixed rows.
struct MixBatch {
  Matrix e_rfm;               // [b x F] mixed features
  Matrix y_rfm;               // [b x C] mixed pseudo-labels
  std::vector<int> partner;   // j = pi(i)
  std::vector<double> lambda_e;
  std::vector<double> lambda_y;
};

// Pairs row i with a permuted partner, draws one lambda_e per pair, derives
// lambda_y from the pseudo-class counts, and mixes features and
// pseudo-labels with the two factors. The multilinear input for the
// adversarial head is formed by the caller.
inline MixBatch rf_mixup_batch(const Matrix& features, const Matrix& pseudo,
                               const std::map<int, int>& class_counts,
                               const MixConfig& cfg, Rng& rng) {
  validate(cfg);
  const int b = static_cast<int>(features.rows());
  require(b >= 2, ErrorCode::invalid_batch, "rf-mixup: need a batch of >= 2");
  require(pseudo.rows() == b, ErrorCode::shape,
          "rf-mixup: feature/pseudo batch mismatch");

  std::vector<int> perm(static_cast<std::size_t>(b));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  auto count_of = [&class_counts](int cls) -> double {
    auto it = class_counts.find(cls);
    require(it != class_counts.end(), ErrorCode::invalid_input,
            "rf-mixup: missing count for pseudo class " + std::to_string(cls));
    return static_cast<double>(std::max(it->second, 1));
  };

  MixBatch out;
  out.e_rfm.resize(b, features.cols());
  out.y_rfm.resize(b, pseudo.cols());
  out.partner.resize(static_cast<std::size_t>(b));
  out.lambda_e.resize(static_cast<std::size_t>(b));
  out.lambda_y.resize(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) {
    const int j = perm[static_cast<std::size_t>(i)];
    const double le = sample_mix_factor(cfg, rng);
    int ci, cj;
    pseudo.row(i).maxCoeff(&ci);
    pseudo.row(j).maxCoeff(&cj);
    const double ly = cfg.plain_mixup
                          ? le
                          : label_mix_factor(le, count_of(ci), count_of(cj),
                                             cfg.decision_boundary);
    out.partner[static_cast<std::size_t>(i)] = j;
    out.lambda_e[static_cast<std::size_t>(i)] = le;
    out.lambda_y[static_cast<std::size_t>(i)] = ly;
    out.e_rfm.row(i) = le * features.row(i) + (1.0 - le) * features.row(j);
    out.y_rfm.row(i) = ly * pseudo.row(i) + (1.0 - ly) * pseudo.row(j);
  }
  return out;
}

// Adjoint of the mixing step: distributes gradients on the mixed rows back
// onto the original feature and pseudo-label rows.
inline void rf_mixup_backward(const MixBatch& mix, const Matrix& d_e_rfm,
                              const Matrix& d_y_rfm, Matrix& d_features,
                              Matrix& d_pseudo) {
  const int b = static_cast<int>(mix.e_rfm.rows());
  for (int i = 0; i < b; ++i) {
    const int j = mix.partner[static_cast<std::size_t>(i)];
    const double le = mix.lambda_e[static_cast<std::size_t>(i)];
    const double ly = mix.lambda_y[static_cast<std::size_t>(i)];
    d_features.row(i) += le * d_e_rfm.row(i);
    d_features.row(j) += (1.0 - le) * d_e_rfm.row(i);
    d_pseudo.row(i) += ly * d_y_rfm.row(i);
    d_pseudo.row(j) += (1.0 - ly) * d_y_rfm.row(i);
  }
}

}  // namespace ptpai
