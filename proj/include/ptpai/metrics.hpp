#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ptpai/common.hpp"

namespace ptpai {

// Macro one-vs-rest mean of (sensitivity + specificity)/2. Predictions
// outside `classes` count against the true class (a miss), never as a hit.
// Classes absent from y_true are skipped and reported in warnings.
inline double balanced_accuracy(const std::vector<int>& y_true,
                                const std::vector<int>& y_pred,
                                const std::set<int>& classes,
                                std::vector<std::string>* warnings = nullptr) {
  require(y_true.size() == y_pred.size() && !y_true.empty(),
          ErrorCode::invalid_input, "balanced accuracy: length mismatch");
  double total = 0.0;
  int counted = 0;
  for (int c : classes) {
    long tp = 0, fn = 0, fp = 0, tn = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      const bool truth = y_true[i] == c;
      const bool pred = y_pred[i] == c;
      if (truth && pred) ++tp;
      else if (truth) ++fn;
      else if (pred) ++fp;
      else ++tn;
    }
    if (tp + fn == 0) {
      if (warnings)
        warnings->push_back("class " + std::to_string(c) +
                            " absent from ground truth; skipped");
      continue;
    }
    const double sens = static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double spec = tn + fp == 0
                            ? 0.0
                            : static_cast<double>(tn) /
                                  static_cast<double>(tn + fp);
    total += 0.5 * (sens + spec);
    ++counted;
  }
  require(counted > 0, ErrorCode::invalid_input,
          "balanced accuracy: no evaluable classes");
  return total / counted;
}

// Macro-averaged F1 over `classes`; zero-division yields 0 for that class.
inline double macro_f1(const std::vector<int>& y_true,
                       const std::vector<int>& y_pred,
                       const std::set<int>& classes,
                       std::vector<std::string>* warnings = nullptr) {
  require(y_true.size() == y_pred.size() && !y_true.empty(),
          ErrorCode::invalid_input, "macro f1: length mismatch");
  double total = 0.0;
  int counted = 0;
  for (int c : classes) {
    long tp = 0, fn = 0, fp = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      const bool truth = y_true[i] == c;
      const bool pred = y_pred[i] == c;
      if (truth && pred) ++tp;
      else if (truth) ++fn;
      else if (pred) ++fp;
    }
    if (tp + fn == 0) {
      if (warnings)
        warnings->push_back("class " + std::to_string(c) +
                            " absent from ground truth; skipped");
      continue;
    }
    const long denom = 2 * tp + fp + fn;
    total += denom == 0 ? 0.0
                        : 2.0 * static_cast<double>(tp) /
                              static_cast<double>(denom);
    ++counted;
  }
  require(counted > 0, ErrorCode::invalid_input,
          "macro f1: no evaluable classes");
  return total / counted;
}

struct ScoreMatrix {
  std::vector<std::string> methods;  // phi columns
  std::vector<std::string> tasks;    // varphi rows
  Matrix scores;                     // [tasks x methods], higher is better
};

struct RankSummary {
  Vector avg_ranks;      // per method, 1 = best
  double cd = 0.0;       // Nemenyi critical difference
  double friedman_stat = 0.0;  // chi-square statistic
};

namespace detail {

// Two-tailed Nemenyi critical values (studentized range / sqrt 2) for
// phi = 3..20 methods.
inline double nemenyi_cv(int phi, double alpha) {
  static const double cv05[] = {2.343, 2.569, 2.728, 2.850, 2.949, 3.031,
                                3.102, 3.164, 3.219, 3.268, 3.313, 3.354,
                                3.391, 3.426, 3.458, 3.489, 3.517, 3.544};
  static const double cv10[] = {2.052, 2.291, 2.459, 2.589, 2.693, 2.780,
                                2.855, 2.920, 2.978, 3.030, 3.077, 3.120,
                                3.159, 3.196, 3.230, 3.261, 3.291, 3.319};
  require(phi >= 3 && phi <= 20, ErrorCode::unsupported_methods,
          "nemenyi: critical values embedded for 3..20 methods only");
  if (std::abs(alpha - 0.05) < 1e-12) return cv05[phi - 3];
  if (std::abs(alpha - 0.10) < 1e-12) return cv10[phi - 3];
  fail(ErrorCode::unsupported_methods,
       "nemenyi: alpha must be 0.05 or 0.10");
}

// Per-row ranks with 1 = highest score; ties get the average rank.
inline Vector rank_row(const Vector& scores) {
  const int n = static_cast<int>(scores.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(),
            [&scores](int a, int b) { return scores[a] > scores[b]; });
  Vector ranks(n);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && scores[order[static_cast<std::size_t>(j + 1)]] ==
                            scores[order[static_cast<std::size_t>(i)]])
      ++j;
    const double avg = (i + j) / 2.0 + 1.0;
    for (int k = i; k <= j; ++k)
      ranks[order[static_cast<std::size_t>(k)]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

// Friedman average ranks plus the Nemenyi critical difference
// CD = cv_alpha * sqrt(phi (phi+1) / (6 varphi)).
inline RankSummary friedman_nemenyi(const ScoreMatrix& sm,
                                    double alpha = 0.05) {
  const int phi = static_cast<int>(sm.scores.cols());
  const int varphi = static_cast<int>(sm.scores.rows());
  require(phi >= 3, ErrorCode::invalid_input,
          "friedman: need at least 3 methods");
  require(varphi >= 2, ErrorCode::invalid_input,
          "friedman: need at least 2 tasks");
  require(sm.scores.allFinite(), ErrorCode::invalid_input,
          "friedman: scores must be finite");

  RankSummary out;
  out.avg_ranks = Vector::Zero(phi);
  for (int t = 0; t < varphi; ++t) {
    out.avg_ranks += detail::rank_row(sm.scores.row(t).transpose());
  }
  out.avg_ranks /= static_cast<double>(varphi);

  double sum_r2 = 0.0;
  for (int j = 0; j < phi; ++j) {
    const double rank_sum = out.avg_ranks[j] * varphi;
    sum_r2 += rank_sum * rank_sum;
  }
  out.friedman_stat = 12.0 / (varphi * phi * (phi + 1.0)) * sum_r2 -
                      3.0 * varphi * (phi + 1.0);
  out.cd = detail::nemenyi_cv(phi, alpha) *
           std::sqrt(phi * (phi + 1.0) / (6.0 * varphi));
  return out;
}

}  // namespace ptpai
