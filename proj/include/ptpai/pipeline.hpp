#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ptpai/common.hpp"
#include "ptpai/dataset.hpp"
#include "ptpai/dsp.hpp"
#include "ptpai/signal.hpp"

namespace ptpai {

// Transfer-scenario description: which classes survive in the target and how
// strongly the fault classes are thinned relative to the healthy class.
struct ScenarioConfig {
  std::set<int> target_classes;
  double balance_rate = 1.0;  // (0, 1]
  int healthy_class = 0;
  std::uint64_t seed = 0;
};

inline Matrix segment_signal(const VibrationSignal& signal, int length,
                             int hop) {
  require(length >= 2, ErrorCode::invalid_input, "segment: length must be >= 2");
  require(hop >= 1, ErrorCode::invalid_input, "segment: hop must be >= 1");
  const int n = signal.size();
  require(n >= length, ErrorCode::empty_result,
          "segment: signal shorter than segment length");
  const int count = (n - length) / hop + 1;
  Matrix segments(count, length);
  for (int s = 0; s < count; ++s) {
    for (int j = 0; j < length; ++j) {
      segments(s, j) = signal.samples[static_cast<std::size_t>(s * hop + j)];
    }
  }
  return segments;
}

// Full-wave rectified envelope spectrum: remove the mean, rectify, and keep
// the first length/2 DFT magnitude bins scaled by 2/length. This is the
// network input representation; bin k maps to frequency k*fs/length.
inline Vector envelope_spectrum(const std::vector<double>& segment) {
  const int n = static_cast<int>(segment.size());
  require(n >= 4 && n % 2 == 0, ErrorCode::invalid_input,
          "envelope_spectrum: length must be even and >= 4");
  double mean = 0.0;
  for (double v : segment) {
    require(std::isfinite(v), ErrorCode::invalid_input,
            "envelope_spectrum: non-finite sample");
    mean += v;
  }
  mean /= n;
  std::vector<double> rectified(segment.size());
  for (int i = 0; i < n; ++i) {
    rectified[static_cast<std::size_t>(i)] =
        std::abs(segment[static_cast<std::size_t>(i)] - mean);
  }
  auto spec = dsp::rfft(rectified);
  Vector out(n / 2);
  for (int k = 0; k < n / 2; ++k) {
    out[k] = 2.0 / n * std::abs(spec[static_cast<std::size_t>(k)]);
  }
  return out;
}

inline Vector envelope_spectrum(const Matrix& segments, int row) {
  std::vector<double> seg(static_cast<std::size_t>(segments.cols()));
  for (int j = 0; j < segments.cols(); ++j) seg[static_cast<std::size_t>(j)] = segments(row, j);
  return envelope_spectrum(seg);
}

inline int round_half_up(double x) {
  return static_cast<int>(std::floor(x + 0.5));
}

namespace detail {

inline DomainDataset take_rows(const DomainDataset& ds,
                               const std::vector<int>& rows) {
  DomainDataset out;
  out.features.resize(static_cast<int>(rows.size()), ds.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<int>(i)) = ds.features.row(rows[i]);
  }
  if (!ds.labels.empty()) {
    out.labels.reserve(rows.size());
    for (int r : rows) out.labels.push_back(ds.labels[static_cast<std::size_t>(r)]);
    out.class_counts = count_classes(out.labels);
  }
  if (!ds.sealed_labels.empty()) {
    out.sealed_labels.reserve(rows.size());
    for (int r : rows)
      out.sealed_labels.push_back(ds.sealed_labels[static_cast<std::size_t>(r)]);
  }
  if (!ds.betas.empty()) {
    out.betas.reserve(rows.size());
    for (int r : rows) out.betas.push_back(ds.betas[static_cast<std::size_t>(r)]);
  }
  out.domain = ds.domain;
  out.class_names = ds.class_names;
  out.fs = ds.fs;
  out.seed = ds.seed;
  return out;
}

}  // namespace detail

// Builds a partial, imbalanced target from a fully labeled target pool. The
// healthy class keeps every sample; each other surviving class keeps
// round(balance_rate * n_healthy) samples; classes outside the scenario are
// dropped. Ground truth moves into sealed_labels. The source passes through
// unchanged, outlier classes included.
inline std::pair<DomainDataset, DomainDataset> build_scenario(
    const DomainDataset& source, const DomainDataset& target_full,
    const ScenarioConfig& cfg) {
  require(source.labeled(), ErrorCode::config, "scenario: source must be labeled");
  require(target_full.labeled(), ErrorCode::config,
          "scenario: target pool must be labeled");
  require(cfg.balance_rate > 0.0 && cfg.balance_rate <= 1.0, ErrorCode::config,
          "scenario: balance_rate must lie in (0, 1]");
  require(cfg.target_classes.count(cfg.healthy_class) == 1, ErrorCode::config,
          "scenario: target classes must contain the healthy class");
  for (int c : cfg.target_classes) {
    require(source.class_counts.count(c) == 1, ErrorCode::config,
            "scenario: target class " + std::to_string(c) +
                " missing from source");
  }

  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < target_full.rows(); ++i) {
    by_class[target_full.labels[static_cast<std::size_t>(i)]].push_back(i);
  }
  require(by_class.count(cfg.healthy_class) == 1, ErrorCode::insufficient_data,
          "scenario: target pool has no healthy samples");
  const int n_healthy =
      static_cast<int>(by_class[cfg.healthy_class].size());

  std::vector<int> keep;
  for (int c : cfg.target_classes) {
    auto it = by_class.find(c);
    if (it == by_class.end()) {
      fail(ErrorCode::insufficient_data,
           "scenario: target pool has no samples of class " + std::to_string(c));
    }
    std::vector<int>& rows = it->second;
    if (c == cfg.healthy_class) {
      keep.insert(keep.end(), rows.begin(), rows.end());
      continue;
    }
    const int want = round_half_up(cfg.balance_rate * n_healthy);
    require(want <= static_cast<int>(rows.size()), ErrorCode::insufficient_data,
            "scenario: class " + std::to_string(c) + " has " +
                std::to_string(rows.size()) + " samples, need " +
                std::to_string(want));
    Rng rng = substream(cfg.seed, "scenario", static_cast<std::uint64_t>(c));
    std::vector<int> pool = rows;
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(want));
    std::sort(pool.begin(), pool.end());
    keep.insert(keep.end(), pool.begin(), pool.end());
  }
  std::sort(keep.begin(), keep.end());

  DomainDataset target = detail::take_rows(target_full, keep);
  target.sealed_labels = std::move(target.labels);
  target.labels.clear();
  target.class_counts.clear();
  target.domain = Domain::target;
  return {source, target};
}

struct SplitResult {
  DomainDataset train;
  DomainDataset val;
  DomainDataset test;
  std::vector<std::string> warnings;
};

// Stratified split; per class the validation and test shares are rounded
// half-up and the remainder lands in train. Classes with fewer than three
// samples go entirely to train with a warning.
inline SplitResult split_dataset(const DomainDataset& ds,
                                 std::array<double, 3> ratios,
                                 std::uint64_t seed) {
  require(std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) < 1e-9,
          ErrorCode::config, "split: ratios must sum to 1");
  const std::vector<int>& strata =
      ds.labeled() ? ds.labels : ds.sealed_labels;
  require(!strata.empty(), ErrorCode::invalid_input,
          "split: dataset carries no labels to stratify on");

  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < ds.rows(); ++i)
    by_class[strata[static_cast<std::size_t>(i)]].push_back(i);

  SplitResult result;
  std::vector<int> train_rows, val_rows, test_rows;
  for (auto& [cls, rows] : by_class) {
    if (rows.size() < 3) {
      result.warnings.push_back("class " + std::to_string(cls) + " has " +
                                std::to_string(rows.size()) +
                                " samples; assigned entirely to train");
      train_rows.insert(train_rows.end(), rows.begin(), rows.end());
      continue;
    }
    Rng rng = substream(seed, "split", static_cast<std::uint64_t>(cls));
    std::shuffle(rows.begin(), rows.end(), rng);
    const int n = static_cast<int>(rows.size());
    const int n_val = round_half_up(ratios[1] * n);
    const int n_test = round_half_up(ratios[2] * n);
    val_rows.insert(val_rows.end(), rows.begin(), rows.begin() + n_val);
    test_rows.insert(test_rows.end(), rows.begin() + n_val,
                     rows.begin() + n_val + n_test);
    train_rows.insert(train_rows.end(), rows.begin() + n_val + n_test,
                      rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(val_rows.begin(), val_rows.end());
  std::sort(test_rows.begin(), test_rows.end());
  result.train = detail::take_rows(ds, train_rows);
  result.val = detail::take_rows(ds, val_rows);
  result.test = detail::take_rows(ds, test_rows);
  return result;
}

}  // namespace ptpai
