#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ptpai/common.hpp"

namespace ptpai {

enum class Domain { source, target };

inline std::string to_string(Domain d) {
  return d == Domain::source ? "source" : "target";
}

// A feature-matrix view of one domain. Target datasets keep their ground
// truth in sealed_labels, which training code must never read; the visible
// labels vector stays empty for them.
struct DomainDataset {
  Matrix features;                       // [n x d]
  std::vector<int> labels;               // empty when unlabeled
  Domain domain = Domain::source;
  std::map<int, int> class_counts;       // true counts, empty when unlabeled

  std::vector<int> sealed_labels;        // evaluation-only ground truth
  std::vector<double> betas;             // per-signal noise scale, if synthetic
  std::vector<std::string> class_names;  // id -> name, optional
  double fs = 0.0;
  std::uint64_t seed = 0;

  int rows() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  bool labeled() const { return !labels.empty(); }
};

inline std::map<int, int> count_classes(const std::vector<int>& labels) {
  std::map<int, int> counts;
  for (int y : labels) ++counts[y];
  return counts;
}

inline void validate(const DomainDataset& ds) {
  if (ds.labeled()) {
    require(static_cast<int>(ds.labels.size()) == ds.rows(), ErrorCode::shape,
            "dataset: labels length must match row count");
    int total = 0;
    for (const auto& [cls, n] : ds.class_counts) {
      (void)cls;
      total += n;
    }
    require(total == ds.rows(), ErrorCode::shape,
            "dataset: class_counts must sum to row count");
  }
  if (!ds.sealed_labels.empty()) {
    require(static_cast<int>(ds.sealed_labels.size()) == ds.rows(),
            ErrorCode::shape, "dataset: sealed labels length mismatch");
  }
}

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[i];
  }
  return os.str();
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[i];
  }
  return os.str();
}

template <typename T, typename Parse>
std::vector<T> split_list(const std::string& s, Parse parse) {
  std::vector<T> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(parse(item));
  }
  return out;
}

}  // namespace detail

// Binary array + plain-text manifest export. <base>.f32 holds the feature
// matrix as row-major 32-bit floats; <base>.manifest.txt records shape,
// labels, sample rate, seed and per-signal beta.
inline void save_dataset(const DomainDataset& ds, const std::string& base) {
  validate(ds);
  {
    std::ofstream bin(base + ".f32", std::ios::binary);
    require(bin.good(), ErrorCode::io, "cannot write " + base + ".f32");
    for (int i = 0; i < ds.rows(); ++i) {
      for (int j = 0; j < ds.dim(); ++j) {
        float v = static_cast<float>(ds.features(i, j));
        bin.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    }
  }
  std::ofstream man(base + ".manifest.txt");
  require(man.good(), ErrorCode::io, "cannot write " + base + ".manifest.txt");
  man << "rows=" << ds.rows() << "\n";
  man << "cols=" << ds.dim() << "\n";
  man << "domain=" << to_string(ds.domain) << "\n";
  man.precision(17);
  man << "fs=" << ds.fs << "\n";
  man << "seed=" << ds.seed << "\n";
  if (!ds.class_names.empty()) {
    man << "class_names=";
    for (std::size_t i = 0; i < ds.class_names.size(); ++i) {
      if (i) man << ',';
      man << ds.class_names[i];
    }
    man << "\n";
  }
  if (!ds.labels.empty()) man << "labels=" << detail::join_ints(ds.labels) << "\n";
  if (!ds.sealed_labels.empty())
    man << "sealed_labels=" << detail::join_ints(ds.sealed_labels) << "\n";
  if (!ds.betas.empty()) man << "betas=" << detail::join_doubles(ds.betas) << "\n";
}

inline DomainDataset load_dataset(const std::string& base) {
  std::ifstream man(base + ".manifest.txt");
  require(man.good(), ErrorCode::file_not_found,
          "missing manifest " + base + ".manifest.txt");
  DomainDataset ds;
  int rows = -1, cols = -1;
  std::string line;
  while (std::getline(man, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (key == "rows") rows = std::stoi(value);
    else if (key == "cols") cols = std::stoi(value);
    else if (key == "domain")
      ds.domain = value == "target" ? Domain::target : Domain::source;
    else if (key == "fs") ds.fs = std::stod(value);
    else if (key == "seed") ds.seed = std::stoull(value);
    else if (key == "class_names")
      ds.class_names = detail::split_list<std::string>(
          value, [](const std::string& s) { return s; });
    else if (key == "labels")
      ds.labels = detail::split_list<int>(
          value, [](const std::string& s) { return std::stoi(s); });
    else if (key == "sealed_labels")
      ds.sealed_labels = detail::split_list<int>(
          value, [](const std::string& s) { return std::stoi(s); });
    else if (key == "betas")
      ds.betas = detail::split_list<double>(
          value, [](const std::string& s) { return std::stod(s); });
  }
  require(rows >= 0 && cols >= 0, ErrorCode::format,
          "manifest missing rows/cols: " + base);
  std::ifstream bin(base + ".f32", std::ios::binary);
  require(bin.good(), ErrorCode::file_not_found, "missing " + base + ".f32");
  ds.features.resize(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      float v = 0.0f;
      bin.read(reinterpret_cast<char*>(&v), sizeof(v));
      require(bin.good(), ErrorCode::format, "binary payload truncated: " + base);
      ds.features(i, j) = v;
    }
  }
  if (!ds.labels.empty()) ds.class_counts = count_classes(ds.labels);
  validate(ds);
  return ds;
}

}  // namespace ptpai
