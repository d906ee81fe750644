#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "ptpai/pipeline.hpp"

using namespace ptpai;

namespace {

VibrationSignal ramp(int n, double fs) {
  VibrationSignal s;
  s.fs = fs;
  s.samples.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) s.samples[static_cast<std::size_t>(i)] = i;
  return s;
}

DomainDataset labeled_dataset(const std::map<int, int>& counts, int dim,
                              std::uint64_t seed = 0) {
  DomainDataset ds;
  int n = 0;
  for (const auto& [cls, cnt] : counts) {
    (void)cls;
    n += cnt;
  }
  ds.features.resize(n, dim);
  Rng rng(seed + 99);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (long i = 0; i < ds.features.size(); ++i)
    ds.features.data()[i] = dist(rng);
  for (const auto& [cls, cnt] : counts)
    for (int i = 0; i < cnt; ++i) ds.labels.push_back(cls);
  ds.class_counts = count_classes(ds.labels);
  return ds;
}

}  // namespace

TEST_CASE("segmentation window counts") {
  CHECK(segment_signal(ramp(4096, 1.0), 4096, 1).rows() == 1);

  Matrix segs = segment_signal(ramp(10, 1.0), 4, 3);
  REQUIRE(segs.rows() == 3);
  CHECK(segs(0, 0) == 0.0);
  CHECK(segs(1, 0) == 3.0);
  CHECK(segs(2, 0) == 6.0);

  // hop = length tiles the signal
  CHECK(segment_signal(ramp(12, 1.0), 4, 4).rows() == 3);

  try {
    segment_signal(ramp(3, 1.0), 4, 1);
    FAIL("expected empty-result error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::empty_result);
  }
}

TEST_CASE("envelope spectrum basics") {
  SECTION("zeros map to zeros") {
    std::vector<double> seg(64, 0.0);
    Vector env = envelope_spectrum(seg);
    REQUIRE(env.size() == 32);
    CHECK(env.cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("feature length is half the segment length") {
    std::vector<double> seg(4096, 0.0);
    seg[0] = 1.0;
    CHECK(envelope_spectrum(seg).size() == 2048);
  }
  SECTION("output is nonnegative") {
    Rng rng(8);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> seg(256);
    for (double& v : seg) v = dist(rng);
    Vector env = envelope_spectrum(seg);
    CHECK(env.minCoeff() >= 0.0);
  }
  SECTION("rectified sinusoid peaks at twice the carrier") {
    const int n = 1024;
    const int k0 = 37;  // carrier bin
    std::vector<double> seg(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t)
      seg[static_cast<std::size_t>(t)] =
          std::sin(2.0 * std::numbers::pi * k0 * t / n);
    Vector env = envelope_spectrum(seg);
    int arg = 1;
    for (int k = 2; k < env.size(); ++k)
      if (env[k] > env[arg]) arg = k;
    CHECK(arg == 2 * k0);

    // cross-check the magnitudes against a naive DFT of the rectification
    double mean = 0.0;
    for (double v : seg) mean += v;
    mean /= n;
    std::vector<double> rect(seg.size());
    for (std::size_t i = 0; i < seg.size(); ++i)
      rect[i] = std::abs(seg[i] - mean);
    auto mag = oracle::dft_magnitude(rect);
    for (int k = 0; k < env.size(); ++k)
      CHECK(env[k] == Catch::Approx(2.0 / n * mag[static_cast<std::size_t>(k)])
                          .margin(1e-9));
  }
  SECTION("odd or tiny segments are rejected") {
    std::vector<double> odd(63, 0.0);
    CHECK_THROWS_AS(envelope_spectrum(odd), Error);
    std::vector<double> tiny(2, 0.0);
    CHECK_THROWS_AS(envelope_spectrum(tiny), Error);
  }
  SECTION("non-finite input is rejected") {
    std::vector<double> seg(8, 0.0);
    seg[3] = std::numeric_limits<double>::quiet_NaN();
    try {
      envelope_spectrum(seg);
      FAIL("expected invalid-input error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::invalid_input);
    }
  }
}

TEST_CASE("scenario construction thins fault classes") {
  DomainDataset source = labeled_dataset({{0, 40}, {1, 40}, {2, 40}, {3, 40}}, 6);
  DomainDataset target_full =
      labeled_dataset({{0, 100}, {1, 50}, {2, 50}, {3, 60}}, 6, 1);

  ScenarioConfig cfg;
  cfg.target_classes = {0, 1};
  cfg.balance_rate = 0.10;
  cfg.healthy_class = 0;
  cfg.seed = 5;

  auto [src, tgt] = build_scenario(source, target_full, cfg);
  CHECK(src.features == source.features);  // source untouched
  CHECK(tgt.labels.empty());
  REQUIRE(!tgt.sealed_labels.empty());
  std::map<int, int> counts = count_classes(tgt.sealed_labels);
  CHECK(counts[0] == 100);      // healthy kept whole
  CHECK(counts[1] == 10);       // round(0.10 * 100)
  CHECK(counts.count(2) == 0);  // dropped classes
  CHECK(counts.count(3) == 0);

  // target label space is a subset of the source label space
  for (const auto& [cls, cnt] : counts) {
    (void)cnt;
    CHECK(source.class_counts.count(cls) == 1);
  }
}

TEST_CASE("one-percent scenario at paper scale keeps twelve per fault class") {
  DomainDataset source = labeled_dataset({{0, 10}, {1, 10}}, 2);
  DomainDataset target_full = labeled_dataset({{0, 1200}, {1, 1200}}, 2, 2);
  ScenarioConfig cfg;
  cfg.target_classes = {0, 1};
  cfg.balance_rate = 0.01;
  cfg.healthy_class = 0;
  auto [src, tgt] = build_scenario(source, target_full, cfg);
  (void)src;
  std::map<int, int> counts = count_classes(tgt.sealed_labels);
  CHECK(counts[0] == 1200);
  CHECK(counts[1] == 12);
}

TEST_CASE("full balance keeps the target pool, labels sealed") {
  DomainDataset source = labeled_dataset({{0, 5}, {1, 5}}, 3);
  DomainDataset target_full = labeled_dataset({{0, 7}, {1, 7}}, 3, 3);
  ScenarioConfig cfg;
  cfg.target_classes = {0, 1};
  cfg.balance_rate = 1.0;
  cfg.healthy_class = 0;
  auto [src, tgt] = build_scenario(source, target_full, cfg);
  (void)src;
  CHECK(tgt.rows() == 14);
  CHECK(tgt.features == target_full.features);
  CHECK(tgt.sealed_labels == target_full.labels);
}

TEST_CASE("scenario errors") {
  DomainDataset source = labeled_dataset({{0, 5}, {1, 5}}, 3);
  DomainDataset target_full = labeled_dataset({{0, 4}, {1, 2}}, 3, 4);
  ScenarioConfig cfg;
  cfg.healthy_class = 0;
  SECTION("requested count exceeding availability") {
    cfg.target_classes = {0, 1};
    cfg.balance_rate = 1.0;  // wants 4 of class 1, only 2 exist
    try {
      build_scenario(source, target_full, cfg);
      FAIL("expected insufficient-data error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::insufficient_data);
    }
  }
  SECTION("healthy class must be included") {
    cfg.target_classes = {1};
    CHECK_THROWS_AS(build_scenario(source, target_full, cfg), Error);
  }
  SECTION("target classes must exist in the source") {
    cfg.target_classes = {0, 9};
    CHECK_THROWS_AS(build_scenario(source, target_full, cfg), Error);
  }
}

TEST_CASE("stratified split proportions") {
  SECTION("single 1200-sample class splits 960/120/120") {
    DomainDataset ds = labeled_dataset({{0, 1200}}, 2);
    SplitResult sr = split_dataset(ds, {0.8, 0.1, 0.1}, 3);
    CHECK(sr.train.rows() == 960);
    CHECK(sr.val.rows() == 120);
    CHECK(sr.test.rows() == 120);
  }
  SECTION("a 12-sample class splits 10/1/1") {
    DomainDataset ds = labeled_dataset({{0, 1200}, {1, 12}}, 2);
    SplitResult sr = split_dataset(ds, {0.8, 0.1, 0.1}, 3);
    std::map<int, int> train_counts = count_classes(sr.train.labels);
    std::map<int, int> val_counts = count_classes(sr.val.labels);
    std::map<int, int> test_counts = count_classes(sr.test.labels);
    CHECK(train_counts[1] == 10);
    CHECK(val_counts[1] == 1);
    CHECK(test_counts[1] == 1);
  }
  SECTION("classes under three samples land in train with a warning") {
    DomainDataset ds = labeled_dataset({{0, 30}, {1, 2}}, 2);
    SplitResult sr = split_dataset(ds, {0.8, 0.1, 0.1}, 3);
    CHECK(count_classes(sr.train.labels)[1] == 2);
    REQUIRE(sr.warnings.size() == 1);
  }
  SECTION("identical seeds give identical partitions") {
    DomainDataset ds = labeled_dataset({{0, 50}, {1, 50}}, 4);
    SplitResult a = split_dataset(ds, {0.8, 0.1, 0.1}, 11);
    SplitResult b = split_dataset(ds, {0.8, 0.1, 0.1}, 11);
    CHECK(a.train.features == b.train.features);
    CHECK(a.val.features == b.val.features);
    CHECK(a.test.features == b.test.features);
  }
  SECTION("ratios must sum to one") {
    DomainDataset ds = labeled_dataset({{0, 10}}, 2);
    CHECK_THROWS_AS(split_dataset(ds, {0.8, 0.1, 0.2}, 0), Error);
  }
  SECTION("sealed labels stratify unlabeled targets") {
    DomainDataset ds = labeled_dataset({{0, 40}, {1, 40}}, 2);
    ds.sealed_labels = ds.labels;
    ds.labels.clear();
    ds.class_counts.clear();
    SplitResult sr = split_dataset(ds, {0.8, 0.1, 0.1}, 2);
    CHECK(sr.train.rows() == 64);
    CHECK(sr.train.labels.empty());
    CHECK(count_classes(sr.train.sealed_labels)[0] == 32);
  }
}

TEST_CASE("binary + manifest round trip") {
  namespace fs = std::filesystem;
  DomainDataset ds = labeled_dataset({{0, 3}, {1, 2}}, 4);
  ds.fs = 12800.0;
  ds.seed = 99;
  ds.betas = {0.5, 1.0, 1.5, 0.75, 1.25};
  ds.class_names = {"NC", "IRF"};
  const std::string base = (fs::temp_directory_path() / "ptpai_ds_test").string();
  save_dataset(ds, base);
  DomainDataset back = load_dataset(base);
  CHECK(back.rows() == ds.rows());
  CHECK(back.dim() == ds.dim());
  CHECK(back.labels == ds.labels);
  CHECK(back.betas == ds.betas);
  CHECK(back.fs == ds.fs);
  CHECK(back.seed == ds.seed);
  CHECK(back.class_names == ds.class_names);
  for (int i = 0; i < ds.rows(); ++i)
    for (int j = 0; j < ds.dim(); ++j)
      CHECK(back.features(i, j) == static_cast<double>(
                                       static_cast<float>(ds.features(i, j))));
  std::remove((base + ".f32").c_str());
  std::remove((base + ".manifest.txt").c_str());

  CHECK_THROWS_AS(load_dataset(base), Error);
}
