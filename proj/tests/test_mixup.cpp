#include <catch2/catch_amalgamated.hpp>

#include "ptpai/mixup.hpp"

using namespace ptpai;

TEST_CASE("mix factor follows the Beta distribution") {
  MixConfig cfg;
  Rng rng(101);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = sample_mix_factor(cfg, rng);
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
    sum += v;
  }
  CHECK(sum / n == Catch::Approx(0.5).margin(0.01));
}

TEST_CASE("large shape parameters concentrate the mix factor at 0.5") {
  MixConfig cfg;
  cfg.alpha1 = cfg.alpha2 = 500.0;
  Rng rng(7);
  int inside = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = sample_mix_factor(cfg, rng);
    if (v >= 0.45 && v <= 0.55) ++inside;
  }
  CHECK(static_cast<double>(inside) / n >= 0.99);
}

TEST_CASE("label mix factor decision rules") {
  // majority (1200) mixed with minority (24) at m = 0.5: ratio 50 >= 2
  CHECK(label_mix_factor(0.8, 1200, 24, 0.5) == Catch::Approx(0.2));
  // lambda_e = 0.5 is a fixed point of every branch
  CHECK(label_mix_factor(0.5, 1200, 24, 0.5) == Catch::Approx(0.5));
  CHECK(label_mix_factor(0.5, 24, 1200, 0.5) == Catch::Approx(0.5));
  CHECK(label_mix_factor(0.5, 10, 10, 0.5) == Catch::Approx(0.5));
  // minority-first pair: ratio 0.01 <= 0.5
  CHECK(label_mix_factor(0.3, 10, 1000, 0.5) == Catch::Approx(0.7));
  // balanced pair keeps lambda_e
  CHECK(label_mix_factor(0.3, 100, 120, 0.5) == Catch::Approx(0.3));
}

TEST_CASE("label mix factor always picks lambda_e or its complement") {
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> c(1, 2000);
  for (int i = 0; i < 200; ++i) {
    const double le = u(rng);
    const double ni = c(rng), nj = c(rng);
    const double ly = label_mix_factor(le, ni, nj, 0.5);
    const bool match = std::abs(ly - le) < 1e-15 ||
                       std::abs(ly - (1.0 - le)) < 1e-15;
    CHECK(match);
    if (ni / nj > 0.5 && ni / nj < 2.0) CHECK(ly == Catch::Approx(le));
  }
}

namespace {

Matrix one_hot_rows(const std::vector<int>& labels, int n_classes) {
  Matrix m = Matrix::Zero(static_cast<int>(labels.size()), n_classes);
  for (int i = 0; i < m.rows(); ++i) m(i, labels[static_cast<std::size_t>(i)]) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("rf-mixup rows are the recorded convex combinations") {
  Rng rng(19);
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix features(6, 4);
  for (long i = 0; i < features.size(); ++i) features.data()[i] = dist(rng);
  Matrix pseudo = one_hot_rows({0, 1, 0, 1, 0, 1}, 2);
  std::map<int, int> counts = {{0, 1200}, {1, 24}};
  MixConfig cfg;
  MixBatch mix = rf_mixup_batch(features, pseudo, counts, cfg, rng);

  for (int i = 0; i < 6; ++i) {
    const int j = mix.partner[static_cast<std::size_t>(i)];
    const double le = mix.lambda_e[static_cast<std::size_t>(i)];
    const double ly = mix.lambda_y[static_cast<std::size_t>(i)];
    CHECK((mix.e_rfm.row(i) -
           (le * features.row(i) + (1.0 - le) * features.row(j)))
              .cwiseAbs()
              .maxCoeff() < 1e-14);
    CHECK((mix.y_rfm.row(i) -
           (ly * pseudo.row(i) + (1.0 - ly) * pseudo.row(j)))
              .cwiseAbs()
              .maxCoeff() < 1e-14);
    // mixed pseudo-labels stay probability rows
    CHECK(mix.y_rfm.row(i).sum() == Catch::Approx(1.0));
    // e_rfm lies on the segment between the two feature rows
    for (int cidx = 0; cidx < features.cols(); ++cidx) {
      const double lo = std::min(features(i, cidx), features(j, cidx));
      const double hi = std::max(features(i, cidx), features(j, cidx));
      CHECK(mix.e_rfm(i, cidx) >= lo - 1e-12);
      CHECK(mix.e_rfm(i, cidx) <= hi + 1e-12);
    }
  }
}

TEST_CASE("imbalanced pairs weight the minority pseudo-label higher") {
  Rng rng(23);
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix features(8, 3);
  for (long i = 0; i < features.size(); ++i) features.data()[i] = dist(rng);
  Matrix pseudo = one_hot_rows({0, 0, 0, 0, 1, 1, 1, 1}, 2);
  std::map<int, int> counts = {{0, 1200}, {1, 24}};
  MixConfig cfg;
  MixBatch mix = rf_mixup_batch(features, pseudo, counts, cfg, rng);
  for (int i = 0; i < 8; ++i) {
    const int j = mix.partner[static_cast<std::size_t>(i)];
    int ci, cj;
    pseudo.row(i).maxCoeff(&ci);
    pseudo.row(j).maxCoeff(&cj);
    const double le = mix.lambda_e[static_cast<std::size_t>(i)];
    const double ly = mix.lambda_y[static_cast<std::size_t>(i)];
    if (ci == 0 && cj == 1) {
      // majority first: the minority row j carries 1 - lambda_y = max(...)
      CHECK(1.0 - ly == Catch::Approx(std::max(le, 1.0 - le)));
    } else if (ci == 1 && cj == 0) {
      CHECK(ly == Catch::Approx(std::max(le, 1.0 - le)));
    } else {
      CHECK(ly == Catch::Approx(le));
    }
  }
}

TEST_CASE("near-degenerate Beta shapes give an identity-like mix") {
  Rng rng(5);
  Matrix features(4, 3);
  features.setRandom();
  Matrix pseudo = one_hot_rows({0, 1, 0, 1}, 2);
  std::map<int, int> counts = {{0, 10}, {1, 10}};  // balanced -> lambda_y = lambda_e
  MixConfig cfg;
  cfg.alpha1 = 1e8;
  cfg.alpha2 = 1e-4;
  MixBatch mix = rf_mixup_batch(features, pseudo, counts, cfg, rng);
  for (int i = 0; i < 4; ++i) {
    CHECK(mix.lambda_e[static_cast<std::size_t>(i)] > 0.999);
    CHECK((mix.e_rfm.row(i) - features.row(i)).cwiseAbs().maxCoeff() < 1e-2);
  }
}

TEST_CASE("plain mixup ablation ties the two factors") {
  Rng rng(29);
  Matrix features(6, 3);
  features.setRandom();
  Matrix pseudo = one_hot_rows({0, 1, 0, 1, 0, 1}, 2);
  std::map<int, int> counts = {{0, 1200}, {1, 24}};
  MixConfig cfg;
  cfg.plain_mixup = true;
  MixBatch mix = rf_mixup_batch(features, pseudo, counts, cfg, rng);
  for (std::size_t i = 0; i < 6; ++i)
    CHECK(mix.lambda_y[i] == Catch::Approx(mix.lambda_e[i]));
}

TEST_CASE("rf-mixup rejects tiny batches") {
  Matrix features(1, 3);
  features.setZero();
  Matrix pseudo(1, 2);
  pseudo << 1.0, 0.0;
  std::map<int, int> counts = {{0, 1}, {1, 1}};
  Rng rng(1);
  MixConfig cfg;
  CHECK_THROWS_AS(rf_mixup_batch(features, pseudo, counts, cfg, rng), Error);
}
