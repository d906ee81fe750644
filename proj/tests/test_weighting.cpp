#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "ptpai/weighting.hpp"

using namespace ptpai;

TEST_CASE("class-level weights from target predictions") {
  SECTION("all one-hot on class 0") {
    Matrix probs = Matrix::Zero(5, 4);
    probs.col(0).setOnes();
    Vector w = class_level_weights(probs);
    CHECK(w[0] == Catch::Approx(1.0));
    CHECK(w[1] == Catch::Approx(0.0).margin(1e-15));
    CHECK(w[2] == Catch::Approx(0.0).margin(1e-15));
    CHECK(w[3] == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("uniform rows normalize to all ones") {
    Matrix probs = Matrix::Constant(7, 4, 0.25);
    Vector w = class_level_weights(probs);
    for (int c = 0; c < 4; ++c) CHECK(w[c] == Catch::Approx(1.0));
  }
  SECTION("hand-computed two-class example") {
    Matrix probs(2, 2);
    probs << 0.7, 0.3, 0.5, 0.5;
    Vector w = class_level_weights(probs);
    CHECK(w[0] == Catch::Approx(1.0));
    CHECK(w[1] == Catch::Approx(0.4 / 0.6).epsilon(1e-9));
  }
}

TEST_CASE("class-level weights ignore row order") {
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix probs(6, 3);
  for (int i = 0; i < 6; ++i) {
    double a = u(rng), b = u(rng), c = u(rng);
    const double s = a + b + c;
    probs.row(i) << a / s, b / s, c / s;
  }
  Vector base = class_level_weights(probs);
  Matrix shuffled(6, 3);
  const int perm[6] = {4, 2, 0, 5, 1, 3};
  for (int i = 0; i < 6; ++i) shuffled.row(i) = probs.row(perm[i]);
  Vector w = class_level_weights(shuffled);
  CHECK((w - base).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("source instance weights invert the domain score") {
  SECTION("uninformative scores give unit weights") {
    Vector scores = Vector::Constant(4, 0.5);
    Vector w = source_instance_weights(scores);
    for (int i = 0; i < 4; ++i) CHECK(w[i] == Catch::Approx(1.0));
  }
  SECTION("hand-computed pair") {
    Vector scores(2);
    scores << 0.9, 0.1;
    Vector w = source_instance_weights(scores);
    CHECK(w[0] == Catch::Approx(0.2).epsilon(1e-9));
    CHECK(w[1] == Catch::Approx(1.8).epsilon(1e-9));
  }
  SECTION("mini-batch mean is one") {
    Rng rng(17);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (int trial = 0; trial < 20; ++trial) {
      Vector scores(8);
      for (int i = 0; i < 8; ++i) scores[i] = u(rng);
      CHECK(source_instance_weights(scores).mean() ==
            Catch::Approx(1.0).margin(1e-9));
    }
  }
  SECTION("saturated scores are degenerate") {
    Vector scores = Vector::Ones(3);
    CHECK_THROWS_AS(source_instance_weights(scores), Error);
  }
}

TEST_CASE("batch normalization cancels a common scale on raw weights") {
  Vector scores(4);
  scores << 0.2, 0.4, 0.6, 0.8;
  Vector base = source_instance_weights(scores);
  // raw weights 1-s scaled by k = 0.25 <=> scores' = 1 - k(1 - s)
  Vector scaled = (1.0 - 0.25 * (1.0 - scores.array())).matrix();
  Vector w = source_instance_weights(scaled);
  CHECK((w - base).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("target instance weights take the row maximum") {
  Matrix probs(3, 4);
  probs << 1.0, 0.0, 0.0, 0.0,
           0.25, 0.25, 0.25, 0.25,
           0.5, 0.3, 0.15, 0.05;
  Vector w = target_instance_weights(probs);
  CHECK(w[0] == Catch::Approx(1.0));
  CHECK(w[1] == Catch::Approx(0.25));
  CHECK(w[2] == Catch::Approx(0.5));
}

TEST_CASE("auxiliary losses closed forms") {
  SECTION("uninformative discriminator scores cost 2 ln 2") {
    Matrix leaky = Matrix::Constant(3, 4, 0.1);
    Vector src = Vector::Constant(3, 0.5);
    Vector tgt = Vector::Constant(5, 0.5);
    auto [l_gy, l_gd] = auxiliary_losses(leaky, {0, 1, 2}, src, tgt);
    (void)l_gy;
    CHECK(l_gd == Catch::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
  }
  SECTION("confident correct leaky output drives L_Gy to zero") {
    Matrix leaky = Matrix::Constant(2, 3, 1e-9);
    leaky(0, 0) = 1.0 - 1e-9;
    leaky(1, 2) = 1.0 - 1e-9;
    Vector src = Vector::Constant(2, 0.5);
    Vector tgt = Vector::Constant(2, 0.5);
    auto [l_gy, l_gd] = auxiliary_losses(leaky, {0, 2}, src, tgt);
    (void)l_gd;
    CHECK(l_gy < 1e-5);
  }
  SECTION("single-sample hand computation") {
    Matrix leaky(1, 2);
    leaky << 0.5, 0.25;
    Vector src = Vector::Constant(1, 0.5);
    Vector tgt = Vector::Constant(1, 0.5);
    auto [l_gy, l_gd] = auxiliary_losses(leaky, {0}, src, tgt);
    (void)l_gd;
    CHECK(l_gy == Catch::Approx(-(std::log(0.5) + std::log(0.75))).epsilon(1e-9));
    CHECK(l_gy == Catch::Approx(0.980829).margin(1e-6));
  }
  SECTION("scores at the boundary are clamped, not infinite") {
    Matrix leaky = Matrix::Constant(1, 2, 0.5);
    Vector src = Vector::Constant(1, 1.0);
    Vector tgt = Vector::Constant(1, 0.0);
    auto [l_gy, l_gd] = auxiliary_losses(leaky, {0}, src, tgt);
    (void)l_gy;
    CHECK(std::isfinite(l_gd));
  }
}
