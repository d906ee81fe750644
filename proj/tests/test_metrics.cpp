#include <catch2/catch_amalgamated.hpp>

#include "ptpai/metrics.hpp"

using namespace ptpai;

TEST_CASE("balanced accuracy hand examples") {
  SECTION("perfect predictions") {
    std::vector<int> y = {0, 1, 2, 3, 0, 1};
    CHECK(balanced_accuracy(y, y, {0, 1, 2, 3}) == Catch::Approx(1.0));
  }
  SECTION("binary truth, all-positive predictions") {
    std::vector<int> truth = {1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
    std::vector<int> pred(10, 1);
    CHECK(balanced_accuracy(truth, pred, {0, 1}) == Catch::Approx(0.5));
  }
  SECTION("TP=4 FN=1 TN=3 FP=2 confusion") {
    // class 1 positive: 4 hits, 1 miss; class 0: 3 hits, 2 misses
    std::vector<int> truth = {1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
    std::vector<int> pred = {1, 1, 1, 1, 0, 0, 0, 0, 1, 1};
    CHECK(balanced_accuracy(truth, pred, {0, 1}) ==
          Catch::Approx(0.7).epsilon(1e-9));
  }
}

TEST_CASE("macro F1 hand examples") {
  SECTION("perfect predictions") {
    std::vector<int> y = {0, 1, 0, 1};
    CHECK(macro_f1(y, y, {0, 1}) == Catch::Approx(1.0));
  }
  SECTION("TP=4 FP=2 FN=1 for a single class view") {
    std::vector<int> truth = {1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
    std::vector<int> pred = {1, 1, 1, 1, 0, 0, 0, 0, 1, 1};
    // class-1 F1 = 2*4 / (2*4 + 2 + 1) = 8/11
    CHECK(macro_f1(truth, pred, {1}) ==
          Catch::Approx(8.0 / 11.0).epsilon(1e-9));
  }
  SECTION("everything wrong") {
    std::vector<int> truth = {0, 0, 1, 1};
    std::vector<int> pred = {1, 1, 0, 0};
    CHECK(macro_f1(truth, pred, {0, 1}) == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("metrics stay in [0,1] and ignore labeling names") {
  std::vector<int> truth = {0, 0, 1, 1, 2, 2, 2};
  std::vector<int> pred = {0, 1, 1, 2, 2, 0, 2};
  const double b = balanced_accuracy(truth, pred, {0, 1, 2});
  const double f = macro_f1(truth, pred, {0, 1, 2});
  CHECK(b >= 0.0);
  CHECK(b <= 1.0);
  CHECK(f >= 0.0);
  CHECK(f <= 1.0);
  // relabel 0->5, 1->6, 2->7 consistently
  auto relabel = [](std::vector<int> v) {
    for (int& x : v) x += 5;
    return v;
  };
  CHECK(balanced_accuracy(relabel(truth), relabel(pred), {5, 6, 7}) ==
        Catch::Approx(b));
  CHECK(macro_f1(relabel(truth), relabel(pred), {5, 6, 7}) ==
        Catch::Approx(f));
}

TEST_CASE("predictions in outlier classes count as misses") {
  std::vector<int> truth = {0, 0, 1, 1};
  std::vector<int> good = {0, 0, 1, 1};
  std::vector<int> outlier = {0, 3, 1, 3};  // class 3 never evaluable
  const double b_good = balanced_accuracy(truth, good, {0, 1});
  const double b_out = balanced_accuracy(truth, outlier, {0, 1});
  CHECK(b_out < b_good);
  CHECK(macro_f1(truth, outlier, {0, 1}) < macro_f1(truth, good, {0, 1}));
}

TEST_CASE("classes absent from ground truth are skipped with a warning") {
  std::vector<int> truth = {0, 0, 1};
  std::vector<int> pred = {0, 1, 1};
  std::vector<std::string> warnings;
  balanced_accuracy(truth, pred, {0, 1, 2}, &warnings);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("2") != std::string::npos);
}

TEST_CASE("friedman-nemenyi reproduces the paper-scale critical difference") {
  ScoreMatrix sm;
  const int phi = 9, varphi = 28;
  sm.scores.resize(varphi, phi);
  Rng rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < varphi; ++t)
    for (int m = 0; m < phi; ++m) sm.scores(t, m) = u(rng);
  RankSummary rs = friedman_nemenyi(sm, 0.05);
  CHECK(rs.cd == Catch::Approx(2.27).margin(0.005));
}

TEST_CASE("a method that always wins has average rank one") {
  ScoreMatrix sm;
  sm.scores.resize(5, 4);
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.0, 0.5);
  for (int t = 0; t < 5; ++t) {
    for (int m = 0; m < 4; ++m) sm.scores(t, m) = u(rng);
    sm.scores(t, 2) = 0.9;  // strictly best everywhere
  }
  RankSummary rs = friedman_nemenyi(sm, 0.05);
  CHECK(rs.avg_ranks[2] == Catch::Approx(1.0));
}

TEST_CASE("per-task ranks sum to phi(phi+1)/2 including ties") {
  Matrix scores(1, 5);
  scores << 0.3, 0.7, 0.7, 0.1, 0.5;
  ScoreMatrix sm;
  sm.scores = scores;
  // two tasks needed; duplicate the row
  sm.scores.conservativeResize(2, 5);
  sm.scores.row(1) = scores.row(0);
  RankSummary rs = friedman_nemenyi(sm, 0.05);
  CHECK(rs.avg_ranks.sum() == Catch::Approx(5.0 * 6.0 / 2.0));
}

TEST_CASE("critical difference shrinks with more tasks") {
  Rng rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double prev = std::numeric_limits<double>::infinity();
  for (int varphi : {4, 8, 16, 32}) {
    ScoreMatrix sm;
    sm.scores.resize(varphi, 6);
    for (int t = 0; t < varphi; ++t)
      for (int m = 0; m < 6; ++m) sm.scores(t, m) = u(rng);
    RankSummary rs = friedman_nemenyi(sm, 0.05);
    CHECK(rs.cd < prev);
    prev = rs.cd;
  }
}

TEST_CASE("two methods are rejected, as is an uncovered alpha") {
  ScoreMatrix sm;
  sm.scores.resize(4, 2);
  sm.scores.setRandom();
  CHECK_THROWS_AS(friedman_nemenyi(sm, 0.05), Error);

  ScoreMatrix big;
  big.scores.resize(4, 21);
  big.scores.setRandom();
  CHECK_THROWS_AS(friedman_nemenyi(big, 0.05), Error);

  ScoreMatrix ok;
  ok.scores.resize(4, 5);
  ok.scores.setRandom();
  CHECK_THROWS_AS(friedman_nemenyi(ok, 0.01), Error);
  CHECK_NOTHROW(friedman_nemenyi(ok, 0.10));
}
