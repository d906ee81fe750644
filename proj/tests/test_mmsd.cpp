#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "ptpai/mmsd.hpp"

using namespace ptpai;

namespace {

KernelSpec single_kernel(double sigma2) {
  KernelSpec spec;
  spec.bandwidths = {sigma2};
  spec.coeffs = {1.0};
  return spec;
}

Matrix random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(rows, cols);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Vector random_weights(int n, Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 2.0);
  Vector w(n);
  for (int i = 0; i < n; ++i) w[i] = dist(rng);
  return w;
}

}  // namespace

TEST_CASE("multi-Gaussian kernel closed forms") {
  KernelSpec spec = KernelSpec::defaults();
  Vector x(3), y(3);
  x << 0.3, -1.2, 0.8;
  y = x;
  CHECK(multi_gaussian_kernel(x, y, spec) == Catch::Approx(1.0));

  Vector a(2), b(2);
  a << 1.0, 0.0;
  b << 0.0, 1.0;  // squared distance 2
  CHECK(multi_gaussian_kernel(a, b, single_kernel(1.0)) ==
        Catch::Approx(std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("multi-Gaussian kernel is symmetric") {
  Rng rng(7);
  KernelSpec spec = KernelSpec::defaults();
  for (int trial = 0; trial < 20; ++trial) {
    Matrix pair = random_matrix(2, 5, rng);
    const double kxy =
        multi_gaussian_kernel(pair.row(0).transpose(), pair.row(1).transpose(), spec);
    const double kyx =
        multi_gaussian_kernel(pair.row(1).transpose(), pair.row(0).transpose(), spec);
    CHECK(kxy == Catch::Approx(kyx).margin(1e-15));
  }
}

TEST_CASE("kernel dimension mismatch is a shape error") {
  Vector x(3), y(4);
  x.setZero();
  y.setZero();
  CHECK_THROWS_AS(multi_gaussian_kernel(x, y, KernelSpec::defaults()), Error);
}

TEST_CASE("weighted_mmsd vanishes on identical samples") {
  Rng rng(11);
  Matrix z = random_matrix(6, 4, rng);
  Vector ones = Vector::Ones(6);
  const double v = weighted_mmsd(z, z, ones, ones, KernelSpec::defaults());
  CHECK(v <= 1e-10);
  CHECK(v >= -1e-12);
}

TEST_CASE("weighted_mmsd single-pair closed form") {
  Matrix zs(1, 2), zt(1, 2);
  zs << 1.0, 0.0;
  zt << 0.0, 1.0;  // squared distance 2
  Vector one = Vector::Ones(1);
  const double v = weighted_mmsd(zs, zt, one, one, single_kernel(1.0));
  CHECK(v == Catch::Approx(2.0 - 2.0 * std::exp(-2.0)).epsilon(1e-9));
  CHECK(v == Catch::Approx(1.729329).margin(1e-6));
}

TEST_CASE("weighted_mmsd matches the brute-force oracle") {
  Rng rng(42);
  KernelSpec spec;
  spec.bandwidths = {0.5, 2.0, 7.5};
  spec.coeffs = {0.25, 0.5, 0.25};
  std::uniform_int_distribution<int> n_dist(1, 8);
  std::uniform_int_distribution<int> d_dist(1, 5);
  for (int trial = 0; trial < 100; ++trial) {
    const int ns = n_dist(rng), nt = n_dist(rng), d = d_dist(rng);
    Matrix zs = random_matrix(ns, d, rng);
    Matrix zt = random_matrix(nt, d, rng);
    Vector ws = random_weights(ns, rng);
    Vector wt = random_weights(nt, rng);
    const double got = weighted_mmsd(zs, zt, ws, wt, spec);
    const double want =
        oracle::weighted_mmsd(zs, zt, ws, wt, spec.bandwidths, spec.coeffs);
    CHECK(oracle::rel_err(got, want) <= 1e-10);
  }
}

TEST_CASE("plain MMD variant matches the oracle too") {
  Rng rng(43);
  KernelSpec spec = KernelSpec::defaults();
  for (int trial = 0; trial < 25; ++trial) {
    Matrix zs = random_matrix(5, 3, rng);
    Matrix zt = random_matrix(4, 3, rng);
    Vector ws = random_weights(5, rng);
    Vector wt = random_weights(4, rng);
    const double got =
        weighted_mmsd_with_grad(zs, zt, ws, wt, spec, /*squared=*/false, false)
            .value;
    const double want = oracle::weighted_mmsd(zs, zt, ws, wt, spec.bandwidths,
                                              spec.coeffs, /*squared=*/false);
    CHECK(oracle::rel_err(got, want) <= 1e-10);
  }
}

TEST_CASE("weighted_mmsd stays nonnegative") {
  Rng rng(99);
  KernelSpec spec = KernelSpec::defaults();
  for (int trial = 0; trial < 50; ++trial) {
    Matrix zs = random_matrix(4, 3, rng, 2.0);
    Matrix zt = random_matrix(6, 3, rng, 0.5);
    Vector ws = random_weights(4, rng);
    Vector wt = random_weights(6, rng);
    CHECK(weighted_mmsd(zs, zt, ws, wt, spec) >= -1e-12);
  }
}

TEST_CASE("weighted_mmsd is invariant under consistent permutations") {
  Rng rng(5);
  KernelSpec spec = KernelSpec::defaults();
  Matrix zs = random_matrix(5, 3, rng);
  Matrix zt = random_matrix(4, 3, rng);
  Vector ws = random_weights(5, rng);
  Vector wt = random_weights(4, rng);
  const double base = weighted_mmsd(zs, zt, ws, wt, spec);

  std::vector<int> perm = {3, 0, 4, 1, 2};
  Matrix zsp(5, 3);
  Vector wsp(5);
  for (int i = 0; i < 5; ++i) {
    zsp.row(i) = zs.row(perm[static_cast<std::size_t>(i)]);
    wsp[i] = ws[perm[static_cast<std::size_t>(i)]];
  }
  CHECK(weighted_mmsd(zsp, zt, wsp, wt, spec) ==
        Catch::Approx(base).epsilon(1e-12));
}

TEST_CASE("two point masses: statistic falls as the cross kernel grows") {
  KernelSpec spec = single_kernel(1.0);
  Vector one = Vector::Ones(1);
  double prev = std::numeric_limits<double>::infinity();
  for (double dist = 3.0; dist >= 0.0; dist -= 0.25) {
    Matrix zs(1, 1), zt(1, 1);
    zs << 0.0;
    zt << dist;  // K(s,t) increases as dist shrinks
    const double v = weighted_mmsd(zs, zt, one, one, spec);
    CHECK(v <= prev + 1e-12);
    prev = v;
  }
}

TEST_CASE("mkmmsd_loss adds the two layer statistics") {
  Rng rng(17);
  KernelSpec spec = KernelSpec::defaults();
  Matrix z1s = random_matrix(5, 6, rng), z1t = random_matrix(4, 6, rng);
  Matrix z2s = random_matrix(5, 3, rng), z2t = random_matrix(4, 3, rng);
  Vector ws = random_weights(5, rng), wt = random_weights(4, rng);
  const double total = mkmmsd_loss(z1s, z1t, z2s, z2t, ws, wt, spec);
  const double d1 = weighted_mmsd(z1s, z1t, ws, wt, spec);
  const double d2 = weighted_mmsd(z2s, z2t, ws, wt, spec);
  CHECK(total == Catch::Approx(d1 + d2).epsilon(1e-12));

  CHECK(mkmmsd_loss(z1s, z1s, z2s, z2s, ws, ws, spec) ==
        Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(23);
  KernelSpec spec;
  spec.bandwidths = {0.5, 5.0};
  spec.coeffs = {0.5, 0.5};
  Matrix zs = random_matrix(4, 3, rng);
  Matrix zt = random_matrix(3, 3, rng);
  Vector ws = random_weights(4, rng);
  Vector wt = random_weights(3, rng);

  MmsdResult res = weighted_mmsd_with_grad(zs, zt, ws, wt, spec);
  auto value = [&]() { return weighted_mmsd(zs, zt, ws, wt, spec); };
  for (long i = 0; i < zs.size(); ++i) {
    const double fd = oracle::central_diff(value, zs.data() + i, 1e-6);
    CHECK(oracle::rel_err(res.grad_s.data()[i], fd) <= 1e-4);
  }
  for (long i = 0; i < zt.size(); ++i) {
    const double fd = oracle::central_diff(value, zt.data() + i, 1e-6);
    CHECK(oracle::rel_err(res.grad_t.data()[i], fd) <= 1e-4);
  }
}

TEST_CASE("empty inputs are rejected") {
  Matrix empty(0, 3), z(2, 3);
  z.setZero();
  Vector w0(0), w = Vector::Ones(2);
  CHECK_THROWS_AS(weighted_mmsd(empty, z, w0, w, KernelSpec::defaults()),
                  Error);
}
