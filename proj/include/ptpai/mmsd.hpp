#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ptpai/common.hpp"

namespace ptpai {

// Linear combination of Gaussian kernels, K = sum_u xi_u k_u with
// k_u(x, y) = exp(-|x-y|^2 / (2 sigma2_u)).
struct KernelSpec {
  std::vector<double> bandwidths;  // sigma^2 per kernel
  std::vector<double> coeffs;      // xi per kernel
  bool median_rescale = false;     // scale sigma^2 by the batch median distance

  static KernelSpec defaults() {
    KernelSpec spec;
    spec.bandwidths = {0.001, 0.01, 1.0, 10.0, 100.0};
    spec.coeffs.assign(spec.bandwidths.size(),
                       1.0 / static_cast<double>(spec.bandwidths.size()));
    return spec;
  }
};

inline void validate(const KernelSpec& spec) {
  require(!spec.bandwidths.empty() &&
              spec.bandwidths.size() == spec.coeffs.size(),
          ErrorCode::config, "kernel spec: bandwidths/coeffs mismatch");
  double total = 0.0;
  for (double s2 : spec.bandwidths)
    require(s2 > 0.0, ErrorCode::config, "kernel spec: sigma^2 must be > 0");
  for (double xi : spec.coeffs) {
    require(xi >= 0.0, ErrorCode::config, "kernel spec: xi must be >= 0");
    total += xi;
  }
  require(total > 0.0, ErrorCode::config, "kernel spec: sum of xi must be > 0");
}

inline double multi_gaussian_kernel(const Vector& x, const Vector& y,
                                    const KernelSpec& spec) {
  validate(spec);
  require(x.size() == y.size(), ErrorCode::shape,
          "kernel: dimension mismatch");
  const double r2 = (x - y).squaredNorm();
  double k = 0.0;
  for (std::size_t u = 0; u < spec.bandwidths.size(); ++u) {
    k += spec.coeffs[u] * std::exp(-r2 / (2.0 * spec.bandwidths[u]));
  }
  return k;
}

namespace detail {

inline Matrix pairwise_sq_dists(const Matrix& a, const Matrix& b) {
  Vector an = a.rowwise().squaredNorm();
  Vector bn = b.rowwise().squaredNorm();
  Matrix d = (-2.0 * a * b.transpose());
  d.colwise() += an;
  d.rowwise() += bn.transpose();
  return d.cwiseMax(0.0);
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 1.0;
  std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid),
                   v.end());
  return v[mid];
}

// Evaluates K and dPsi/d(r^2) on a matrix of squared distances, where
// Psi = K^2 for the MMSD statistic and Psi = K for the plain MMD variant.
inline void kernel_blocks(const Matrix& r2,
                          const std::vector<double>& sigma2,
                          const std::vector<double>& xi, bool squared,
                          Matrix& psi, Matrix& dpsi_dr2) {
  Matrix k = Matrix::Zero(r2.rows(), r2.cols());
  Matrix kp = Matrix::Zero(r2.rows(), r2.cols());
  for (std::size_t u = 0; u < sigma2.size(); ++u) {
    Matrix ku = (-r2.array() / (2.0 * sigma2[u])).exp().matrix();
    k += xi[u] * ku;
    kp -= (xi[u] / (2.0 * sigma2[u])) * ku;
  }
  if (squared) {
    psi = k.cwiseProduct(k);
    dpsi_dr2 = 2.0 * k.cwiseProduct(kp);
  } else {
    psi = k;
    dpsi_dr2 = kp;
  }
}

}  // namespace detail

struct MmsdResult {
  double value = 0.0;
  Matrix grad_s;  // d value / d zs
  Matrix grad_t;  // d value / d zt
};

// Weighted biased (V-statistic) estimator
//   (1/ns^2) sum_ij ws_i ws_j Psi(zs_i, zs_j)
// + (1/nt^2) sum_ij wt_i wt_j Psi(zt_i, zt_j)
// - (2/(ns nt)) sum_ij ws_i wt_j Psi(zs_i, zt_j)
// with Psi the elementwise square of the combined kernel. Diagonal terms are
// kept, exactly as the biased statistic is written.
inline MmsdResult weighted_mmsd_with_grad(const Matrix& zs, const Matrix& zt,
                                          const Vector& ws, const Vector& wt,
                                          const KernelSpec& spec,
                                          bool squared = true,
                                          bool want_grad = true) {
  validate(spec);
  require(zs.rows() > 0 && zt.rows() > 0, ErrorCode::invalid_input,
          "mmsd: empty inputs");
  require(zs.cols() == zt.cols(), ErrorCode::shape,
          "mmsd: feature dimension mismatch");
  require(ws.size() == zs.rows() && wt.size() == zt.rows(), ErrorCode::shape,
          "mmsd: weight length mismatch");
  for (int i = 0; i < ws.size(); ++i)
    require(std::isfinite(ws[i]) && ws[i] >= 0.0, ErrorCode::invalid_input,
            "mmsd: source weights must be finite and nonnegative");
  for (int i = 0; i < wt.size(); ++i)
    require(std::isfinite(wt[i]) && wt[i] >= 0.0, ErrorCode::invalid_input,
            "mmsd: target weights must be finite and nonnegative");

  const double ns = static_cast<double>(zs.rows());
  const double nt = static_cast<double>(zt.rows());

  Matrix r2_ss = detail::pairwise_sq_dists(zs, zs);
  Matrix r2_tt = detail::pairwise_sq_dists(zt, zt);
  Matrix r2_st = detail::pairwise_sq_dists(zs, zt);

  std::vector<double> sigma2 = spec.bandwidths;
  if (spec.median_rescale) {
    std::vector<double> pooled;
    pooled.reserve(static_cast<std::size_t>(r2_ss.size() + r2_tt.size() +
                                            r2_st.size()));
    auto collect = [&pooled](const Matrix& m, bool skip_diag) {
      for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j)
          if (!skip_diag || i != j) pooled.push_back(m(i, j));
    };
    collect(r2_ss, true);
    collect(r2_tt, true);
    collect(r2_st, false);
    double med = std::max(detail::median_of(std::move(pooled)), 1e-12);
    for (double& s2 : sigma2) s2 *= med;
  }

  MmsdResult result;
  if (want_grad) {
    result.grad_s = Matrix::Zero(zs.rows(), zs.cols());
    result.grad_t = Matrix::Zero(zt.rows(), zt.cols());
  }

  Matrix psi, dpsi;
  // source-source block
  detail::kernel_blocks(r2_ss, sigma2, spec.coeffs, squared, psi, dpsi);
  {
    Matrix w = (ws * ws.transpose()) / (ns * ns);
    result.value += w.cwiseProduct(psi).sum();
    if (want_grad) {
      Matrix m = w.cwiseProduct(dpsi);
      // both (i,j) and (j,i) contribute
      Vector rs = m.rowwise().sum();
      Vector cs = m.colwise().sum().transpose();
      result.grad_s += 2.0 * ((rs.asDiagonal() * zs - m * zs) +
                              (cs.asDiagonal() * zs - m.transpose() * zs));
    }
  }
  // target-target block
  detail::kernel_blocks(r2_tt, sigma2, spec.coeffs, squared, psi, dpsi);
  {
    Matrix w = (wt * wt.transpose()) / (nt * nt);
    result.value += w.cwiseProduct(psi).sum();
    if (want_grad) {
      Matrix m = w.cwiseProduct(dpsi);
      Vector rs = m.rowwise().sum();
      Vector cs = m.colwise().sum().transpose();
      result.grad_t += 2.0 * ((rs.asDiagonal() * zt - m * zt) +
                              (cs.asDiagonal() * zt - m.transpose() * zt));
    }
  }
  // cross block
  detail::kernel_blocks(r2_st, sigma2, spec.coeffs, squared, psi, dpsi);
  {
    Matrix w = (ws * wt.transpose()) * (-2.0 / (ns * nt));
    result.value += w.cwiseProduct(psi).sum();
    if (want_grad) {
      Matrix m = w.cwiseProduct(dpsi);
      Vector rs = m.rowwise().sum();
      Vector cs = m.colwise().sum().transpose();
      result.grad_s += 2.0 * (rs.asDiagonal() * zs - m * zt);
      result.grad_t += 2.0 * (cs.asDiagonal() * zt - m.transpose() * zs);
    }
  }
  return result;
}

inline double weighted_mmsd(const Matrix& zs, const Matrix& zt,
                            const Vector& ws, const Vector& wt,
                            const KernelSpec& spec) {
  return weighted_mmsd_with_grad(zs, zt, ws, wt, spec, /*squared=*/true,
                                 /*want_grad=*/false)
      .value;
}

// Multi-layer loss: the statistic at FC1 plus the statistic at FC2.
inline double mkmmsd_loss(const Matrix& z1s, const Matrix& z1t,
                          const Matrix& z2s, const Matrix& z2t,
                          const Vector& ws, const Vector& wt,
                          const KernelSpec& spec, bool squared = true) {
  return weighted_mmsd_with_grad(z1s, z1t, ws, wt, spec, squared, false).value +
         weighted_mmsd_with_grad(z2s, z2t, ws, wt, spec, squared, false).value;
}

}  // namespace ptpai
