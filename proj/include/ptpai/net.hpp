#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ptpai/common.hpp"

namespace ptpai {

enum class ParamGroup { feature, classifier, discriminator, auxiliary };

struct Conv1d {
  int in_ch = 1, out_ch = 1, kernel = 1, stride = 1;
  Matrix w;  // [kernel*in_ch, out_ch]
  Vector b;  // [out_ch]
};

struct BatchNorm {
  Vector gamma, beta;
  // exponential moving averages of batch statistics; run_weight accumulates
  // the same recursion applied to the constant 1, so run_mean/run_weight is
  // a bias-corrected estimate from the very first update
  Vector run_mean, run_var;
  Vector run_weight;  // single element
  double momentum = 0.1;
  double eps = 1e-5;
};

struct Dense {
  Matrix w;  // [in, out]
  Vector b;  // [out]
};

// All parameter groups of the Table-I architecture: four conv blocks with
// batch norm (theta_f), the FC1/FC2 bottleneck, the label classifier FC3
// (theta_c), the auxiliary FC4-FC6 head (theta_a) and the conditional
// discriminator FC7-FC9 (theta_d).
struct NetParams {
  std::array<Conv1d, 4> conv;
  std::array<BatchNorm, 4> bn;
  Dense fc1, fc2;        // bottleneck, updated with theta_f
  Dense fc3;             // classifier
  Dense fc4, fc5, fc6;   // auxiliary
  Dense fc7, fc8, fc9;   // discriminator
  int input_dim = 0;
  int n_classes = 0;
  double dropout_rate = 0.5;
};

inline constexpr int kFeatureWidth = 128;

namespace netdet {

inline void xavier_init(Matrix& w, double fan_in, double fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (long i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
}

inline Dense make_dense(int in, int out, Rng& rng) {
  Dense d;
  d.w.resize(in, out);
  xavier_init(d.w, in, out, rng);
  d.b = Vector::Zero(out);
  return d;
}

inline Conv1d make_conv(int in_ch, int out_ch, int kernel, int stride,
                        Rng& rng) {
  Conv1d c;
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  c.kernel = kernel;
  c.stride = stride;
  c.w.resize(kernel * in_ch, out_ch);
  xavier_init(c.w, static_cast<double>(kernel) * in_ch,
              static_cast<double>(kernel) * out_ch, rng);
  c.b = Vector::Zero(out_ch);
  return c;
}

inline BatchNorm make_bn(int ch) {
  BatchNorm bn;
  bn.gamma = Vector::Ones(ch);
  bn.beta = Vector::Zero(ch);
  bn.run_mean = Vector::Zero(ch);
  bn.run_var = Vector::Zero(ch);
  bn.run_weight = Vector::Zero(1);
  return bn;
}

}  // namespace netdet

inline NetParams make_net(int input_dim, int n_classes, Rng& rng) {
  require(input_dim >= 2, ErrorCode::shape, "net: input too short");
  require(n_classes >= 2, ErrorCode::shape, "net: need >= 2 classes");
  NetParams p;
  p.input_dim = input_dim;
  p.n_classes = n_classes;
  const int kernels[4] = {128, 64, 3, 3};
  const int filters[4] = {16, 32, 64, 128};
  int ch = 1;
  for (int i = 0; i < 4; ++i) {
    p.conv[static_cast<std::size_t>(i)] =
        netdet::make_conv(ch, filters[i], kernels[i], 2, rng);
    p.bn[static_cast<std::size_t>(i)] = netdet::make_bn(filters[i]);
    ch = filters[i];
  }
  p.fc1 = netdet::make_dense(kFeatureWidth, 256, rng);
  p.fc2 = netdet::make_dense(256, kFeatureWidth, rng);
  p.fc3 = netdet::make_dense(kFeatureWidth, n_classes, rng);
  p.fc4 = netdet::make_dense(kFeatureWidth, 256, rng);
  p.fc5 = netdet::make_dense(256, kFeatureWidth, rng);
  p.fc6 = netdet::make_dense(kFeatureWidth, n_classes, rng);
  p.fc7 = netdet::make_dense(kFeatureWidth * n_classes, 256, rng);
  p.fc8 = netdet::make_dense(256, kFeatureWidth, rng);
  p.fc9 = netdet::make_dense(kFeatureWidth, 2, rng);
  return p;
}

inline NetParams zeros_like(const NetParams& p) {
  NetParams g = p;
  for (auto& c : g.conv) {
    c.w.setZero();
    c.b.setZero();
  }
  for (auto& bn : g.bn) {
    bn.gamma.setZero();
    bn.beta.setZero();
    bn.run_mean.setZero();
    bn.run_var.setZero();
    bn.run_weight.setZero();
  }
  for (Dense* d : {&g.fc1, &g.fc2, &g.fc3, &g.fc4, &g.fc5, &g.fc6, &g.fc7,
                   &g.fc8, &g.fc9}) {
    d->w.setZero();
    d->b.setZero();
  }
  return g;
}

struct ParamView {
  std::string name;
  double* data = nullptr;
  long size = 0;
};

inline std::vector<ParamView> param_views(NetParams& p, ParamGroup group) {
  std::vector<ParamView> views;
  auto add = [&views](const std::string& name, auto& arr) {
    views.push_back({name, arr.data(), static_cast<long>(arr.size())});
  };
  auto add_dense = [&add](const std::string& name, Dense& d) {
    add(name + ".w", d.w);
    add(name + ".b", d.b);
  };
  switch (group) {
    case ParamGroup::feature:
      for (int i = 0; i < 4; ++i) {
        const std::string base = "conv" + std::to_string(i + 1);
        add(base + ".w", p.conv[static_cast<std::size_t>(i)].w);
        add(base + ".b", p.conv[static_cast<std::size_t>(i)].b);
        add(base + ".bn.gamma", p.bn[static_cast<std::size_t>(i)].gamma);
        add(base + ".bn.beta", p.bn[static_cast<std::size_t>(i)].beta);
      }
      add_dense("fc1", p.fc1);
      add_dense("fc2", p.fc2);
      break;
    case ParamGroup::classifier:
      add_dense("fc3", p.fc3);
      break;
    case ParamGroup::auxiliary:
      add_dense("fc4", p.fc4);
      add_dense("fc5", p.fc5);
      add_dense("fc6", p.fc6);
      break;
    case ParamGroup::discriminator:
      add_dense("fc7", p.fc7);
      add_dense("fc8", p.fc8);
      add_dense("fc9", p.fc9);
      break;
  }
  return views;
}

inline const std::array<ParamGroup, 4>& all_param_groups() {
  static const std::array<ParamGroup, 4> groups = {
      ParamGroup::feature, ParamGroup::classifier, ParamGroup::discriminator,
      ParamGroup::auxiliary};
  return groups;
}

// ---------------------------------------------------------------------------
// forward/backward building blocks
// ---------------------------------------------------------------------------

struct FwdOpts {
  bool train = false;
  bool update_running = false;      // refresh BN running stats
  std::uint64_t dropout_seed = 0;   // fixed seed -> reproducible masks
};

namespace netdet {

inline int conv_out_len(int len, int stride) {
  return (len + stride - 1) / stride;  // "same" padding
}

struct ConvCache {
  Matrix x_col;
  int batch = 0, len_in = 0, len_out = 0;
};

// x is [batch*len_in, in_ch], sample-major rows; output [batch*len_out, out_ch].
inline Matrix conv_forward(const Conv1d& c, const Matrix& x, int batch,
                           ConvCache* cache) {
  const int len_in = static_cast<int>(x.rows()) / batch;
  const int len_out = conv_out_len(len_in, c.stride);
  const int pad_total =
      std::max((len_out - 1) * c.stride + c.kernel - len_in, 0);
  const int pad_left = pad_total / 2;

  Matrix x_col = Matrix::Zero(static_cast<long>(batch) * len_out,
                              static_cast<long>(c.kernel) * c.in_ch);
  for (int s = 0; s < batch; ++s) {
    const long in_base = static_cast<long>(s) * len_in;
    const long out_base = static_cast<long>(s) * len_out;
    for (int o = 0; o < len_out; ++o) {
      const int start = o * c.stride - pad_left;
      for (int t = 0; t < c.kernel; ++t) {
        const int pos = start + t;
        if (pos < 0 || pos >= len_in) continue;
        x_col.block(out_base + o, static_cast<long>(t) * c.in_ch, 1, c.in_ch) =
            x.block(in_base + pos, 0, 1, c.in_ch);
      }
    }
  }
  Matrix y = x_col * c.w;
  y.rowwise() += c.b.transpose();
  if (cache) {
    cache->x_col = std::move(x_col);
    cache->batch = batch;
    cache->len_in = len_in;
    cache->len_out = len_out;
  }
  return y;
}

inline void conv_backward(const Conv1d& c, const ConvCache& cache,
                          const Matrix& dy, Conv1d& grad, Matrix* dx) {
  grad.w.noalias() += cache.x_col.transpose() * dy;
  grad.b.noalias() += dy.colwise().sum().transpose();
  if (!dx) return;
  const int pad_total =
      std::max((cache.len_out - 1) * c.stride + c.kernel - cache.len_in, 0);
  const int pad_left = pad_total / 2;
  Matrix d_col = dy * c.w.transpose();  // [b*len_out, kernel*in_ch]
  dx->setZero(static_cast<long>(cache.batch) * cache.len_in, c.in_ch);
  for (int s = 0; s < cache.batch; ++s) {
    const long in_base = static_cast<long>(s) * cache.len_in;
    const long out_base = static_cast<long>(s) * cache.len_out;
    for (int o = 0; o < cache.len_out; ++o) {
      const int start = o * c.stride - pad_left;
      for (int t = 0; t < c.kernel; ++t) {
        const int pos = start + t;
        if (pos < 0 || pos >= cache.len_in) continue;
        dx->block(in_base + pos, 0, 1, c.in_ch) +=
            d_col.block(out_base + o, static_cast<long>(t) * c.in_ch, 1,
                        c.in_ch);
      }
    }
  }
}

struct BnCache {
  Matrix xhat;
  Vector invstd;
  bool train = false;
};

inline Matrix bn_forward(BatchNorm& bn, const Matrix& x, const FwdOpts& opts,
                         BnCache* cache) {
  const long n = x.rows();
  Matrix y(x.rows(), x.cols());
  if (opts.train) {
    Vector mean = x.colwise().mean().transpose();
    Matrix centered = x.rowwise() - mean.transpose();
    Vector var =
        centered.array().square().colwise().mean().matrix().transpose();
    Vector invstd = (var.array() + bn.eps).rsqrt().matrix();
    Matrix xhat = centered.array().rowwise() *
                  invstd.transpose().array();
    y = xhat.array().rowwise() * bn.gamma.transpose().array();
    y.rowwise() += bn.beta.transpose();
    if (opts.update_running) {
      bn.run_mean = (1.0 - bn.momentum) * bn.run_mean + bn.momentum * mean;
      // unbiased variance for the running estimate
      const double corr =
          n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
      bn.run_var = (1.0 - bn.momentum) * bn.run_var + bn.momentum * corr * var;
      bn.run_weight[0] = (1.0 - bn.momentum) * bn.run_weight[0] + bn.momentum;
    }
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->invstd = std::move(invstd);
      cache->train = true;
    }
  } else {
    const double wsum = bn.run_weight[0];
    Vector mean = wsum > 0.0 ? (bn.run_mean / wsum).eval()
                             : Vector::Zero(x.cols()).eval();
    Vector var = wsum > 0.0 ? (bn.run_var / wsum).eval()
                            : Vector::Ones(x.cols()).eval();
    Vector invstd = (var.array() + bn.eps).rsqrt().matrix();
    Matrix xhat = (x.rowwise() - mean.transpose()).array().rowwise() *
                  invstd.transpose().array();
    y = xhat.array().rowwise() * bn.gamma.transpose().array();
    y.rowwise() += bn.beta.transpose();
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->invstd = std::move(invstd);
      cache->train = false;
    }
  }
  return y;
}

inline void bn_backward(const BatchNorm& bn, const BnCache& cache,
                        const Matrix& dy, BatchNorm& grad, Matrix* dx) {
  Vector dgamma = dy.cwiseProduct(cache.xhat).colwise().sum().transpose();
  Vector dbeta = dy.colwise().sum().transpose();
  grad.gamma += dgamma;
  grad.beta += dbeta;
  if (!dx) return;
  if (cache.train) {
    const double n = static_cast<double>(dy.rows());
    // dx = gamma*invstd/n * (n*dy - sum(dy) - xhat * sum(dy*xhat))
    Matrix t = n * dy;
    t.rowwise() -= dbeta.transpose();
    t -= (cache.xhat.array().rowwise() * dgamma.transpose().array()).matrix();
    *dx = (t.array().rowwise() *
           (bn.gamma.cwiseProduct(cache.invstd) / n).transpose().array())
              .matrix();
  } else {
    *dx = dy.array().rowwise() *
          bn.gamma.cwiseProduct(cache.invstd).transpose().array();
  }
}

inline Matrix relu_forward(const Matrix& x, Matrix* mask) {
  Matrix y = x.cwiseMax(0.0);
  if (mask) *mask = (x.array() > 0.0).cast<double>().matrix();
  return y;
}

inline Matrix dropout_forward(const Matrix& x, double rate, bool train,
                              Rng& rng, Matrix* mask) {
  if (!train || rate <= 0.0) {
    if (mask) mask->setOnes(x.rows(), x.cols());
    return x;
  }
  const double keep = 1.0 - rate;
  std::bernoulli_distribution dist(keep);
  Matrix m(x.rows(), x.cols());
  for (long i = 0; i < m.size(); ++i)
    m.data()[i] = dist(rng) ? 1.0 / keep : 0.0;
  if (mask) *mask = m;
  return x.cwiseProduct(m);
}

// Non-overlapping max-pool of size 2 along the position axis.
struct PoolCache {
  Matrix sel;  // 1 when the second element won
  int batch = 0, len_in = 0, len_out = 0;
};

inline Matrix pool_forward(const Matrix& x, int batch, PoolCache* cache) {
  const int len_in = static_cast<int>(x.rows()) / batch;
  const int len_out = len_in / 2;
  require(len_out >= 1, ErrorCode::shape,
          "net: input too short for the conv stack");
  Matrix y(static_cast<long>(batch) * len_out, x.cols());
  Matrix sel(y.rows(), y.cols());
  for (int s = 0; s < batch; ++s) {
    for (int o = 0; o < len_out; ++o) {
      const long a = static_cast<long>(s) * len_in + 2 * o;
      const long r = static_cast<long>(s) * len_out + o;
      for (int c = 0; c < x.cols(); ++c) {
        const bool second = x(a + 1, c) > x(a, c);
        sel(r, c) = second ? 1.0 : 0.0;
        y(r, c) = second ? x(a + 1, c) : x(a, c);
      }
    }
  }
  if (cache) {
    cache->sel = std::move(sel);
    cache->batch = batch;
    cache->len_in = len_in;
    cache->len_out = len_out;
  }
  return y;
}

inline Matrix pool_backward(const PoolCache& cache, const Matrix& dy) {
  Matrix dx = Matrix::Zero(
      static_cast<long>(cache.batch) * cache.len_in, dy.cols());
  for (int s = 0; s < cache.batch; ++s) {
    for (int o = 0; o < cache.len_out; ++o) {
      const long a = static_cast<long>(s) * cache.len_in + 2 * o;
      const long r = static_cast<long>(s) * cache.len_out + o;
      for (int c = 0; c < dy.cols(); ++c) {
        dx(a + (cache.sel(r, c) > 0.5 ? 1 : 0), c) = dy(r, c);
      }
    }
  }
  return dx;
}

inline Matrix gap_forward(const Matrix& x, int batch) {
  const int len = static_cast<int>(x.rows()) / batch;
  Matrix y(batch, x.cols());
  for (int s = 0; s < batch; ++s) {
    y.row(s) = x.block(static_cast<long>(s) * len, 0, len, x.cols())
                   .colwise()
                   .mean();
  }
  return y;
}

inline Matrix gap_backward(const Matrix& dy, int len) {
  Matrix dx(static_cast<long>(dy.rows()) * len, dy.cols());
  for (int s = 0; s < dy.rows(); ++s) {
    dx.block(static_cast<long>(s) * len, 0, len, dy.cols()) =
        (dy.row(s) / static_cast<double>(len)).replicate(len, 1);
  }
  return dx;
}

struct DenseCache {
  Matrix x;
};

inline Matrix dense_forward(const Dense& d, const Matrix& x,
                            DenseCache* cache) {
  require(x.cols() == d.w.rows(), ErrorCode::shape,
          "net: dense layer input width mismatch");
  Matrix y = x * d.w;
  y.rowwise() += d.b.transpose();
  if (cache) cache->x = x;
  return y;
}

inline void dense_backward(const Dense& d, const DenseCache& cache,
                           const Matrix& dy, Dense& grad, Matrix* dx) {
  grad.w.noalias() += cache.x.transpose() * dy;
  grad.b.noalias() += dy.colwise().sum().transpose();
  if (dx) dx->noalias() = dy * d.w.transpose();
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

// d logits from d probs through the softmax Jacobian.
inline Matrix softmax_backward_rows(const Matrix& probs,
                                    const Matrix& dprobs) {
  Matrix dz(probs.rows(), probs.cols());
  for (int i = 0; i < probs.rows(); ++i) {
    const double dot = probs.row(i).dot(dprobs.row(i));
    dz.row(i) = (probs.row(i).array() * dprobs.row(i).array()).matrix() -
                dot * probs.row(i);
  }
  return dz;
}

// leaky[i,c] = exp(z_c) / (C + sum_k exp(z_k)); row sums stay strictly
// below one, so the class sum acts as a domain probability.
inline Matrix leaky_softmax_rows(const Matrix& logits) {
  const double c_count = static_cast<double>(logits.cols());
  Matrix q(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) {
    const double mx = std::max(0.0, logits.row(i).maxCoeff());
    Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    const double denom = c_count * std::exp(-mx) + e.sum();
    q.row(i) = e / denom;
  }
  return q;
}

inline Matrix leaky_softmax_backward_rows(const Matrix& q,
                                          const Matrix& dq) {
  Matrix dz(q.rows(), q.cols());
  for (int i = 0; i < q.rows(); ++i) {
    const double dot = q.row(i).dot(dq.row(i));
    dz.row(i) = q.row(i).cwiseProduct(dq.row(i)) - dot * q.row(i);
  }
  return dz;
}

}  // namespace netdet

// ---------------------------------------------------------------------------
// network-level operations
// ---------------------------------------------------------------------------

struct FeatureBatch {
  Matrix features;  // [b x 128], G_f output after GAP
  Matrix z1;        // [b x 256], FC1 output
  Matrix z2;        // [b x 128], FC2 output
};

struct FeatureCache {
  struct Stage {
    netdet::ConvCache conv;
    netdet::BnCache bn;
    Matrix relu_mask;
    netdet::PoolCache pool;
  };
  std::array<Stage, 4> stage;
  int batch = 0;
  int gap_len = 0;
  netdet::DenseCache fc1c, fc2c;
  Matrix relu1_mask, drop1_mask, relu2_mask, drop2_mask;
};

inline FeatureBatch feature_extract(NetParams& p, const Matrix& batch,
                                    const FwdOpts& opts,
                                    FeatureCache* cache = nullptr) {
  const int b = static_cast<int>(batch.rows());
  require(b >= 1, ErrorCode::invalid_batch, "net: empty batch");
  require(static_cast<int>(batch.cols()) == p.input_dim, ErrorCode::shape,
          "net: input width " + std::to_string(batch.cols()) +
              " != configured " + std::to_string(p.input_dim));
  require(!opts.train || b >= 2, ErrorCode::invalid_batch,
          "net: train mode needs batch >= 2 for batch norm");

  FeatureCache local;
  FeatureCache& c = cache ? *cache : local;
  c.batch = b;

  // to conv layout [b*len, 1]
  Matrix x(static_cast<long>(b) * p.input_dim, 1);
  for (int s = 0; s < b; ++s)
    for (int t = 0; t < p.input_dim; ++t)
      x(static_cast<long>(s) * p.input_dim + t, 0) = batch(s, t);

  for (int i = 0; i < 4; ++i) {
    auto& st = c.stage[static_cast<std::size_t>(i)];
    x = netdet::conv_forward(p.conv[static_cast<std::size_t>(i)], x, b,
                             cache ? &st.conv : nullptr);
    require(x.rows() / b >= 1, ErrorCode::shape,
            "net: input too short for the conv stack");
    x = netdet::bn_forward(p.bn[static_cast<std::size_t>(i)], x, opts,
                           cache ? &st.bn : nullptr);
    x = netdet::relu_forward(x, cache ? &st.relu_mask : nullptr);
    x = netdet::pool_forward(x, b, cache ? &st.pool : nullptr);
  }
  c.gap_len = static_cast<int>(x.rows()) / b;

  FeatureBatch out;
  out.features = netdet::gap_forward(x, b);

  Rng drop_rng1 = substream(opts.dropout_seed, "drop-fc1");
  Rng drop_rng2 = substream(opts.dropout_seed, "drop-fc2");
  Matrix a1 = netdet::dense_forward(p.fc1, out.features,
                                    cache ? &c.fc1c : nullptr);
  a1 = netdet::relu_forward(a1, cache ? &c.relu1_mask : nullptr);
  out.z1 = netdet::dropout_forward(a1, p.dropout_rate, opts.train, drop_rng1,
                                   cache ? &c.drop1_mask : nullptr);
  Matrix a2 =
      netdet::dense_forward(p.fc2, out.z1, cache ? &c.fc2c : nullptr);
  a2 = netdet::relu_forward(a2, cache ? &c.relu2_mask : nullptr);
  out.z2 = netdet::dropout_forward(a2, p.dropout_rate, opts.train, drop_rng2,
                                   cache ? &c.drop2_mask : nullptr);
  return out;
}

// Accumulates d(features)/d(z1)/d(z2) into the feature-group gradients.
// Pass empty matrices for signals that do not apply; d_input, when given,
// receives the gradient with respect to the [b x d] input batch.
inline void feature_backward(const NetParams& p, const FeatureCache& c,
                             Matrix d_features, const Matrix& d_z1,
                             const Matrix& d_z2, NetParams& grads,
                             Matrix* d_input = nullptr) {
  Matrix dz1_total = d_z1.size() ? d_z1 : Matrix::Zero(c.batch, 256);
  if (d_z2.size()) {
    Matrix d = d_z2.cwiseProduct(c.drop2_mask).cwiseProduct(c.relu2_mask);
    Matrix dx;
    netdet::dense_backward(p.fc2, c.fc2c, d, grads.fc2, &dx);
    dz1_total += dx;
  }
  if (d_features.size() == 0)
    d_features = Matrix::Zero(c.batch, kFeatureWidth);
  {
    Matrix d =
        dz1_total.cwiseProduct(c.drop1_mask).cwiseProduct(c.relu1_mask);
    Matrix dx;
    netdet::dense_backward(p.fc1, c.fc1c, d, grads.fc1, &dx);
    d_features += dx;
  }
  Matrix dx = netdet::gap_backward(d_features, c.gap_len);
  for (int i = 3; i >= 0; --i) {
    const auto& st = c.stage[static_cast<std::size_t>(i)];
    dx = netdet::pool_backward(st.pool, dx);
    dx = dx.cwiseProduct(st.relu_mask);
    Matrix dbn;
    netdet::bn_backward(p.bn[static_cast<std::size_t>(i)], st.bn, dx,
                        grads.bn[static_cast<std::size_t>(i)], &dbn);
    Matrix* dconv_in = (i > 0 || d_input) ? &dx : nullptr;
    netdet::conv_backward(p.conv[static_cast<std::size_t>(i)], st.conv, dbn,
                          grads.conv[static_cast<std::size_t>(i)], dconv_in);
  }
  if (d_input) {
    d_input->resize(c.batch, p.input_dim);
    for (int s = 0; s < c.batch; ++s)
      for (int t = 0; t < p.input_dim; ++t)
        (*d_input)(s, t) = dx(static_cast<long>(s) * p.input_dim + t, 0);
  }
}

struct ClassifyCache {
  netdet::DenseCache fc3c;
  Matrix probs;
};

inline Matrix classify(const NetParams& p, const Matrix& z2,
                       ClassifyCache* cache = nullptr) {
  require(z2.cols() == kFeatureWidth, ErrorCode::shape,
          "classify: expected width-128 input");
  ClassifyCache local;
  ClassifyCache& c = cache ? *cache : local;
  Matrix logits = netdet::dense_forward(p.fc3, z2, &c.fc3c);
  c.probs = netdet::softmax_rows(logits);
  return c.probs;
}

// Backward from a gradient on the softmax probabilities; returns d z2 and
// accumulates the FC3 gradient (the caller decides whether theta_c uses it).
inline Matrix classify_backward(const NetParams& p, const ClassifyCache& c,
                                const Matrix& d_probs, NetParams& grads) {
  Matrix d_logits = netdet::softmax_backward_rows(c.probs, d_probs);
  Matrix dz2;
  netdet::dense_backward(p.fc3, c.fc3c, d_logits, grads.fc3, &dz2);
  return dz2;
}

// Backward straight from d logits (used by the fused cross-entropy path).
inline Matrix classify_backward_logits(const NetParams& p,
                                       const ClassifyCache& c,
                                       const Matrix& d_logits,
                                       NetParams& grads) {
  Matrix dz2;
  netdet::dense_backward(p.fc3, c.fc3c, d_logits, grads.fc3, &dz2);
  return dz2;
}

struct AuxCache {
  netdet::DenseCache fc4c, fc5c, fc6c;
  Matrix relu4_mask, drop4_mask, relu5_mask, drop5_mask;
  Matrix leaky;
};

struct AuxOut {
  Matrix leaky;         // [b x C], row sums < 1
  Vector domain_score;  // [b], sum of the leaky row
};

// The auxiliary head consumes stop-gradient features: its losses never
// propagate into theta_f, so no d(input) path is provided.
inline AuxOut aux_forward(const NetParams& p, const Matrix& features,
                          const FwdOpts& opts, AuxCache* cache = nullptr) {
  require(features.cols() == kFeatureWidth, ErrorCode::shape,
          "aux: expected width-128 features");
  AuxCache local;
  AuxCache& c = cache ? *cache : local;
  Rng rng4 = substream(opts.dropout_seed, "drop-fc4");
  Rng rng5 = substream(opts.dropout_seed, "drop-fc5");
  Matrix a = netdet::dense_forward(p.fc4, features, &c.fc4c);
  a = netdet::relu_forward(a, &c.relu4_mask);
  a = netdet::dropout_forward(a, p.dropout_rate, opts.train, rng4,
                              &c.drop4_mask);
  a = netdet::dense_forward(p.fc5, a, &c.fc5c);
  a = netdet::relu_forward(a, &c.relu5_mask);
  a = netdet::dropout_forward(a, p.dropout_rate, opts.train, rng5,
                              &c.drop5_mask);
  Matrix logits = netdet::dense_forward(p.fc6, a, &c.fc6c);
  c.leaky = netdet::leaky_softmax_rows(logits);
  AuxOut out;
  out.leaky = c.leaky;
  out.domain_score = c.leaky.rowwise().sum();
  return out;
}

inline void aux_backward(const NetParams& p, const AuxCache& c,
                         const Matrix& d_leaky, const Vector& d_score,
                         NetParams& grads) {
  Matrix dq = d_leaky.size()
                  ? d_leaky
                  : Matrix::Zero(c.leaky.rows(), c.leaky.cols());
  if (d_score.size()) dq.colwise() += d_score;
  Matrix d_logits = netdet::leaky_softmax_backward_rows(c.leaky, dq);
  Matrix d;
  netdet::dense_backward(p.fc6, c.fc6c, d_logits, grads.fc6, &d);
  d = d.cwiseProduct(c.drop5_mask).cwiseProduct(c.relu5_mask);
  Matrix d2;
  netdet::dense_backward(p.fc5, c.fc5c, d, grads.fc5, &d2);
  d2 = d2.cwiseProduct(c.drop4_mask).cwiseProduct(c.relu4_mask);
  netdet::dense_backward(p.fc4, c.fc4c, d2, grads.fc4, nullptr);
}

// Flattened outer product, class-major blocks: out[c*128 + k] = p_c * f_k.
inline Matrix multilinear_map(const Matrix& features, const Matrix& probs) {
  require(features.rows() == probs.rows(), ErrorCode::shape,
          "multilinear: batch mismatch");
  const int b = static_cast<int>(features.rows());
  const int f = static_cast<int>(features.cols());
  const int nc = static_cast<int>(probs.cols());
  Matrix out(b, f * nc);
  for (int i = 0; i < b; ++i) {
    for (int c = 0; c < nc; ++c) {
      out.block(i, c * f, 1, f) = probs(i, c) * features.row(i);
    }
  }
  return out;
}

inline void multilinear_backward(const Matrix& features, const Matrix& probs,
                                 const Matrix& d_out, Matrix& d_features,
                                 Matrix& d_probs) {
  const int b = static_cast<int>(features.rows());
  const int f = static_cast<int>(features.cols());
  const int nc = static_cast<int>(probs.cols());
  for (int i = 0; i < b; ++i) {
    for (int c = 0; c < nc; ++c) {
      d_features.row(i) += probs(i, c) * d_out.row(i).segment(c * f, f);
      d_probs(i, c) += d_out.row(i).segment(c * f, f).dot(features.row(i));
    }
  }
}

struct CdanCache {
  netdet::DenseCache fc7c, fc8c, fc9c;
  Matrix relu7_mask, drop7_mask, relu8_mask, drop8_mask;
  Matrix probs2;  // [b x 2] softmax; column 0 = source probability
};

inline Vector cdan_discriminate(const NetParams& p, const Matrix& multilinear,
                                const FwdOpts& opts,
                                CdanCache* cache = nullptr) {
  require(multilinear.cols() == kFeatureWidth * p.n_classes, ErrorCode::shape,
          "cdan: multilinear width mismatch");
  CdanCache local;
  CdanCache& c = cache ? *cache : local;
  Rng rng7 = substream(opts.dropout_seed, "drop-fc7");
  Rng rng8 = substream(opts.dropout_seed, "drop-fc8");
  Matrix a = netdet::dense_forward(p.fc7, multilinear, &c.fc7c);
  a = netdet::relu_forward(a, &c.relu7_mask);
  a = netdet::dropout_forward(a, p.dropout_rate, opts.train, rng7,
                              &c.drop7_mask);
  a = netdet::dense_forward(p.fc8, a, &c.fc8c);
  a = netdet::relu_forward(a, &c.relu8_mask);
  a = netdet::dropout_forward(a, p.dropout_rate, opts.train, rng8,
                              &c.drop8_mask);
  Matrix logits = netdet::dense_forward(p.fc9, a, &c.fc9c);
  c.probs2 = netdet::softmax_rows(logits);
  return c.probs2.col(0);
}

// d_score is dL/d D(.) per row; returns d multilinear and accumulates the
// discriminator gradients.
inline Matrix cdan_backward(const NetParams& p, const CdanCache& c,
                            const Vector& d_score, NetParams& grads) {
  Matrix d_probs2 = Matrix::Zero(c.probs2.rows(), 2);
  d_probs2.col(0) = d_score;
  Matrix d_logits = netdet::softmax_backward_rows(c.probs2, d_probs2);
  Matrix d;
  netdet::dense_backward(p.fc9, c.fc9c, d_logits, grads.fc9, &d);
  d = d.cwiseProduct(c.drop8_mask).cwiseProduct(c.relu8_mask);
  Matrix d2;
  netdet::dense_backward(p.fc8, c.fc8c, d, grads.fc8, &d2);
  d2 = d2.cwiseProduct(c.drop7_mask).cwiseProduct(c.relu7_mask);
  Matrix d_ml;
  netdet::dense_backward(p.fc7, c.fc7c, d2, grads.fc7, &d_ml);
  return d_ml;
}

// ---------------------------------------------------------------------------
// checkpoints: plain-text header + raw little-endian doubles
// ---------------------------------------------------------------------------

namespace netdet {

inline void collect_all_tensors(NetParams& p,
                                std::vector<ParamView>& views) {
  for (ParamGroup g : all_param_groups()) {
    auto part = param_views(p, g);
    views.insert(views.end(), part.begin(), part.end());
  }
  for (int i = 0; i < 4; ++i) {
    auto& bn = p.bn[static_cast<std::size_t>(i)];
    const std::string base = "conv" + std::to_string(i + 1) + ".bn";
    views.push_back({base + ".run_mean", bn.run_mean.data(),
                     static_cast<long>(bn.run_mean.size())});
    views.push_back({base + ".run_var", bn.run_var.data(),
                     static_cast<long>(bn.run_var.size())});
    views.push_back({base + ".run_weight", bn.run_weight.data(),
                     static_cast<long>(bn.run_weight.size())});
  }
}

}  // namespace netdet

inline void save_checkpoint(
    const std::string& path, NetParams& p,
    const std::map<std::string, std::string>& header,
    const std::map<std::string, Vector>* extra = nullptr) {
  std::vector<ParamView> views;
  netdet::collect_all_tensors(p, views);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::io, "cannot write checkpoint " + path);
  out << "PTPAI-CHECKPOINT v1\n";
  out << "input_dim=" << p.input_dim << "\n";
  out << "n_classes=" << p.n_classes << "\n";
  for (const auto& [k, v] : header) out << k << "=" << v << "\n";
  for (const auto& view : views)
    out << "tensor " << view.name << " " << view.size << "\n";
  if (extra) {
    for (const auto& [name, vec] : *extra)
      out << "extra " << name << " " << vec.size() << "\n";
  }
  out << "DATA\n";
  for (const auto& view : views)
    out.write(reinterpret_cast<const char*>(view.data),
              static_cast<std::streamsize>(view.size) *
                  static_cast<std::streamsize>(sizeof(double)));
  if (extra) {
    for (const auto& [name, vec] : *extra) {
      (void)name;
      out.write(reinterpret_cast<const char*>(vec.data()),
                static_cast<std::streamsize>(vec.size()) *
                    static_cast<std::streamsize>(sizeof(double)));
    }
  }
}

inline NetParams load_checkpoint(
    const std::string& path,
    std::map<std::string, std::string>* header = nullptr,
    std::map<std::string, Vector>* extra = nullptr) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::file_not_found, "missing checkpoint " + path);
  std::string line;
  std::getline(in, line);
  require(line == "PTPAI-CHECKPOINT v1", ErrorCode::format,
          "not a checkpoint file: " + path);
  int input_dim = -1, n_classes = -1;
  std::vector<std::pair<std::string, long>> tensors;
  std::vector<std::pair<std::string, long>> extras;
  while (std::getline(in, line) && line != "DATA") {
    if (line.rfind("tensor ", 0) == 0 || line.rfind("extra ", 0) == 0) {
      const bool is_extra = line.rfind("extra ", 0) == 0;
      std::istringstream is(line);
      std::string tag, name;
      long size = 0;
      is >> tag >> name >> size;
      (is_extra ? extras : tensors).emplace_back(name, size);
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "input_dim") input_dim = std::stoi(value);
    else if (key == "n_classes") n_classes = std::stoi(value);
    else if (header) (*header)[key] = value;
  }
  require(input_dim > 0 && n_classes > 0, ErrorCode::format,
          "checkpoint header missing dimensions: " + path);
  Rng dummy(0);
  NetParams p = make_net(input_dim, n_classes, dummy);
  std::vector<ParamView> views;
  netdet::collect_all_tensors(p, views);
  require(views.size() == tensors.size(), ErrorCode::format,
          "checkpoint tensor list mismatch: " + path);
  for (std::size_t i = 0; i < views.size(); ++i) {
    require(views[i].name == tensors[i].first &&
                views[i].size == tensors[i].second,
            ErrorCode::format,
            "checkpoint tensor mismatch at " + tensors[i].first);
    in.read(reinterpret_cast<char*>(views[i].data),
            static_cast<std::streamsize>(views[i].size) *
                static_cast<std::streamsize>(sizeof(double)));
    require(in.good(), ErrorCode::format, "checkpoint payload truncated");
  }
  for (const auto& [name, size] : extras) {
    Vector v(size);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(size) *
                static_cast<std::streamsize>(sizeof(double)));
    require(in.good(), ErrorCode::format, "checkpoint payload truncated");
    if (extra) (*extra)[name] = std::move(v);
  }
  return p;
}

}  // namespace ptpai
