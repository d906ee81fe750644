#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ptpai/common.hpp"
#include "ptpai/dataset.hpp"
#include "ptpai/metrics.hpp"
#include "ptpai/mixup.hpp"
#include "ptpai/mmsd.hpp"
#include "ptpai/net.hpp"
#include "ptpai/weighting.hpp"

namespace ptpai {

struct TrainConfig {
  int epochs = 200;
  int batch_per_domain = 128;
  double lr0 = 0.002;
  double mu = 1.0;      // adversarial trade-off
  double gamma = 0.05;  // MK-MMSD trade-off
  KernelSpec kernel = KernelSpec::defaults();
  MixConfig mix;
  // ablation toggles
  bool use_rf_mixup = true;   // off -> PAIP
  bool use_weighting = true;  // off -> PAIR
  bool use_mmsd = true;       // off -> plain MK-MMD (PAIM)
  bool plain_mixup = false;   // lambda_y := lambda_e
  bool mu_warmup = false;     // optional ramp of mu over training progress
  double omega_momentum = 0.0;  // per-epoch smoothing of omega_c (0 = replace)
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double divergence_threshold = 1e3;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& cfg) {
  require(cfg.epochs >= 1 && cfg.batch_per_domain >= 2, ErrorCode::config,
          "train config: need epochs >= 1 and batch >= 2");
  require(cfg.mu >= 0.0 && cfg.gamma >= 0.0, ErrorCode::config,
          "train config: mu and gamma must be >= 0");
  require(cfg.lr0 > 0.0, ErrorCode::config, "train config: lr0 must be > 0");
  validate(cfg.kernel);
  validate(cfg.mix);
}

// eta = lr0 / (1 + 10 * progress)^0.75, progress in [0, 1].
inline double lr_schedule(double lr0, double progress) {
  require(progress >= 0.0 && progress <= 1.0, ErrorCode::invalid_input,
          "lr schedule: progress must lie in [0,1]");
  return lr0 / std::pow(1.0 + 10.0 * progress, 0.75);
}

// Weighted negative log-likelihood over the source batch.
inline double classification_loss(const Matrix& probs,
                                  const std::vector<int>& labels,
                                  const Vector& omega_c) {
  const int n = static_cast<int>(probs.rows());
  require(n > 0 && static_cast<int>(labels.size()) == n, ErrorCode::shape,
          "classification loss: label/batch mismatch");
  require(omega_c.size() == probs.cols(), ErrorCode::shape,
          "classification loss: omega_c width mismatch");
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < probs.cols(), ErrorCode::invalid_input,
            "classification loss: label out of range");
    loss -= omega_c[y] * std::log(clamp_prob(probs(i, y)));
  }
  return loss / n;
}

// Discriminator binary cross-entropy; the adversarial contract is min over
// theta_d and max over theta_f scaled by mu, realized by gradient reversal
// at the multilinear input. The mixed term is omitted when d_mix is empty.
inline double cdan_loss(const Vector& d_src, const Vector& d_tgt,
                        const Vector& d_mix, const Vector& omega_si,
                        const Vector& omega_ti) {
  require(d_src.size() > 0 && d_tgt.size() > 0, ErrorCode::invalid_input,
          "cdan loss: empty domain batches");
  require(omega_si.size() == d_src.size() && omega_ti.size() == d_tgt.size(),
          ErrorCode::shape, "cdan loss: weight length mismatch");
  double loss = 0.0;
  for (int i = 0; i < d_src.size(); ++i)
    loss -= omega_si[i] * std::log(clamp_prob(d_src[i]));
  loss /= static_cast<double>(d_src.size());
  double lt = 0.0;
  for (int j = 0; j < d_tgt.size(); ++j)
    lt -= omega_ti[j] * std::log(1.0 - clamp_prob(d_tgt[j]));
  loss += lt / static_cast<double>(d_tgt.size());
  if (d_mix.size() > 0) {
    double lm = 0.0;
    for (int k = 0; k < d_mix.size(); ++k)
      lm -= std::log(1.0 - clamp_prob(d_mix[k]));
    loss += lm / static_cast<double>(d_mix.size());
  }
  return loss;
}

// L_total as reported for logging: L_C - mu L_CDAN + gamma L_MKMMSD + L_Aux.
inline double total_objective(double lc, double lcdan, double lmmsd,
                              double laux, double mu, double gamma) {
  return lc - mu * lcdan + gamma * lmmsd + laux;
}

// ---------------------------------------------------------------------------
// one training step: forward, losses, gradients
// ---------------------------------------------------------------------------

struct StepLosses {
  double lc = 0.0, lcdan = 0.0, lmmsd = 0.0, laux = 0.0, total = 0.0;
};

// Per-loss full gradients for the audit path; each struct carries the raw
// d(loss)/d(theta) of every parameter the loss touches.
struct StepGrads {
  NetParams lc, cdan, mmsd, aux;
};

struct StepOutput {
  StepLosses losses;
  Vector omega_si, omega_ti;
  Matrix probs_src, probs_tgt;
  Matrix leaky_src;
  Vector score_src, score_tgt;
  Vector d_src, d_tgt, d_mix;
  // combined update gradients; groups are disjoint so one struct suffices,
  // except the CDAN contribution through FC3 which is masked out of theta_c.
  NetParams update_grads;
  bool has_update_grads = false;
};

struct StepInputs {
  const Matrix* xs = nullptr;
  const std::vector<int>* ys = nullptr;
  const Matrix* xt = nullptr;  // null -> source-only step
  Vector omega_c;
  std::map<int, int> pseudo_counts;
  std::uint64_t dropout_seed = 0;
  std::uint64_t mix_seed = 0;
  double mu_scale = 1.0;  // warm-up multiplier on mu
  bool update_running = false;
  // audits freeze the instance weights so finite differences see the same
  // loss function the analytic gradients differentiate
  const Vector* fixed_wsi = nullptr;
  const Vector* fixed_wti = nullptr;
};

inline StepOutput train_step(NetParams& p, const TrainConfig& cfg,
                             const StepInputs& in, bool want_update_grads,
                             StepGrads* audit = nullptr) {
  require(in.xs && in.ys, ErrorCode::invalid_input, "step: missing source");
  const int ns = static_cast<int>(in.xs->rows());
  const int nt = in.xt ? static_cast<int>(in.xt->rows()) : 0;
  const double mu_eff = cfg.mu * in.mu_scale;
  const bool cdan_active = mu_eff > 0.0 && nt > 0;
  const bool mix_active = cfg.use_rf_mixup && cdan_active && nt >= 2;
  const bool mmsd_active = cfg.gamma > 0.0 && nt > 0;
  const bool aux_active = cfg.use_weighting && nt > 0;

  StepOutput out;

  // shared feature forward over the concatenated batch
  Matrix x(ns + nt, in.xs->cols());
  x.topRows(ns) = *in.xs;
  if (nt > 0) x.bottomRows(nt) = *in.xt;
  FwdOpts fopt;
  fopt.train = true;
  fopt.update_running = in.update_running;
  fopt.dropout_seed = splitmix64(in.dropout_seed ^ fnv1a64("feat"));
  FeatureCache fcache;
  FeatureBatch fb = feature_extract(p, x, fopt, &fcache);

  Matrix fs = fb.features.topRows(ns);
  Matrix z1s = fb.z1.topRows(ns), z2s = fb.z2.topRows(ns);
  Matrix ft, z1t, z2t;
  if (nt > 0) {
    ft = fb.features.bottomRows(nt);
    z1t = fb.z1.bottomRows(nt);
    z2t = fb.z2.bottomRows(nt);
  }

  ClassifyCache cc_s, cc_t;
  Matrix probs_s = classify(p, z2s, &cc_s);
  Matrix probs_t;
  if (nt > 0) probs_t = classify(p, z2t, &cc_t);
  out.probs_src = probs_s;
  out.probs_tgt = probs_t;

  // auxiliary head on stop-gradient features
  AuxCache aux_cache;
  Vector score_s, score_t;
  Matrix leaky_s;
  if (aux_active) {
    Matrix feats(ns + nt, kFeatureWidth);
    feats.topRows(ns) = fs;
    feats.bottomRows(nt) = ft;
    FwdOpts aopt;
    aopt.train = true;
    aopt.dropout_seed = splitmix64(in.dropout_seed ^ fnv1a64("aux"));
    AuxOut aux = aux_forward(p, feats, aopt, &aux_cache);
    leaky_s = aux.leaky.topRows(ns);
    score_s = aux.domain_score.head(ns);
    score_t = aux.domain_score.tail(nt);
    out.leaky_src = leaky_s;
    out.score_src = score_s;
    out.score_tgt = score_t;
  }

  // instance weights (treated as constants by every gradient)
  if (in.fixed_wsi) out.omega_si = *in.fixed_wsi;
  else if (aux_active) out.omega_si = source_instance_weights(score_s);
  else out.omega_si = Vector::Ones(ns);
  if (in.fixed_wti) out.omega_ti = *in.fixed_wti;
  else if (cfg.use_weighting && nt > 0)
    out.omega_ti = target_instance_weights(probs_t);
  else out.omega_ti = Vector::Ones(std::max(nt, 0));

  const Vector omega_c =
      in.omega_c.size() ? in.omega_c : Vector::Ones(p.n_classes);
  out.losses.lc = classification_loss(probs_s, *in.ys, omega_c);

  // RF-Mixup rows for the adversarial head
  MixBatch mix;
  Matrix ml_mix;
  if (mix_active) {
    MixConfig mix_cfg = cfg.mix;
    mix_cfg.plain_mixup = cfg.plain_mixup;
    Rng mix_rng = substream(in.mix_seed, "mix");
    mix = rf_mixup_batch(ft, probs_t, in.pseudo_counts, mix_cfg, mix_rng);
    ml_mix = multilinear_map(mix.e_rfm, mix.y_rfm);
  }

  // conditional discriminator on [src; tgt; mixed]
  CdanCache dcache;
  Matrix ml_s, ml_t;
  if (cdan_active) {
    ml_s = multilinear_map(fs, probs_s);
    ml_t = multilinear_map(ft, probs_t);
    const int nm = mix_active ? static_cast<int>(ml_mix.rows()) : 0;
    Matrix ml(ns + nt + nm, ml_s.cols());
    ml.topRows(ns) = ml_s;
    ml.middleRows(ns, nt) = ml_t;
    if (nm > 0) ml.bottomRows(nm) = ml_mix;
    FwdOpts dopt;
    dopt.train = true;
    dopt.dropout_seed = splitmix64(in.dropout_seed ^ fnv1a64("cdan"));
    Vector d = cdan_discriminate(p, ml, dopt, &dcache);
    out.d_src = d.head(ns);
    out.d_tgt = d.segment(ns, nt);
    if (nm > 0) out.d_mix = d.tail(nm);
    out.losses.lcdan =
        cdan_loss(out.d_src, out.d_tgt, out.d_mix, out.omega_si, out.omega_ti);
  }

  MmsdResult mmsd1, mmsd2;
  if (mmsd_active) {
    const bool want_grad = want_update_grads || audit;
    mmsd1 = weighted_mmsd_with_grad(z1s, z1t, out.omega_si, out.omega_ti,
                                    cfg.kernel, cfg.use_mmsd, want_grad);
    mmsd2 = weighted_mmsd_with_grad(z2s, z2t, out.omega_si, out.omega_ti,
                                    cfg.kernel, cfg.use_mmsd, want_grad);
    out.losses.lmmsd = mmsd1.value + mmsd2.value;
  }

  if (aux_active) {
    auto [l_gy, l_gd] = auxiliary_losses(leaky_s, *in.ys, score_s, score_t);
    out.losses.laux = l_gy + l_gd;
  }

  out.losses.total = total_objective(out.losses.lc, out.losses.lcdan,
                                     out.losses.lmmsd, out.losses.laux,
                                     mu_eff, cfg.gamma);
  if (!want_update_grads && !audit) return out;

  // ---- backward ----
  // cross-entropy d logits on the source rows
  Matrix dlogits_ce = probs_s;
  for (int i = 0; i < ns; ++i) {
    const int y = (*in.ys)[static_cast<std::size_t>(i)];
    dlogits_ce(i, y) -= 1.0;
    dlogits_ce.row(i) *= omega_c[y] / ns;
  }

  // CDAN loss derivative wrt the discriminator outputs
  Vector dd_s, dd_t, dd_m;
  if (cdan_active) {
    dd_s = Vector(ns);
    for (int i = 0; i < ns; ++i)
      dd_s[i] = -out.omega_si[i] / (ns * clamp_prob(out.d_src[i]));
    dd_t = Vector(nt);
    for (int j = 0; j < nt; ++j)
      dd_t[j] = out.omega_ti[j] / (nt * (1.0 - clamp_prob(out.d_tgt[j])));
    if (out.d_mix.size() > 0) {
      dd_m = Vector(out.d_mix.size());
      for (int k = 0; k < out.d_mix.size(); ++k)
        dd_m[k] = 1.0 / (static_cast<double>(out.d_mix.size()) *
                         (1.0 - clamp_prob(out.d_mix[k])));
    }
  }

  // discriminator backward: head gradients plus d(multilinear) per part
  NetParams scratch = zeros_like(p);
  Matrix d_fs_cdan, d_ft_cdan, d_probs_s_cdan, d_probs_t_cdan;
  NetParams g_cdan_heads = zeros_like(p);
  if (cdan_active) {
    Vector dd(ns + nt + out.d_mix.size());
    dd.head(ns) = dd_s;
    dd.segment(ns, nt) = dd_t;
    if (out.d_mix.size() > 0) dd.tail(out.d_mix.size()) = dd_m;
    Matrix d_ml = cdan_backward(p, dcache, dd, g_cdan_heads);
    d_fs_cdan = Matrix::Zero(ns, kFeatureWidth);
    d_ft_cdan = Matrix::Zero(nt, kFeatureWidth);
    d_probs_s_cdan = Matrix::Zero(ns, p.n_classes);
    d_probs_t_cdan = Matrix::Zero(nt, p.n_classes);
    multilinear_backward(fs, probs_s, d_ml.topRows(ns), d_fs_cdan,
                         d_probs_s_cdan);
    multilinear_backward(ft, probs_t, d_ml.middleRows(ns, nt), d_ft_cdan,
                         d_probs_t_cdan);
    if (out.d_mix.size() > 0) {
      Matrix d_e = Matrix::Zero(nt, kFeatureWidth);
      Matrix d_y = Matrix::Zero(nt, p.n_classes);
      multilinear_backward(mix.e_rfm, mix.y_rfm,
                           d_ml.bottomRows(out.d_mix.size()), d_e, d_y);
      rf_mixup_backward(mix, d_e, d_y, d_ft_cdan, d_probs_t_cdan);
    }
  }

  // auxiliary backward (theta_a only)
  NetParams g_aux = zeros_like(p);
  if (aux_active) {
    Matrix d_leaky = Matrix::Zero(ns + nt, p.n_classes);
    for (int i = 0; i < ns; ++i) {
      const int y = (*in.ys)[static_cast<std::size_t>(i)];
      for (int c = 0; c < p.n_classes; ++c) {
        const double q = clamp_prob(leaky_s(i, c));
        d_leaky(i, c) = (c == y ? -1.0 / q : 1.0 / (1.0 - q)) / ns;
      }
    }
    Vector d_score(ns + nt);
    for (int i = 0; i < ns; ++i)
      d_score[i] = -1.0 / (ns * clamp_prob(score_s[i]));
    for (int j = 0; j < nt; ++j)
      d_score[ns + j] = 1.0 / (nt * (1.0 - clamp_prob(score_t[j])));
    aux_backward(p, aux_cache, d_leaky, d_score, g_aux);
  }

  // cdan_fc3_sink receives the CDAN gradient flowing through FC3; the
  // update path discards it (theta_c trains on L_C alone) while the audit
  // path keeps it as part of the full d L_CDAN / d theta.
  auto backprop_feature_path = [&](double c_ce, double c_cdan, double c_mmsd,
                                   NetParams& grads,
                                   NetParams& cdan_fc3_sink) {
    Matrix d_feat = Matrix::Zero(ns + nt, kFeatureWidth);
    Matrix d_z1 = Matrix::Zero(ns + nt, 256);
    Matrix d_z2 = Matrix::Zero(ns + nt, kFeatureWidth);
    if (c_ce != 0.0) {
      d_z2.topRows(ns) += classify_backward_logits(
          p, cc_s, (c_ce * dlogits_ce).eval(), grads);
    }
    if (c_cdan != 0.0 && cdan_active) {
      d_feat.topRows(ns) += c_cdan * d_fs_cdan;
      d_feat.bottomRows(nt) += c_cdan * d_ft_cdan;
      d_z2.topRows(ns) += classify_backward(
          p, cc_s, (c_cdan * d_probs_s_cdan).eval(), cdan_fc3_sink);
      d_z2.bottomRows(nt) += classify_backward(
          p, cc_t, (c_cdan * d_probs_t_cdan).eval(), cdan_fc3_sink);
    }
    if (c_mmsd != 0.0 && mmsd_active) {
      d_z1.topRows(ns) += c_mmsd * mmsd1.grad_s;
      d_z1.bottomRows(nt) += c_mmsd * mmsd1.grad_t;
      d_z2.topRows(ns) += c_mmsd * mmsd2.grad_s;
      d_z2.bottomRows(nt) += c_mmsd * mmsd2.grad_t;
    }
    feature_backward(p, fcache, d_feat, d_z1, d_z2, grads);
  };

  if (audit) {
    audit->lc = zeros_like(p);
    audit->cdan = zeros_like(p);
    audit->mmsd = zeros_like(p);
    audit->aux = g_aux;
    backprop_feature_path(1.0, 0.0, 0.0, audit->lc, scratch);
    if (cdan_active) {
      audit->cdan = g_cdan_heads;
      backprop_feature_path(0.0, 1.0, 0.0, audit->cdan, audit->cdan);
    }
    if (mmsd_active) backprop_feature_path(0.0, 0.0, 1.0, audit->mmsd, scratch);
  }

  if (want_update_grads) {
    out.update_grads = zeros_like(p);
    // theta_f <- dL_C - mu dL_CDAN + gamma dL_MKMMSD (reversal at the
    // multilinear input realizes the -mu term); theta_c <- dL_C only;
    // theta_d <- dL_CDAN; theta_a <- dL_Aux.
    backprop_feature_path(1.0, -mu_eff, cfg.gamma, out.update_grads, scratch);
    if (cdan_active) {
      out.update_grads.fc7.w += g_cdan_heads.fc7.w;
      out.update_grads.fc7.b += g_cdan_heads.fc7.b;
      out.update_grads.fc8.w += g_cdan_heads.fc8.w;
      out.update_grads.fc8.b += g_cdan_heads.fc8.b;
      out.update_grads.fc9.w += g_cdan_heads.fc9.w;
      out.update_grads.fc9.b += g_cdan_heads.fc9.b;
    }
    if (aux_active) {
      out.update_grads.fc4.w += g_aux.fc4.w;
      out.update_grads.fc4.b += g_aux.fc4.b;
      out.update_grads.fc5.w += g_aux.fc5.w;
      out.update_grads.fc5.b += g_aux.fc5.b;
      out.update_grads.fc6.w += g_aux.fc6.w;
      out.update_grads.fc6.b += g_aux.fc6.b;
    }
    out.has_update_grads = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<Vector> m, v;
  long t = 0;

  static AdamState for_group(NetParams& p, ParamGroup g) {
    AdamState s;
    for (const ParamView& view : param_views(p, g)) {
      s.m.push_back(Vector::Zero(view.size));
      s.v.push_back(Vector::Zero(view.size));
    }
    return s;
  }
};

inline void adam_step(std::vector<ParamView> params,
                      std::vector<ParamView> grads, AdamState& state,
                      double eta, const TrainConfig& cfg) {
  require(params.size() == grads.size() && params.size() == state.m.size(),
          ErrorCode::shape, "adam: state/parameter mismatch");
  ++state.t;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Eigen::Map<Vector> w(params[i].data, params[i].size);
    Eigen::Map<const Vector> g(grads[i].data, grads[i].size);
    Vector& m = state.m[i];
    Vector& v = state.v[i];
    m = b1 * m + (1.0 - b1) * g;
    v = (b2 * v).array() + (1.0 - b2) * g.array().square();
    w.array() -= eta * (m.array() / corr1) /
                 ((v.array() / corr2).sqrt() + cfg.adam_eps);
  }
}

// ---------------------------------------------------------------------------
// history
// ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double lc = 0, lcdan = 0, lmmsd = 0, laux = 0, total = 0, eta = 0;
  Vector omega_c;
  double val_bacc = -1.0, val_f1 = -1.0;
};

struct TrainHistory {
  std::map<std::string, std::string> meta;
  std::vector<EpochRecord> records;
  bool diverged = false;
  std::string note;

  void save(const std::string& path) const {
    std::ofstream out(path);
    require(out.good(), ErrorCode::io, "cannot write history " + path);
    out.precision(17);
    for (const auto& [k, v] : meta) out << "# " << k << "=" << v << "\n";
    if (diverged) out << "# diverged=" << note << "\n";
    for (const auto& r : records) {
      out << "epoch=" << r.epoch << " lc=" << r.lc << " lcdan=" << r.lcdan
          << " lmmsd=" << r.lmmsd << " laux=" << r.laux << " total=" << r.total
          << " eta=" << r.eta;
      if (r.val_bacc >= 0.0)
        out << " val_bacc=" << r.val_bacc << " val_f1=" << r.val_f1;
      out << " omega_c=";
      for (int i = 0; i < r.omega_c.size(); ++i) {
        if (i) out << ',';
        out << r.omega_c[i];
      }
      out << "\n";
    }
  }
};

// ---------------------------------------------------------------------------
// batched eval-mode helpers
// ---------------------------------------------------------------------------

inline Matrix predict_probs(NetParams& p, const Matrix& x, int batch_size) {
  Matrix probs(x.rows(), p.n_classes);
  FwdOpts opts;  // eval mode
  for (int start = 0; start < x.rows(); start += batch_size) {
    const int n = std::min<int>(batch_size, static_cast<int>(x.rows()) - start);
    FeatureBatch fb = feature_extract(p, x.middleRows(start, n), opts);
    probs.middleRows(start, n) = classify(p, fb.z2);
  }
  return probs;
}

inline std::vector<int> argmax_rows(const Matrix& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (int i = 0; i < probs.rows(); ++i) {
    int c = 0;
    probs.row(i).maxCoeff(&c);
    out[static_cast<std::size_t>(i)] = c;
  }
  return out;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct EvalSet {
  Matrix x;
  std::vector<int> y;
};

struct FitResult {
  NetParams params;
  TrainHistory history;
  AdamState adam_f, adam_c, adam_d, adam_a;
  int completed_epochs = 0;
};

namespace traindet {

inline Vector pack_adam(const AdamState& s) {
  long total = 1;
  for (const Vector& m : s.m) total += 2 * m.size();
  Vector out(total);
  out[0] = static_cast<double>(s.t);
  long at = 1;
  for (const Vector& m : s.m) {
    out.segment(at, m.size()) = m;
    at += m.size();
  }
  for (const Vector& v : s.v) {
    out.segment(at, v.size()) = v;
    at += v.size();
  }
  return out;
}

inline void unpack_adam(const Vector& packed, AdamState& s) {
  long want = 1;
  for (const Vector& m : s.m) want += 2 * m.size();
  require(packed.size() == want, ErrorCode::format,
          "checkpoint optimizer state does not match the parameter layout");
  s.t = static_cast<long>(packed[0]);
  long at = 1;
  for (Vector& m : s.m) {
    m = packed.segment(at, m.size());
    at += m.size();
  }
  for (Vector& v : s.v) {
    v = packed.segment(at, v.size());
    at += v.size();
  }
}

}  // namespace traindet

// Writes a resumable checkpoint: parameters, batch-norm statistics and the
// four optimizer states.
inline void save_fit_checkpoint(const std::string& path, FitResult& result,
                                const TrainConfig& cfg) {
  std::map<std::string, std::string> header;
  header["seed"] = std::to_string(cfg.seed);
  header["epoch"] = std::to_string(result.completed_epochs);
  std::map<std::string, Vector> extra;
  extra["adam.f"] = traindet::pack_adam(result.adam_f);
  extra["adam.c"] = traindet::pack_adam(result.adam_c);
  extra["adam.d"] = traindet::pack_adam(result.adam_d);
  extra["adam.a"] = traindet::pack_adam(result.adam_a);
  save_checkpoint(path, result.params, header, &extra);
}

// Full PTPAI optimization: one Adam step per sub-network per batch, class
// weights refreshed per epoch, the whole run deterministic in the seed.
// resume_checkpoint, when given, restores parameters, statistics and the
// optimizer states and continues from the recorded epoch.
inline FitResult fit(const TrainConfig& cfg, const DomainDataset& source,
                     const DomainDataset& target, const EvalSet* val = nullptr,
                     const std::string& resume_checkpoint = "") {
  validate(cfg);
  require(source.labeled(), ErrorCode::invalid_input,
          "fit: source must be labeled");
  require(target.labels.empty(), ErrorCode::invalid_input,
          "fit: target must be unlabeled (sealed labels are ignored)");
  require(source.dim() == target.dim() || target.rows() == 0,
          ErrorCode::shape, "fit: source/target feature width mismatch");

  int n_classes = 0;
  for (int y : source.labels) n_classes = std::max(n_classes, y + 1);
  require(n_classes >= 2, ErrorCode::invalid_input,
          "fit: need at least two source classes");

  const int batch = cfg.batch_per_domain;
  const int ns = source.rows();
  const int nt = target.rows();
  require(ns >= batch, ErrorCode::insufficient_data,
          "fit: source smaller than one batch");

  const bool cdan_active = cfg.mu > 0.0 && nt > 0;
  const bool mmsd_active = cfg.gamma > 0.0 && nt > 0;
  const bool aux_active = cfg.use_weighting && nt > 0;
  const bool mix_active = cfg.use_rf_mixup && cdan_active;
  const bool need_target = cdan_active || mmsd_active || aux_active;
  const bool target_replacement = need_target && nt < batch;

  Rng init_rng = substream(cfg.seed, "init");
  FitResult result;
  result.params = make_net(source.dim(), n_classes, init_rng);
  NetParams& params = result.params;
  result.adam_f = AdamState::for_group(params, ParamGroup::feature);
  result.adam_c = AdamState::for_group(params, ParamGroup::classifier);
  result.adam_d = AdamState::for_group(params, ParamGroup::discriminator);
  result.adam_a = AdamState::for_group(params, ParamGroup::auxiliary);

  int start_epoch = 0;
  if (!resume_checkpoint.empty()) {
    std::map<std::string, std::string> header;
    std::map<std::string, Vector> extra;
    NetParams restored = load_checkpoint(resume_checkpoint, &header, &extra);
    require(restored.input_dim == params.input_dim &&
                restored.n_classes == params.n_classes,
            ErrorCode::shape, "resume: checkpoint architecture mismatch");
    params = std::move(restored);
    if (extra.count("adam.f")) traindet::unpack_adam(extra["adam.f"], result.adam_f);
    if (extra.count("adam.c")) traindet::unpack_adam(extra["adam.c"], result.adam_c);
    if (extra.count("adam.d")) traindet::unpack_adam(extra["adam.d"], result.adam_d);
    if (extra.count("adam.a")) traindet::unpack_adam(extra["adam.a"], result.adam_a);
    if (header.count("epoch")) start_epoch = std::stoi(header["epoch"]);
    require(start_epoch <= cfg.epochs, ErrorCode::config,
            "resume: checkpoint already covers the configured epochs");
  }

  TrainHistory& history = result.history;
  history.meta["optimizer"] = "adam";
  history.meta["adam_beta1"] = std::to_string(cfg.adam_beta1);
  history.meta["adam_beta2"] = std::to_string(cfg.adam_beta2);
  history.meta["adam_eps"] = std::to_string(cfg.adam_eps);
  history.meta["seed"] = std::to_string(cfg.seed);
  history.meta["batch_per_domain"] = std::to_string(batch);
  if (target_replacement)
    history.meta["target_sampled_with_replacement"] = "true";

  const int iters_per_epoch = std::max(1, ns / batch);
  const long total_iters = static_cast<long>(cfg.epochs) * iters_per_epoch;

  Vector omega_c = Vector::Ones(n_classes);
  std::map<int, int> pseudo_counts;
  for (int c = 0; c < n_classes; ++c) pseudo_counts[c] = 1;

  std::vector<int> src_order(static_cast<std::size_t>(ns));
  std::vector<int> tgt_order(static_cast<std::size_t>(std::max(nt, 0)));
  long global_iter = static_cast<long>(start_epoch) * iters_per_epoch;

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    // per-epoch refresh of class weights and pseudo-label counts (epoch 0
    // starts from all-ones / uniform counts)
    if (epoch > 0 && nt > 0 && (cfg.use_weighting || mix_active)) {
      Matrix probs_t = predict_probs(params, target.features, batch);
      if (cfg.use_weighting) {
        Vector fresh = class_level_weights(probs_t);
        if (cfg.omega_momentum > 0.0) {
          omega_c = cfg.omega_momentum * omega_c +
                    (1.0 - cfg.omega_momentum) * fresh;
          omega_c /= omega_c.maxCoeff();
        } else {
          omega_c = fresh;
        }
      }
      std::vector<int> pred = argmax_rows(probs_t);
      std::map<int, int> hist;
      for (int c : pred) ++hist[c];
      for (int c = 0; c < n_classes; ++c)
        pseudo_counts[c] = std::max(hist.count(c) ? hist[c] : 0, 1);
    }

    std::iota(src_order.begin(), src_order.end(), 0);
    {
      Rng r = substream(cfg.seed, "src-order", static_cast<std::uint64_t>(epoch));
      std::shuffle(src_order.begin(), src_order.end(), r);
    }
    if (nt > 0) {
      std::iota(tgt_order.begin(), tgt_order.end(), 0);
      Rng r = substream(cfg.seed, "tgt-order", static_cast<std::uint64_t>(epoch));
      std::shuffle(tgt_order.begin(), tgt_order.end(), r);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    double eta = cfg.lr0;
    for (int it = 0; it < iters_per_epoch; ++it, ++global_iter) {
      const double progress =
          static_cast<double>(global_iter) / static_cast<double>(total_iters);
      eta = lr_schedule(cfg.lr0, progress);

      Matrix xs(batch, source.dim());
      std::vector<int> ys(static_cast<std::size_t>(batch));
      for (int i = 0; i < batch; ++i) {
        const int row = src_order[static_cast<std::size_t>(it * batch + i)];
        xs.row(i) = source.features.row(row);
        ys[static_cast<std::size_t>(i)] =
            source.labels[static_cast<std::size_t>(row)];
      }
      Matrix xt;
      if (need_target) {
        xt.resize(batch, target.dim());
        if (target_replacement) {
          Rng r = substream(cfg.seed, "tgt-replace",
                            static_cast<std::uint64_t>(global_iter));
          std::uniform_int_distribution<int> pick(0, nt - 1);
          for (int i = 0; i < batch; ++i) xt.row(i) = target.features.row(pick(r));
        } else {
          for (int i = 0; i < batch; ++i) {
            const int row = tgt_order[static_cast<std::size_t>(
                (static_cast<long>(it) * batch + i) % nt)];
            xt.row(i) = target.features.row(row);
          }
        }
      }

      StepInputs si;
      si.xs = &xs;
      si.ys = &ys;
      si.xt = need_target ? &xt : nullptr;
      si.omega_c = cfg.use_weighting ? omega_c : Vector::Ones(n_classes);
      si.pseudo_counts = pseudo_counts;
      {
        Rng r = substream(cfg.seed, "step-seeds",
                          static_cast<std::uint64_t>(global_iter));
        si.dropout_seed = r();
        si.mix_seed = r();
      }
      si.mu_scale = cfg.mu_warmup
                        ? 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0
                        : 1.0;
      si.update_running = true;

      StepOutput step = train_step(params, cfg, si, /*want_update_grads=*/true);

      const StepLosses& L = step.losses;
      const bool bad = !std::isfinite(L.lc) || !std::isfinite(L.lcdan) ||
                       !std::isfinite(L.lmmsd) || !std::isfinite(L.laux) ||
                       std::abs(L.lc) > cfg.divergence_threshold ||
                       std::abs(L.lcdan) > cfg.divergence_threshold ||
                       std::abs(L.lmmsd) > cfg.divergence_threshold ||
                       std::abs(L.laux) > cfg.divergence_threshold;
      if (bad) {
        history.diverged = true;
        std::ostringstream os;
        os << "epoch " << epoch << " iter " << it << ": losses lc=" << L.lc
           << " lcdan=" << L.lcdan << " lmmsd=" << L.lmmsd
           << " laux=" << L.laux;
        history.note = os.str();
        rec.omega_c = omega_c;
        rec.eta = eta;
        history.records.push_back(rec);
        result.completed_epochs = epoch;
        return result;
      }

      adam_step(param_views(params, ParamGroup::feature),
                param_views(step.update_grads, ParamGroup::feature),
                result.adam_f, eta, cfg);
      adam_step(param_views(params, ParamGroup::classifier),
                param_views(step.update_grads, ParamGroup::classifier),
                result.adam_c, eta, cfg);
      if (cdan_active)
        adam_step(param_views(params, ParamGroup::discriminator),
                  param_views(step.update_grads, ParamGroup::discriminator),
                  result.adam_d, eta, cfg);
      if (aux_active)
        adam_step(param_views(params, ParamGroup::auxiliary),
                  param_views(step.update_grads, ParamGroup::auxiliary),
                  result.adam_a, eta, cfg);

      rec.lc += L.lc;
      rec.lcdan += L.lcdan;
      rec.lmmsd += L.lmmsd;
      rec.laux += L.laux;
      rec.total += L.total;
    }
    rec.lc /= iters_per_epoch;
    rec.lcdan /= iters_per_epoch;
    rec.lmmsd /= iters_per_epoch;
    rec.laux /= iters_per_epoch;
    rec.total /= iters_per_epoch;
    rec.eta = eta;
    rec.omega_c = omega_c;
    if (val && val->x.rows() > 0) {
      std::vector<int> pred =
          argmax_rows(predict_probs(params, val->x, batch));
      std::set<int> classes(val->y.begin(), val->y.end());
      rec.val_bacc = balanced_accuracy(val->y, pred, classes);
      rec.val_f1 = macro_f1(val->y, pred, classes);
    }
    history.records.push_back(rec);
    result.completed_epochs = epoch + 1;
  }
  return result;
}

}  // namespace ptpai
