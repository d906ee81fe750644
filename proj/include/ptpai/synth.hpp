#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "ptpai/common.hpp"
#include "ptpai/dataset.hpp"
#include "ptpai/dsp.hpp"
#include "ptpai/pipeline.hpp"
#include "ptpai/signal.hpp"

namespace ptpai {

enum class FaultType : int { NC = 0, IRF = 1, ORF = 2, BF = 3 };

inline std::string to_string(FaultType t) {
  switch (t) {
    case FaultType::NC: return "NC";
    case FaultType::IRF: return "IRF";
    case FaultType::ORF: return "ORF";
    case FaultType::BF: return "BF";
  }
  return "?";
}

inline FaultType fault_type_from_string(const std::string& s) {
  if (s == "NC") return FaultType::NC;
  if (s == "IRF") return FaultType::IRF;
  if (s == "ORF") return FaultType::ORF;
  if (s == "BF") return FaultType::BF;
  fail(ErrorCode::config, "unknown fault type: " + s);
}

// Impact kinematics for one health state: impact period T, modulation
// period Q, and the sideband envelope alphas.
struct FaultSpec {
  FaultType fault_type = FaultType::NC;
  double t_period = 1.0;   // seconds between impacts
  double q_period = 1.0;   // seconds per modulation cycle
  int sidebands = 0;       // M
  std::vector<double> alphas = {1.0};
  double duty = 0.05;      // impact width as a fraction of t_period
};

inline void validate(const FaultSpec& spec) {
  if (spec.fault_type == FaultType::NC) return;  // no impulse train
  require(spec.t_period > 0.0, ErrorCode::invalid_spec,
          "fault spec: impact period must be > 0");
  require(spec.duty > 0.0 && spec.duty < 1.0, ErrorCode::invalid_spec,
          "fault spec: duty must lie in (0, 1)");
  require(!spec.alphas.empty() && spec.alphas.front() > 0.0,
          ErrorCode::invalid_spec, "fault spec: need alphas with alpha0 > 0");
  require(static_cast<int>(spec.alphas.size()) == spec.sidebands + 1,
          ErrorCode::invalid_spec, "fault spec: need M+1 alphas");
  if (spec.fault_type == FaultType::ORF) {
    require(spec.sidebands == 0, ErrorCode::invalid_spec,
            "fault spec: ORF modulation is constant (M = 0)");
  } else if (spec.sidebands > 0) {
    require(spec.q_period > 0.0, ErrorCode::invalid_spec,
            "fault spec: modulated faults need Q > 0");
  }
}

struct SynthConfig {
  double fs = 12800.0;
  int n_samples = 4096;
  double beta_low = 0.25;
  double beta_high = 2.0;
  double lambda_mean = 1.0;
  double lambda_std = 0.1;
  double band_low_hz = 0.0;   // 0 -> default 0.05 * fs/2
  double band_high_hz = 0.0;  // 0 -> default 0.95 * fs/2
  std::uint64_t seed = 0;

  double band_low() const { return band_low_hz > 0.0 ? band_low_hz : 0.05 * fs / 2.0; }
  double band_high() const { return band_high_hz > 0.0 ? band_high_hz : 0.95 * fs / 2.0; }
};

inline void validate(const SynthConfig& cfg) {
  require(cfg.fs > 0.0, ErrorCode::invalid_spec, "synth config: fs must be > 0");
  require(cfg.n_samples >= 4 && cfg.n_samples % 2 == 0, ErrorCode::invalid_spec,
          "synth config: n_samples must be even and >= 4");
  require(cfg.beta_low > 0.0 && cfg.beta_low <= cfg.beta_high,
          ErrorCode::invalid_spec, "synth config: bad beta range");
  require(0.0 < cfg.band_low() && cfg.band_low() < cfg.band_high() &&
              cfg.band_high() < cfg.fs / 2.0,
          ErrorCode::invalid_spec, "synth config: bad band edges");
}

// One oscillating impact: a Hann pulse of duty*T seconds, peak-normalized,
// then shaped by the wide-band band-pass filter so energy near DC and the
// Nyquist frequency is removed.
inline std::vector<double> impact_waveform(const FaultSpec& spec,
                                           const SynthConfig& config) {
  validate(spec);
  validate(config);
  const int length = round_half_up(spec.duty * spec.t_period * config.fs);
  require(length >= 2, ErrorCode::invalid_spec,
          "impact: duty*T*fs must span at least 2 samples");
  std::vector<double> s = dsp::hann_window(length);
  double peak = 0.0;
  for (double v : s) peak = std::max(peak, std::abs(v));
  // a length-2 symmetric Hann is all zeros (both samples are endpoints)
  require(peak > 0.0, ErrorCode::invalid_spec,
          "impact: degenerate all-zero window at this duty*T*fs");
  for (double& v : s) v /= peak;
  return dsp::zero_phase_bandpass(s, config.band_low(), config.band_high(),
                                  config.fs);
}

// A_j = lambda_j * sum_m alpha_m cos(2 m pi T j / Q), lambda_j ~ N(1, 0.1)
// drawn independently per impact.
inline std::vector<double> modulation_amplitudes(int n_impacts,
                                                 const FaultSpec& spec,
                                                 const SynthConfig& config,
                                                 Rng& rng) {
  require(n_impacts >= 1, ErrorCode::invalid_input,
          "modulation: need at least one impact");
  validate(spec);
  std::normal_distribution<double> lambda_dist(config.lambda_mean,
                                               std::max(config.lambda_std, 1e-300));
  std::vector<double> amps(static_cast<std::size_t>(n_impacts));
  for (int j = 0; j < n_impacts; ++j) {
    double lambda = config.lambda_std == 0.0 ? config.lambda_mean
                                             : lambda_dist(rng);
    double envelope = 0.0;
    for (int m = 0; m <= spec.sidebands; ++m) {
      double phase = m == 0 ? 0.0
                            : 2.0 * m * std::numbers::pi * spec.t_period * j /
                                  spec.q_period;
      envelope += spec.alphas[static_cast<std::size_t>(m)] * std::cos(phase);
    }
    amps[static_cast<std::size_t>(j)] = lambda * envelope;
  }
  return amps;
}

// xi(t) = sum_j A_j s(t - jT) + beta n(t). The noise n is a random
// contiguous slice of the healthy recording; beta is drawn once per signal
// from Uniform(beta_low, beta_high). NC emits the scaled noise alone.
inline VibrationSignal synthesize_signal(const FaultSpec& spec,
                                         const VibrationSignal& healthy,
                                         const SynthConfig& config, Rng& rng,
                                         double* beta_out = nullptr) {
  validate(spec);
  validate(config);
  require(healthy.fs == config.fs, ErrorCode::invalid_input,
          "synthesize: healthy recording sample rate mismatch");
  require(healthy.size() >= config.n_samples, ErrorCode::insufficient_noise,
          "synthesize: healthy recording shorter than n_samples");

  std::uniform_real_distribution<double> beta_dist(config.beta_low,
                                                   config.beta_high);
  const double beta = beta_dist(rng);
  if (beta_out) *beta_out = beta;
  std::uniform_int_distribution<int> start_dist(
      0, healthy.size() - config.n_samples);
  const int start = start_dist(rng);

  VibrationSignal out;
  out.fs = config.fs;
  out.samples.resize(static_cast<std::size_t>(config.n_samples));
  for (int i = 0; i < config.n_samples; ++i) {
    out.samples[static_cast<std::size_t>(i)] =
        beta * healthy.samples[static_cast<std::size_t>(start + i)];
  }
  if (spec.fault_type == FaultType::NC) return out;

  const int period = round_half_up(spec.t_period * config.fs);
  require(period >= 1, ErrorCode::invalid_spec,
          "synthesize: impact period shorter than one sample");
  const std::vector<double> impact = impact_waveform(spec, config);
  const int n_impacts = (config.n_samples - 1) / period + 1;
  const std::vector<double> amps =
      modulation_amplitudes(n_impacts, spec, config, rng);
  for (int j = 0; j < n_impacts; ++j) {
    const int offset = j * period;
    for (int k = 0; k < static_cast<int>(impact.size()); ++k) {
      const int idx = offset + k;
      if (idx >= config.n_samples) break;
      out.samples[static_cast<std::size_t>(idx)] +=
          amps[static_cast<std::size_t>(j)] *
          impact[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

// Labeled, class-balanced synthetic source: per_class signals per health
// state, each reduced to its envelope-spectrum feature row. Every signal
// owns an independent seed-derived stream, so generation order (or
// parallelism) cannot change the result.
inline DomainDataset generate_source_dataset(
    const std::map<FaultType, FaultSpec>& specs,
    const std::vector<FaultType>& classes, const VibrationSignal& healthy_pool,
    int per_class, const SynthConfig& config) {
  require(per_class >= 1, ErrorCode::invalid_input,
          "generate: per_class must be >= 1");
  require(!classes.empty(), ErrorCode::config, "generate: no classes requested");
  for (FaultType c : classes) {
    require(specs.count(c) == 1, ErrorCode::config,
            "generate: missing fault spec for class " + to_string(c));
  }
  const int d = config.n_samples / 2;
  DomainDataset ds;
  ds.domain = Domain::source;
  ds.fs = config.fs;
  ds.seed = config.seed;
  ds.features.resize(per_class * static_cast<int>(classes.size()), d);
  ds.labels.reserve(ds.features.rows());
  ds.betas.reserve(ds.features.rows());
  int row = 0;
  for (FaultType c : classes) {
    const FaultSpec& spec = specs.at(c);
    for (int i = 0; i < per_class; ++i, ++row) {
      Rng rng = substream(config.seed, "synth-signal",
                          (static_cast<std::uint64_t>(c) << 32) |
                              static_cast<std::uint64_t>(i));
      double beta = 0.0;
      VibrationSignal sig =
          synthesize_signal(spec, healthy_pool, config, rng, &beta);
      ds.features.row(row) = envelope_spectrum(sig.samples).transpose();
      ds.labels.push_back(static_cast<int>(c));
      ds.betas.push_back(beta);
    }
  }
  ds.class_counts = count_classes(ds.labels);
  int max_id = 0;
  for (FaultType c : classes) max_id = std::max(max_id, static_cast<int>(c));
  ds.class_names.resize(static_cast<std::size_t>(max_id) + 1);
  for (FaultType c : classes)
    ds.class_names[static_cast<std::size_t>(c)] = to_string(c);
  return ds;
}

// Bearing geometry -> characteristic fault frequencies -> FaultSpec.
// T = 1/BPFO (ORF), 1/BPFI (IRF), 1/(2*BSF) (BF); Q = 1/shaft for IRF and
// 1/cage for BF.
struct BearingKinematics {
  double shaft_hz = 29.95;
  int n_rolling = 9;
  double ball_diameter = 7.94;   // mm
  double pitch_diameter = 39.04; // mm
  double contact_angle_rad = 0.0;
};

inline double bpfo_hz(const BearingKinematics& k) {
  double r = k.ball_diameter / k.pitch_diameter * std::cos(k.contact_angle_rad);
  return k.n_rolling / 2.0 * k.shaft_hz * (1.0 - r);
}

inline double bpfi_hz(const BearingKinematics& k) {
  double r = k.ball_diameter / k.pitch_diameter * std::cos(k.contact_angle_rad);
  return k.n_rolling / 2.0 * k.shaft_hz * (1.0 + r);
}

inline double bsf_hz(const BearingKinematics& k) {
  double r = k.ball_diameter / k.pitch_diameter * std::cos(k.contact_angle_rad);
  return k.pitch_diameter / (2.0 * k.ball_diameter) * k.shaft_hz *
         (1.0 - r * r);
}

inline double cage_hz(const BearingKinematics& k) {
  double r = k.ball_diameter / k.pitch_diameter * std::cos(k.contact_angle_rad);
  return k.shaft_hz / 2.0 * (1.0 - r);
}

inline FaultSpec make_fault_spec(FaultType type, const BearingKinematics& k) {
  FaultSpec spec;
  spec.fault_type = type;
  switch (type) {
    case FaultType::NC:
      break;
    case FaultType::ORF:
      spec.t_period = 1.0 / bpfo_hz(k);
      spec.q_period = spec.t_period;
      spec.sidebands = 0;
      spec.alphas = {1.0};
      break;
    case FaultType::IRF:
      spec.t_period = 1.0 / bpfi_hz(k);
      spec.q_period = 1.0 / k.shaft_hz;
      spec.sidebands = 2;
      spec.alphas = {1.0, 0.5, 0.25};
      break;
    case FaultType::BF:
      spec.t_period = 1.0 / (2.0 * bsf_hz(k));
      spec.q_period = 1.0 / cage_hz(k);
      spec.sidebands = 2;
      spec.alphas = {1.0, 0.5, 0.25};
      break;
  }
  return spec;
}

}  // namespace ptpai
