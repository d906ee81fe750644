#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "ptpai/synth.hpp"

using namespace ptpai;

namespace {

SynthConfig desk_config() {
  SynthConfig cfg;
  cfg.fs = 12800.0;
  cfg.n_samples = 4096;
  cfg.seed = 7;
  return cfg;
}

VibrationSignal zero_signal(int n, double fs) {
  VibrationSignal s;
  s.fs = fs;
  s.samples.assign(static_cast<std::size_t>(n), 0.0);
  return s;
}

VibrationSignal const_signal(int n, double fs, double value) {
  VibrationSignal s;
  s.fs = fs;
  s.samples.assign(static_cast<std::size_t>(n), value);
  return s;
}

}  // namespace

TEST_CASE("hann window endpoints are zero") {
  auto w = dsp::hann_window(6);
  REQUIRE(w.size() == 6);
  CHECK(w.front() == Catch::Approx(0.0).margin(1e-15));
  CHECK(w.back() == Catch::Approx(0.0).margin(1e-15));
  CHECK(*std::max_element(w.begin(), w.end()) <= 1.0);
}

TEST_CASE("impact length follows duty * T * fs") {
  FaultSpec spec;
  spec.fault_type = FaultType::ORF;
  spec.t_period = 0.01;
  spec.duty = 0.05;
  SynthConfig cfg;
  cfg.fs = 12000.0;
  cfg.n_samples = 4096;
  auto s = impact_waveform(spec, cfg);
  CHECK(s.size() == 6);  // round(0.05 * 0.01 * 12000)
}

TEST_CASE("too-short impacts are invalid") {
  FaultSpec spec;
  spec.fault_type = FaultType::ORF;
  spec.t_period = 0.001;  // duty*T*fs = 0.6 samples
  spec.duty = 0.05;
  SynthConfig cfg;
  cfg.fs = 12000.0;
  try {
    impact_waveform(spec, cfg);
    FAIL("expected invalid-spec error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_spec);
  }
}

TEST_CASE("impact spectrum is suppressed at DC and Nyquist") {
  FaultSpec spec;
  spec.fault_type = FaultType::ORF;
  spec.duty = 0.05;
  SynthConfig cfg;
  cfg.fs = 12000.0;
  spec.t_period = 128.0 / (0.05 * cfg.fs);  // 128-sample impact
  auto s = impact_waveform(spec, cfg);
  REQUIRE(s.size() == 128);
  auto mag = oracle::dft_magnitude(s);
  const double passband = *std::max_element(mag.begin(), mag.end());
  REQUIRE(passband > 0.0);
  const double floor_db = passband * std::pow(10.0, -20.0 / 20.0);
  CHECK(mag.front() <= floor_db);
  CHECK(mag.back() <= floor_db);
}

TEST_CASE("modulation amplitudes") {
  SynthConfig cfg = desk_config();
  SECTION("constant envelope when M = 0 and lambda is pinned") {
    cfg.lambda_std = 0.0;
    FaultSpec spec;
    spec.fault_type = FaultType::ORF;
    spec.t_period = 0.01;
    Rng rng(1);
    auto amps = modulation_amplitudes(8, spec, cfg, rng);
    for (double a : amps) CHECK(a == Catch::Approx(1.0));
  }
  SECTION("single sideband with T/Q = 1/4 gives a period-4 pattern") {
    cfg.lambda_std = 0.0;
    FaultSpec spec;
    spec.fault_type = FaultType::IRF;
    spec.t_period = 0.01;
    spec.q_period = 0.04;
    spec.sidebands = 1;
    spec.alphas = {1.0, 1.0};
    Rng rng(1);
    auto amps = modulation_amplitudes(8, spec, cfg, rng);
    const double expected[4] = {2.0, 1.0, 0.0, 1.0};
    for (int j = 0; j < 8; ++j)
      CHECK(amps[static_cast<std::size_t>(j)] ==
            Catch::Approx(expected[j % 4]).margin(1e-12));
  }
  SECTION("lambda draws center on one") {
    FaultSpec spec;
    spec.fault_type = FaultType::ORF;
    spec.t_period = 0.01;
    Rng rng(77);
    auto amps = modulation_amplitudes(100000, spec, cfg, rng);
    double mean = 0.0;
    for (double a : amps) mean += a;
    mean /= static_cast<double>(amps.size());
    CHECK(mean == Catch::Approx(1.0).margin(0.002));
  }
}

TEST_CASE("healthy synthesis is the scaled noise slice alone") {
  SynthConfig cfg = desk_config();
  cfg.n_samples = 512;
  FaultSpec spec;  // NC
  VibrationSignal healthy = const_signal(4096, cfg.fs, 1.0);
  Rng rng(3);
  double beta = 0.0;
  VibrationSignal out = synthesize_signal(spec, healthy, cfg, rng, &beta);
  REQUIRE(out.size() == 512);
  CHECK(beta >= cfg.beta_low);
  CHECK(beta <= cfg.beta_high);
  for (double v : out.samples) CHECK(v == Catch::Approx(beta));
}

TEST_CASE("impulse train has the configured period") {
  SynthConfig cfg = desk_config();
  cfg.lambda_std = 0.0;
  cfg.beta_low = cfg.beta_high = 1e-12;  // noise off via a zero recording
  FaultSpec spec;
  spec.fault_type = FaultType::ORF;
  spec.t_period = 0.01;  // 128 samples at 12.8 kHz
  VibrationSignal healthy = zero_signal(8192, cfg.fs);
  Rng rng(5);
  VibrationSignal out = synthesize_signal(spec, healthy, cfg, rng);
  const int period = 128;

  SECTION("autocorrelation peaks at the impact period") {
    double best = -1.0;
    int best_lag = 0;
    for (int lag = period / 2; lag <= 2 * period; ++lag) {
      const double v = oracle::autocorr(out.samples, lag);
      if (v > best) {
        best = v;
        best_lag = lag;
      }
    }
    CHECK(std::abs(best_lag - period) <= 1);
  }

  SECTION("gaps between per-period maxima equal the period") {
    std::vector<int> peaks;
    for (int j = 0; j + 1 < out.size() / period; ++j) {
      int arg = j * period;
      for (int t = j * period; t < (j + 1) * period; ++t)
        if (std::abs(out.samples[static_cast<std::size_t>(t)]) >
            std::abs(out.samples[static_cast<std::size_t>(arg)]))
          arg = t;
      peaks.push_back(arg);
    }
    for (std::size_t j = 1; j < peaks.size(); ++j)
      CHECK(std::abs(peaks[j] - peaks[j - 1] - period) <= 1);
  }
}

TEST_CASE("envelope spectrum of an ORF synthesis peaks at the fault frequency") {
  SynthConfig cfg = desk_config();  // fs = 12800, n = 4096
  cfg.lambda_std = 0.0;
  cfg.beta_low = cfg.beta_high = 1e-12;
  FaultSpec spec;
  spec.fault_type = FaultType::ORF;
  spec.t_period = 0.01;  // 100 Hz fault
  VibrationSignal healthy = zero_signal(8192, cfg.fs);
  Rng rng(9);
  VibrationSignal out = synthesize_signal(spec, healthy, cfg, rng);
  Vector env = envelope_spectrum(out.samples);
  int arg = 1;
  for (int k = 2; k < env.size(); ++k)
    if (env[k] > env[arg]) arg = k;
  const double freq = arg * cfg.fs / cfg.n_samples;
  CHECK(std::abs(freq - 100.0) <= cfg.fs / cfg.n_samples + 1e-9);
}

TEST_CASE("short healthy recordings are rejected") {
  SynthConfig cfg = desk_config();
  FaultSpec spec;
  VibrationSignal healthy = zero_signal(cfg.n_samples - 1, cfg.fs);
  Rng rng(1);
  try {
    synthesize_signal(spec, healthy, cfg, rng);
    FAIL("expected insufficient-noise error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::insufficient_noise);
  }
}

TEST_CASE("source dataset generation") {
  SynthConfig cfg = desk_config();
  cfg.n_samples = 512;
  BearingKinematics kin;
  std::map<FaultType, FaultSpec> specs;
  for (FaultType t : {FaultType::NC, FaultType::IRF, FaultType::ORF, FaultType::BF})
    specs[t] = make_fault_spec(t, kin);
  std::vector<FaultType> classes = {FaultType::NC, FaultType::IRF,
                                    FaultType::ORF, FaultType::BF};
  Rng noise_rng(1234);
  VibrationSignal healthy = zero_signal(4096, cfg.fs);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (double& v : healthy.samples) v = n01(noise_rng);

  SECTION("balanced rows, one feature per signal") {
    DomainDataset ds = generate_source_dataset(specs, classes, healthy, 3, cfg);
    CHECK(ds.rows() == 12);
    CHECK(ds.dim() == 256);
    for (const auto& [cls, count] : ds.class_counts) {
      (void)cls;
      CHECK(count == 3);
    }
    CHECK(ds.betas.size() == 12);
    for (double b : ds.betas) {
      CHECK(b >= cfg.beta_low);
      CHECK(b <= cfg.beta_high);
    }
  }
  SECTION("per_class = 1 gives one row per label") {
    DomainDataset ds = generate_source_dataset(specs, classes, healthy, 1, cfg);
    CHECK(ds.rows() == 4);
    std::set<int> seen(ds.labels.begin(), ds.labels.end());
    CHECK(seen.size() == 4);
  }
  SECTION("identical seed reproduces the dataset bit for bit") {
    DomainDataset a = generate_source_dataset(specs, classes, healthy, 2, cfg);
    DomainDataset b = generate_source_dataset(specs, classes, healthy, 2, cfg);
    CHECK(a.features == b.features);
    CHECK(a.betas == b.betas);
  }
  SECTION("missing spec is a configuration error") {
    specs.erase(FaultType::BF);
    try {
      generate_source_dataset(specs, classes, healthy, 1, cfg);
      FAIL("expected configuration error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::config);
    }
  }
}

TEST_CASE("kinematics map to impact and modulation periods") {
  BearingKinematics kin;
  FaultSpec orf = make_fault_spec(FaultType::ORF, kin);
  CHECK(orf.t_period == Catch::Approx(1.0 / bpfo_hz(kin)));
  CHECK(orf.sidebands == 0);
  FaultSpec irf = make_fault_spec(FaultType::IRF, kin);
  CHECK(irf.t_period == Catch::Approx(1.0 / bpfi_hz(kin)));
  CHECK(irf.q_period == Catch::Approx(1.0 / kin.shaft_hz));
  FaultSpec bf = make_fault_spec(FaultType::BF, kin);
  CHECK(bf.t_period == Catch::Approx(1.0 / (2.0 * bsf_hz(kin))));
  CHECK(bf.q_period == Catch::Approx(1.0 / cage_hz(kin)));
  // BPFI > BPFO for any geometry
  CHECK(bpfi_hz(kin) > bpfo_hz(kin));
}
