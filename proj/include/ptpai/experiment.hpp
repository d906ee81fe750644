#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ptpai/dataset.hpp"
#include "ptpai/matio.hpp"
#include "ptpai/pipeline.hpp"
#include "ptpai/report.hpp"
#include "ptpai/synth.hpp"
#include "ptpai/train.hpp"

namespace ptpai {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// scenario catalog
// ---------------------------------------------------------------------------

struct ScenarioSpec {
  std::string name;
  std::string dataset;  // CWRU | JNU | desk
  std::set<int> target_classes;
  double balance_rate = 1.0;
  int desk_scale = 0;  // signals per class for desk tasks, 0 otherwise
};

namespace detail {

inline std::set<int> task_classes(int index) {
  using enum FaultType;
  switch (index) {
    case 1: return {0, 1, 2, 3};           // all classes
    case 2: return {0, 1, 3};              // NC, IRF, BF
    case 3: return {0, 3, 2};              // NC, BF, ORF
    case 4: return {0, 1};                 // NC, IRF
    case 5: return {0, 2};                 // NC, ORF
    case 6: return {0, 1};                 // IRF plus the always-present NC
    case 7: return {0, 3};                 // BF plus the always-present NC
  }
  fail(ErrorCode::config, "unknown task index");
}

inline const std::vector<std::pair<std::string, double>>& balance_rates() {
  static const std::vector<std::pair<std::string, double>> rates = {
      {"complete", 1.0}, {"10pct", 0.10}, {"5pct", 0.05}, {"1pct", 0.01}};
  return rates;
}

}  // namespace detail

inline std::vector<ScenarioSpec> scenario_catalog() {
  std::vector<ScenarioSpec> out;
  for (const char* ds : {"C", "J"}) {
    for (int task = 1; task <= 7; ++task) {
      for (const auto& [suffix, rate] : detail::balance_rates()) {
        ScenarioSpec spec;
        spec.name = std::string(ds) + std::to_string(task) + "-" + suffix;
        spec.dataset = ds[0] == 'C' ? "CWRU" : "JNU";
        spec.target_classes = detail::task_classes(task);
        spec.balance_rate = rate;
        out.push_back(std::move(spec));
      }
    }
  }
  // desk-scale variants: self-contained synthetic two-domain tasks
  auto desk = [&out](const std::string& name, std::set<int> classes,
                     double rate, int scale) {
    ScenarioSpec spec;
    spec.name = name;
    spec.dataset = "desk";
    spec.target_classes = std::move(classes);
    spec.balance_rate = rate;
    spec.desk_scale = scale;
    out.push_back(std::move(spec));
  };
  desk("bench-closed-balanced", {0, 1, 2, 3}, 1.0, 200);
  desk("bench-partial-10pct", {0, 1, 3}, 0.10, 200);
  desk("bench-partial-5pct", {0, 1, 3}, 0.05, 200);
  desk("bench-partial-1pct", {0, 1, 3}, 0.01, 200);
  desk("bench-single-10pct", {0, 1}, 0.10, 200);
  desk("bench-tiny", {0, 1, 3}, 0.25, 24);
  return out;
}

inline ScenarioSpec find_scenario(const std::string& name) {
  for (const auto& spec : scenario_catalog())
    if (spec.name == name) return spec;
  fail(ErrorCode::config, "unknown scenario: " + name);
}

inline std::string list_scenarios_text() {
  std::ostringstream os;
  os << "name                   dataset  target classes     balance\n";
  os << "---------------------  -------  -----------------  -------\n";
  for (const auto& spec : scenario_catalog()) {
    std::string classes;
    for (int c : spec.target_classes) {
      if (!classes.empty()) classes += ",";
      classes += to_string(static_cast<FaultType>(c));
    }
    char line[160];
    std::snprintf(line, sizeof(line), "%-22s %-8s %-18s %s\n",
                  spec.name.c_str(), spec.dataset.c_str(), classes.c_str(),
                  spec.balance_rate == 1.0
                      ? "complete"
                      : (fmt_g(spec.balance_rate * 100.0) + "%").c_str());
    os << line;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// desk benchmark: synthetic source vs perturbed synthetic target
// ---------------------------------------------------------------------------

struct DeskConfig {
  int n_samples = 512;   // signal length; feature dim is half of this
  double fs = 12800.0;
  double shaft_hz = 45.0;
  double noise_level = 0.5;  // std of the synthetic healthy recording
  double impact_scale = 4.0; // fault severity: impact amplitude over noise
  int target_per_class = 600;  // larger pool firms up the tiny test split
  // source synthesis
  double beta_low = 0.25, beta_high = 2.0;
  // target perturbations inducing the domain gap; the speed offset is the
  // dominant, alignable component, the rest stay mild
  double speed_scale = 0.94;
  double target_beta_low = 0.6, target_beta_high = 2.6;
  double target_band_low_frac = 0.08, target_band_high_frac = 0.88;
  double target_noise_tilt = 0.20;  // one-pole smoothing of the target noise
};

inline void to_json(json& j, const DeskConfig& d) {
  j = json{{"n_samples", d.n_samples},
           {"fs", d.fs},
           {"shaft_hz", d.shaft_hz},
           {"noise_level", d.noise_level},
           {"impact_scale", d.impact_scale},
           {"target_per_class", d.target_per_class},
           {"beta", {d.beta_low, d.beta_high}},
           {"speed_scale", d.speed_scale},
           {"target_beta", {d.target_beta_low, d.target_beta_high}},
           {"target_band_frac", {d.target_band_low_frac, d.target_band_high_frac}},
           {"target_noise_tilt", d.target_noise_tilt}};
}

inline void from_json(const json& j, DeskConfig& d) {
  d.n_samples = j.value("n_samples", d.n_samples);
  d.fs = j.value("fs", d.fs);
  d.shaft_hz = j.value("shaft_hz", d.shaft_hz);
  d.noise_level = j.value("noise_level", d.noise_level);
  d.impact_scale = j.value("impact_scale", d.impact_scale);
  d.target_per_class = j.value("target_per_class", d.target_per_class);
  if (j.contains("beta")) {
    d.beta_low = j["beta"][0];
    d.beta_high = j["beta"][1];
  }
  d.speed_scale = j.value("speed_scale", d.speed_scale);
  if (j.contains("target_beta")) {
    d.target_beta_low = j["target_beta"][0];
    d.target_beta_high = j["target_beta"][1];
  }
  if (j.contains("target_band_frac")) {
    d.target_band_low_frac = j["target_band_frac"][0];
    d.target_band_high_frac = j["target_band_frac"][1];
  }
  d.target_noise_tilt = j.value("target_noise_tilt", d.target_noise_tilt);
}

// Synthetic stand-in for a healthy recording: broadband noise plus shaft
// harmonics. `tilt` low-passes the noise to move the target's noise floor.
inline VibrationSignal make_healthy_recording(int n, double fs,
                                              double shaft_hz, double tilt,
                                              Rng& rng,
                                              double noise_level = 1.0) {
  VibrationSignal sig;
  sig.fs = fs;
  sig.samples.resize(static_cast<std::size_t>(n));
  std::normal_distribution<double> noise(0.0, noise_level);
  double state = 0.0;
  for (int i = 0; i < n; ++i) {
    const double white = noise(rng);
    state = tilt * state + (1.0 - tilt) * white;
    double v = state;
    const double t = i / fs;
    v += noise_level * 0.5 * std::sin(2.0 * std::numbers::pi * shaft_hz * t);
    v += noise_level * 0.24 * std::sin(2.0 * std::numbers::pi * 2.0 * shaft_hz * t + 0.7);
    v += noise_level * 0.12 * std::sin(2.0 * std::numbers::pi * 3.0 * shaft_hz * t + 1.9);
    sig.samples[static_cast<std::size_t>(i)] = v;
  }
  return sig;
}

struct DeskData {
  DomainDataset source_train, source_val, source_test;
  DomainDataset target_train, target_val, target_test;
  std::vector<std::string> class_names;
};

struct DeskPools {
  DomainDataset source;       // labeled, balanced, synthetic
  DomainDataset target_full;  // labeled pool before scenario thinning
};

// Half of the healthy recording feeds the synthetic source, the other half
// becomes the target domain, so no noise sample leaks across. The target is
// synthesized with perturbed kinematics, band edges and noise scale to
// induce the domain gap.
inline DeskPools build_desk_pools(const DeskConfig& desk, int per_class,
                                  std::uint64_t seed) {
  const int tgt_per_class =
      desk.target_per_class > 0 ? desk.target_per_class : per_class;

  const int pool_len = 64 * desk.n_samples;
  Rng pool_rng = substream(seed, "healthy-pool");
  VibrationSignal healthy = make_healthy_recording(
      2 * pool_len, desk.fs, desk.shaft_hz, 0.0, pool_rng, desk.noise_level);
  VibrationSignal source_half, target_half;
  source_half.fs = target_half.fs = desk.fs;
  source_half.samples.assign(healthy.samples.begin(),
                             healthy.samples.begin() + pool_len);
  target_half.samples.assign(healthy.samples.begin() + pool_len,
                             healthy.samples.end());
  // the target half additionally carries its own noise floor
  {
    Rng tilt_rng = substream(seed, "target-tilt");
    std::normal_distribution<double> extra(0.0, 0.2);
    double state = 0.0;
    for (double& v : target_half.samples) {
      state = desk.target_noise_tilt * state +
              (1.0 - desk.target_noise_tilt) * v;
      v = state + extra(tilt_rng);
    }
  }

  const std::vector<FaultType> all_classes = {FaultType::NC, FaultType::IRF,
                                              FaultType::ORF, FaultType::BF};
  BearingKinematics source_kin;
  source_kin.shaft_hz = desk.shaft_hz;
  BearingKinematics target_kin = source_kin;
  target_kin.shaft_hz = desk.shaft_hz * desk.speed_scale;

  std::map<FaultType, FaultSpec> source_specs, target_specs;
  for (FaultType t : all_classes) {
    source_specs[t] = make_fault_spec(t, source_kin);
    target_specs[t] = make_fault_spec(t, target_kin);
    for (double& a : source_specs[t].alphas) a *= desk.impact_scale;
    for (double& a : target_specs[t].alphas) a *= desk.impact_scale;
  }

  SynthConfig source_cfg;
  source_cfg.fs = desk.fs;
  source_cfg.n_samples = desk.n_samples;
  source_cfg.beta_low = desk.beta_low;
  source_cfg.beta_high = desk.beta_high;
  source_cfg.seed = splitmix64(seed ^ fnv1a64("source-synth"));

  SynthConfig target_cfg = source_cfg;
  target_cfg.beta_low = desk.target_beta_low;
  target_cfg.beta_high = desk.target_beta_high;
  target_cfg.band_low_hz = desk.target_band_low_frac * desk.fs / 2.0;
  target_cfg.band_high_hz = desk.target_band_high_frac * desk.fs / 2.0;
  target_cfg.seed = splitmix64(seed ^ fnv1a64("target-synth"));

  DeskPools pools;
  pools.source = generate_source_dataset(source_specs, all_classes,
                                         source_half, per_class, source_cfg);
  pools.target_full = generate_source_dataset(
      target_specs, all_classes, target_half, tgt_per_class, target_cfg);
  pools.target_full.domain = Domain::target;
  return pools;
}

// Builds one seed's worth of the two-domain benchmark, scenario applied and
// both domains split 80/10/10.
inline DeskData build_desk_data(const ScenarioSpec& scenario,
                                const DeskConfig& desk, std::uint64_t seed) {
  require(scenario.dataset == "desk", ErrorCode::config,
          "desk data requested for a non-desk scenario");
  DeskPools pools = build_desk_pools(desk, scenario.desk_scale, seed);

  ScenarioConfig sc;
  sc.target_classes = scenario.target_classes;
  sc.balance_rate = scenario.balance_rate;
  sc.healthy_class = static_cast<int>(FaultType::NC);
  sc.seed = splitmix64(seed ^ fnv1a64("scenario"));
  auto [src, tgt] = build_scenario(pools.source, pools.target_full, sc);

  DeskData data;
  data.class_names = src.class_names;
  SplitResult s = split_dataset(src, {0.8, 0.1, 0.1},
                                splitmix64(seed ^ fnv1a64("split-src")));
  SplitResult t = split_dataset(tgt, {0.8, 0.1, 0.1},
                                splitmix64(seed ^ fnv1a64("split-tgt")));
  data.source_train = std::move(s.train);
  data.source_val = std::move(s.val);
  data.source_test = std::move(s.test);
  data.target_train = std::move(t.train);
  data.target_val = std::move(t.val);
  data.target_test = std::move(t.test);
  return data;
}

// ---------------------------------------------------------------------------
// experiment configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::vector<std::string> scenarios = {"bench-partial-10pct"};
  std::string data_kind = "synthetic-benchmark";  // or "files"
  std::string source_base, target_base;           // for data_kind = files
  std::string out_dir = "runs/out";
  int repeats = 10;
  int jobs = 1;
  std::uint64_t base_seed = 1;
  double alpha = 0.05;
  std::vector<std::string> methods = {"ptpai", "source-only", "paip",
                                      "pair",  "paim",        "mixup"};
  TrainConfig train;
  DeskConfig desk;
};

inline json to_json(const ExperimentConfig& cfg) {
  json j;
  j["scenarios"] = cfg.scenarios;
  j["data"] = {{"kind", cfg.data_kind},
               {"source", cfg.source_base},
               {"target", cfg.target_base}};
  j["out_dir"] = cfg.out_dir;
  j["repeats"] = cfg.repeats;
  j["jobs"] = cfg.jobs;
  j["base_seed"] = cfg.base_seed;
  j["alpha"] = cfg.alpha;
  j["methods"] = cfg.methods;
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_per_domain", cfg.train.batch_per_domain},
                {"lr0", cfg.train.lr0},
                {"mu", cfg.train.mu},
                {"gamma", cfg.train.gamma},
                {"bandwidths", cfg.train.kernel.bandwidths},
                {"kernel_coeffs", cfg.train.kernel.coeffs},
                {"median_rescale", cfg.train.kernel.median_rescale},
                {"mix_alpha1", cfg.train.mix.alpha1},
                {"mix_alpha2", cfg.train.mix.alpha2},
                {"decision_boundary", cfg.train.mix.decision_boundary},
                {"mu_warmup", cfg.train.mu_warmup}};
  json d;
  to_json(d, cfg.desk);
  j["desk"] = d;
  return j;
}

inline ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig cfg;
  if (j.contains("scenario")) cfg.scenarios = {j["scenario"].get<std::string>()};
  if (j.contains("scenarios")) cfg.scenarios = j["scenarios"].get<std::vector<std::string>>();
  if (j.contains("data")) {
    cfg.data_kind = j["data"].value("kind", cfg.data_kind);
    cfg.source_base = j["data"].value("source", cfg.source_base);
    cfg.target_base = j["data"].value("target", cfg.target_base);
  }
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.repeats = j.value("repeats", cfg.repeats);
  cfg.jobs = j.value("jobs", cfg.jobs);
  cfg.base_seed = j.value("base_seed", cfg.base_seed);
  cfg.alpha = j.value("alpha", cfg.alpha);
  if (j.contains("methods"))
    cfg.methods = j["methods"].get<std::vector<std::string>>();
  if (j.contains("train")) {
    const json& t = j["train"];
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.batch_per_domain =
        t.value("batch_per_domain", cfg.train.batch_per_domain);
    cfg.train.lr0 = t.value("lr0", cfg.train.lr0);
    cfg.train.mu = t.value("mu", cfg.train.mu);
    cfg.train.gamma = t.value("gamma", cfg.train.gamma);
    if (t.contains("bandwidths")) {
      cfg.train.kernel.bandwidths =
          t["bandwidths"].get<std::vector<double>>();
      cfg.train.kernel.coeffs.assign(
          cfg.train.kernel.bandwidths.size(),
          1.0 / static_cast<double>(cfg.train.kernel.bandwidths.size()));
    }
    if (t.contains("kernel_coeffs"))
      cfg.train.kernel.coeffs = t["kernel_coeffs"].get<std::vector<double>>();
    cfg.train.kernel.median_rescale =
        t.value("median_rescale", cfg.train.kernel.median_rescale);
    cfg.train.mix.alpha1 = t.value("mix_alpha1", cfg.train.mix.alpha1);
    cfg.train.mix.alpha2 = t.value("mix_alpha2", cfg.train.mix.alpha2);
    cfg.train.mix.decision_boundary =
        t.value("decision_boundary", cfg.train.mix.decision_boundary);
    cfg.train.mu_warmup = t.value("mu_warmup", cfg.train.mu_warmup);
  }
  if (j.contains("desk")) from_json(j["desk"], cfg.desk);
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::file_not_found, "no such config: " + path);
  json j;
  try {
    j = json::parse(in,
                    /*cb=*/nullptr, /*allow_exceptions=*/true,
                    /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::format, "config parse error in " + path + ": " + e.what());
  }
  return experiment_from_json(j);
}

//esk dotted-path override: "train.mu=0.5" or "methods=[\"ptpai\"]".
inline void apply_override(json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorCode::config,
          "override must look like key.path=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    auto dot = path.find('.', start);
    std::string key = path.substr(start, dot - start);
    if (dot == std::string::npos) {
      json parsed;
      try {
        parsed = json::parse(value);
      } catch (const json::parse_error&) {
        parsed = value;  // plain string
      }
      (*node)[key] = parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

// Ablation matrix: each named method is the full configuration with the
// corresponding block disabled.
inline TrainConfig method_config(TrainConfig base, const std::string& method) {
  if (method == "ptpai") return base;
  if (method == "source-only") {
    base.mu = 0.0;
    base.gamma = 0.0;
    base.use_weighting = false;
    base.use_rf_mixup = false;
    return base;
  }
  if (method == "paip") {
    base.use_rf_mixup = false;
    return base;
  }
  if (method == "pair") {
    base.use_weighting = false;
    return base;
  }
  if (method == "paim") {
    base.use_mmsd = false;
    return base;
  }
  if (method == "mixup") {
    base.plain_mixup = true;
    return base;
  }
  fail(ErrorCode::config, "unknown method: " + method);
}

// ---------------------------------------------------------------------------
// experiment runner
// ---------------------------------------------------------------------------

struct RepeatResult {
  std::string task, method;
  int repeat = 0;
  std::uint64_t seed = 0;
  double b_accuracy = 0.0;
  double f1 = 0.0;
  Vector omega_c_final;
  bool diverged = false;
};

struct MethodAggregate {
  double bacc_mean = 0.0, bacc_std = 0.0, f1_mean = 0.0, f1_std = 0.0;
};

struct TaskResults {
  std::string task;
  std::vector<RepeatResult> repeats;  // method-major, repeat-minor
  std::map<std::string, MethodAggregate> aggregates;
};

struct ExperimentResult {
  std::vector<TaskResults> tasks;
  std::vector<std::string> methods;
  std::optional<RankSummary> ranks;
  std::string report_text;
  std::string config_hash;
};

namespace detail {

inline MethodAggregate aggregate(const std::vector<const RepeatResult*>& rs) {
  MethodAggregate a;
  const double n = static_cast<double>(rs.size());
  for (const RepeatResult* r : rs) {
    a.bacc_mean += r->b_accuracy;
    a.f1_mean += r->f1;
  }
  a.bacc_mean /= n;
  a.f1_mean /= n;
  for (const RepeatResult* r : rs) {
    a.bacc_std += (r->b_accuracy - a.bacc_mean) * (r->b_accuracy - a.bacc_mean);
    a.f1_std += (r->f1 - a.f1_mean) * (r->f1 - a.f1_mean);
  }
  a.bacc_std = std::sqrt(a.bacc_std / n);
  a.f1_std = std::sqrt(a.f1_std / n);
  return a;
}

template <typename Fn>
void parallel_for(int count, int jobs, Fn&& fn) {
  if (jobs <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&]() {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= count) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const int n_threads = std::min(jobs, count);
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace detail

// Runs one (task, repeat) unit: builds the data for the repeat's seed and
// trains every method on it. Artifacts land under
// out_dir/<task>/<method>/r<k>/.
inline std::vector<RepeatResult> run_unit(
    const ExperimentConfig& cfg, const ScenarioSpec& scenario, int repeat,
    const std::string& out_dir, bool write_artifacts = true) {
  namespace fs = std::filesystem;
  const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(repeat);

  DeskData data;
  if (cfg.data_kind == "synthetic-benchmark") {
    data = build_desk_data(scenario, cfg.desk, seed);
  } else if (cfg.data_kind == "files") {
    DomainDataset source = load_dataset(cfg.source_base);
    DomainDataset target = load_dataset(cfg.target_base);
    if (target.labeled()) {
      ScenarioConfig sc;
      sc.target_classes = scenario.target_classes;
      sc.balance_rate = scenario.balance_rate;
      sc.healthy_class = static_cast<int>(FaultType::NC);
      sc.seed = splitmix64(seed ^ fnv1a64("scenario"));
      auto [src, tgt] = build_scenario(source, target, sc);
      source = std::move(src);
      target = std::move(tgt);
    }
    data.class_names = source.class_names;
    SplitResult s = split_dataset(source, {0.8, 0.1, 0.1},
                                  splitmix64(seed ^ fnv1a64("split-src")));
    SplitResult t = split_dataset(target, {0.8, 0.1, 0.1},
                                  splitmix64(seed ^ fnv1a64("split-tgt")));
    data.source_train = std::move(s.train);
    data.source_val = std::move(s.val);
    data.source_test = std::move(s.test);
    data.target_train = std::move(t.train);
    data.target_val = std::move(t.val);
    data.target_test = std::move(t.test);
  } else {
    fail(ErrorCode::config, "unknown data kind: " + cfg.data_kind);
  }

  EvalSet val;
  val.x = data.target_val.features;
  val.y = data.target_val.sealed_labels;

  std::vector<RepeatResult> results;
  for (const std::string& method : cfg.methods) {
    TrainConfig tc = method_config(cfg.train, method);
    tc.seed = seed;

    DomainDataset target_view;  // training never sees the sealed labels
    target_view.features = data.target_train.features;
    target_view.domain = Domain::target;

    FitResult fitres = fit(tc, data.source_train, target_view, &val);

    RepeatResult r;
    r.task = scenario.name;
    r.method = method;
    r.repeat = repeat;
    r.seed = seed;
    r.diverged = fitres.history.diverged;
    if (!fitres.history.records.empty())
      r.omega_c_final = fitres.history.records.back().omega_c;
    std::vector<int> pred = argmax_rows(predict_probs(
        fitres.params, data.target_test.features, tc.batch_per_domain));
    std::set<int> classes(data.target_test.sealed_labels.begin(),
                          data.target_test.sealed_labels.end());
    r.b_accuracy =
        balanced_accuracy(data.target_test.sealed_labels, pred, classes);
    r.f1 = macro_f1(data.target_test.sealed_labels, pred, classes);

    if (write_artifacts) {
      const fs::path dir = fs::path(out_dir) / scenario.name / method /
                           ("r" + std::to_string(repeat));
      fs::create_directories(dir);
      fitres.history.save((dir / "history.txt").string());
      std::map<std::string, std::string> header = {
          {"seed", std::to_string(seed)},
          {"epoch", std::to_string(fitres.history.records.size())},
          {"method", method},
          {"scenario", scenario.name}};
      save_checkpoint((dir / "checkpoint.bin").string(), fitres.params,
                      header);
      std::ofstream metrics(dir / "metrics.txt");
      metrics << "task=" << r.task << " method=" << r.method
              << " repeat=" << r.repeat << " seed=" << r.seed
              << " b_accuracy=" << fmt_g(r.b_accuracy) << " f1="
              << fmt_g(r.f1) << " diverged=" << (r.diverged ? 1 : 0);
      metrics << " omega_c=";
      for (int c = 0; c < r.omega_c_final.size(); ++c) {
        if (c) metrics << ',';
        metrics << fmt_g(r.omega_c_final[c]);
      }
      metrics << "\n";
      if (repeat == 0) {
        write_loss_curves((fs::path(out_dir) / scenario.name / method /
                           "losses.svg").string(),
                          fitres.history, scenario.name + " / " + method);
        write_weight_curves((fs::path(out_dir) / scenario.name / method /
                             "weights.svg").string(),
                            fitres.history, data.class_names,
                            scenario.name + " / " + method +
                                " class weights");
      }
    }
    results.push_back(std::move(r));
  }
  return results;
}

inline std::string render_report(const ExperimentConfig& cfg,
                                 const ExperimentResult& result) {
  std::ostringstream os;
  os << "# ptpai metrics report\n";
  os << "config_hash=" << result.config_hash << "\n";
  os << "repeats=" << cfg.repeats << "\n";
  for (const TaskResults& task : result.tasks) {
    for (const RepeatResult& r : task.repeats) {
      os << "task=" << r.task << " method=" << r.method
         << " repeat=" << r.repeat << " seed=" << r.seed
         << " b_accuracy=" << fmt_g(r.b_accuracy) << " f1=" << fmt_g(r.f1)
         << " diverged=" << (r.diverged ? 1 : 0) << "\n";
    }
  }
  for (const TaskResults& task : result.tasks) {
    for (const std::string& method : result.methods) {
      const MethodAggregate& a = task.aggregates.at(method);
      os << "aggregate task=" << task.task << " method=" << method
         << " b_accuracy_mean=" << fmt_g(a.bacc_mean)
         << " b_accuracy_std=" << fmt_g(a.bacc_std)
         << " f1_mean=" << fmt_g(a.f1_mean) << " f1_std=" << fmt_g(a.f1_std)
         << "\n";
    }
  }
  if (result.ranks) {
    for (std::size_t m = 0; m < result.methods.size(); ++m)
      os << "rank method=" << result.methods[m]
         << " avg_rank=" << fmt_g(result.ranks->avg_ranks[static_cast<int>(m)])
         << "\n";
    os << "cd=" << fmt_g(result.ranks->cd) << "\n";
    os << "friedman_stat=" << fmt_g(result.ranks->friedman_stat) << "\n";
  }
  return os.str();
}

// Full experiment: every scenario x method x repeat, aggregated, ranked when
// at least three methods and two tasks are present, all artifacts written.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       bool write_artifacts = true) {
  require(cfg.repeats >= 1, ErrorCode::config, "repeats must be >= 1");
  require(!cfg.methods.empty(), ErrorCode::config, "no methods configured");
  namespace fs = std::filesystem;
  if (write_artifacts) fs::create_directories(cfg.out_dir);

  ExperimentResult result;
  result.methods = cfg.methods;
  result.config_hash = hash_hex(content_hash(to_json(cfg).dump()));

  std::vector<ScenarioSpec> scenarios;
  for (const std::string& name : cfg.scenarios)
    scenarios.push_back(find_scenario(name));

  // unit = (scenario, repeat); methods run inside a unit on shared data
  const int n_units = static_cast<int>(scenarios.size()) * cfg.repeats;
  std::vector<std::vector<RepeatResult>> unit_results(
      static_cast<std::size_t>(n_units));
  detail::parallel_for(n_units, cfg.jobs, [&](int u) {
    const int s = u / cfg.repeats;
    const int r = u % cfg.repeats;
    unit_results[static_cast<std::size_t>(u)] =
        run_unit(cfg, scenarios[static_cast<std::size_t>(s)], r, cfg.out_dir,
                 write_artifacts);
  });

  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    TaskResults task;
    task.task = scenarios[s].name;
    for (const std::string& method : cfg.methods) {
      for (int r = 0; r < cfg.repeats; ++r) {
        const auto& unit =
            unit_results[s * static_cast<std::size_t>(cfg.repeats) +
                         static_cast<std::size_t>(r)];
        for (const RepeatResult& rr : unit)
          if (rr.method == method) task.repeats.push_back(rr);
      }
    }
    for (const std::string& method : cfg.methods) {
      std::vector<const RepeatResult*> rs;
      for (const RepeatResult& rr : task.repeats)
        if (rr.method == method) rs.push_back(&rr);
      task.aggregates[method] = detail::aggregate(rs);
    }
    result.tasks.push_back(std::move(task));
  }

  if (result.tasks.size() >= 2 && cfg.methods.size() >= 3) {
    ScoreMatrix sm;
    sm.methods = cfg.methods;
    sm.scores.resize(static_cast<int>(result.tasks.size()),
                     static_cast<int>(cfg.methods.size()));
    for (std::size_t t = 0; t < result.tasks.size(); ++t) {
      sm.tasks.push_back(result.tasks[t].task);
      for (std::size_t m = 0; m < cfg.methods.size(); ++m)
        sm.scores(static_cast<int>(t), static_cast<int>(m)) =
            result.tasks[t].aggregates.at(cfg.methods[m]).bacc_mean;
    }
    result.ranks = friedman_nemenyi(sm, cfg.alpha);
  }

  result.report_text = render_report(cfg, result);
  if (write_artifacts) {
    std::ofstream report(fs::path(cfg.out_dir) / "report.txt");
    report << result.report_text;
    if (result.ranks) {
      write_cd_diagram((fs::path(cfg.out_dir) / "cd_diagram.svg").string(),
                       cfg.methods, result.ranks->avg_ranks,
                       result.ranks->cd);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// preparing scenarios from real MAT-file records
// ---------------------------------------------------------------------------

struct IngestRecord {
  std::string path;
  std::string key;
  FaultType fault = FaultType::NC;
};

struct IngestSpec {
  SourceCorpus corpus = SourceCorpus::cwru_drive_end;
  int segment_length = 4096;
  int per_class = 1200;
  double shaft_hz = 29.95;
  BearingKinematics bearing;
  std::vector<IngestRecord> healthy;
  std::vector<IngestRecord> faulty;
};

inline IngestSpec ingest_from_json(const json& j) {
  IngestSpec spec;
  const std::string corpus = j.value("corpus", std::string("cwru_drive_end"));
  if (corpus == "cwru_drive_end") spec.corpus = SourceCorpus::cwru_drive_end;
  else if (corpus == "jnu") spec.corpus = SourceCorpus::jnu;
  else fail(ErrorCode::config, "ingest: unknown corpus " + corpus);
  spec.segment_length = j.value("segment_length", spec.segment_length);
  spec.per_class = j.value("per_class", spec.per_class);
  spec.shaft_hz = j.value("shaft_hz", spec.shaft_hz);
  if (j.contains("bearing")) {
    const json& b = j["bearing"];
    spec.bearing.n_rolling = b.value("n_rolling", spec.bearing.n_rolling);
    spec.bearing.ball_diameter =
        b.value("ball_diameter", spec.bearing.ball_diameter);
    spec.bearing.pitch_diameter =
        b.value("pitch_diameter", spec.bearing.pitch_diameter);
    spec.bearing.contact_angle_rad =
        b.value("contact_angle_deg", 0.0) * std::numbers::pi / 180.0;
  }
  spec.bearing.shaft_hz = spec.shaft_hz;
  auto parse_records = [](const json& arr, FaultType forced, bool use_forced) {
    std::vector<IngestRecord> out;
    for (const json& r : arr) {
      IngestRecord rec;
      rec.path = r.at("path").get<std::string>();
      rec.key = r.at("key").get<std::string>();
      rec.fault = use_forced
                      ? forced
                      : fault_type_from_string(r.at("class").get<std::string>());
      out.push_back(std::move(rec));
    }
    return out;
  };
  require(j.contains("healthy"), ErrorCode::config,
          "ingest: needs at least one healthy record");
  spec.healthy = parse_records(j["healthy"], FaultType::NC, true);
  if (j.contains("records"))
    spec.faulty = parse_records(j["records"], FaultType::NC, false);
  return spec;
}

namespace detail {

// Overlapping segmentation tuned to yield `want` segments when possible;
// the chosen hop is recorded by the caller in the manifest.
inline std::pair<Matrix, int> segments_for_count(const VibrationSignal& sig,
                                                 int length, int want) {
  require(sig.size() >= length, ErrorCode::insufficient_data,
          "record shorter than one segment");
  int hop = want > 1 ? std::max(1, (sig.size() - length) / (want - 1)) : 1;
  Matrix segs = segment_signal(sig, length, hop);
  if (segs.rows() > want) segs.conservativeResize(want, segs.cols());
  return {segs, hop};
}

inline void append_features(DomainDataset& ds, const Matrix& segments,
                            int label, std::vector<Matrix>& rows,
                            std::vector<int>& labels) {
  (void)ds;
  for (int s = 0; s < segments.rows(); ++s) {
    rows.push_back(envelope_spectrum(segments, s).transpose());
    labels.push_back(label);
  }
}

}  // namespace detail

struct PreparedData {
  DomainDataset source;       // synthetic, labeled and balanced
  DomainDataset target_full;  // real segments, labeled pool
  int healthy_hop = 0;
};

// Real-data preparation per the paper's protocol: half of the healthy
// recording seeds the synthetic source, the other half (plus the faulty
// records) forms the target pool as envelope-spectrum features.
inline PreparedData prepare_from_files(const IngestSpec& spec,
                                       std::uint64_t seed) {
  require(!spec.healthy.empty(), ErrorCode::config,
          "prepare: no healthy records");
  VibrationSignal healthy;
  healthy.fs = corpus_fs(spec.corpus);
  for (const IngestRecord& r : spec.healthy) {
    VibrationSignal sig = ingest_matlab_records(r.path, r.key, spec.corpus);
    healthy.samples.insert(healthy.samples.end(), sig.samples.begin(),
                           sig.samples.end());
  }
  const int half = healthy.size() / 2;
  VibrationSignal source_noise, target_healthy;
  source_noise.fs = target_healthy.fs = healthy.fs;
  source_noise.samples.assign(healthy.samples.begin(),
                              healthy.samples.begin() + half);
  target_healthy.samples.assign(healthy.samples.begin() + half,
                                healthy.samples.end());

  const std::vector<FaultType> all_classes = {FaultType::NC, FaultType::IRF,
                                              FaultType::ORF, FaultType::BF};
  std::map<FaultType, FaultSpec> specs;
  for (FaultType t : all_classes) specs[t] = make_fault_spec(t, spec.bearing);

  SynthConfig synth_cfg;
  synth_cfg.fs = healthy.fs;
  synth_cfg.n_samples = spec.segment_length;
  synth_cfg.seed = splitmix64(seed ^ fnv1a64("prepare-synth"));

  PreparedData out;
  out.source = generate_source_dataset(specs, all_classes, source_noise,
                                       spec.per_class, synth_cfg);

  // target pool: real healthy segments (up-sampled by overlap) + per-class
  // segments of the faulty records, severities grouped by health state
  std::vector<Matrix> rows;
  std::vector<int> labels;
  DomainDataset scratch;
  auto [healthy_segments, hop] = detail::segments_for_count(
      target_healthy, spec.segment_length, spec.per_class);
  out.healthy_hop = hop;
  detail::append_features(scratch, healthy_segments,
                          static_cast<int>(FaultType::NC), rows, labels);

  std::map<FaultType, std::vector<VibrationSignal>> by_class;
  for (const IngestRecord& r : spec.faulty)
    by_class[r.fault].push_back(
        ingest_matlab_records(r.path, r.key, spec.corpus));
  for (auto& [fault, sigs] : by_class) {
    const int want_per_record =
        (spec.per_class + static_cast<int>(sigs.size()) - 1) /
        static_cast<int>(sigs.size());
    int emitted = 0;
    for (const VibrationSignal& sig : sigs) {
      auto [segs, rec_hop] = detail::segments_for_count(
          sig, spec.segment_length,
          std::min(want_per_record, spec.per_class - emitted));
      (void)rec_hop;
      detail::append_features(scratch, segs, static_cast<int>(fault), rows,
                              labels);
      emitted += static_cast<int>(segs.rows());
      if (emitted >= spec.per_class) break;
    }
  }

  require(!rows.empty(), ErrorCode::insufficient_data,
          "prepare: no target rows produced");
  out.target_full.features.resize(static_cast<int>(rows.size()),
                                  rows.front().cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.target_full.features.row(static_cast<int>(i)) = rows[i];
  out.target_full.labels = std::move(labels);
  out.target_full.class_counts = count_classes(out.target_full.labels);
  out.target_full.domain = Domain::target;
  out.target_full.fs = healthy.fs;
  out.target_full.seed = seed;
  out.target_full.class_names = out.source.class_names;
  return out;
}

}  // namespace ptpai
