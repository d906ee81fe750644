#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "ptpai/experiment.hpp"

namespace fs = std::filesystem;
using ptpai::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::vector<std::string> scenarios;
  int repeats = -1;
  int jobs = -1;
  long seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path,
                  "JSON experiment config; defaults cover every key");
  cmd->add_option("--set", opts.overrides,
                  "override a config key via a dotted path, e.g. "
                  "--set train.mu=0.5")
      ->take_all();
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--scenario", opts.scenarios, "scenario name(s)")
      ->take_all();
  cmd->add_option("--repeats", opts.repeats, "number of repeats");
  cmd->add_option("--jobs", opts.jobs, "parallel (scenario, repeat) units");
  cmd->add_option("--seed", opts.seed, "base seed");
}

ptpai::ExperimentConfig resolve_config(const CommonOpts& opts) {
  json j;
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path);
    if (!in.good())
      ptpai::fail(ptpai::ErrorCode::file_not_found,
                  "no such config: " + opts.config_path);
    try {
      j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
      ptpai::fail(ptpai::ErrorCode::format,
                  "config parse error in " + opts.config_path + ": " +
                      e.what());
    }
  } else {
    j = ptpai::to_json(ptpai::ExperimentConfig{});
  }
  for (const std::string& assignment : opts.overrides)
    ptpai::apply_override(j, assignment);
  ptpai::ExperimentConfig cfg = ptpai::experiment_from_json(j);
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (!opts.scenarios.empty()) cfg.scenarios = opts.scenarios;
  if (opts.repeats > 0) cfg.repeats = opts.repeats;
  if (opts.jobs > 0) cfg.jobs = opts.jobs;
  if (opts.seed >= 0) cfg.base_seed = static_cast<std::uint64_t>(opts.seed);
  return cfg;
}

void save_resolved_config(const ptpai::ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  std::ofstream out(fs::path(cfg.out_dir) / "config.json");
  out << ptpai::to_json(cfg).dump(2) << "\n";
}

int cmd_generate(const CommonOpts& opts) {
  ptpai::ExperimentConfig cfg = resolve_config(opts);
  const ptpai::ScenarioSpec scenario = ptpai::find_scenario(
      cfg.scenarios.empty() ? "bench-partial-10pct" : cfg.scenarios.front());
  if (scenario.dataset != "desk")
    ptpai::fail(ptpai::ErrorCode::config,
                "generate builds desk-scale synthetic datasets; scenario " +
                    scenario.name + " refers to real data (use prepare)");
  ptpai::DeskPools pools =
      ptpai::build_desk_pools(cfg.desk, scenario.desk_scale, cfg.base_seed);
  fs::create_directories(cfg.out_dir);
  ptpai::save_dataset(pools.source, (fs::path(cfg.out_dir) / "source").string());
  ptpai::save_dataset(pools.target_full,
                      (fs::path(cfg.out_dir) / "target_pool").string());
  save_resolved_config(cfg);
  std::cout << "wrote " << cfg.out_dir << "/source.{f32,manifest.txt} ("
            << pools.source.rows() << " rows) and target_pool.{f32,manifest.txt} ("
            << pools.target_full.rows() << " rows)\n";
  return 0;
}

int cmd_prepare(const std::string& ingest_path, const CommonOpts& opts) {
  ptpai::ExperimentConfig cfg = resolve_config(opts);
  std::ifstream in(ingest_path);
  if (!in.good())
    ptpai::fail(ptpai::ErrorCode::file_not_found,
                "no such ingest manifest: " + ingest_path);
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    ptpai::fail(ptpai::ErrorCode::format,
                "ingest parse error in " + ingest_path + ": " + e.what());
  }
  ptpai::IngestSpec spec = ptpai::ingest_from_json(j);
  ptpai::PreparedData data = ptpai::prepare_from_files(spec, cfg.base_seed);
  fs::create_directories(cfg.out_dir);
  ptpai::save_dataset(data.source, (fs::path(cfg.out_dir) / "source").string());
  ptpai::save_dataset(data.target_full,
                      (fs::path(cfg.out_dir) / "target_pool").string());

  if (!cfg.scenarios.empty()) {
    const ptpai::ScenarioSpec scenario =
        ptpai::find_scenario(cfg.scenarios.front());
    ptpai::ScenarioConfig sc;
    sc.target_classes = scenario.target_classes;
    sc.balance_rate = scenario.balance_rate;
    sc.healthy_class = 0;
    sc.seed = cfg.base_seed;
    auto [src, tgt] = ptpai::build_scenario(data.source, data.target_full, sc);
    (void)src;
    ptpai::save_dataset(tgt, (fs::path(cfg.out_dir) / "target").string());
    std::cout << "scenario " << scenario.name << ": target "
              << tgt.rows() << " rows (healthy hop " << data.healthy_hop
              << ")\n";
  }
  std::cout << "wrote datasets under " << cfg.out_dir << "\n";
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& method,
              const std::string& resume) {
  ptpai::ExperimentConfig cfg = resolve_config(opts);
  cfg.methods = {method};
  if (opts.repeats <= 0) cfg.repeats = 1;
  save_resolved_config(cfg);

  if (!resume.empty()) {
    const ptpai::ScenarioSpec scenario =
        ptpai::find_scenario(cfg.scenarios.front());
    ptpai::DeskData data =
        ptpai::build_desk_data(scenario, cfg.desk, cfg.base_seed);
    ptpai::TrainConfig tc = ptpai::method_config(cfg.train, method);
    tc.seed = cfg.base_seed;
    ptpai::DomainDataset target_view;
    target_view.features = data.target_train.features;
    target_view.domain = ptpai::Domain::target;
    ptpai::EvalSet val{data.target_val.features, data.target_val.sealed_labels};
    ptpai::FitResult result =
        ptpai::fit(tc, data.source_train, target_view, &val, resume);
    fs::create_directories(cfg.out_dir);
    result.history.save((fs::path(cfg.out_dir) / "history.txt").string());
    ptpai::save_fit_checkpoint(
        (fs::path(cfg.out_dir) / "checkpoint.bin").string(), result, tc);
    std::cout << "resumed to epoch " << result.completed_epochs << "\n";
    return 0;
  }

  ptpai::ExperimentResult result = ptpai::run_experiment(cfg);
  std::cout << result.report_text;
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data_base,
                 int batch) {
  ptpai::NetParams params = ptpai::load_checkpoint(checkpoint);
  ptpai::DomainDataset ds = ptpai::load_dataset(data_base);
  const std::vector<int>& truth =
      ds.labeled() ? ds.labels : ds.sealed_labels;
  if (truth.empty())
    ptpai::fail(ptpai::ErrorCode::invalid_input,
                "dataset carries no labels to evaluate against");
  std::vector<int> pred = ptpai::argmax_rows(
      ptpai::predict_probs(params, ds.features, batch));
  std::set<int> classes(truth.begin(), truth.end());
  const double bacc = ptpai::balanced_accuracy(truth, pred, classes);
  const double f1 = ptpai::macro_f1(truth, pred, classes);
  std::cout << "rows=" << ds.rows() << " b_accuracy=" << ptpai::fmt_g(bacc)
            << " f1=" << ptpai::fmt_g(f1) << "\n";
  return 0;
}

int cmd_bench(const CommonOpts& opts) {
  ptpai::ExperimentConfig cfg = resolve_config(opts);
  save_resolved_config(cfg);
  ptpai::ExperimentResult result = ptpai::run_experiment(cfg);
  std::cout << result.report_text;
  std::cout << "artifacts under " << cfg.out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PTPAI partial transfer-learning pipeline"};
  app.require_subcommand(1);

  CommonOpts generate_opts, prepare_opts, train_opts, bench_opts;
  std::string ingest_path, method = "ptpai", resume, checkpoint, data_base;
  int eval_batch = 128;

  CLI::App* generate = app.add_subcommand(
      "generate", "synthesize desk-scale source/target datasets");
  add_common(generate, generate_opts);

  CLI::App* prepare = app.add_subcommand(
      "prepare", "build a scenario from real MAT-file records");
  add_common(prepare, prepare_opts);
  prepare->add_option("--ingest", ingest_path,
                      "JSON manifest of healthy/faulty records")
      ->required();

  CLI::App* train = app.add_subcommand("train", "train one method");
  add_common(train, train_opts);
  train->add_option("--method", method,
                    "ptpai | source-only | paip | pair | paim | mixup");
  train->add_option("--resume", resume, "checkpoint to resume from");

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
  evaluate->add_option("--checkpoint", checkpoint)->required();
  evaluate->add_option("--data", data_base,
                       "dataset base path (without .f32)")
      ->required();
  evaluate->add_option("--batch", eval_batch);

  CLI::App* bench = app.add_subcommand(
      "bench", "full method matrix with aggregate report and CD diagram");
  add_common(bench, bench_opts);

  app.add_subcommand("list-scenarios", "print the scenario catalog");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(generate_opts);
    if (prepare->parsed()) return cmd_prepare(ingest_path, prepare_opts);
    if (train->parsed()) return cmd_train(train_opts, method, resume);
    if (evaluate->parsed()) return cmd_evaluate(checkpoint, data_base, eval_batch);
    if (bench->parsed()) return cmd_bench(bench_opts);
    if (app.get_subcommand("list-scenarios")->parsed()) {
      std::cout << ptpai::list_scenarios_text();
      return 0;
    }
  } catch (const ptpai::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ptpai::ErrorCode::file_not_found ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
