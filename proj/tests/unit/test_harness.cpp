#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "plasbench/errors.hpp"
#include "plasbench/harness.hpp"

using namespace plasbench;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json base_config() {
  return json::parse(R"({
    "protocol": "warm_start",
    "name": "unit",
    "master_seed": 11,
    "seeds": [0, 1],
    "dataset": {"name": "synthetic", "num_classes": 4, "per_class": 30, "test_per_class": 20,
                "example_shape": [1, 4, 4], "margin": 3.0, "noise_std": 1.0},
    "model": {"kind": "mlp", "num_classes": 4, "input_shape": [1, 4, 4], "hidden_sizes": [16]},
    "batch_size": 32,
    "phases": [
      {"name": "pretrain", "data_source": "pretrain_half", "epochs": 3, "optimizer": {"kind": "adam", "lr": 0.01}},
      {"name": "tune", "data_source": "full", "epochs": 4, "optimizer": {"kind": "adam", "lr": 0.01}}
    ],
    "last_k": 2
  })");
}

ExperimentConfig config_from(const json& j) { return parse_config(j.dump()); }

ExperimentResult run(const json& j, std::size_t jobs = 1) {
  const ExperimentConfig cfg = config_from(j);
  RunOptions options;
  options.jobs = jobs;
  return run_experiment(cfg, load_corpus(cfg), options);
}

const RunRecord& find_run(const ExperimentResult& r, const std::string& id) {
  for (const RunRecord& run : r.runs) {
    if (run.run_id == id) return run;
  }
  FAIL("missing run " << id);
  throw std::logic_error("unreachable");
}

bool same_series(const RunRecord& a, const RunRecord& b) {
  if (a.series.size() != b.series.size()) return false;
  for (std::size_t i = 0; i < a.series.size(); ++i) {
    const EpochMetrics &x = a.series[i], &y = b.series[i];
    if (x.train_loss != y.train_loss || x.train_acc != y.train_acc || x.test_acc != y.test_acc || x.step != y.step)
      return false;
  }
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("plasbench_harness_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("aggregation") {
  TEST_CASE("last_k_mean") {
    const std::vector<double> s{0.1, 0.2, 0.6, 0.8};
    CHECK(last_k_mean(s, 1) == 0.8);
    CHECK(last_k_mean(s, 2) == doctest::Approx(0.7));
    CHECK(last_k_mean(s, 4) == doctest::Approx(0.425));
    CHECK_THROWS_AS(last_k_mean(s, 0), ConfigError);
    CHECK_THROWS_AS(last_k_mean(s, 5), ConfigError);
  }

  TEST_CASE("summarize excludes diverged runs and pairs arms with baselines") {
    ExperimentResult r;
    r.config = config_from(base_config());
    r.last_k = 1;
    auto add = [&](const std::string& arm, const std::string& key, const std::string& base, std::uint64_t seed,
                   double acc, bool diverged) {
      RunRecord rec;
      rec.arm = arm;
      rec.sweep_key = key;
      rec.baseline_key = base;
      rec.seed = seed;
      rec.run_id = arm + "/" + key + "/seed=" + std::to_string(seed);
      EpochMetrics m;
      m.phase = "tune";
      m.epoch = 1;
      m.test_acc = acc;
      rec.series.push_back(m);
      if (diverged) rec.divergence = DivergenceRecord{"tune", 1, 1, "nan"};
      r.runs.push_back(rec);
    };
    add("fresh", "baseline", "", 0, 0.8, false);
    add("fresh", "baseline", "", 1, 0.6, false);
    add("warm", "pretrain_epochs=3", "baseline", 0, 0.5, false);
    add("warm", "pretrain_epochs=3", "baseline", 1, 0.1, true);
    summarize(r);
    const ArmSummary* fresh = r.find_arm("baseline", "fresh");
    REQUIRE(fresh != nullptr);
    CHECK(fresh->mean == doctest::Approx(0.7));
    CHECK(fresh->std == doctest::Approx(std::sqrt(0.02)));
    const ArmSummary* warm = r.find_arm("pretrain_epochs=3", "warm");
    REQUIRE(warm != nullptr);
    CHECK(warm->n == 1);
    CHECK(warm->diverged == 1);
    CHECK(warm->std == 0.0);
    CHECK(r.diverged_runs == 1);
    const GapReport* gap = r.find_gap("pretrain_epochs=3");
    REQUIRE(gap != nullptr);
    CHECK(gap->gap == doctest::Approx(0.5 - 0.7));
    CHECK(gap->fresh_values.size() == 2);
  }
}

TEST_SUITE("config") {
  TEST_CASE("defaults and round trip") {
    const ExperimentConfig cfg = config_from(base_config());
    CHECK(cfg.phases.size() == 2);
    CHECK(cfg.tune_phase().name == "tune");
    CHECK(cfg.phases[0].data_source == DataSource::pretrain_half);
    CHECK(cfg.tune_evaluations() == 4);
    CHECK(cfg.effective_last_k() == 2);
    const ExperimentConfig again = parse_config(config_to_json(cfg));
    CHECK(config_to_json(again) == config_to_json(cfg));
  }

  TEST_CASE("default last_k scales with evaluations") {
    json j = base_config();
    j.erase("last_k");
    CHECK(config_from(j).effective_last_k() == 1);
    j["phases"][1]["epochs"] = 100;
    CHECK(config_from(j).effective_last_k() == 20);
    j["phases"][1]["epochs"] = 1000;
    CHECK(config_from(j).effective_last_k() == 100);
  }

  TEST_CASE("invalid documents raise ConfigError") {
    CHECK_THROWS_AS(parse_config("{not json"), ConfigError);

    json j = base_config();
    j["surprise"] = 1;
    CHECK_THROWS_AS(config_from(j), ConfigError);

    j = base_config();
    j["phases"][0]["epochs"] = 0;
    CHECK_THROWS_AS(config_from(j), ConfigError);

    j = base_config();
    j["protocol"] = "telepathy";
    CHECK_THROWS_AS(config_from(j), ConfigError);

    j = base_config();
    j["phases"][1]["data_source"] = "pretrain_half";
    CHECK_THROWS_AS(config_from(j), ConfigError);

    j = base_config();
    j["phases"].erase(0);
    CHECK_THROWS_AS(config_from(j), ConfigError);

    j = base_config();
    j["last_k"] = 5;
    CHECK_THROWS_AS(config_from(j), ConfigError);

    j = base_config();
    j["phases"][0]["optimizer"]["lr"] = -1;
    CHECK_THROWS_AS(config_from(j), ConfigError);

    CHECK_THROWS_AS(load_config(scratch("missing.json")), Error);
  }

  TEST_CASE("shipped configs parse") {
    std::size_t count = 0;
    for (const auto& entry : fs::directory_iterator(fs::path(PLASBENCH_SOURCE_DIR) / "configs")) {
      if (entry.path().extension() != ".json") continue;
      CAPTURE(entry.path().string());
      CHECK_NOTHROW(load_config(entry.path()));
      ++count;
    }
    CHECK(count >= 7);
  }

  TEST_CASE("PLASBENCH_SEED overrides the master seed") {
    ExperimentConfig cfg = config_from(base_config());
    ::setenv("PLASBENCH_SEED", "12345", 1);
    apply_environment(cfg);
    CHECK(cfg.master_seed == 12345);
    ::setenv("PLASBENCH_SEED", "twelve", 1);
    CHECK_THROWS_AS(apply_environment(cfg), ConfigError);
    ::unsetenv("PLASBENCH_SEED");
    apply_environment(cfg);
    CHECK(cfg.master_seed == 12345);
  }
}

TEST_SUITE("training") {
  TEST_CASE("separable blobs are fit exactly") {
    SyntheticSpec s;
    s.num_classes = 3;
    s.per_class = 40;
    s.input_dim = 6;
    s.example_shape = {1, 1, 6};
    s.margin = 12.0;
    s.noise_std = 0.5;
    s.seed = 2;
    const LabeledDataset data = make_synthetic(s);
    ModelConfig m;
    m.kind = ModelKind::mlp;
    m.num_classes = 3;
    m.input_shape = {1, 1, 6};
    m.hidden_sizes = {16};
    Network<float> net = Network<float>::build(m, 1);
    OptimizerState<float> state;
    PhaseSpec phase;
    phase.name = "fit";
    phase.epochs = 20;
    phase.optimizer.kind = OptimizerKind::adam;
    phase.optimizer.lr = 0.01;
    PhaseData pd;
    pd.train = &data;
    pd.test = &data;
    pd.indices.resize(data.size());
    std::iota(pd.indices.begin(), pd.indices.end(), std::size_t{0});
    TrainSettings settings;
    settings.batch_size = 16;
    RunRecord rec;
    CHECK(run_phase(net, state, phase, pd, settings, 3, rec));
    REQUIRE(rec.series.size() == 20);
    CHECK(rec.series.back().train_acc == 1.0);
    CHECK(rec.series.back().step == 20 * 8);
    CHECK(evaluate_accuracy(net, data) == 1.0);
  }

  TEST_CASE("a phase with optimizer reset behaves like a fresh optimizer") {
    const ExperimentConfig cfg = config_from(base_config());
    const Corpus corpus = load_corpus(cfg);
    PhaseData pd;
    pd.train = &corpus.train;
    pd.test = &corpus.test;
    pd.indices.resize(corpus.train.size());
    std::iota(pd.indices.begin(), pd.indices.end(), std::size_t{0});
    TrainSettings settings;
    settings.batch_size = 32;

    Network<float> a = Network<float>::build(cfg.model, 4);
    OptimizerState<float> carried;
    RunRecord rec_a, rec_b;
    run_phase(a, carried, cfg.phases[0], pd, settings, 1, rec_a);
    Network<float> b = a;
    OptimizerState<float> fresh;
    run_phase(a, carried, cfg.phases[1], pd, settings, 2, rec_a);
    run_phase(b, fresh, cfg.phases[1], pd, settings, 2, rec_b);
    CHECK(a.flat_parameters() == b.flat_parameters());
    CHECK(carried.step_count == fresh.step_count);
  }

  TEST_CASE("a huge learning rate diverges and is excluded") {
    json j = base_config();
    j["phases"][1]["optimizer"] = {{"kind", "sgd"}, {"lr", 1e30}};
    j["max_diverged_runs"] = 10;
    const ExperimentResult r = run(j);
    CHECK(r.diverged_runs > 0);
    for (const RunRecord& run : r.runs) {
      if (run.diverged()) CHECK_FALSE(run.divergence->message.empty());
    }
  }
}

TEST_SUITE("protocols") {
  TEST_CASE("every run spends exactly its step budget") {
    const ExperimentResult r = run(base_config());
    CHECK(r.runs.size() == 4);
    for (const RunRecord& run : r.runs) {
      CHECK(run.total_steps == run.expected_steps);
      CHECK(run.total_steps > 0);
    }
    // 120 examples, batch 32: fresh tunes 4 epochs of 4 steps, warm adds 3 of 2.
    CHECK(find_run(r, "fresh/baseline/seed=0").total_steps == 16);
    CHECK(find_run(r, "warm/pretrain_epochs=3/seed=0").total_steps == 22);
    const GapReport* gap = r.find_gap("pretrain_epochs=3");
    REQUIRE(gap != nullptr);
    CHECK(gap->warm_values.size() == 2);
    CHECK(gap->fresh_values.size() == 2);
  }

  TEST_CASE("zero pretraining with matched seeds has zero gap") {
    json j = base_config();
    j["pretrain_epochs"] = {0, 3};
    j["match_arm_seeds"] = true;
    const ExperimentResult r = run(j);
    const GapReport* gap = r.find_gap("pretrain_epochs=0");
    REQUIRE(gap != nullptr);
    CHECK(gap->gap == 0.0);
    CHECK(same_series(find_run(r, "warm/pretrain_epochs=0/seed=1"), find_run(r, "fresh/baseline/seed=1")));
  }

  TEST_CASE("multistage with no stages is the fresh baseline") {
    json j = base_config();
    j["protocol"] = "multistage";
    j["n_stages"] = {0, 2};
    j["ratios"] = {0.5};
    j["phases"][0]["data_source"] = "full";
    const ExperimentResult r = run(j);
    for (std::uint64_t seed : {0, 1}) {
      const std::string s = "/seed=" + std::to_string(seed);
      CHECK(same_series(find_run(r, "multistage/n=0" + s), find_run(r, "fresh/baseline" + s)));
    }
    CHECK(r.find_gap("n=0")->gap == 0.0);
    CHECK(r.find_arm("n=2/r=0.5", "multistage") != nullptr);
  }

  TEST_CASE("a one-by-one learning-rate grid is a warm start") {
    const ExperimentResult warm = run(base_config());
    json j = base_config();
    j["protocol"] = "lr_grid";
    j["pretrain_lrs"] = {0.01};
    j["tune_lrs"] = {0.01};
    const ExperimentResult grid = run(j);
    for (std::uint64_t seed : {0, 1}) {
      const std::string s = "/seed=" + std::to_string(seed);
      CHECK(same_series(find_run(grid, "warm/lr_p=0.01/lr_t=0.01" + s), find_run(warm, "warm/pretrain_epochs=3" + s)));
      CHECK(same_series(find_run(grid, "fresh/lr_t=0.01" + s), find_run(warm, "fresh/baseline" + s)));
    }
    CHECK(grid.find_gap("lr_p=0.01/lr_t=0.01")->gap == doctest::Approx(warm.find_gap("pretrain_epochs=3")->gap));
  }

  TEST_CASE("resetting no groups is a warm start") {
    const ExperimentResult warm = run(base_config());
    json j = base_config();
    j["protocol"] = "reset";
    j["reset_group_sets"] = {json::array(), {5, 6}};
    const ExperimentResult reset = run(j);
    for (std::uint64_t seed : {0, 1}) {
      const std::string s = "/seed=" + std::to_string(seed);
      CHECK(same_series(find_run(reset, "reset/groups=none" + s), find_run(warm, "warm/pretrain_epochs=3" + s)));
      CHECK_FALSE(
          same_series(find_run(reset, "reset/groups=5_6" + s), find_run(warm, "warm/pretrain_epochs=3" + s)));
    }
  }

  TEST_CASE("blending and architecture sweeps produce keyed arms") {
    json j = base_config();
    j["protocol"] = "blending";
    j["gammas"] = {0.8};
    j["seeds"] = {0};
    ExperimentResult r = run(j);
    REQUIRE(r.find_arm("gamma=0.8", "blending") != nullptr);
    CHECK(r.find_gap("gamma=0.8") != nullptr);

    j = base_config();
    j["protocol"] = "arch_sweep";
    j["seeds"] = {0};
    j["model"] = {{"kind", "cnn"}, {"num_classes", 4}, {"input_shape", {1, 4, 4}}, {"hidden_sizes", {8}}};
    j["widths"] = {2, 3};
    j["depths"] = {1};
    r = run(j);
    CHECK(r.find_gap("w=2/d=1") != nullptr);
    CHECK(r.find_gap("w=3/d=1") != nullptr);
  }

  TEST_CASE("parallel workers reproduce the serial result") {
    const ExperimentResult a = run(base_config(), 1), b = run(base_config(), 3);
    REQUIRE(a.runs.size() == b.runs.size());
    for (std::size_t i = 0; i < a.runs.size(); ++i) {
      CHECK(a.runs[i].run_id == b.runs[i].run_id);
      CHECK(same_series(a.runs[i], b.runs[i]));
    }
  }
}

TEST_SUITE("reporting") {
  TEST_CASE("reports are byte-identical across reruns and recompute exactly") {
    json j = base_config();
    j["probes"] = {{"kinds", {"gradient_noise", "sharpness"}}, {"probe_batch", 16}, {"batch_size", 8},
                   {"num_batches", 3}, {"max_iters", 3}};
    const fs::path d1 = scratch("rep1"), d2 = scratch("rep2");
    emit_report(run(j), d1);
    emit_report(run(j), d2);
    for (const char* name : {"metrics.csv", "probes.csv", "summary.json", "summary.csv"}) {
      CAPTURE(name);
      CHECK(fs::exists(d1 / name));
      CHECK(slurp(d1 / name) == slurp(d2 / name));
    }
    const std::string metrics = slurp(d1 / "metrics.csv");
    CHECK(metrics.substr(0, metrics.find('\n')) == kMetricsHeader);
    const std::string probes = slurp(d1 / "probes.csv");
    CHECK(probes.substr(0, probes.find('\n')) == kProbesHeader);
    CHECK(probes.find("sharpness") != std::string::npos);
    CHECK(probes.find("gradient_noise") != std::string::npos);

    const ReportCheck check = recompute_report(d1);
    CHECK(check.compared > 0);
    CHECK(check.max_abs_difference <= 1e-9);

    const json summary = json::parse(slurp(d1 / "summary.json"));
    const json& gap = summary.at("gaps").at(0);
    for (const char* key : {"warm_mean", "warm_std", "fresh_mean", "fresh_std", "gap", "warm_values", "fresh_values"})
      CHECK(gap.contains(key));
    fs::remove_all(d1);
    fs::remove_all(d2);
  }

  TEST_CASE("tampered metrics are detected") {
    const fs::path d = scratch("tamper");
    emit_report(run(base_config()), d);
    std::string metrics = slurp(d / "metrics.csv");
    const std::size_t line = metrics.rfind('\n', metrics.size() - 2);
    const std::size_t field = metrics.find(",tune,", line);
    REQUIRE(field != std::string::npos);
    // Flip the final test accuracy of the last run to something implausible.
    std::vector<std::string> cells;
    std::stringstream row(metrics.substr(line + 1));
    for (std::string c; std::getline(row, c, ',');) cells.push_back(c);
    cells[9] = "0.123";
    std::string rebuilt;
    for (std::size_t i = 0; i < cells.size(); ++i) rebuilt += (i ? "," : "") + cells[i];
    metrics = metrics.substr(0, line + 1) + rebuilt;
    std::ofstream(d / "metrics.csv", std::ios::trunc) << metrics;
    CHECK(recompute_report(d).max_abs_difference > 1e-3);
    fs::remove_all(d);
  }

  TEST_CASE("empty results and unknown formats") {
    ExperimentResult empty;
    CHECK_THROWS_AS(emit_report(empty, scratch("empty")), ContractError);
    CHECK(parse_report_format("json") == ReportFormat::json);
    CHECK_THROWS_AS(parse_report_format("xml"), ConfigError);
  }
}
