#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "plasbench/dataset.hpp"
#include "plasbench/model_config.hpp"
#include "plasbench/network.hpp"
#include "plasbench/optimizer.hpp"
#include "plasbench/probes.hpp"
#include "plasbench/sampler.hpp"

namespace plasbench {

// --- configuration --------------------------------------------------------------

enum class Protocol { warm_start, fresh, blending, multistage, reset, lr_grid, arch_sweep };
std::string to_string(Protocol protocol);
Protocol parse_protocol(const std::string& name);

enum class DataSource { full, pretrain_half, stage, blending };
std::string to_string(DataSource source);

/// One training phase. An epoch is ceil(|source|/batch) steps for subset
/// sources and ceil(|full set|/batch) steps for blending.
struct PhaseSpec {
  std::string name;
  DataSource data_source = DataSource::full;
  std::size_t stage_index = 0;  // 1-based, stage sources only
  double blending_gamma = 0.8;  // blending source only
  double blending_exponent_scale = 50.0;
  std::size_t epochs = 1;
  OptimizerConfig optimizer;
  bool reset_optimizer_state_at_start = true;
  std::set<int> reset_groups_at_start;

  void validate() const;
};

struct DatasetConfig {
  std::string name = "synthetic";  // synthetic | mnist | cifar10
  // synthetic
  SyntheticSpec synthetic;
  bool synthetic_seed_given = false;
  std::size_t test_per_class = 100;
  // mnist
  std::string train_images, train_labels, test_images, test_labels;
  // cifar10
  std::string dir;
  // 0 keeps every example
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  bool standardize = false;
};

struct ProbeConfig {
  bool gradient_noise = false;
  bool sharpness = false;
  std::size_t every_epochs = 0;  // 0: only at the end of each phase
  std::size_t batch_size = 128;
  std::size_t num_batches = 8;
  std::size_t probe_batch = 512;
  PowerIterationOptions power{20, 1e-6, 1e-3, 0x5eed};

  bool any() const noexcept { return gradient_noise || sharpness; }
};

/// Field names mirror the JSON document accepted by parse_config.
struct ExperimentConfig {
  Protocol protocol = Protocol::warm_start;
  std::string name = "experiment";
  std::uint64_t master_seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8};
  DatasetConfig dataset;
  ModelConfig model;
  std::size_t batch_size = 128;
  std::vector<PhaseSpec> phases;
  std::size_t eval_every_epochs = 1;
  std::size_t last_k = 0;  // 0: min(100, max(1, evaluations/5))
  std::size_t eval_batch = 1000;
  std::size_t max_diverged_runs = 0;
  bool record_wallclock = false;
  bool match_arm_seeds = false;
  bool save_checkpoints = false;

  // warm_start
  std::vector<std::size_t> pretrain_epochs;
  // blending
  std::vector<double> gammas{0.5, 0.8, 0.9, 0.99};
  double exponent_scale = 50.0;
  // multistage
  std::vector<std::size_t> n_stages{1, 2, 4, 8};
  std::vector<double> ratios{1.0};
  std::size_t epochs_per_stage = 0;  // 0: epochs of the first phase
  bool reset_optimizer_between_stages = true;
  // reset
  std::vector<std::set<int>> reset_group_sets;
  // lr_grid
  std::vector<double> pretrain_lrs;
  std::vector<double> tune_lrs;
  // arch_sweep
  std::vector<std::size_t> widths;
  std::vector<std::size_t> depths;

  ProbeConfig probes;

  /// The final (tuning) phase.
  const PhaseSpec& tune_phase() const { return phases.back(); }
  /// Evaluated epochs of the tuning phase.
  std::size_t tune_evaluations() const;
  std::size_t effective_last_k() const;
  /// Throws ConfigError on any violated constraint.
  void validate() const;
};

ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);

/// PLASBENCH_SEED, when set, replaces master_seed. ConfigError when the
/// value is not an unsigned integer.
void apply_environment(ExperimentConfig& config);

// --- records ----------------------------------------------------------------------

struct EpochMetrics {
  std::string phase;
  std::size_t epoch = 0;   // 1-based within the phase
  std::uint64_t step = 0;  // cumulative optimizer steps in the run
  double train_loss = 0;
  double train_acc = 0;
  std::optional<double> test_acc;
  double lr = 0;
  std::optional<double> wallclock_s;
};

struct ProbeRecord {
  std::string phase;
  std::size_t epoch = 0;
  std::string kind;
  double value = 0;
  std::string detail_json;
};

struct DivergenceRecord {
  std::string phase;
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  std::string message;
};

struct RunRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string protocol;
  std::string arm;
  std::string sweep_key;
  std::string baseline_key;  // empty for baseline arms
  std::vector<EpochMetrics> series;
  std::vector<ProbeRecord> probes;
  std::vector<std::string> checkpoints;
  std::uint64_t total_steps = 0;
  std::uint64_t expected_steps = 0;
  std::optional<DivergenceRecord> divergence;
  std::map<std::string, double> stats;

  bool diverged() const noexcept { return divergence.has_value(); }
  /// Test accuracies recorded in the run's last phase, in epoch order.
  std::vector<double> final_test_series() const;
};

/// Mean of the final K entries. ConfigError when K is 0 or exceeds the
/// series length.
double last_k_mean(std::span<const double> series, std::size_t k);

struct ArmSummary {
  std::string sweep_key;
  std::string arm;
  std::size_t n = 0;
  std::size_t diverged = 0;
  double mean = 0;
  double std = 0;  // sample standard deviation, 0 when n < 2
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;
};

/// gap = warm_mean − fresh_mean; negative means the pretrained arm
/// generalises worse.
struct GapReport {
  std::string sweep_key;
  std::string arm;
  std::string baseline_key;
  double warm_mean = 0;
  double warm_std = 0;
  double fresh_mean = 0;
  double fresh_std = 0;
  double gap = 0;
  std::vector<double> warm_values;
  std::vector<double> fresh_values;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::size_t last_k = 0;
  std::vector<RunRecord> runs;
  std::vector<ArmSummary> arms;
  std::vector<GapReport> gaps;
  std::size_t diverged_runs = 0;

  const ArmSummary* find_arm(std::string_view sweep_key, std::string_view arm) const;
  const GapReport* find_gap(std::string_view sweep_key) const;
};

/// Groups runs by (sweep_key, arm) in first-appearance order, excluding
/// diverged runs from means, and pairs every non-baseline arm with its
/// baseline.
void summarize(ExperimentResult& result);

// --- training -------------------------------------------------------------------

struct Corpus {
  LabeledDataset train;
  LabeledDataset test;
};

/// Loads or generates the train and test sets described by the config.
Corpus load_corpus(const ExperimentConfig& config);

/// Where a phase draws its batches from.
struct PhaseData {
  const LabeledDataset* train = nullptr;
  const LabeledDataset* test = nullptr;
  std::vector<std::size_t> indices;          // subset sources
  std::vector<std::size_t> pretrain_indices;  // blending source
};

struct TrainSettings {
  std::size_t batch_size = 128;
  std::size_t eval_every_epochs = 1;
  std::size_t eval_batch = 1000;
  bool record_wallclock = false;
  ProbeConfig probes;
  std::uint64_t reset_seed = 0;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
};

/// Runs one phase, appending one EpochMetrics per epoch to the record.
/// Applies the phase's optimizer-state and group resets first. Returns
/// false when a non-finite loss aborted the run; the divergence is stored
/// in the record.
bool run_phase(Network<float>& net, OptimizerState<float>& state, const PhaseSpec& phase, const PhaseData& data,
               const TrainSettings& settings, std::uint64_t sampler_seed, RunRecord& record);

/// Fraction of correctly classified examples, eval mode.
double evaluate_accuracy(Network<float>& net, const LabeledDataset& data, std::size_t eval_batch = 1000);

struct RunOptions {
  std::size_t jobs = 1;
  std::filesystem::path checkpoint_dir;
};

ExperimentResult run_warm_start(const ExperimentConfig& config, const Corpus& corpus, const RunOptions& options = {});
ExperimentResult run_fresh(const ExperimentConfig& config, const Corpus& corpus, const RunOptions& options = {});
ExperimentResult run_blending(const ExperimentConfig& config, const Corpus& corpus, const RunOptions& options = {});
ExperimentResult run_multistage(const ExperimentConfig& config, const Corpus& corpus, const RunOptions& options = {});
ExperimentResult run_reset(const ExperimentConfig& config, const Corpus& corpus, const RunOptions& options = {});
ExperimentResult run_lr_grid(const ExperimentConfig& config, const Corpus& corpus, const RunOptions& options = {});
ExperimentResult run_arch_sweep(const ExperimentConfig& config, const Corpus& corpus, const RunOptions& options = {});

/// Dispatches on config.protocol.
ExperimentResult run_experiment(const ExperimentConfig& config, const Corpus& corpus, const RunOptions& options = {});

// --- reporting --------------------------------------------------------------------

inline constexpr std::string_view kMetricsHeader =
    "run_id,seed,protocol,sweep_key,phase,epoch,step,train_loss,train_acc,test_acc,lr,wallclock_s";
inline constexpr std::string_view kProbesHeader =
    "run_id,seed,protocol,sweep_key,phase,epoch,probe_kind,value,detail_json";

enum class ReportFormat { csv, json };
ReportFormat parse_report_format(const std::string& name);

/// Writes metrics.csv, probes.csv, summary.json and summary.csv into
/// out_dir. ContractError when there are no runs; IoError when a file
/// cannot be written.
void emit_report(const ExperimentResult& result, const std::filesystem::path& out_dir);

/// Summary tables rendered for output.
std::string format_summary(const ExperimentResult& result, ReportFormat format);

/// Re-derives per-run last-K means from metrics.csv of a run directory and
/// compares them with summary.json.
struct ReportCheck {
  ExperimentResult recomputed;  // runs carry only final test series
  double max_abs_difference = 0;
  std::size_t compared = 0;
};
ReportCheck recompute_report(const std::filesystem::path& run_dir);

}  // namespace plasbench
