#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "plasbench/checkpoint.hpp"
#include "plasbench/errors.hpp"
#include "plasbench/harness.hpp"
#include "plasbench/rng.hpp"

namespace plasbench {
namespace {

std::size_t argmax_row(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

std::size_t count_correct(const Tensor<float>& logits, std::span<const int> labels) {
  const std::size_t classes = logits.shape()[1];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::span<const float> row(logits.raw() + i * classes, classes);
    if (static_cast<int>(argmax_row(row)) == labels[i]) ++correct;
  }
  return correct;
}

void run_probes(Network<float>& net, const PhaseData& data, const std::vector<std::size_t>& view,
                const ProbeConfig& cfg, std::uint64_t seed, const std::string& phase, std::size_t epoch,
                RunRecord& record) {
  using nlohmann::json;
  if (cfg.gradient_noise) {
    NetworkLoss<float> objective(net, *data.train, view, Mode::train);
    Rng rng(derive_seed(derive_seed(seed, "noise"), epoch));
    const std::size_t batch = std::min(cfg.batch_size, view.size());
    const NoiseEstimate est = gradient_noise(objective, batch, cfg.num_batches, rng);
    const json detail = {{"num_batches_M", est.num_batches_M},
                         {"batch_size", est.batch_size},
                         {"mean_grad_norm_sq", est.mean_grad_norm_sq},
                         {"trace_variance_stderr", est.trace_variance_stderr},
                         {"relative_noise", est.relative_noise},
                         {"estimator", "trace_of_minibatch_gradient_covariance"}};
    record.probes.push_back({phase, epoch, "gradient_noise", est.trace_variance, detail.dump()});
  }
  if (cfg.sharpness) {
    std::vector<std::size_t> held_out(data.test->size());
    std::iota(held_out.begin(), held_out.end(), std::size_t{0});
    Rng pick(derive_seed(seed, "probe_batch"));
    shuffle(held_out.begin(), held_out.end(), pick);
    held_out.resize(std::min(cfg.probe_batch, held_out.size()));
    std::sort(held_out.begin(), held_out.end());

    Network<double> wide = convert_network<double>(net);
    NetworkLoss<double> objective(wide, *data.test, held_out, Mode::train);
    const SharpnessEstimate est = top_eigenvalue(objective, cfg.power);
    const json detail = {{"iterations_used", est.iterations_used},
                         {"converged", est.converged},
                         {"negative", est.negative},
                         {"probe_batch", held_out.size()},
                         {"rayleigh_history", est.rayleigh_history}};
    record.probes.push_back({phase, epoch, "sharpness", est.top_eigenvalue, detail.dump()});
  }
}

}  // namespace

std::vector<double> RunRecord::final_test_series() const {
  std::vector<double> out;
  if (series.empty()) return out;
  const std::string& last = series.back().phase;
  for (const EpochMetrics& m : series) {
    if (m.phase == last && m.test_acc) out.push_back(*m.test_acc);
  }
  return out;
}

double last_k_mean(std::span<const double> series, std::size_t k) {
  if (k == 0) throw ConfigError("last_k_mean: K must be at least 1");
  if (k > series.size()) {
    throw ConfigError("last_k_mean: K = " + std::to_string(k) + " exceeds series length " +
                      std::to_string(series.size()));
  }
  double sum = 0;
  for (std::size_t i = series.size() - k; i < series.size(); ++i) sum += series[i];
  return sum / static_cast<double>(k);
}

double evaluate_accuracy(Network<float>& net, const LabeledDataset& data, std::size_t eval_batch) {
  if (data.size() == 0) throw ContractError("evaluate_accuracy: empty dataset");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += eval_batch) {
    const std::size_t end = std::min(data.size(), start + eval_batch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<float> logits = net.predict(data.gather<float>(idx));
    const std::vector<int> labels = data.gather_labels(idx);
    correct += count_correct(logits, labels);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

bool run_phase(Network<float>& net, OptimizerState<float>& state, const PhaseSpec& phase, const PhaseData& data,
               const TrainSettings& settings, std::uint64_t sampler_seed, RunRecord& record) {
  phase.validate();
  if (data.train == nullptr || data.test == nullptr) throw ContractError("run_phase: missing datasets");
  const bool blending = phase.data_source == DataSource::blending;
  std::vector<std::size_t> view = data.indices;
  if (blending || view.empty()) {
    view.resize(data.train->size());
    std::iota(view.begin(), view.end(), std::size_t{0});
  }

  if (phase.reset_optimizer_state_at_start) reset_state(state);
  if (!phase.reset_groups_at_start.empty()) {
    net.reset_groups(phase.reset_groups_at_start, derive_seed(settings.reset_seed, phase.name));
  }

  const std::size_t batch = settings.batch_size;
  const std::size_t steps_per_epoch = (view.size() + batch - 1) / batch;
  record.expected_steps += static_cast<std::uint64_t>(phase.epochs) * steps_per_epoch;

  std::optional<EpochSampler> epoch_sampler;
  BlendingSchedule schedule;
  Rng blend_rng(sampler_seed);
  if (blending) {
    schedule.gamma = phase.blending_gamma;
    schedule.exponent_scale = phase.blending_exponent_scale;
    schedule.total_steps = static_cast<std::uint64_t>(phase.epochs) * steps_per_epoch;
    schedule.pretrain_indices = data.pretrain_indices;
    schedule.full_indices = view;
    schedule.validate();
  } else {
    epoch_sampler.emplace(view, batch, sampler_seed);
  }

  const auto start = std::chrono::steady_clock::now();
  std::size_t full_draws = 0;
  std::size_t total_draws = 0;
  double expected_full = 0;
  std::uint64_t phase_step = 0;

  for (std::size_t epoch = 1; epoch <= phase.epochs; ++epoch) {
    double loss_sum = 0;
    std::size_t correct = 0;
    std::size_t seen = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      ++phase_step;
      std::vector<std::size_t> idx;
      if (blending) {
        expected_full += blending_probability(schedule, phase_step) * static_cast<double>(batch);
        idx = sample_blending_batch(schedule, batch, phase_step, blend_rng, &full_draws);
        total_draws += idx.size();
      } else {
        idx = epoch_sampler->next_batch();
      }
      const Tensor<float> x = data.train->gather<float>(idx);
      const std::vector<int> labels = data.train->gather_labels(idx);

      net.clear_grads();
      Tape<float> tape;
      const Var logits = net.forward(tape, x, Mode::train);
      const Var loss = softmax_cross_entropy(tape, logits, labels);
      const double value = static_cast<double>(tape.value(loss).item());
      if (!std::isfinite(value)) {
        record.divergence = DivergenceRecord{phase.name, epoch, record.total_steps + 1,
                                             "non-finite training loss (" + std::to_string(value) + ")"};
        return false;
      }
      tape.backward(loss);
      step(net, state, phase.optimizer);
      ++record.total_steps;

      loss_sum += value * static_cast<double>(idx.size());
      correct += count_correct(tape.value(logits), labels);
      seen += idx.size();
    }

    EpochMetrics m;
    m.phase = phase.name;
    m.epoch = epoch;
    m.step = record.total_steps;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    m.lr = phase.optimizer.lr;
    if (epoch % settings.eval_every_epochs == 0 || epoch == phase.epochs) {
      m.test_acc = evaluate_accuracy(net, *data.test, settings.eval_batch);
    }
    if (settings.record_wallclock) {
      m.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    record.series.push_back(std::move(m));

    const ProbeConfig& probes = settings.probes;
    if (probes.any() && ((probes.every_epochs != 0 && epoch % probes.every_epochs == 0) || epoch == phase.epochs)) {
      run_probes(net, data, view, probes, derive_seed(sampler_seed, "probes"), phase.name, epoch, record);
    }
  }

  if (blending) {
    record.stats[phase.name + ".full_draws"] = static_cast<double>(full_draws);
    record.stats[phase.name + ".total_draws"] = static_cast<double>(total_draws);
    record.stats[phase.name + ".realized_full_fraction"] =
        static_cast<double>(full_draws) / static_cast<double>(total_draws);
    record.stats[phase.name + ".expected_full_fraction"] = expected_full / static_cast<double>(total_draws);
    record.stats[phase.name + ".final_p"] = blending_probability(schedule, schedule.total_steps);
  }
  record.stats[phase.name + ".final_train_acc"] = record.series.back().train_acc;

  if (!settings.checkpoint_dir.empty()) {
    std::string file = record.run_id + "_" + phase.name + ".ckpt";
    std::replace(file.begin(), file.end(), '/', '_');
    const std::filesystem::path path = settings.checkpoint_dir / file;
    save_checkpoint(path, net, &state);
    record.checkpoints.push_back(path.string());
  }
  return true;
}

Corpus load_corpus(const ExperimentConfig& config) {
  const DatasetConfig& d = config.dataset;
  Corpus corpus;
  if (d.name == "synthetic") {
    SyntheticSpec spec = d.synthetic;
    if (!d.synthetic_seed_given) spec.seed = derive_seed(config.master_seed, "data");
    auto [train, test] = make_synthetic_split(spec, d.test_per_class);
    corpus.train = std::move(train);
    corpus.test = std::move(test);
  } else if (d.name == "mnist") {
    if (d.train_images.empty() || d.train_labels.empty() || d.test_images.empty() || d.test_labels.empty()) {
      throw ConfigError("mnist dataset needs train_images, train_labels, test_images and test_labels");
    }
    corpus.train = load_idx(d.train_images, d.train_labels);
    corpus.test = load_idx(d.test_images, d.test_labels);
  } else if (d.name == "cifar10") {
    if (d.dir.empty()) throw ConfigError("cifar10 dataset needs dir");
    corpus.train = load_cifar10_binary(d.dir);
    corpus.test = load_cifar10_test(d.dir);
  } else {
    throw ConfigError("unknown dataset '" + d.name + "'");
  }

  auto limit = [](LabeledDataset& data, std::size_t n) {
    if (n == 0 || n >= data.size()) return;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::vector<int> classes = data.classes;
    data = subset(data, idx, data.name);
    data.classes = classes;
  };
  limit(corpus.train, d.train_limit);
  limit(corpus.test, d.test_limit);

  if (d.standardize) {
    const ChannelStats stats = channel_stats(corpus.train);
    standardize(corpus.train, stats);
    standardize(corpus.test, stats);
  }

  const ModelConfig& m = config.model;
  for (const LabeledDataset* data : {&corpus.train, &corpus.test}) {
    if (shape_numel(data->example_shape) != m.input_numel()) {
      throw ConfigError("dataset example shape " + shape_string(data->example_shape) +
                        " does not match model input_shape");
    }
    for (int c : data->classes) {
      if (c < 0 || static_cast<std::size_t>(c) >= m.num_classes) {
        throw ConfigError("dataset class " + std::to_string(c) + " exceeds model num_classes " +
                          std::to_string(m.num_classes));
      }
    }
  }
  if (m.kind != ModelKind::mlp) {
    const Shape want{m.input_shape[0], m.input_shape[1], m.input_shape[2]};
    if (corpus.train.example_shape != want) {
      throw ConfigError("dataset example shape " + shape_string(corpus.train.example_shape) +
                        " does not match model input_shape " + shape_string(want));
    }
  }
  return corpus;
}

const ArmSummary* ExperimentResult::find_arm(std::string_view sweep_key, std::string_view arm) const {
  for (const ArmSummary& a : arms) {
    if (a.sweep_key == sweep_key && a.arm == arm) return &a;
  }
  return nullptr;
}

const GapReport* ExperimentResult::find_gap(std::string_view sweep_key) const {
  for (const GapReport& g : gaps) {
    if (g.sweep_key == sweep_key) return &g;
  }
  return nullptr;
}

void summarize(ExperimentResult& result) {
  result.arms.clear();
  result.gaps.clear();
  result.diverged_runs = 0;
  std::map<std::pair<std::string, std::string>, std::string> baselines;

  for (const RunRecord& run : result.runs) {
    auto it = std::find_if(result.arms.begin(), result.arms.end(), [&](const ArmSummary& a) {
      return a.sweep_key == run.sweep_key && a.arm == run.arm;
    });
    if (it == result.arms.end()) {
      result.arms.push_back(ArmSummary{run.sweep_key, run.arm, 0, 0, 0, 0, {}, {}});
      it = std::prev(result.arms.end());
      baselines[{run.sweep_key, run.arm}] = run.baseline_key;
    }
    if (run.diverged()) {
      ++it->diverged;
      ++result.diverged_runs;
      continue;
    }
    it->values.push_back(last_k_mean(run.final_test_series(), result.last_k));
    it->seeds.push_back(run.seed);
  }

  for (ArmSummary& a : result.arms) {
    a.n = a.values.size();
    if (a.n == 0) continue;
    a.mean = std::accumulate(a.values.begin(), a.values.end(), 0.0) / static_cast<double>(a.n);
    if (a.n >= 2) {
      double ss = 0;
      for (double v : a.values) ss += (v - a.mean) * (v - a.mean);
      a.std = std::sqrt(ss / static_cast<double>(a.n - 1));
    }
  }

  for (const ArmSummary& a : result.arms) {
    const std::string& base = baselines[{a.sweep_key, a.arm}];
    if (base.empty()) continue;
    const ArmSummary* fresh = result.find_arm(base, "fresh");
    if (fresh == nullptr) continue;
    GapReport g;
    g.sweep_key = a.sweep_key;
    g.arm = a.arm;
    g.baseline_key = base;
    g.warm_mean = a.mean;
    g.warm_std = a.std;
    g.fresh_mean = fresh->mean;
    g.fresh_std = fresh->std;
    g.gap = a.mean - fresh->mean;
    g.warm_values = a.values;
    g.fresh_values = fresh->values;
    result.gaps.push_back(std::move(g));
  }
}

}  // namespace plasbench
