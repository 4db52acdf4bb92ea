#include <atomic>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>

#include "plasbench/errors.hpp"
#include "plasbench/harness.hpp"
#include "plasbench/rng.hpp"
#include "plasbench/stage_plan.hpp"

namespace plasbench {
namespace {

using Job = std::function<std::vector<RunRecord>()>;

// Jobs run on up to `workers` threads; results keep job order.
std::vector<RunRecord> run_jobs(const std::vector<Job>& jobs, std::size_t workers) {
  std::vector<std::vector<RunRecord>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = jobs[i]();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, jobs.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<RunRecord> out;
  for (auto& r : results) {
    for (auto& rec : r) out.push_back(std::move(rec));
  }
  return out;
}

std::string number_key(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string group_key(const std::set<int>& groups) {
  if (groups.empty()) return "groups=none";
  std::string key = "groups=";
  bool first = true;
  for (int g : groups) {
    if (!first) key += "_";
    key += std::to_string(g);
    first = false;
  }
  return key;
}

// Seed tree for one run seed. Arms draw initialization, data order and
// resets from their own subtrees so that adding arms or sweep points never
// changes another arm's stream.
struct SeedTree {
  std::uint64_t root = 0;
  std::uint64_t split = 0;
  std::uint64_t warm = 0;
  std::uint64_t fresh = 0;
};

SeedTree seed_tree(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedTree t;
  t.root = derive_seed(cfg.master_seed, seed);
  t.split = derive_seed(t.root, "split");
  t.warm = derive_seed(t.root, "warm");
  t.fresh = cfg.match_arm_seeds ? t.warm : derive_seed(t.root, "fresh");
  return t;
}

std::uint64_t init_seed(std::uint64_t arm) { return derive_seed(arm, "init"); }
std::uint64_t sampler_seed(std::uint64_t arm, const std::string& phase) {
  return derive_seed(derive_seed(arm, "sampler"), phase);
}
std::uint64_t reset_seed(std::uint64_t arm) { return derive_seed(arm, "reset"); }

struct Context {
  const ExperimentConfig& cfg;
  const Corpus& corpus;
  const RunOptions& options;
};

RunRecord new_record(const Context& ctx, std::uint64_t seed, const std::string& arm, const std::string& sweep_key,
                     const std::string& baseline_key) {
  RunRecord r;
  r.seed = seed;
  r.protocol = to_string(ctx.cfg.protocol);
  r.arm = arm;
  r.sweep_key = sweep_key;
  r.baseline_key = baseline_key;
  r.run_id = arm + "/" + sweep_key + "/seed=" + std::to_string(seed);
  return r;
}

TrainSettings settings_for(const Context& ctx, std::uint64_t arm) {
  TrainSettings s;
  s.batch_size = ctx.cfg.batch_size;
  s.eval_every_epochs = ctx.cfg.eval_every_epochs;
  s.eval_batch = ctx.cfg.eval_batch;
  s.record_wallclock = ctx.cfg.record_wallclock;
  s.probes = ctx.cfg.probes;
  s.reset_seed = reset_seed(arm);
  if (ctx.cfg.save_checkpoints) s.checkpoint_dir = ctx.options.checkpoint_dir;
  return s;
}

PhaseData phase_data(const Context& ctx, const PhaseSpec& phase, const HalfSplit& split, const StagePlan* plan) {
  PhaseData d;
  d.train = &ctx.corpus.train;
  d.test = &ctx.corpus.test;
  switch (phase.data_source) {
    case DataSource::full:
      d.indices = split.full;
      break;
    case DataSource::pretrain_half:
      d.indices = split.pretrain;
      break;
    case DataSource::stage:
      if (plan == nullptr || phase.stage_index > plan->stages.size()) {
        throw ConfigError("phase '" + phase.name + "': stage " + std::to_string(phase.stage_index) +
                          " is not part of the stage plan");
      }
      d.indices = plan->stages[phase.stage_index - 1];
      break;
    case DataSource::blending:
      d.indices = split.full;
      d.pretrain_indices = split.pretrain;
      break;
  }
  return d;
}

// Runs phases in order on an existing network; stops at divergence.
bool train_phases(const Context& ctx, Network<float>& net, OptimizerState<float>& state,
                  std::span<const PhaseSpec> phases, std::uint64_t arm, const HalfSplit& split, const StagePlan* plan,
                  RunRecord& record) {
  const TrainSettings settings = settings_for(ctx, arm);
  for (const PhaseSpec& phase : phases) {
    const PhaseData data = phase_data(ctx, phase, split, plan);
    if (!run_phase(net, state, phase, data, settings, sampler_seed(arm, phase.name), record)) return false;
  }
  return true;
}

void check_budget(const RunRecord& record) {
  if (!record.diverged() && record.total_steps != record.expected_steps) {
    throw ContractError("run " + record.run_id + ": " + std::to_string(record.total_steps) +
                        " optimizer steps, expected " + std::to_string(record.expected_steps));
  }
}

// Trains a freshly initialized network on `phases`.
RunRecord train_arm(const Context& ctx, const ModelConfig& model, std::span<const PhaseSpec> phases,
                    std::uint64_t arm, const HalfSplit& split, const StagePlan* plan, RunRecord record) {
  Network<float> net = Network<float>::build(model, init_seed(arm));
  OptimizerState<float> state;
  train_phases(ctx, net, state, phases, arm, split, plan, record);
  check_budget(record);
  return record;
}

std::vector<PhaseSpec> pretrain_phases(const ExperimentConfig& cfg) {
  return {cfg.phases.begin(), cfg.phases.end() - 1};
}

std::vector<PhaseSpec> tune_only(const ExperimentConfig& cfg) { return {cfg.tune_phase()}; }

ExperimentResult finish(const Context& ctx, std::vector<RunRecord> runs) {
  ExperimentResult result;
  result.config = ctx.cfg;
  result.last_k = ctx.cfg.effective_last_k();
  result.runs = std::move(runs);
  summarize(result);
  return result;
}

Job fresh_job(const Context& ctx, std::uint64_t seed, const ModelConfig& model, const PhaseSpec& tune,
              const std::string& sweep_key) {
  return [&ctx, seed, model, tune, sweep_key] {
    const SeedTree t = seed_tree(ctx.cfg, seed);
    const HalfSplit split = half_split(ctx.corpus.train, t.split);
    const std::vector<PhaseSpec> phases{tune};
    return std::vector<RunRecord>{
        train_arm(ctx, model, phases, t.fresh, split, nullptr, new_record(ctx, seed, "fresh", sweep_key, ""))};
  };
}

void prepare(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate();
  if (cfg.save_checkpoints && !options.checkpoint_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(options.checkpoint_dir, ec);
    if (ec) throw IoError("cannot create " + options.checkpoint_dir.string() + ": " + ec.message());
  }
}

}  // namespace

ExperimentResult run_fresh(const ExperimentConfig& cfg, const Corpus& corpus, const RunOptions& options) {
  prepare(cfg, options);
  const Context ctx{cfg, corpus, options};
  std::vector<Job> jobs;
  for (std::uint64_t seed : cfg.seeds) jobs.push_back(fresh_job(ctx, seed, cfg.model, cfg.tune_phase(), "baseline"));
  return finish(ctx, run_jobs(jobs, options.jobs));
}

ExperimentResult run_warm_start(const ExperimentConfig& cfg, const Corpus& corpus, const RunOptions& options) {
  if (cfg.protocol != Protocol::warm_start) throw ConfigError("run_warm_start: protocol is " + to_string(cfg.protocol));
  prepare(cfg, options);
  const Context ctx{cfg, corpus, options};
  std::vector<std::size_t> sweep = cfg.pretrain_epochs;
  if (sweep.empty()) sweep.push_back(cfg.phases.front().epochs);

  std::vector<Job> jobs;
  for (std::uint64_t seed : cfg.seeds) {
    jobs.push_back(fresh_job(ctx, seed, cfg.model, cfg.tune_phase(), "baseline"));
    for (std::size_t pretrain : sweep) {
      jobs.push_back([&ctx, seed, pretrain] {
        const SeedTree t = seed_tree(ctx.cfg, seed);
        const HalfSplit split = half_split(ctx.corpus.train, t.split);
        std::vector<PhaseSpec> phases = pretrain_phases(ctx.cfg);
        if (pretrain == 0) {
          phases.erase(phases.begin());
        } else {
          phases.front().epochs = pretrain;
        }
        phases.push_back(ctx.cfg.tune_phase());
        const std::string key = "pretrain_epochs=" + std::to_string(pretrain);
        return std::vector<RunRecord>{
            train_arm(ctx, ctx.cfg.model, phases, t.warm, split, nullptr, new_record(ctx, seed, "warm", key, "baseline"))};
      });
    }
  }
  return finish(ctx, run_jobs(jobs, options.jobs));
}

ExperimentResult run_blending(const ExperimentConfig& cfg, const Corpus& corpus, const RunOptions& options) {
  if (cfg.protocol != Protocol::blending) throw ConfigError("run_blending: protocol is " + to_string(cfg.protocol));
  prepare(cfg, options);
  const Context ctx{cfg, corpus, options};
  std::vector<Job> jobs;
  for (std::uint64_t seed : cfg.seeds) {
    jobs.push_back(fresh_job(ctx, seed, cfg.model, cfg.tune_phase(), "baseline"));
    for (double gamma : cfg.gammas) {
      jobs.push_back([&ctx, seed, gamma] {
        const SeedTree t = seed_tree(ctx.cfg, seed);
        const HalfSplit split = half_split(ctx.corpus.train, t.split);
        PhaseSpec phase = ctx.cfg.tune_phase();
        phase.data_source = DataSource::blending;
        phase.blending_gamma = gamma;
        phase.blending_exponent_scale = ctx.cfg.exponent_scale;
        const std::vector<PhaseSpec> phases{phase};
        const std::string key = "gamma=" + number_key(gamma);
        return std::vector<RunRecord>{train_arm(ctx, ctx.cfg.model, phases, t.fresh, split, nullptr,
                                                new_record(ctx, seed, "blending", key, "baseline"))};
      });
    }
  }
  return finish(ctx, run_jobs(jobs, options.jobs));
}

ExperimentResult run_multistage(const ExperimentConfig& cfg, const Corpus& corpus, const RunOptions& options) {
  if (cfg.protocol != Protocol::multistage) {
    throw ConfigError("run_multistage: protocol is " + to_string(cfg.protocol));
  }
  prepare(cfg, options);
  const Context ctx{cfg, corpus, options};

  // Plans depend on the run seed only through its "stages" stream; build
  // them all first so plan errors surface before any training.
  for (std::size_t n : cfg.n_stages) {
    if (n == 0) continue;
    for (double r : cfg.ratios) {
      for (std::uint64_t seed : cfg.seeds) {
        const StagePlan plan = build_stage_plan(corpus.train, n, r, derive_seed(seed_tree(cfg, seed).root, "stages"));
        const StagePlanReport report = verify_stage_plan(plan, corpus.train);
        if (!report.passed()) throw ConsistencyError("stage plan failed verification for n=" + std::to_string(n));
      }
    }
  }

  const PhaseSpec& stage_template = cfg.phases.size() >= 2 ? cfg.phases.front() : cfg.tune_phase();
  const std::size_t epochs_per_stage = cfg.epochs_per_stage != 0 ? cfg.epochs_per_stage : stage_template.epochs;

  std::vector<Job> jobs;
  for (std::uint64_t seed : cfg.seeds) {
    jobs.push_back(fresh_job(ctx, seed, cfg.model, cfg.tune_phase(), "baseline"));
    for (std::size_t n : cfg.n_stages) {
      const std::vector<double> ratios = n == 0 ? std::vector<double>{cfg.ratios.front()} : cfg.ratios;
      for (double r : ratios) {
        jobs.push_back([&ctx, seed, n, r, &stage_template, epochs_per_stage] {
          const SeedTree t = seed_tree(ctx.cfg, seed);
          const HalfSplit split = half_split(ctx.corpus.train, t.split);
          std::optional<StagePlan> plan;
          std::vector<PhaseSpec> phases;
          if (n > 0) {
            plan = build_stage_plan(ctx.corpus.train, n, r, derive_seed(t.root, "stages"));
            for (std::size_t i = 1; i <= n; ++i) {
              PhaseSpec p = stage_template;
              p.name = "stage" + std::to_string(i);
              p.data_source = DataSource::stage;
              p.stage_index = i;
              p.epochs = epochs_per_stage;
              p.reset_groups_at_start.clear();
              p.reset_optimizer_state_at_start = i == 1 || ctx.cfg.reset_optimizer_between_stages;
              phases.push_back(p);
            }
          }
          PhaseSpec final_phase = ctx.cfg.tune_phase();
          if (n > 0) final_phase.reset_optimizer_state_at_start = ctx.cfg.reset_optimizer_between_stages;
          phases.push_back(final_phase);

          const std::string key = n == 0 ? "n=0" : "n=" + std::to_string(n) + "/r=" + number_key(r);
          RunRecord rec = train_arm(ctx, ctx.cfg.model, phases, t.fresh, split, plan ? &*plan : nullptr,
                                    new_record(ctx, seed, "multistage", key, "baseline"));
          for (std::size_t i = 1; i <= n; ++i) {
            const std::string name = "stage" + std::to_string(i);
            auto it = rec.stats.find(name + ".final_train_acc");
            if (it != rec.stats.end()) rec.stats[name + ".reached_full_train_acc"] = it->second >= 1.0 ? 1.0 : 0.0;
            rec.stats[name + ".size"] = static_cast<double>(plan->stages[i - 1].size());
          }
          return std::vector<RunRecord>{std::move(rec)};
        });
      }
    }
  }
  return finish(ctx, run_jobs(jobs, options.jobs));
}

ExperimentResult run_reset(const ExperimentConfig& cfg, const Corpus& corpus, const RunOptions& options) {
  if (cfg.protocol != Protocol::reset) throw ConfigError("run_reset: protocol is " + to_string(cfg.protocol));
  prepare(cfg, options);
  const Context ctx{cfg, corpus, options};
  std::vector<Job> jobs;
  for (std::uint64_t seed : cfg.seeds) {
    jobs.push_back(fresh_job(ctx, seed, cfg.model, cfg.tune_phase(), "baseline"));
    jobs.push_back([&ctx, seed] {
      const SeedTree t = seed_tree(ctx.cfg, seed);
      const HalfSplit split = half_split(ctx.corpus.train, t.split);
      Network<float> pretrained = Network<float>::build(ctx.cfg.model, init_seed(t.warm));
      OptimizerState<float> state;
      RunRecord pre = new_record(ctx, seed, "reset", "pretrain", "");
      const std::vector<PhaseSpec> pre_phases = pretrain_phases(ctx.cfg);
      const bool ok = train_phases(ctx, pretrained, state, pre_phases, t.warm, split, nullptr, pre);

      std::vector<RunRecord> out;
      for (const std::set<int>& groups : ctx.cfg.reset_group_sets) {
        const std::string key = group_key(groups);
        RunRecord rec = new_record(ctx, seed, "reset", key, "baseline");
        rec.series = pre.series;
        rec.probes = pre.probes;
        rec.checkpoints = pre.checkpoints;
        rec.total_steps = pre.total_steps;
        rec.expected_steps = pre.expected_steps;
        rec.divergence = pre.divergence;
        rec.stats = pre.stats;
        if (ok) {
          Network<float> net = pretrained;
          if (!groups.empty()) net.reset_groups(groups, derive_seed(reset_seed(t.warm), key));
          OptimizerState<float> tune_state;
          const std::vector<PhaseSpec> tune = tune_only(ctx.cfg);
          train_phases(ctx, net, tune_state, tune, t.warm, split, nullptr, rec);
        }
        check_budget(rec);
        out.push_back(std::move(rec));
      }
      return out;
    });
  }
  return finish(ctx, run_jobs(jobs, options.jobs));
}

ExperimentResult run_lr_grid(const ExperimentConfig& cfg, const Corpus& corpus, const RunOptions& options) {
  if (cfg.protocol != Protocol::lr_grid) throw ConfigError("run_lr_grid: protocol is " + to_string(cfg.protocol));
  prepare(cfg, options);
  const Context ctx{cfg, corpus, options};
  std::vector<Job> jobs;
  for (std::uint64_t seed : cfg.seeds) {
    for (double lr_t : cfg.tune_lrs) {
      PhaseSpec tune = cfg.tune_phase();
      tune.optimizer.lr = lr_t;
      jobs.push_back(fresh_job(ctx, seed, cfg.model, tune, "lr_t=" + number_key(lr_t)));
    }
    for (double lr_p : cfg.pretrain_lrs) {
      jobs.push_back([&ctx, seed, lr_p] {
        const SeedTree t = seed_tree(ctx.cfg, seed);
        const HalfSplit split = half_split(ctx.corpus.train, t.split);
        std::vector<PhaseSpec> pre_phases = pretrain_phases(ctx.cfg);
        for (PhaseSpec& p : pre_phases) p.optimizer.lr = lr_p;
        Network<float> pretrained = Network<float>::build(ctx.cfg.model, init_seed(t.warm));
        OptimizerState<float> state;
        RunRecord pre = new_record(ctx, seed, "warm", "pretrain", "");
        const bool ok = train_phases(ctx, pretrained, state, pre_phases, t.warm, split, nullptr, pre);

        std::vector<RunRecord> out;
        for (double lr_t : ctx.cfg.tune_lrs) {
          const std::string base = "lr_t=" + number_key(lr_t);
          RunRecord rec = new_record(ctx, seed, "warm", "lr_p=" + number_key(lr_p) + "/" + base, base);
          rec.series = pre.series;
          rec.probes = pre.probes;
          rec.checkpoints = pre.checkpoints;
          rec.total_steps = pre.total_steps;
          rec.expected_steps = pre.expected_steps;
          rec.divergence = pre.divergence;
          rec.stats = pre.stats;
          if (ok) {
            Network<float> net = pretrained;
            OptimizerState<float> tune_state = state;
            std::vector<PhaseSpec> tune = tune_only(ctx.cfg);
            tune.front().optimizer.lr = lr_t;
            train_phases(ctx, net, tune_state, tune, t.warm, split, nullptr, rec);
          }
          check_budget(rec);
          out.push_back(std::move(rec));
        }
        return out;
      });
    }
  }
  return finish(ctx, run_jobs(jobs, options.jobs));
}

ExperimentResult run_arch_sweep(const ExperimentConfig& cfg, const Corpus& corpus, const RunOptions& options) {
  if (cfg.protocol != Protocol::arch_sweep) throw ConfigError("run_arch_sweep: protocol is " + to_string(cfg.protocol));
  prepare(cfg, options);
  const Context ctx{cfg, corpus, options};
  std::vector<Job> jobs;
  for (std::uint64_t seed : cfg.seeds) {
    for (std::size_t w : cfg.widths) {
      for (std::size_t d : cfg.depths) {
        ModelConfig model = cfg.model;
        model.width_w = w;
        model.depth_d = d;
        const std::string key = "w=" + std::to_string(w) + "/d=" + std::to_string(d);
        jobs.push_back(fresh_job(ctx, seed, model, cfg.tune_phase(), key));
        jobs.push_back([&ctx, seed, model, key] {
          const SeedTree t = seed_tree(ctx.cfg, seed);
          const HalfSplit split = half_split(ctx.corpus.train, t.split);
          return std::vector<RunRecord>{train_arm(ctx, model, ctx.cfg.phases, t.warm, split, nullptr,
                                                  new_record(ctx, seed, "warm", key, key))};
        });
      }
    }
  }
  return finish(ctx, run_jobs(jobs, options.jobs));
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Corpus& corpus, const RunOptions& options) {
  switch (cfg.protocol) {
    case Protocol::warm_start: return run_warm_start(cfg, corpus, options);
    case Protocol::fresh: return run_fresh(cfg, corpus, options);
    case Protocol::blending: return run_blending(cfg, corpus, options);
    case Protocol::multistage: return run_multistage(cfg, corpus, options);
    case Protocol::reset: return run_reset(cfg, corpus, options);
    case Protocol::lr_grid: return run_lr_grid(cfg, corpus, options);
    case Protocol::arch_sweep: return run_arch_sweep(cfg, corpus, options);
  }
  throw ConfigError("unknown protocol");
}

}  // namespace plasbench
