#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "plasbench/dataset.hpp"
#include "plasbench/errors.hpp"
#include "plasbench/harness.hpp"
#include "plasbench/network.hpp"
#include "plasbench/rng.hpp"

namespace fs = std::filesystem;
using namespace plasbench;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

int cmd_run(const std::string& config_path, std::string out_dir, std::size_t jobs) {
  ExperimentConfig cfg = load_config(config_path);
  apply_environment(cfg);
  if (out_dir.empty()) out_dir = (fs::path("runs") / cfg.name).string();

  const Corpus corpus = load_corpus(cfg);
  RunOptions options;
  options.jobs = jobs;
  options.checkpoint_dir = fs::path(out_dir) / "checkpoints";
  const ExperimentResult result = run_experiment(cfg, corpus, options);
  emit_report(result, out_dir);

  std::cout << format_summary(result, ReportFormat::csv);
  std::cout << "wrote " << out_dir << " (" << result.runs.size() << " runs, " << result.diverged_runs
            << " diverged)\n";
  if (result.diverged_runs > cfg.max_diverged_runs) {
    std::cerr << "error: " << result.diverged_runs << " diverged runs exceed max_diverged_runs = "
              << cfg.max_diverged_runs << "\n";
    return kExitDiverged;
  }
  return kExitOk;
}

ModelConfig gradcheck_model(ModelKind kind) {
  ModelConfig m;
  m.kind = kind;
  m.num_classes = 5;
  switch (kind) {
    case ModelKind::mlp:
      m.input_shape = {1, 6, 6};
      m.hidden_sizes = {16, 12};
      break;
    case ModelKind::cnn:
      m.width_w = 3;
      m.input_shape = {2, 8, 8};
      m.hidden_sizes = {16};
      break;
    case ModelKind::mini_resnet:
      m.width_w = 4;
      m.depth_d = 1;
      m.input_shape = {3, 32, 32};
      break;
  }
  return m;
}

int cmd_gradcheck(const std::string& arch, double tol, std::uint64_t seed) {
  std::vector<ModelKind> kinds;
  if (arch == "all") {
    kinds = {ModelKind::mlp, ModelKind::cnn, ModelKind::mini_resnet};
  } else {
    kinds = {parse_model_kind(arch)};
  }
  bool ok = true;
  for (ModelKind kind : kinds) {
    const ModelConfig m = gradcheck_model(kind);
    Network<double> net = Network<double>::build(m, seed);
    const std::size_t batch = kind == ModelKind::mini_resnet ? 2 : 4;
    Shape shape{batch, m.input_shape[0], m.input_shape[1], m.input_shape[2]};
    Tensor<double> x(shape);
    Rng rng(derive_seed(seed, "inputs"));
    for (double& v : x.data()) v = standard_normal(rng);
    std::vector<int> labels(batch);
    for (int& l : labels) l = static_cast<int>(uniform_index(rng, m.num_classes));

    GradCheckOptions options;
    options.seed = derive_seed(seed, "coords");
    const GradCheckReport report = grad_check(net, x, labels, tol, options);
    std::printf("%-12s params=%zu max_rel_error=%.3e %s\n", to_string(kind).c_str(), net.parameter_count(),
                report.max_rel_error, report.passed() ? "PASS" : "FAIL");
    for (const GradCheckGroupResult& g : report.groups) {
      std::printf("  group %d: %zu coords, max_rel_error=%.3e (%s)\n", g.group, g.coordinates, g.max_rel_error,
                  g.worst_param.c_str());
    }
    ok = ok && report.passed();
  }
  return ok ? kExitOk : kExitFailure;
}

void print_dataset(const LabeledDataset& data) {
  std::printf("%s: N=%zu shape=%s classes=%zu checksum=%016llx\n", data.name.c_str(), data.size(),
              shape_string(data.example_shape).c_str(), data.classes.size(),
              static_cast<unsigned long long>(data.checksum()));
  const std::vector<std::size_t> hist = data.class_histogram();
  std::printf("  histogram:");
  for (std::size_t i = 0; i < hist.size(); ++i) std::printf(" %d:%zu", data.classes[i], hist[i]);
  std::printf("\n");
}

fs::path idx_labels_for(const fs::path& images) {
  std::string name = images.filename().string();
  for (const auto& [from, to] : {std::pair<std::string, std::string>{"images-idx3", "labels-idx1"},
                                 std::pair<std::string, std::string>{"images.idx3", "labels.idx1"}}) {
    const auto pos = name.find(from);
    if (pos != std::string::npos) return images.parent_path() / name.replace(pos, from.size(), to);
  }
  throw FormatError(images.string() + ": cannot infer the matching IDX label file");
}

int cmd_datacheck(const std::string& path_text) {
  const fs::path path(path_text);
  if (!fs::exists(path)) throw IoError(path_text + ": no such file or directory");
  if (fs::is_directory(path)) {
    bool any = false;
    if (fs::exists(path / "data_batch_1.bin")) {
      print_dataset(load_cifar10_binary(path));
      any = true;
    }
    if (fs::exists(path / "test_batch.bin")) {
      print_dataset(load_cifar10_test(path));
      any = true;
    }
    for (const char* prefix : {"train", "t10k"}) {
      const fs::path images = path / (std::string(prefix) + "-images-idx3-ubyte");
      if (fs::exists(images)) {
        print_dataset(load_idx(images, idx_labels_for(images)));
        any = true;
      }
    }
    if (!any) throw FormatError(path_text + ": no IDX or CIFAR-10 files found");
    return kExitOk;
  }
  const std::string name = path.filename().string();
  if (name.find("idx3") != std::string::npos) {
    print_dataset(load_idx(path, idx_labels_for(path)));
  } else if (path.extension() == ".bin") {
    print_dataset(load_cifar10_batch(path));
  } else {
    throw FormatError(path_text + ": unrecognized dataset file");
  }
  return kExitOk;
}

int cmd_report(const std::string& run_dir, const std::string& format_name) {
  const ReportFormat format = parse_report_format(format_name);
  const ReportCheck check = recompute_report(run_dir);
  std::cout << format_summary(check.recomputed, format);
  std::fprintf(stderr, "recomputed %zu values, max |difference| vs summary.json = %.3g\n", check.compared,
               check.max_abs_difference);
  if (check.max_abs_difference > 1e-9) {
    std::fprintf(stderr, "error: metrics.csv disagrees with summary.json\n");
    return kExitData;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"plasbench: warm-start and plasticity benchmark harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::size_t jobs = 1;
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory (default runs/<name>)");
  run->add_option("--jobs", jobs, "Parallel workers")->check(CLI::PositiveNumber);

  std::string arch = "all";
  double tol = 1e-4;
  std::uint64_t seed = 7;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check in double precision");
  gradcheck->add_option("--arch", arch, "mlp, cnn, mini_resnet or all")
      ->check(CLI::IsMember({"all", "mlp", "cnn", "mini_resnet"}));
  gradcheck->add_option("--tol", tol, "Relative error tolerance");
  gradcheck->add_option("--seed", seed, "Seed for parameters, inputs and coordinates");

  std::string data_path;
  auto* datacheck = app.add_subcommand("datacheck", "Load a dataset and print counts, histograms and checksums");
  datacheck->add_option("path", data_path, "IDX file, CIFAR-10 batch, or directory")->required();

  std::string run_dir, format = "csv";
  auto* report = app.add_subcommand("report", "Recompute summaries from a run directory");
  report->add_option("run-dir", run_dir, "Directory written by run")->required();
  report->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir, jobs);
    if (*gradcheck) return cmd_gradcheck(arch, tol, seed);
    if (*datacheck) return cmd_datacheck(data_path);
    if (*report) return cmd_report(run_dir, format);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "data format error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
