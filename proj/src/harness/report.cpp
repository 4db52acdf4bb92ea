#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "plasbench/errors.hpp"
#include "plasbench/harness.hpp"

namespace plasbench {

using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write to " + path.string() + " failed");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json values_json(const std::vector<double>& v) {
  json arr = json::array();
  for (double x : v) arr.push_back(x);
  return arr;
}

json summary_json(const ExperimentResult& result) {
  json runs = json::array();
  for (const RunRecord& r : result.runs) {
    json j = {{"run_id", r.run_id},
              {"seed", r.seed},
              {"arm", r.arm},
              {"sweep_key", r.sweep_key},
              {"baseline_key", r.baseline_key},
              {"diverged", r.diverged()},
              {"total_steps", r.total_steps},
              {"expected_steps", r.expected_steps},
              {"checkpoints", r.checkpoints},
              {"stats", r.stats}};
    if (r.diverged()) {
      j["last_k_mean"] = nullptr;
      j["divergence"] = {{"phase", r.divergence->phase},
                         {"epoch", r.divergence->epoch},
                         {"step", r.divergence->step},
                         {"message", r.divergence->message}};
    } else {
      j["last_k_mean"] = last_k_mean(r.final_test_series(), result.last_k);
    }
    runs.push_back(std::move(j));
  }
  json arms = json::array();
  for (const ArmSummary& a : result.arms) {
    arms.push_back({{"sweep_key", a.sweep_key},
                    {"arm", a.arm},
                    {"n", a.n},
                    {"diverged", a.diverged},
                    {"mean", a.mean},
                    {"std", a.std},
                    {"values", values_json(a.values)},
                    {"seeds", a.seeds}});
  }
  json gaps = json::array();
  for (const GapReport& g : result.gaps) {
    gaps.push_back({{"sweep_key", g.sweep_key},
                    {"arm", g.arm},
                    {"baseline_key", g.baseline_key},
                    {"warm_mean", g.warm_mean},
                    {"warm_std", g.warm_std},
                    {"fresh_mean", g.fresh_mean},
                    {"fresh_std", g.fresh_std},
                    {"gap", g.gap},
                    {"warm_values", values_json(g.warm_values)},
                    {"fresh_values", values_json(g.fresh_values)}});
  }
  return {{"protocol", to_string(result.config.protocol)},
          {"last_k", result.last_k},
          {"diverged_runs", result.diverged_runs},
          {"max_diverged_runs", result.config.max_diverged_runs},
          {"config", json::parse(config_to_json(result.config))},
          {"runs", runs},
          {"arms", arms},
          {"gaps", gaps}};
}

std::string summary_csv(const ExperimentResult& result) {
  std::string out = "sweep_key,arm,n,diverged,mean,std,baseline_key,gap\n";
  for (const ArmSummary& a : result.arms) {
    const GapReport* g = nullptr;
    for (const GapReport& candidate : result.gaps) {
      if (candidate.sweep_key == a.sweep_key && candidate.arm == a.arm) g = &candidate;
    }
    out += a.sweep_key + "," + a.arm + "," + std::to_string(a.n) + "," + std::to_string(a.diverged) + "," +
           num(a.mean) + "," + num(a.std) + "," + (g ? g->baseline_key : "") + "," + (g ? num(g->gap) : "") + "\n";
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else {
      cell += c;
    }
  }
  out.push_back(cell);
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(where + ": not a number '" + s + "'");
  }
}

}  // namespace

ReportFormat parse_report_format(const std::string& name) {
  if (name == "csv") return ReportFormat::csv;
  if (name == "json") return ReportFormat::json;
  throw ConfigError("unknown report format '" + name + "' (csv or json)");
}

void emit_report(const ExperimentResult& result, const std::filesystem::path& out_dir) {
  if (result.runs.empty()) throw ContractError("emit_report: no run records");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::string metrics(kMetricsHeader);
  metrics += "\n";
  std::string probes(kProbesHeader);
  probes += "\n";
  for (const RunRecord& r : result.runs) {
    const std::string prefix = r.run_id + "," + std::to_string(r.seed) + "," + r.protocol + "," + r.sweep_key + ",";
    for (const EpochMetrics& m : r.series) {
      metrics += prefix + m.phase + "," + std::to_string(m.epoch) + "," + std::to_string(m.step) + "," +
                 num(m.train_loss) + "," + num(m.train_acc) + "," + (m.test_acc ? num(*m.test_acc) : "") + "," +
                 num(m.lr) + "," + (m.wallclock_s ? num(*m.wallclock_s) : "") + "\n";
    }
    for (const ProbeRecord& p : r.probes) {
      probes += prefix + p.phase + "," + std::to_string(p.epoch) + "," + p.kind + "," + num(p.value) + "," +
                csv_quote(p.detail_json) + "\n";
    }
  }
  write_file(out_dir / "metrics.csv", metrics);
  write_file(out_dir / "probes.csv", probes);
  write_file(out_dir / "summary.json", summary_json(result).dump(2) + "\n");
  write_file(out_dir / "summary.csv", summary_csv(result));
}

std::string format_summary(const ExperimentResult& result, ReportFormat format) {
  if (format == ReportFormat::csv) return summary_csv(result);
  json j = summary_json(result);
  j.erase("config");
  j.erase("runs");
  return j.dump(2) + "\n";
}

ReportCheck recompute_report(const std::filesystem::path& run_dir) {
  json summary;
  try {
    summary = json::parse(read_file(run_dir / "summary.json"));
  } catch (const json::exception& e) {
    throw FormatError("summary.json: " + std::string(e.what()));
  }

  ReportCheck check;
  ExperimentResult& result = check.recomputed;
  try {
    result.config = parse_config(summary.at("config").dump());
    result.last_k = summary.at("last_k").get<std::size_t>();
    for (const json& r : summary.at("runs")) {
      RunRecord rec;
      rec.run_id = r.at("run_id").get<std::string>();
      rec.seed = r.at("seed").get<std::uint64_t>();
      rec.arm = r.at("arm").get<std::string>();
      rec.sweep_key = r.at("sweep_key").get<std::string>();
      rec.baseline_key = r.at("baseline_key").get<std::string>();
      rec.protocol = summary.at("protocol").get<std::string>();
      if (r.at("diverged").get<bool>()) rec.divergence = DivergenceRecord{"", 0, 0, "recorded divergence"};
      result.runs.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw FormatError("summary.json: " + std::string(e.what()));
  }

  std::map<std::string, RunRecord*> by_id;
  for (RunRecord& r : result.runs) by_id[r.run_id] = &r;

  std::istringstream metrics(read_file(run_dir / "metrics.csv"));
  std::string line;
  if (!std::getline(metrics, line) || line != kMetricsHeader) {
    throw FormatError("metrics.csv: unexpected header");
  }
  std::size_t line_no = 1;
  while (std::getline(metrics, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    const std::string where = "metrics.csv:" + std::to_string(line_no);
    if (cells.size() != 12) throw FormatError(where + ": expected 12 columns, got " + std::to_string(cells.size()));
    auto it = by_id.find(cells[0]);
    if (it == by_id.end()) throw ConsistencyError(where + ": run '" + cells[0] + "' not in summary.json");
    EpochMetrics m;
    m.phase = cells[4];
    m.epoch = static_cast<std::size_t>(parse_double(cells[5], where));
    m.step = static_cast<std::uint64_t>(parse_double(cells[6], where));
    m.train_loss = parse_double(cells[7], where);
    m.train_acc = parse_double(cells[8], where);
    if (!cells[9].empty()) m.test_acc = parse_double(cells[9], where);
    m.lr = parse_double(cells[10], where);
    if (!cells[11].empty()) m.wallclock_s = parse_double(cells[11], where);
    it->second->series.push_back(std::move(m));
  }

  summarize(result);
  for (const json& a : summary.at("arms")) {
    const ArmSummary* mine = result.find_arm(a.at("sweep_key").get<std::string>(), a.at("arm").get<std::string>());
    if (mine == nullptr) throw ConsistencyError("summary arm missing from metrics.csv");
    if (mine->n != a.at("n").get<std::size_t>()) throw ConsistencyError("arm size differs from summary.json");
    if (mine->n == 0) continue;
    check.max_abs_difference = std::max(check.max_abs_difference, std::abs(mine->mean - a.at("mean").get<double>()));
    check.max_abs_difference = std::max(check.max_abs_difference, std::abs(mine->std - a.at("std").get<double>()));
    ++check.compared;
  }
  for (const json& r : summary.at("runs")) {
    if (r.at("last_k_mean").is_null()) continue;
    const RunRecord* rec = by_id.at(r.at("run_id").get<std::string>());
    const double mine = last_k_mean(rec->final_test_series(), result.last_k);
    check.max_abs_difference = std::max(check.max_abs_difference, std::abs(mine - r.at("last_k_mean").get<double>()));
    ++check.compared;
  }
  return check;
}

}  // namespace plasbench
