// d3kit command-line harness. Exit codes: 0 pass, 1 check failure,
// 2 configuration or usage error.
#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "d3kit/config_io.hpp"
#include "d3kit/errors.hpp"
#include "d3kit/grad_check.hpp"
#include "d3kit/model_builder.hpp"
#include "d3kit/rf_analyzer.hpp"
#include "d3kit/toy_task.hpp"

namespace {

using namespace d3kit;
using nlohmann::ordered_json;

constexpr int kPass = 0;
constexpr int kCheckFailed = 1;
constexpr int kConfigError = 2;

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

void write_json(const std::string& path, const ordered_json& j) {
  write_text(path, j.dump(2) + "\n");
}

std::string coverage_str(const CoverageSet& c) {
  std::ostringstream s;
  s << '{';
  for (std::size_t i = 0; i < c.size(); ++i) s << (i ? "," : "") << c.offsets()[i];
  s << '}';
  return s.str();
}

struct AnalyzeArgs {
  std::string config;
  std::string mode;
  std::string out;
  std::string csv;
  bool verify = false;
};

int analyze_rf(const AnalyzeArgs& a) {
  BlockSpec spec = block_from_json(load_json(a.config));
  std::optional<DilationMode> mode;
  if (!a.mode.empty()) mode = parse_dilation_mode(a.mode);

  BlindSpotReport report;
  CoverageSet symbolic;
  CoverageSet oracle;
  if (auto* d2 = std::get_if<D2Config>(&spec.block)) {
    if (mode) d2->mode = *mode;
    report = analyze(*d2, spec.in_channels);
    if (a.verify) {
      symbolic = coverage(build_graph(*d2, spec.in_channels),
                          "x" + std::to_string(d2->layers));
      oracle = impulse_footprint(*d2, spec.in_channels);
    }
  } else {
    auto& d3 = std::get<D3Config>(spec.block);
    if (mode) d3.inner.mode = *mode;
    report = analyze(d3, spec.in_channels);
    if (a.verify) {
      symbolic = coverage(build_graph(d3, spec.in_channels),
                          "b" + std::to_string(d3.blocks) + ".out");
      oracle = impulse_footprint(d3, spec.in_channels);
    }
  }
  ordered_json j = to_json(report);
  bool ok = true;
  if (a.verify) {
    ok = symbolic == oracle;
    j["oracle"] = {{"symbolic", symbolic.offsets()},
                   {"impulse", oracle.offsets()},
                   {"match", ok}};
  }
  write_json(a.out, j);
  if (!a.csv.empty()) write_text(a.csv, to_csv(report));
  if (!ok) {
    std::cerr << "coverage " << coverage_str(symbolic)
              << " disagrees with impulse footprint " << coverage_str(oracle) << "\n";
  }
  return ok ? kPass : kCheckFailed;
}

struct GradArgs {
  std::string op;
  std::uint64_t seed = 0;
  double tol = 1e-6;
  double eps = 1e-6;
  std::string out;
  std::string csv;
};

int grad_check(const GradArgs& a) {
  std::vector<GradCheckReport> reports;
  if (a.op == "all") {
    for (const auto& op : checkable_ops()) {
      auto r = check_op(op, a.seed, a.tol, a.eps);
      reports.insert(reports.end(), r.begin(), r.end());
    }
  } else {
    reports = check_op(a.op, a.seed, a.tol, a.eps);
  }
  ordered_json j = {{"seed", a.seed}, {"pass", all_pass(reports)}};
  j["checks"] = to_json(reports);
  write_json(a.out, j);
  if (!a.csv.empty()) write_text(a.csv, to_csv(reports));
  return all_pass(reports) ? kPass : kCheckFailed;
}

struct ParamArgs {
  std::string preset;
  std::string config;
  std::string mode;
  std::string out;
  std::string csv;
};

int param_count_cmd(const ParamArgs& a) {
  const DilationMode mode =
      a.mode.empty() ? DilationMode::Multi : parse_dilation_mode(a.mode);
  ParamReport report;
  ordered_json j;
  if (!a.preset.empty()) {
    BackboneConfig cfg;
    try {
      cfg = preset(a.preset, mode);
    } catch (const LookupError& e) {
      throw ConfigError(e.what());
    }
    report = param_count(cfg);
    j["preset"] = a.preset;
    j["config"] = to_json(cfg);
  } else {
    const nlohmann::json raw = load_json(a.config);
    if (raw.is_object() && (raw.contains("stem") || raw.contains("preset"))) {
      const BackboneConfig cfg = backbone_from_json(raw);
      report = param_count(cfg);
      j["config"] = to_json(cfg);
    } else {
      const BlockSpec spec = block_from_json(raw);
      if (const auto* d2 = std::get_if<D2Config>(&spec.block)) {
        report = param_count(*d2, spec.in_channels);
        j["config"] = to_json(*d2);
      } else {
        const auto& d3 = std::get<D3Config>(spec.block);
        report = param_count(d3, spec.in_channels);
        j["config"] = to_json(d3);
      }
      j["config"]["in_channels"] = spec.in_channels;
    }
  }
  j["params"] = to_json(report);
  write_json(a.out, j);
  if (!a.csv.empty()) write_text(a.csv, to_csv(report));
  return kPass;
}

struct ToyArgs {
  std::string config;
  std::optional<std::size_t> distance;
  std::optional<std::size_t> epochs;
  std::uint64_t seed = 0;
  std::string out;
  std::string csv;
  bool timing = false;
};

ToyConfig load_toy(const std::string& path) {
  return path.empty() ? ToyConfig{} : toy_from_json(load_json(path));
}

ToyTask make_task(const ToyConfig& cfg) {
  try {
    return gen_task(cfg.task_seed, cfg.length, cfg.distance, cfg.count, cfg.period);
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
}

int train_toy(const ToyArgs& a) {
  ToyConfig cfg = load_toy(a.config);
  if (a.distance) cfg.distance = *a.distance;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  const ToyTask task = make_task(cfg);
  ToyModel model(cfg.model, a.seed);
  const TrainReport report = train(model, task, cfg.train, a.seed);

  const std::size_t half_width = static_cast<std::size_t>(
      coverage(build_graph(cfg.model.d2, ToyModel::kInputChannels),
               "x" + std::to_string(cfg.model.d2.layers))
          .half_width());
  ordered_json j = to_json(report, a.timing);
  j["rf_half_width"] = half_width;
  j["marker_floor"] = marker_floor(task, half_width);
  write_json(a.out, j);
  if (!a.csv.empty()) {
    std::ostringstream s;
    s.precision(17);
    s << "epoch,loss\n";
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) {
      s << e + 1 << ',' << report.epoch_loss[e] << '\n';
    }
    write_text(a.csv, s.str());
  }
  if (a.timing) std::cerr << "wall clock " << report.wall_clock_s << " s\n";
  return kPass;
}

struct EmpiricalArgs {
  std::string config;
  std::size_t position = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string csv;
};

// Compares the analyzer's coverage of a randomly initialised toy model with
// single-position perturbation of one task sample.
int rf_empirical(const EmpiricalArgs& a) {
  const ToyConfig cfg = load_toy(a.config);
  const ToyTask task = make_task(cfg);
  const ToyModel model(cfg.model, a.seed);
  const std::size_t n = cfg.length;
  if (a.position >= n) {
    throw ConfigError("position must lie in [0, " + std::to_string(n) + ")");
  }
  const CoverageSet analyzer =
      coverage(build_graph(cfg.model.d2, ToyModel::kInputChannels),
               "x" + std::to_string(cfg.model.d2.layers));
  const std::int64_t h = analyzer.half_width();
  const auto p = static_cast<std::int64_t>(a.position);
  const Tensor& input = task.samples.front().input;

  std::vector<std::int64_t> empirical;
  std::vector<std::int64_t> outside;
  for (std::int64_t q = 0; q < static_cast<std::int64_t>(n); ++q) {
    if (q < p - h || q > p + h) {
      outside.push_back(q);
    } else if (!perturb_independence(model, input, a.position, {q}, a.seed)) {
      empirical.push_back(q - p);
    }
  }
  const bool outside_independent =
      perturb_independence(model, input, a.position, outside, a.seed);
  bool within = true;
  for (std::int64_t off : empirical) within = within && analyzer.contains(off);

  ordered_json j;
  j["config"] = {{"model", to_json(cfg.model.d2)},
                 {"n", n},
                 {"task_seed", cfg.task_seed}};
  j["seed"] = a.seed;
  j["position"] = a.position;
  j["analyzer_coverage"] = analyzer.offsets();
  j["empirical_footprint"] = empirical;
  j["independent_outside_hull"] = outside_independent;
  j["footprint_within_coverage"] = within;
  j["pass"] = outside_independent && within;
  write_json(a.out, j);
  if (!a.csv.empty()) {
    std::ostringstream s;
    s << "offset,analyzer,empirical\n";
    for (std::int64_t off = -h; off <= h; ++off) {
      if (p + off < 0 || p + off >= static_cast<std::int64_t>(n)) continue;
      const bool emp = std::find(empirical.begin(), empirical.end(), off) !=
                       empirical.end();
      s << off << ',' << analyzer.contains(off) << ',' << emp << '\n';
    }
    write_text(a.csv, s.str());
  }
  return outside_independent && within ? kPass : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"d3kit: dense multidilated block toolkit"};
  app.require_subcommand(1);

  AnalyzeArgs analyze_args;
  auto* analyze_cmd = app.add_subcommand("analyze-rf", "receptive-field and blind-spot analysis");
  analyze_cmd->add_option("--config", analyze_args.config, "D2/D3 block JSON")->required();
  analyze_cmd->add_option("--mode", analyze_args.mode, "override dilation mode")
      ->check(CLI::IsMember({"multi", "standard", "none"}));
  analyze_cmd->add_option("--out", analyze_args.out, "JSON report path (default stdout)");
  analyze_cmd->add_option("--csv", analyze_args.csv, "per-layer CSV path");
  analyze_cmd->add_flag("--verify", analyze_args.verify,
                        "cross-check the output coverage against the impulse footprint");

  GradArgs grad_args;
  auto* grad_cmd = app.add_subcommand("grad-check", "finite-difference gradient check");
  grad_cmd->add_option("--op", grad_args.op, "op name or 'all'")->required();
  grad_cmd->add_option("--seed", grad_args.seed);
  grad_cmd->add_option("--tol", grad_args.tol, "relative error tolerance");
  grad_cmd->add_option("--eps", grad_args.eps, "finite-difference step");
  grad_cmd->add_option("--out", grad_args.out);
  grad_cmd->add_option("--csv", grad_args.csv);

  ParamArgs param_args;
  auto* param_cmd = app.add_subcommand("param-count", "parameter count report");
  auto* preset_opt = param_cmd->add_option("--preset", param_args.preset)
                         ->check(CLI::IsMember(preset_names()));
  auto* config_opt = param_cmd->add_option("--config", param_args.config,
                                           "backbone or block JSON");
  preset_opt->excludes(config_opt);
  param_cmd->add_option("--mode", param_args.mode)
      ->check(CLI::IsMember({"multi", "standard", "none"}));
  param_cmd->add_option("--out", param_args.out);
  param_cmd->add_option("--csv", param_args.csv);

  ToyArgs toy_args;
  auto* toy_cmd = app.add_subcommand("train-toy", "train on the long-range toy task");
  toy_cmd->add_option("--config", toy_args.config, "toy JSON (defaults if omitted)");
  toy_cmd->add_option("--distance", toy_args.distance);
  toy_cmd->add_option("--epochs", toy_args.epochs);
  toy_cmd->add_option("--seed", toy_args.seed);
  toy_cmd->add_option("--out", toy_args.out);
  toy_cmd->add_option("--csv", toy_args.csv, "per-epoch loss CSV path");
  toy_cmd->add_flag("--timing", toy_args.timing, "add wall-clock time to the report");

  EmpiricalArgs emp_args;
  auto* emp_cmd = app.add_subcommand("rf-empirical",
                                     "perturbation footprint of a toy model vs analyzer");
  emp_cmd->add_option("--config", emp_args.config, "toy JSON (defaults if omitted)");
  emp_cmd->add_option("--position", emp_args.position)->required();
  emp_cmd->add_option("--seed", emp_args.seed);
  emp_cmd->add_option("--out", emp_args.out);
  emp_cmd->add_option("--csv", emp_args.csv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kPass : kConfigError;
  }

  try {
    if (*analyze_cmd) return analyze_rf(analyze_args);
    if (*grad_cmd) return grad_check(grad_args);
    if (*param_cmd) {
      if (param_args.preset.empty() && param_args.config.empty()) {
        throw ConfigError("param-count needs --preset or --config");
      }
      return param_count_cmd(param_args);
    }
    if (*toy_cmd) return train_toy(toy_args);
    if (*emp_cmd) return rf_empirical(emp_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const LookupError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ArgumentError& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kConfigError;
}
