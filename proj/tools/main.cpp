/* Copyright 2026 The espsim Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "espsim/config.hpp"
#include "espsim/engine.hpp"
#include "espsim/policies.hpp"
#include "espsim/trace.hpp"
#include "json.hpp"

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

struct GenSpec {
  std::string distribution;
  double rate = 0;
  int count = 0;
};

// --gen takes one "distribution,rate,count" argument.
GenSpec parse_gen(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream stream(text);
  std::string part;
  while (std::getline(stream, part, ',')) parts.push_back(part);
  if (parts.size() != 3) {
    throw CLI::ValidationError("--gen wants distribution,rate,count; got '" +
                               text + "'");
  }
  GenSpec spec;
  spec.distribution = parts[0];
  try {
    spec.rate = std::stod(parts[1]);
    spec.count = std::stoi(parts[2]);
  } catch (const std::exception&) {
    throw CLI::ValidationError("--gen wants numeric rate and count; got '" +
                               text + "'");
  }
  if (spec.rate <= 0 || spec.count <= 0) {
    throw CLI::ValidationError("--gen rate and count must be positive");
  }
  return spec;
}

std::vector<double> parse_rates(const std::string& text) {
  std::vector<double> rates;
  std::stringstream stream(text);
  std::string part;
  while (std::getline(stream, part, ',')) {
    try {
      rates.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw CLI::ValidationError("--rates wants comma-separated numbers; got '" +
                                 text + "'");
    }
    if (rates.back() <= 0) {
      throw CLI::ValidationError("--rates entries must be positive");
    }
  }
  if (rates.empty()) throw CLI::ValidationError("--rates is empty");
  return rates;
}

struct ReportRow {
  std::string policy;
  espsim::MetricsReport report;
};

const char* kTableHeader =
    "policy,offered_rate_per_s,submitted,finished,rejected,evictions,"
    "slo_attainment,per_token_e2e_mean_ms,per_token_e2e_p50_ms,"
    "per_token_e2e_p90_ms,per_token_e2e_p99_ms,norm_input_mean,norm_input_p50,"
    "norm_input_p90,norm_input_p99,norm_output_mean,norm_output_p50,"
    "norm_output_p90,norm_output_p99,tokens_per_s,requests_per_s";

void append_row(std::ostream& out, const ReportRow& row) {
  const espsim::MetricsReport& r = row.report;
  out << row.policy << ',' << r.offered_rate_per_s << ',' << r.submitted << ','
      << r.finished << ',' << r.rejected << ',' << r.evictions << ','
      << r.slo_attainment << ',' << r.per_token_e2e.mean << ','
      << r.per_token_e2e.p50 << ',' << r.per_token_e2e.p90 << ','
      << r.per_token_e2e.p99 << ',' << r.norm_input.mean << ','
      << r.norm_input.p50 << ',' << r.norm_input.p90 << ','
      << r.norm_input.p99 << ',' << r.norm_output.mean << ','
      << r.norm_output.p50 << ',' << r.norm_output.p90 << ','
      << r.norm_output.p99 << ',' << r.tokens_per_s << ','
      << r.requests_per_s << '\n';
}

nlohmann::json stats_json(const espsim::LatencyStats& stats) {
  return {{"mean", stats.mean},
          {"p50", stats.p50},
          {"p90", stats.p90},
          {"p99", stats.p99}};
}

nlohmann::json report_json(const ReportRow& row) {
  const espsim::MetricsReport& r = row.report;
  return {{"kind", "report"},
          {"policy", row.policy},
          {"offered_rate_per_s", r.offered_rate_per_s},
          {"submitted", r.submitted},
          {"finished", r.finished},
          {"rejected", r.rejected},
          {"evictions", r.evictions},
          {"slo_attainment", r.slo_attainment},
          {"per_token_e2e_ms", stats_json(r.per_token_e2e)},
          {"norm_input", stats_json(r.norm_input)},
          {"norm_output", stats_json(r.norm_output)},
          {"tokens_per_s", r.tokens_per_s},
          {"requests_per_s", r.requests_per_s}};
}

void write_outputs(const std::string& out_path,
                   const std::vector<ReportRow>& rows,
                   const std::vector<nlohmann::json>& extra_records) {
  std::ofstream table(out_path);
  if (!table) {
    throw espsim::SimError("cannot write report table: " + out_path);
  }
  table << kTableHeader << '\n';
  for (const ReportRow& row : rows) append_row(table, row);

  std::ofstream records(out_path + ".jsonl");
  if (!records) {
    throw espsim::SimError("cannot write report records: " + out_path +
                           ".jsonl");
  }
  for (const ReportRow& row : rows) records << report_json(row) << '\n';
  for (const nlohmann::json& rec : extra_records) records << rec << '\n';
}

struct RunArgs {
  std::string config_path;
  std::string trace_path;
  std::string gen_text;
  std::string rates_text;
  std::string policy;
  std::string out_path;
  std::string events_path;
  uint64_t seed = 0;
  bool seed_set = false;
};

espsim::SimConfig load_run_config(const RunArgs& args) {
  espsim::SimConfig config = espsim::load_config(args.config_path);
  if (!args.policy.empty()) config.policy = args.policy;
  if (args.seed_set) config.seed = args.seed;
  espsim::parse_policy(config.policy);  // fail fast on a bad policy string
  config.validate();
  return config;
}

int cmd_run(const RunArgs& args) {
  espsim::SimConfig config = load_run_config(args);
  std::vector<espsim::TraceRecord> trace;
  if (!args.trace_path.empty()) {
    trace = espsim::load_trace(args.trace_path);
  } else {
    GenSpec gen = parse_gen(args.gen_text);
    espsim::TraceSpec spec;
    spec.distribution = gen.distribution;
    spec.requests_per_s = gen.rate;
    spec.count = gen.count;
    spec.seed = args.seed;
    trace = espsim::gen_trace(spec);
  }

  espsim::RunOutput output = espsim::run_simulation(config, trace);
  if (!args.gen_text.empty()) {
    GenSpec gen = parse_gen(args.gen_text);
    output.report.offered_rate_per_s = gen.rate;
  }
  if (!args.events_path.empty()) output.log.save(args.events_path);

  ReportRow row{config.policy, output.report};
  write_outputs(args.out_path, {row}, {});
  std::cout << "policy " << config.policy << ": " << output.report.finished
            << "/" << output.report.submitted << " finished, attainment "
            << output.report.slo_attainment << "\n";
  return 0;
}

int cmd_sweep(const RunArgs& args) {
  espsim::SimConfig config = load_run_config(args);
  std::vector<double> rates = parse_rates(args.rates_text);
  GenSpec gen = parse_gen(args.gen_text);

  std::vector<ReportRow> rows;
  std::vector<std::pair<double, double>> attainment_points;
  for (double rate : rates) {
    espsim::TraceSpec spec;
    spec.distribution = gen.distribution;
    spec.requests_per_s = rate;
    spec.count = gen.count;
    spec.seed = args.seed;
    std::vector<espsim::TraceRecord> trace = espsim::gen_trace(spec);
    espsim::RunOutput output = espsim::run_simulation(config, trace);
    output.report.offered_rate_per_s = rate;
    attainment_points.emplace_back(rate, output.report.slo_attainment);
    rows.push_back({config.policy, output.report});
    std::cout << "rate " << rate << " req/s: attainment "
              << output.report.slo_attainment << "\n";
  }

  double goodput = espsim::p90_goodput(attainment_points);
  nlohmann::json goodput_rec = {
      {"kind", "goodput"}, {"policy", config.policy}, {"p90_goodput", goodput}};
  write_outputs(args.out_path, rows, {goodput_rec});
  std::cout << "p90 goodput: " << goodput << " req/s\n";
  return 0;
}

int cmd_fit_sib(const std::string& profiles_path, const std::string& out_path) {
  espsim::Sib sib = espsim::Sib::load(profiles_path);
  sib.fit_all();
  sib.save(out_path);
  std::cout << "fitted " << sib.keys().size() << " strategies -> " << out_path
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iteration-level simulator for elastic LLM serving clusters"};
  app.require_subcommand(1);

  RunArgs args;
  std::string profiles_path, fit_out_path;

  CLI::App* run = app.add_subcommand("run", "Simulate one trace");
  run->add_option("--config", args.config_path, "INI config file")
      ->required()
      ->check(CLI::ExistingFile);
  CLI::Option* trace_opt =
      run->add_option("--trace", args.trace_path, "JSONL trace file")
          ->check(CLI::ExistingFile);
  CLI::Option* gen_opt = run->add_option(
      "--gen", args.gen_text, "Generate a trace: distribution,rate,count");
  trace_opt->excludes(gen_opt);
  run->add_option("--policy", args.policy, "Policy override");
  CLI::Option* seed_opt =
      run->add_option("--seed", args.seed, "Trace generation seed");
  run->add_option("--out", args.out_path, "Report table path")->required();
  run->add_option("--events", args.events_path, "Also save the event log here");

  CLI::App* sweep = app.add_subcommand("sweep", "Simulate a rate sweep");
  sweep->add_option("--config", args.config_path, "INI config file")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--rates", args.rates_text, "Comma-separated req/s rates")
      ->required();
  CLI::Option* sweep_gen = sweep->add_option(
      "--gen", args.gen_text,
      "Trace shape: distribution,rate,count (rate is overridden per point)");
  sweep_gen->required();
  sweep->add_option("--policy", args.policy, "Policy override");
  CLI::Option* sweep_seed =
      sweep->add_option("--seed", args.seed, "Trace generation seed");
  sweep_seed->required();
  sweep->add_option("--out", args.out_path, "Report table path")->required();

  CLI::App* fit = app.add_subcommand("fit-sib", "Fit cost coefficients");
  fit->add_option("--profiles", profiles_path, "Profile records (JSONL)")
      ->required()
      ->check(CLI::ExistingFile);
  fit->add_option("--out", fit_out_path, "Fitted table output path")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }
  args.seed_set = seed_opt->count() > 0 || sweep_seed->count() > 0;

  if (run->parsed()) {
    if (args.trace_path.empty() && args.gen_text.empty()) {
      std::cerr << "run needs either --trace or --gen\n";
      return kUsageError;
    }
    if (!args.gen_text.empty() && !args.seed_set) {
      std::cerr << "--gen needs --seed for reproducible traces\n";
      return kUsageError;
    }
  }

  try {
    if (run->parsed()) return cmd_run(args);
    if (sweep->parsed()) return cmd_sweep(args);
    return cmd_fit_sib(profiles_path, fit_out_path);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}
