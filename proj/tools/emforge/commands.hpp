// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "emforge/report.hpp"
#include "emforge/synthetic.hpp"

namespace emforge::cli {

// Process exit codes.
enum ExitCode : int { kOk = 0, kConfigError = 1, kDataError = 2, kVerificationFailed = 3, kNumericError = 4 };

struct TrainArgs {
  std::filesystem::path config;
  std::filesystem::path out_checkpoint;
  std::optional<std::filesystem::path> log;  // default: <checkpoint>.log.jsonl
};
int cmd_train(const TrainArgs& args);

struct EvalArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> report;  // default: eval.report_path
  bool no_instructions = false;
  ReportFormat format = ReportFormat::json;
  // Writes the formatted queries as JSONL here ("-" = stdout) and stops
  // before loading any checkpoint.
  std::optional<std::string> dry_run;
};
int cmd_eval(const EvalArgs& args);

struct SynthArgs {
  std::vector<std::string> meta_tasks;  // meta-task names or "instruction_pair"
  SyntheticSpec spec;
  std::filesystem::path out_dir;
};
int cmd_synth(const SynthArgs& args);

struct GradcheckArgs {
  std::optional<std::filesystem::path> config;
  bool inject_fault = false;
};
int cmd_gradcheck(const GradcheckArgs& args);

struct ReportArgs {
  std::filesystem::path input;
  ReportFormat format = ReportFormat::json;
  std::optional<std::filesystem::path> output;  // default: stdout
};
int cmd_report(const ReportArgs& args);

// Parses argv-style arguments (args[0] is the program name) and dispatches.
int run(const std::vector<std::string>& args);

}  // namespace emforge::cli
