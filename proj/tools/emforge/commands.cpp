// SPDX-License-Identifier: Apache-2.0
#include "emforge/commands.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "emforge/checkpoint.hpp"
#include "emforge/config.hpp"
#include "emforge/pipeline.hpp"
#include "emforge/verify.hpp"

namespace emforge::cli {
namespace {

template <class Fn>
int guarded(const char* command, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    spdlog::error("{}: {}", command, e.what());
    return kConfigError;
  } catch (const ShapeError& e) {
    spdlog::error("{}: {}", command, e.what());
    return kConfigError;
  } catch (const DTypeError& e) {
    spdlog::error("{}: {}", command, e.what());
    return kConfigError;
  } catch (const NumericError& e) {
    spdlog::error("{}: numeric failure: {}", command, e.what());
    return kNumericError;
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", command, e.what());
    return kDataError;
  }
}

TaskRegistry registry_for(const RunConfig& config, const std::filesystem::path& manifest) {
  if (!config.task_registry.empty()) return TaskRegistry::load(config.task_registry);
  const auto sibling = manifest.parent_path() / kTaskFile;
  if (std::filesystem::exists(sibling)) return TaskRegistry::load(sibling);
  return default_registry();
}

bool same_architecture(const ModelConfig& a, const ModelConfig& b) {
  return a.hidden_dim == b.hidden_dim && a.layers == b.layers && a.heads == b.heads && a.vocab_size == b.vocab_size &&
         a.max_seq == b.max_seq && a.patch_size == b.patch_size && a.image_channels == b.image_channels;
}

}  // namespace

int cmd_train(const TrainArgs& args) {
  return guarded("train", [&] {
    const RunConfig config = load_run_config(args.config);
    if (config.train_manifest.empty()) throw ConfigError("data.train_manifest is required for training");
    const TaskRegistry tasks = registry_for(config, config.train_manifest);
    const Dataset dataset = load_manifest(config.train_manifest, tasks, {kDefaultTrainCap, config.train.seed});
    const Model init = init_model(config.model, config.train.seed, config.dtype);

    const auto log_path = args.log.value_or(std::filesystem::path(args.out_checkpoint.string() + ".log.jsonl"));
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw DataError("cannot write training log " + log_path.string());
    spdlog::info("train: {} records, {} steps, batch {} / sub-batch {}", dataset.indices(Split::train).size(),
                 config.train.steps, config.train.batch_size, config.train.sub_batch_size);
    const TrainResult result = train(init, dataset, tasks, config.train, [&](const StepLog& s) {
      log << nlohmann::json{{"step", s.step}, {"loss", s.loss}, {"lr", s.lr}, {"seconds", s.seconds}}.dump() << '\n';
      log.flush();
      if (s.step % 50 == 0 || s.step + 1 == config.train.steps) spdlog::info("step {} loss {:.4f} lr {:.2e}", s.step, s.loss, s.lr);
    });
    try {
      save_checkpoint(args.out_checkpoint, result.model);
    } catch (const FormatError& e) {
      throw DataError(e.what());
    }
    return static_cast<int>(kOk);
  });
}

int cmd_eval(const EvalArgs& args) {
  return guarded("eval", [&] {
    const RunConfig config = load_run_config(args.config);
    if (config.eval_manifest.empty()) throw ConfigError("eval.manifest is required for evaluation");
    const TaskRegistry tasks = registry_for(config, config.eval_manifest);
    const Dataset dataset = load_manifest(config.eval_manifest, tasks);
    const bool with_instructions = config.eval_with_instructions && !args.no_instructions;

    if (args.dry_run) {
      const ImageStore images(dataset.root);
      std::ofstream file;
      std::ostream* out = &std::cout;
      if (*args.dry_run != "-") {
        file.open(*args.dry_run, std::ios::trunc);
        if (!file) throw DataError("cannot write " + *args.dry_run);
        out = &file;
      }
      for (std::size_t idx : dataset.indices(Split::eval)) {
        const ExampleRecord& r = dataset.records[idx];
        const FormattedInput q = format_record_query(r, tasks, images, with_instructions);
        *out << nlohmann::json{{"id", r.id}, {"task_id", r.task_id}, {"query", q.text}}.dump() << '\n';
      }
      return static_cast<int>(kOk);
    }

    if (!args.checkpoint) throw ConfigError("eval needs --checkpoint");
    const Model model = load_checkpoint(*args.checkpoint);
    if (!same_architecture(model.config, config.model)) {
      throw ConfigError("checkpoint architecture " + emforge::to_json(model.config).dump() + " does not match config " +
                        emforge::to_json(config.model).dump());
    }
    const auto report_path = args.report.value_or(config.report_path);
    if (report_path.empty()) throw ConfigError("no report path: pass --report or set eval.report_path");
    const EvalOutput result = evaluate(model, dataset, tasks, {with_instructions, true});
    write_report(report_path, result.report, args.format);
    for (const auto& d : result.report.datasets) {
      spdlog::info("{:<28} P@1 {:5.1f}  (n={})", d.name, 100.0 * d.p_at_1, d.n);
    }
    spdlog::info("overall P@1 {:.1f}", 100.0 * result.report.overall.p_at_1);
    return static_cast<int>(kOk);
  });
}

int cmd_synth(const SynthArgs& args) {
  return guarded("synth", [&] {
    if (args.meta_tasks.empty()) throw ConfigError("synth: no meta task given");
    SyntheticDataset all;
    for (const auto& name : args.meta_tasks) {
      SyntheticSpec spec = args.spec;
      if (name == "instruction_pair") {
        all.append(generate_instruction_pair(spec));
      } else {
        spec.meta_task = meta_task_from_string(name);
        all.append(generate_synthetic(spec));
      }
    }
    write_synthetic(all, args.out_dir);
    spdlog::info("synth: {} records, {} images -> {}", all.records.size(), all.images.size(), args.out_dir.string());
    return static_cast<int>(kOk);
  });
}

int cmd_gradcheck(const GradcheckArgs& args) {
  return guarded("gradcheck", [&] {
    std::uint64_t seed = 0;
    double tau = 0.02;
    if (args.config) {
      const RunConfig config = load_run_config(*args.config);
      seed = config.train.seed;
      tau = config.train.temperature;
    }
    bool ok = true;
    std::printf("%-34s %-5s %-14s %-10s %s\n", "check", "dtype", "max_rel_error", "tolerance", "result");
    const FiniteDifferenceResult fd = check_finite_differences(toy_config(), seed);
    ok = ok && fd.pass;
    std::printf("%-34s %-5s %-14.3e %-10.0e %s\n", ("finite differences (" + std::to_string(fd.checked) + " entries)").c_str(),
                "f64", fd.max_rel_error, 1e-4, fd.pass ? "PASS" : "FAIL");
    const std::pair<std::size_t, std::size_t> shapes[] = {{8, 8}, {8, 4}, {12, 3}, {32, 4}};
    for (DType dtype : {DType::f64, DType::f32}) {
      for (const auto& [b, s] : shapes) {
        const EquivalenceRow row = check_equivalence(b, s, dtype, seed, tau, args.inject_fault);
        ok = ok && row.pass;
        const std::string label = "gradcache vs direct B=" + std::to_string(b) + " s=" + std::to_string(s);
        std::printf("%-34s %-5s %-14.3e %-10.0e %s\n", label.c_str(), to_string(dtype).c_str(), row.rel_error, row.tolerance,
                    row.pass ? "PASS" : "FAIL");
      }
    }
    std::fflush(stdout);
    return static_cast<int>(ok ? kOk : kVerificationFailed);
  });
}

int cmd_report(const ReportArgs& args) {
  return guarded("report", [&] {
    const EvalReport report = read_report(args.input);
    if (args.output) {
      write_report(*args.output, report, args.format);
    } else {
      std::cout << render_report(report, args.format) << std::flush;
    }
    return static_cast<int>(kOk);
  });
}

namespace {

void init_logging() {
  static const bool once = [] {
    auto logger = spdlog::stderr_color_mt("emforge");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
    return true;
  }();
  (void)once;
}

const std::map<std::string, ReportFormat> kFormats = {
    {"json", ReportFormat::json}, {"csv", ReportFormat::csv}, {"plotdata", ReportFormat::plotdata}};

}  // namespace

int run(const std::vector<std::string>& args) {
  init_logging();
  CLI::App app{"emforge: toy multimodal embedding trainer and evaluator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "emforge 0.1.0");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train an encoder with two-phase gradient caching");
  train->add_option("--config", train_args.config, "Run config JSON")->required();
  train->add_option("--out", train_args.out_checkpoint, "Output checkpoint (EMC1)")->required();
  train->add_option("--log", train_args.log, "Training log JSONL (default: <out>.log.jsonl)");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on candidate pools");
  eval->add_option("--config", eval_args.config, "Run config JSON")->required();
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint to evaluate");
  eval->add_option("--report", eval_args.report, "Report output path (default: eval.report_path)");
  eval->add_flag("--no-instructions", eval_args.no_instructions, "Strip instructions from queries");
  eval->add_option("--format", eval_args.format, "json, csv or plotdata")->transform(CLI::CheckedTransformer(kFormats));
  eval->add_option("--dry-run", eval_args.dry_run, "Dump formatted queries as JSONL ('-' for stdout) and exit");

  SynthArgs synth_args;
  std::string direction = "t2i";
  std::size_t n_classes = 0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--meta-task", synth_args.meta_tasks,
                    "classification, vqa, retrieval, grounding or instruction_pair (repeatable)")
      ->required();
  synth->add_option("--n-train", synth_args.spec.n_train, "Training items per task");
  synth->add_option("--n-eval", synth_args.spec.n_eval, "Evaluation items per task");
  synth->add_option("--n-candidates", synth_args.spec.n_candidates, "Candidates per evaluation pool");
  synth->add_option("--n-classes", n_classes, "Classes for classification (default: n-candidates)");
  synth->add_option("--image-size", synth_args.spec.image_size, "Square image side");
  synth->add_option("--seed", synth_args.spec.seed, "Generator seed");
  synth->add_flag("--ood", synth_args.spec.ood, "Shifted vocabulary and patterns");
  synth->add_option("--direction", direction, "Retrieval direction: t2i or i2t");
  synth->add_option("--out", synth_args.out_dir, "Output directory")->required();

  GradcheckArgs gradcheck_args;
  auto* gradcheck = app.add_subcommand("gradcheck", "Verify gradients: finite differences and cached vs direct");
  gradcheck->add_option("--config", gradcheck_args.config, "Run config JSON (seed, temperature)");
  gradcheck->add_flag("--inject-fault", gradcheck_args.inject_fault)->group("");

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Convert an evaluation report");
  report->add_option("--in", report_args.input, "Report (json or csv)")->required();
  report->add_option("--format", report_args.format, "json, csv or plotdata")->transform(CLI::CheckedTransformer(kFormats));
  report->add_option("--out", report_args.output, "Output path (default: stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? static_cast<int>(kOk) : static_cast<int>(kConfigError);
  }

  if (*train) return cmd_train(train_args);
  if (*eval) return cmd_eval(eval_args);
  if (*synth) {
    try {
      synth_args.spec.direction = direction_from_string(direction);
    } catch (const ConfigError& e) {
      spdlog::error("synth: {}", e.what());
      return kConfigError;
    }
    if (n_classes > 0) synth_args.spec.n_classes = n_classes;
    return cmd_synth(synth_args);
  }
  if (*gradcheck) return cmd_gradcheck(gradcheck_args);
  if (*report) return cmd_report(report_args);
  return kConfigError;
}

}  // namespace emforge::cli
