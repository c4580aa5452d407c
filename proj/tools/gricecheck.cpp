// gricecheck CLI: run an evaluation, regenerate or verify reports, and render
// individual prompts for debugging.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 run completed with
// failed records, 4 verification mismatch.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "gricecheck/gricecheck.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRunFailures = 3;
constexpr int kExitVerifyMismatch = 4;

int cmd_run(const std::string& config_path, const std::vector<std::string>& strategy_overrides,
            const std::string& backend_override, bool dry_run) {
  gricecheck::RunConfig config;
  try {
    config = gricecheck::load_run_config(config_path);
    if (!strategy_overrides.empty()) {
      config.strategies.clear();
      for (const auto& s : strategy_overrides) {
        auto kind = gricecheck::parse_strategy(s);
        if (!kind) throw gricecheck::ConfigError("unknown strategy '" + s + "'");
        config.strategies.push_back(*kind);
      }
    }
    if (!backend_override.empty()) config.backend.kind = backend_override;
    gricecheck::validate_config(config);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (dry_run) {
      std::size_t n = gricecheck::write_rendered_prompts(config);
      std::cout << "dry run: wrote " << n << " prompts under " << config.output_dir
                << "/prompts\n";
      return kExitOk;
    }
    gricecheck::EvalRun run = gricecheck::run_eval(config);
    auto files = gricecheck::write_report_files(run.report, config.output_dir);
    std::cout << gricecheck::emit_markdown(run.report) << "\n";
    std::cout << "report: " << files.json.string() << "\n";
    std::cout << "backend calls: " << run.stats.backend_calls
              << ", cache hits: " << run.stats.cache_hits << "\n";
    if (run.stats.failed_records > 0) {
      std::cerr << "run completed with " << run.stats.failed_records << " failed record(s)\n";
      return kExitRunFailures;
    }
    return kExitOk;
  } catch (const gricecheck::CorpusError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_report(const std::string& run_dir, const std::string& format) {
  try {
    auto path = std::filesystem::path(run_dir) / "report.json";
    gricecheck::EvalReport report = gricecheck::load_report(path.string());
    if (format == "csv") {
      std::cout << gricecheck::emit_rows_csv(report);
    } else {
      std::cout << gricecheck::emit_markdown(report);
    }
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "report error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmd_verify(const std::string& report_path) {
  std::string path = report_path;
  if (std::filesystem::is_directory(path))
    path = (std::filesystem::path(path) / "report.json").string();
  try {
    auto problems = gricecheck::verify_report_file(path);
    if (problems.empty()) {
      std::cout << "ok: report is self-consistent\n";
      return kExitOk;
    }
    for (const auto& p : problems) std::cerr << "inconsistency: " << p << "\n";
    return kExitVerifyMismatch;
  } catch (const gricecheck::ReportError& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return kExitVerifyMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_render(const std::string& config_path, const std::string& example_id,
               const std::string& strategy_name) {
  try {
    gricecheck::RunConfig config = gricecheck::load_run_config(config_path);
    auto strategy = gricecheck::parse_strategy(strategy_name);
    if (!strategy) throw gricecheck::ConfigError("unknown strategy '" + strategy_name + "'");
    gricecheck::Corpus corpus = gricecheck::load_dataset(config.dataset);
    const gricecheck::ImplicatureExample* ex = corpus.find(example_id);
    if (!ex) throw gricecheck::ConfigError("example id '" + example_id + "' not in dataset");
    gricecheck::PromptBanks banks = gricecheck::load_banks(config);
    gricecheck::RenderOptions opts{config.neutral_pronouns};
    auto prompt = gricecheck::render_for(*strategy, *ex, banks, opts);
    std::cout << prompt.text << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "render error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"binary conversational-implicature evaluation harness"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "run an evaluation described by a config file");
  std::string run_config;
  std::vector<std::string> run_strategies;
  std::string run_backend;
  bool run_dry = false;
  run->add_option("--config", run_config, "run config file (json)")->required();
  run->add_option("--strategy", run_strategies,
                  "override strategies (zero|few|cot), repeatable");
  run->add_option("--backend", run_backend, "override backend kind (http|mock)")
      ->check(CLI::IsMember({"http", "mock"}));
  run->add_flag("--dry-run", run_dry, "render prompts to output_dir without calling any backend");

  // report
  auto* report = app.add_subcommand("report", "re-emit a report from a run directory");
  std::string report_dir;
  std::string report_format = "md";
  report->add_option("run_dir", report_dir, "run directory containing report.json")->required();
  report->add_option("--format", report_format, "md or csv")
      ->check(CLI::IsMember({"md", "csv"}));

  // verify
  auto* verify = app.add_subcommand("verify", "check a report's self-consistency");
  std::string verify_path;
  verify->add_option("report", verify_path, "report.json (or run directory)")->required();

  // render
  auto* render = app.add_subcommand("render", "print one rendered prompt");
  std::string render_config, render_id, render_strategy;
  render->add_option("--config", render_config, "run config file (json)")->required();
  render->add_option("--example-id", render_id, "example id from the dataset")->required();
  render->add_option("--strategy", render_strategy, "zero|few|cot")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (run->parsed()) return cmd_run(run_config, run_strategies, run_backend, run_dry);
  if (report->parsed()) return cmd_report(report_dir, report_format);
  if (verify->parsed()) return cmd_verify(verify_path);
  if (render->parsed()) return cmd_render(render_config, render_id, render_strategy);
  return kExitConfig;
}
