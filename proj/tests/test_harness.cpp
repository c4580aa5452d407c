#include <catch2/catch_amalgamated.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "gricecheck/harness.hpp"
#include "testutil.hpp"

using namespace gricecheck;
using testutil::TempDir;

namespace {

// Four-example corpus: e1,e2 gold yes; e3,e4 gold no.
void write_small_corpus(const std::filesystem::path& path, int n = 4) {
  std::string out;
  const char* gold[] = {"yes", "yes", "no", "no"};
  for (int i = 0; i < n; ++i) {
    out += R"({"id":"e)" + std::to_string(i + 1) +
           R"(","speaker_a":"Esther","speaker_b":"Juan","utterance":"Question )" +
           std::to_string(i + 1) + R"( of the set?","response":"Reply )" + std::to_string(i + 1) +
           R"(.","gold":")" + gold[i % 4] + R"(","source":"custom"})" + "\n";
  }
  testutil::spit(path, out);
}

// Scripted zero-shot outcomes: e1 correct, e2 wrong, e3 correct, e4 correct.
void write_small_script(const std::filesystem::path& path) {
  testutil::spit(path, R"({"entries": [
    {"prompt_contains": "Question 1 of the set?", "text": "Answer: Yes."},
    {"prompt_contains": "Question 2 of the set?", "text": "Answer: No."},
    {"prompt_contains": "Question 3 of the set?", "text": "Answer: No."},
    {"prompt_contains": "Question 4 of the set?", "text": "Answer: No."}
  ]})");
}

RunConfig small_config(const TempDir& tmp, std::vector<StrategyKind> strategies = {
                                               StrategyKind::ZeroShot}) {
  RunConfig c;
  c.dataset.path = (tmp / "corpus.jsonl").string();
  c.strategies = std::move(strategies);
  c.backend.kind = "mock";
  c.backend.script = (tmp / "script.json").string();
  c.backend.model = "offline-mock";
  c.retries = {3, 0, 0};
  c.concurrency = 4;
  c.cache_dir = (tmp / "cache").string();
  c.output_dir = (tmp / "out").string();
  return c;
}

nlohmann::json identity_view(const EvalReport& report) {
  auto j = report_to_json(report);
  j["meta"].erase("created_at");
  j["meta"].erase("duration_ms");
  return j;
}

}  // namespace

TEST_CASE("run_eval: scripted mock yields the hand-counted accuracy") {
  TempDir tmp;
  write_small_corpus(tmp / "corpus.jsonl");
  write_small_script(tmp / "script.json");
  auto run = run_eval(small_config(tmp));

  REQUIRE(run.report.records.size() == 4);
  REQUIRE(run.report.rows.size() == 2);
  for (const auto& row : run.report.rows) {
    CHECK(row.accuracy == 0.75);  // 3 of 4, by brute force over the outcomes
    CHECK(row.n == 4);
  }
  CHECK(run.stats.backend_calls == 4);
  CHECK(run.stats.failed_records == 0);

  // records keep corpus order
  for (int i = 0; i < 4; ++i)
    CHECK(run.report.records[i].id == "e" + std::to_string(i + 1));
  CHECK(run.report.records[1].outcome == Outcome::Wrong);
  CHECK(run.report.records[0].outcome == Outcome::Correct);
}

TEST_CASE("config validation") {
  TempDir tmp;
  write_small_corpus(tmp / "corpus.jsonl");
  write_small_script(tmp / "script.json");

  auto ok = small_config(tmp);
  CHECK_NOTHROW(validate_config(ok));

  auto no_strategies = ok;
  no_strategies.strategies.clear();
  CHECK_THROWS_AS(validate_config(no_strategies), ConfigError);

  auto duplicated = ok;
  duplicated.strategies = {StrategyKind::ZeroShot, StrategyKind::ZeroShot};
  CHECK_THROWS_AS(validate_config(duplicated), ConfigError);

  auto bad_k = ok;
  bad_k.concurrency = 0;
  CHECK_THROWS_AS(validate_config(bad_k), ConfigError);

  auto same_dirs = ok;
  same_dirs.output_dir = same_dirs.cache_dir;
  CHECK_THROWS_AS(validate_config(same_dirs), ConfigError);

  auto bad_samples = ok;
  bad_samples.samples_per_example = 0;
  CHECK_THROWS_AS(validate_config(bad_samples), ConfigError);

  auto stale_pin = ok;
  stale_pin.template_version = "v0";
  CHECK_THROWS_AS(validate_config(stale_pin), ConfigError);

  auto no_script = ok;
  no_script.backend.script.clear();
  CHECK_THROWS_AS(validate_config(no_script), ConfigError);
}

TEST_CASE("config file parsing resolves paths against the config directory") {
  TempDir tmp;
  write_small_corpus(tmp / "corpus.jsonl");
  write_small_script(tmp / "script.json");
  testutil::spit(tmp / "run.json", R"({
    "dataset": {"path": "corpus.jsonl", "format": "canonical"},
    "strategies": ["zero", "cot"],
    "backend": {"kind": "mock", "script": "script.json"},
    "cache_dir": "cache",
    "output_dir": "out"
  })");
  auto config = load_run_config((tmp / "run.json").string());
  CHECK(config.dataset.path == (tmp / "corpus.jsonl").string());
  CHECK(config.backend.script == (tmp / "script.json").string());
  REQUIRE(config.strategies.size() == 2);
  CHECK(config.strategies[0] == StrategyKind::ZeroShot);
  CHECK(config.strategies[1] == StrategyKind::ChainOfThought);
  CHECK(config.concurrency == 4);  // default
  CHECK_NOTHROW(validate_config(config));
}

TEST_CASE("run_eval: re-run with a warm cache issues zero backend calls and identical bytes") {
  TempDir tmp;
  write_small_corpus(tmp / "corpus.jsonl");
  write_small_script(tmp / "script.json");
  auto config = small_config(tmp);

  auto first = run_eval(config);
  CHECK(first.stats.backend_calls == 4);
  CHECK(first.stats.cache_hits == 0);

  auto second = run_eval(config);
  CHECK(second.stats.backend_calls == 0);
  CHECK(second.stats.cache_hits == 4);

  CHECK(identity_view(first.report).dump() == identity_view(second.report).dump());
}

TEST_CASE("run_eval: resuming completes with exactly the remaining calls") {
  TempDir tmp;
  write_small_corpus(tmp / "partial.jsonl", 2);
  write_small_corpus(tmp / "corpus.jsonl", 4);
  write_small_script(tmp / "script.json");

  auto config = small_config(tmp);
  config.dataset.path = (tmp / "partial.jsonl").string();
  auto partial = run_eval(config);
  CHECK(partial.stats.backend_calls == 2);

  config.dataset.path = (tmp / "corpus.jsonl").string();
  auto full = run_eval(config);
  CHECK(full.stats.backend_calls == 2);  // only the two new prompts
  CHECK(full.report.records.size() == 4);
}

TEST_CASE("run_eval: records and scores are independent of concurrency") {
  TempDir tmp;
  write_small_corpus(tmp / "corpus.jsonl");
  write_small_script(tmp / "script.json");

  auto serial = small_config(tmp, {StrategyKind::ZeroShot, StrategyKind::FewShot,
                                   StrategyKind::ChainOfThought});
  serial.concurrency = 1;
  serial.cache_dir = (tmp / "cache1").string();
  auto wide = serial;
  wide.concurrency = 8;
  wide.cache_dir = (tmp / "cache8").string();

  auto a = run_eval(serial);
  auto b = run_eval(wide);
  // the configs differ (K, cache path) so their digests differ; everything
  // the evaluation itself produced must not
  auto ja = identity_view(a.report);
  auto jb = identity_view(b.report);
  ja["meta"].erase("config_digest");
  jb["meta"].erase("config_digest");
  CHECK(ja.dump() == jb.dump());

  // record conservation: every (strategy, example) pair exactly once
  REQUIRE(a.report.records.size() == 12);
  std::set<std::string> seen;
  for (const auto& r : a.report.records)
    seen.insert(std::string(to_string(r.strategy)) + "/" + r.id);
  CHECK(seen.size() == 12);
}

TEST_CASE("run_eval: unscripted prompts become failed records, not dropped ones") {
  TempDir tmp;
  write_small_corpus(tmp / "corpus.jsonl");
  // only 3 of the 4 examples scripted
  testutil::spit(tmp / "script.json", R"({"entries": [
    {"prompt_contains": "Question 1 of the set?", "text": "Answer: Yes."},
    {"prompt_contains": "Question 2 of the set?", "text": "Answer: No."},
    {"prompt_contains": "Question 3 of the set?", "text": "Answer: No."}
  ]})");
  auto run = run_eval(small_config(tmp));
  REQUIRE(run.report.records.size() == 4);
  CHECK(run.stats.failed_records == 1);
  CHECK(run.report.records[3].failed);
  CHECK(run.report.records[3].error.find("unscripted") != std::string::npos);
  // failed records stay out of the denominators
  CHECK(run.report.rows[0].n == 3);
}

TEST_CASE("run_eval: samples per example and majority aggregation") {
  TempDir tmp;
  write_small_corpus(tmp / "corpus.jsonl");
  write_small_script(tmp / "script.json");
  auto config = small_config(tmp);
  config.samples_per_example = 3;
  config.aggregation = Aggregation::MajorityVote;

  auto run = run_eval(config);
  REQUIRE(run.report.records.size() == 12);  // corpus x strategies x samples
  for (const auto& row : run.report.rows) {
    CHECK(row.n == 4);  // majority vote scores one pair per example
    CHECK(row.accuracy == 0.75);
  }
  CHECK(verify_report(run.report).empty());
}

TEST_CASE("emit_report: markdown and csv shapes") {
  TempDir tmp;
  write_small_corpus(tmp / "corpus.jsonl");
  write_small_script(tmp / "script.json");
  auto run = run_eval(small_config(tmp, {StrategyKind::ZeroShot, StrategyKind::FewShot,
                                         StrategyKind::ChainOfThought}));

  std::string md = emit_markdown(run.report);
  // one data row per strategy, in run order, in each table
  auto zs = md.find("| zero-shot |");
  auto fs = md.find("| few-shot |");
  auto cot = md.find("| chain-of-thought |");
  REQUIRE(zs != std::string::npos);
  REQUIRE(fs != std::string::npos);
  REQUIRE(cot != std::string::npos);
  CHECK(zs < fs);
  CHECK(fs < cot);
  CHECK(md.find("Human baseline: 0.862") != std::string::npos);

  // csv rows re-parse to the in-memory values at full precision
  std::string csv = emit_rows_csv(run.report);
  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  CHECK(header ==
        "strategy,averaging,precision,recall,f1,accuracy,n,excluded,indeterminate,human_delta");
  std::size_t row_idx = 0;
  std::string line;
  while (std::getline(lines, line)) {
    REQUIRE(row_idx < run.report.rows.size());
    const auto& row = run.report.rows[row_idx];
    std::vector<std::string> cells;
    std::istringstream cell_stream(line);
    std::string cell;
    while (std::getline(cell_stream, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 10);
    CHECK(cells[0] == to_string(row.strategy));
    CHECK(cells[1] == to_string(row.averaging));
    CHECK(std::stod(cells[2]) == row.precision);
    CHECK(std::stod(cells[3]) == row.recall);
    CHECK(std::stod(cells[4]) == row.f1);
    CHECK(std::stod(cells[5]) == row.accuracy);
    CHECK(std::stoul(cells[6]) == row.n);
    CHECK(std::stod(cells[9]) == row.human_delta);
    ++row_idx;
  }
  CHECK(row_idx == run.report.rows.size());
}

TEST_CASE("report files round-trip through json") {
  TempDir tmp;
  write_small_corpus(tmp / "corpus.jsonl");
  write_small_script(tmp / "script.json");
  auto config = small_config(tmp);
  auto run = run_eval(config);
  auto files = write_report_files(run.report, config.output_dir);

  auto loaded = load_report(files.json.string());
  CHECK(identity_view(loaded).dump() == identity_view(run.report).dump());
  CHECK(verify_report(loaded).empty());
}

TEST_CASE("verify_report: tampering is caught") {
  TempDir tmp;
  write_small_corpus(tmp / "corpus.jsonl");
  write_small_script(tmp / "script.json");
  auto config = small_config(tmp);
  auto run = run_eval(config);
  auto files = write_report_files(run.report, config.output_dir);

  SECTION("untouched report verifies clean") {
    CHECK(verify_report_file(files.json.string()).empty());
  }

  SECTION("a flipped verdict breaks the affected strategy row") {
    auto j = nlohmann::json::parse(testutil::slurp(files.json));
    j["records"][0]["verdict"] = "no";  // was yes
    testutil::spit(files.json, j.dump());
    auto problems = verify_report_file(files.json.string());
    REQUIRE(!problems.empty());
    bool names_row = false;
    for (const auto& p : problems)
      if (p.find("zero_shot") != std::string::npos && p.find("row") != std::string::npos)
        names_row = true;
    CHECK(names_row);
  }

  SECTION("a flipped outcome contradicts its verdict") {
    auto j = nlohmann::json::parse(testutil::slurp(files.json));
    j["records"][0]["outcome"] = "wrong";  // was correct
    testutil::spit(files.json, j.dump());
    auto problems = verify_report_file(files.json.string());
    REQUIRE(!problems.empty());
    CHECK(problems[0].find("does not follow") != std::string::npos);
  }

  SECTION("a dropped record breaks the conservation count") {
    auto j = nlohmann::json::parse(testutil::slurp(files.json));
    j["records"].erase(3);
    testutil::spit(files.json, j.dump());
    auto problems = verify_report_file(files.json.string());
    REQUIRE(!problems.empty());
  }

  SECTION("truncated file is malformed") {
    auto text = testutil::slurp(files.json);
    testutil::spit(files.json, text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(verify_report_file(files.json.string()), ReportError);
  }
}

TEST_CASE("dry run renders prompts without any backend traffic") {
  TempDir tmp;
  write_small_corpus(tmp / "corpus.jsonl");
  testutil::spit(tmp / "script.json", R"({"entries": []})");
  auto config = small_config(tmp, {StrategyKind::ZeroShot, StrategyKind::ChainOfThought});
  auto n = write_rendered_prompts(config);
  CHECK(n == 8);
  CHECK(std::filesystem::exists(std::filesystem::path(config.output_dir) / "prompts" /
                                "zero_shot" / "e1.txt"));
  CHECK(std::filesystem::exists(std::filesystem::path(config.output_dir) / "prompts" /
                                "chain_of_thought" / "e4.txt"));
  auto text = testutil::slurp(std::filesystem::path(config.output_dir) / "prompts" / "zero_shot" /
                              "e1.txt");
  CHECK(text.find("Question 1 of the set?") != std::string::npos);
}
