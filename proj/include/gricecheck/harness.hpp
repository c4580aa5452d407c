#pragma once

// Run orchestration: declarative run configuration, the evaluation loop with
// bounded concurrency and deterministic aggregation, report emission in the
// shape of the benchmark tables, and report self-verification.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "gricecheck/backend.hpp"
#include "gricecheck/corpus.hpp"
#include "gricecheck/digest.hpp"
#include "gricecheck/extraction.hpp"
#include "gricecheck/metrics.hpp"
#include "gricecheck/prompting.hpp"
#include "gricecheck/version.hpp"

namespace gricecheck {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::string message) : std::runtime_error(std::move(message)) {}
};

class ReportError : public std::runtime_error {
 public:
  explicit ReportError(std::string message) : std::runtime_error(std::move(message)) {}
};

enum class Aggregation { PerSample, MajorityVote };

inline std::string_view to_string(Aggregation a) {
  return a == Aggregation::PerSample ? "per_sample" : "majority_vote";
}

inline std::optional<Aggregation> parse_aggregation(std::string_view s) {
  if (s == "per_sample") return Aggregation::PerSample;
  if (s == "majority_vote" || s == "majority") return Aggregation::MajorityVote;
  return std::nullopt;
}

struct DatasetConfig {
  std::string path;
  std::string format = "canonical";  // canonical | bigbench | ludwig
  FieldMapping mapping;
};

struct BackendSpec {
  std::string kind = "mock";  // mock | http
  std::string endpoint;
  std::string wire = "completions";
  std::string model = "offline-mock";
  double temperature = 0.0;
  int max_tokens = 256;
  std::vector<std::string> stop;
  std::string script;  // mock script path
  int timeout_ms = 30000;
  std::string api_key;  // filled from GRICECHECK_API_KEY
};

struct RunConfig {
  DatasetConfig dataset;
  std::vector<StrategyKind> strategies;
  BackendSpec backend;
  RetryPolicy retries{3, 200, 30000};
  int concurrency = 4;
  int rate_per_minute = 0;  // 0 = no per-run rate budget
  IndeterminatePolicy policy = IndeterminatePolicy::StrictWrong;
  std::string cache_dir;
  std::string output_dir;
  std::string template_version = std::string(kTemplateVersion);
  int samples_per_example = 1;
  Aggregation aggregation = Aggregation::PerSample;
  bool neutral_pronouns = false;
  std::string shots_path;      // empty = built-in few-shot bank
  std::string exemplars_path;  // empty = built-in chain-of-thought bank
};

// ---------------------------------------------------------------------------
// Config loading

namespace detail {

inline std::string resolve_path(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  std::filesystem::path fp(p);
  if (fp.is_absolute()) return fp.lexically_normal().string();
  return (base / fp).lexically_normal().string();
}

inline FieldMapping mapping_from_json(const nlohmann::json& j) {
  FieldMapping m;
  m.container = j.value("container", "");
  m.records_field = j.value("records_field", "");
  m.id_field = j.value("id_field", "");
  m.speaker_a_field = j.value("speaker_a_field", "");
  m.speaker_b_field = j.value("speaker_b_field", "");
  m.utterance_field = j.value("utterance_field", "");
  m.response_field = j.value("response_field", "");
  m.combined_field = j.value("combined_field", "");
  m.combined_pattern = j.value("combined_pattern", "");
  m.label_field = j.value("label_field", "");
  if (j.contains("label_map")) {
    for (const auto& [k, v] : j.at("label_map").items())
      m.label_map[k] = v.get<std::string>();
  }
  return m;
}

inline nlohmann::json mapping_to_json(const FieldMapping& m) {
  nlohmann::json j;
  j["container"] = m.container;
  j["records_field"] = m.records_field;
  j["id_field"] = m.id_field;
  j["speaker_a_field"] = m.speaker_a_field;
  j["speaker_b_field"] = m.speaker_b_field;
  j["utterance_field"] = m.utterance_field;
  j["response_field"] = m.response_field;
  j["combined_field"] = m.combined_field;
  j["combined_pattern"] = m.combined_pattern;
  j["label_field"] = m.label_field;
  j["label_map"] = m.label_map;
  return j;
}

}  // namespace detail

inline void validate_config(const RunConfig& c) {
  if (c.dataset.path.empty()) throw ConfigError("dataset.path is required");
  if (c.dataset.format != "canonical" && c.dataset.format != "bigbench" &&
      c.dataset.format != "ludwig")
    throw ConfigError("dataset.format must be canonical, bigbench, or ludwig");
  if (c.strategies.empty()) throw ConfigError("at least one strategy is required");
  for (std::size_t i = 0; i < c.strategies.size(); ++i)
    for (std::size_t k = i + 1; k < c.strategies.size(); ++k)
      if (c.strategies[i] == c.strategies[k])
        throw ConfigError("strategy '" + std::string(to_string(c.strategies[i])) +
                          "' listed twice");
  if (c.backend.kind != "mock" && c.backend.kind != "http")
    throw ConfigError("backend.kind must be mock or http");
  if (c.backend.kind == "mock" && c.backend.script.empty())
    throw ConfigError("mock backend requires backend.script");
  if (c.backend.kind == "http" && c.backend.endpoint.empty())
    throw ConfigError("http backend requires backend.endpoint");
  if (!parse_wire(c.backend.wire)) throw ConfigError("backend.wire must be completions or chat");
  if (c.backend.max_tokens < 1) throw ConfigError("backend.max_tokens must be >= 1");
  if (c.backend.temperature < 0.0) throw ConfigError("backend.temperature must be >= 0");
  if (c.concurrency < 1) throw ConfigError("concurrency must be >= 1");
  if (c.rate_per_minute < 0) throw ConfigError("rate_per_minute must be >= 0");
  if (c.retries.max_attempts < 1) throw ConfigError("retries.max_attempts must be >= 1");
  if (c.samples_per_example < 1) throw ConfigError("samples_per_example must be >= 1");
  if (c.cache_dir.empty()) throw ConfigError("cache_dir is required");
  if (c.output_dir.empty()) throw ConfigError("output_dir is required");
  if (std::filesystem::path(c.cache_dir) == std::filesystem::path(c.output_dir))
    throw ConfigError("output_dir must be distinct from cache_dir");
  if (c.template_version != kTemplateVersion)
    throw ConfigError("config pins template_version '" + c.template_version +
                      "' but this build renders '" + std::string(kTemplateVersion) + "'");
}

inline RunConfig parse_run_config(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir) {
  RunConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config root must be an object");
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      c.dataset.path = detail::resolve_path(base_dir, d.value("path", ""));
      c.dataset.format = d.value("format", "canonical");
      if (d.contains("field_mapping"))
        c.dataset.mapping = detail::mapping_from_json(d.at("field_mapping"));
    }
    if (j.contains("strategies")) {
      for (const auto& s : j.at("strategies")) {
        auto kind = parse_strategy(s.get<std::string>());
        if (!kind) throw ConfigError("unknown strategy '" + s.get<std::string>() + "'");
        c.strategies.push_back(*kind);
      }
    }
    if (j.contains("backend")) {
      const auto& b = j.at("backend");
      c.backend.kind = b.value("kind", "mock");
      c.backend.endpoint = b.value("endpoint", "");
      c.backend.wire = b.value("wire", "completions");
      c.backend.model = b.value("model", c.backend.kind == "mock" ? "offline-mock" : "");
      c.backend.temperature = b.value("temperature", 0.0);
      c.backend.max_tokens = b.value("max_tokens", 256);
      if (b.contains("stop"))
        for (const auto& s : b.at("stop")) c.backend.stop.push_back(s.get<std::string>());
      c.backend.script = detail::resolve_path(base_dir, b.value("script", ""));
      c.backend.timeout_ms = b.value("timeout_ms", 30000);
    }
    if (j.contains("retries")) {
      const auto& r = j.at("retries");
      c.retries.max_attempts = r.value("max_attempts", 3);
      c.retries.base_delay_ms = r.value("base_delay_ms", std::int64_t{200});
      c.retries.max_delay_ms = r.value("max_delay_ms", std::int64_t{30000});
    }
    c.concurrency = j.value("concurrency", 4);
    c.rate_per_minute = j.value("rate_per_minute", 0);
    if (j.contains("indeterminate_policy")) {
      auto p = parse_policy(j.at("indeterminate_policy").get<std::string>());
      if (!p) throw ConfigError("indeterminate_policy must be strict_wrong or exclude");
      c.policy = *p;
    }
    c.cache_dir = detail::resolve_path(base_dir, j.value("cache_dir", ""));
    c.output_dir = detail::resolve_path(base_dir, j.value("output_dir", ""));
    c.template_version = j.value("template_version", std::string(kTemplateVersion));
    c.samples_per_example = j.value("samples_per_example", 1);
    if (j.contains("aggregation")) {
      auto a = parse_aggregation(j.at("aggregation").get<std::string>());
      if (!a) throw ConfigError("aggregation must be per_sample or majority_vote");
      c.aggregation = *a;
    }
    c.neutral_pronouns = j.value("neutral_pronouns", false);
    c.shots_path = detail::resolve_path(base_dir, j.value("shots_path", ""));
    c.exemplars_path = detail::resolve_path(base_dir, j.value("exemplars_path", ""));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (const char* key = std::getenv("GRICECHECK_API_KEY")) c.backend.api_key = key;
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config file not found: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return parse_run_config(j, std::filesystem::absolute(path).parent_path());
}

/// Canonical serialization of the resolved config; its digest is embedded in
/// reports for provenance. The API key never enters the digest material.
inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["dataset"] = {{"path", c.dataset.path},
                  {"format", c.dataset.format},
                  {"field_mapping", detail::mapping_to_json(c.dataset.mapping)}};
  auto strategies = nlohmann::json::array();
  for (auto s : c.strategies) strategies.push_back(std::string(to_string(s)));
  j["strategies"] = strategies;
  j["backend"] = {{"kind", c.backend.kind},       {"endpoint", c.backend.endpoint},
                  {"wire", c.backend.wire},       {"model", c.backend.model},
                  {"temperature", c.backend.temperature},
                  {"max_tokens", c.backend.max_tokens},
                  {"stop", c.backend.stop},       {"script", c.backend.script},
                  {"timeout_ms", c.backend.timeout_ms}};
  j["retries"] = {{"max_attempts", c.retries.max_attempts},
                  {"base_delay_ms", c.retries.base_delay_ms},
                  {"max_delay_ms", c.retries.max_delay_ms}};
  j["concurrency"] = c.concurrency;
  j["rate_per_minute"] = c.rate_per_minute;
  j["indeterminate_policy"] = std::string(to_string(c.policy));
  j["cache_dir"] = c.cache_dir;
  j["output_dir"] = c.output_dir;
  j["template_version"] = c.template_version;
  j["samples_per_example"] = c.samples_per_example;
  j["aggregation"] = std::string(to_string(c.aggregation));
  j["neutral_pronouns"] = c.neutral_pronouns;
  j["shots_path"] = c.shots_path;
  j["exemplars_path"] = c.exemplars_path;
  return j;
}

inline std::string config_digest(const RunConfig& c) { return sha256_hex(config_to_json(c).dump()); }

// ---------------------------------------------------------------------------
// Report model

struct RecordEntry {
  std::string id;
  StrategyKind strategy = StrategyKind::ZeroShot;
  int sample = 0;
  std::string prompt_digest;
  std::string raw;
  Verdict::Value verdict = Verdict::Value::Indeterminate;
  std::string evidence;
  Label gold = Label::Yes;
  bool failed = false;
  Outcome outcome = Outcome::Wrong;  // meaningless when failed
  std::string error;                 // set when failed
  bool cached = false;               // in-memory only, not serialized
};

struct ReportMeta {
  std::string config_digest;
  std::string template_version;
  std::string created_at;   // excluded from identity comparisons
  std::int64_t duration_ms = 0;  // likewise
  Source dataset_source = Source::Custom;
  std::string dataset_path;
  std::size_t n_examples = 0;
  IndeterminatePolicy policy = IndeterminatePolicy::StrictWrong;
  int samples_per_example = 1;
  Aggregation aggregation = Aggregation::PerSample;
  std::vector<StrategyKind> strategies;
  std::string backend_kind;
  std::string model;
  std::size_t failed_records = 0;
};

struct EvalReport {
  ReportMeta meta;
  std::vector<MetricRow> rows;       // macro row first per strategy
  std::vector<RecordEntry> records;  // ordered by (strategy, corpus order, sample)
};

struct RunStats {
  std::size_t backend_calls = 0;  // calls that reached the innermost backend
  std::size_t cache_hits = 0;
  std::size_t failed_records = 0;
};

struct EvalRun {
  EvalReport report;
  RunStats stats;
};

// ---------------------------------------------------------------------------
// Aggregation of record verdicts into metric pairs

namespace detail {

inline std::vector<std::pair<Verdict::Value, Label>> collect_pairs(
    const std::vector<const RecordEntry*>& records, Aggregation aggregation) {
  std::vector<std::pair<Verdict::Value, Label>> pairs;
  if (aggregation == Aggregation::PerSample) {
    for (const auto* r : records)
      if (!r->failed) pairs.emplace_back(r->verdict, r->gold);
    return pairs;
  }
  // Majority vote per example over its non-failed samples; ties and all-
  // indeterminate votes stay indeterminate. Examples whose samples all failed
  // contribute no pair, matching the per-sample treatment of failures.
  std::vector<std::string> order;
  std::map<std::string, std::pair<int, int>> votes;  // id -> (yes, no)
  std::map<std::string, Label> gold;
  std::map<std::string, int> seen;
  for (const auto* r : records) {
    if (!seen.count(r->id)) order.push_back(r->id);
    seen[r->id]++;
    gold[r->id] = r->gold;
    if (r->failed) continue;
    if (!votes.count(r->id)) votes[r->id] = {0, 0};
    if (r->verdict == Verdict::Value::Yes) votes[r->id].first++;
    if (r->verdict == Verdict::Value::No) votes[r->id].second++;
  }
  for (const auto& id : order) {
    if (!votes.count(id)) continue;  // every sample failed
    auto [yes, no] = votes[id];
    Verdict::Value v = Verdict::Value::Indeterminate;
    if (yes > no) v = Verdict::Value::Yes;
    else if (no > yes) v = Verdict::Value::No;
    pairs.emplace_back(v, gold[id]);
  }
  return pairs;
}

inline MetricRow zero_row(StrategyKind strategy, Averaging averaging,
                          const ConfusionMatrix& m) {
  MetricRow row;
  row.strategy = strategy;
  row.averaging = averaging;
  row.n = m.total();
  row.excluded = m.excluded;
  row.indeterminate = m.indeterminate;
  row.human_delta = compare_to_human(row);
  return row;
}

inline std::vector<MetricRow> rows_for_strategy(StrategyKind strategy,
                                                const std::vector<const RecordEntry*>& records,
                                                IndeterminatePolicy policy,
                                                Aggregation aggregation) {
  auto pairs = collect_pairs(records, aggregation);
  ConfusionMatrix m = confusion(pairs, policy);
  std::vector<MetricRow> rows;
  for (Averaging avg : {Averaging::Macro, Averaging::PerClassYes}) {
    if (m.determinate_total() == 0) {
      // Nothing determinate to score (all excluded or failed); emit a zero
      // row so the report stays well formed and the counts explain it.
      rows.push_back(zero_row(strategy, avg, m));
      continue;
    }
    MetricRow row = scores(m, avg);
    row.strategy = strategy;
    row.human_delta = compare_to_human(row);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rendering dispatch shared by the evaluation loop, dry runs, and the CLI
// render subcommand.

struct PromptBanks {
  std::vector<Exemplar> shots;      // few-shot
  std::vector<Exemplar> exemplars;  // chain-of-thought
};

inline PromptBanks load_banks(const RunConfig& c) {
  PromptBanks banks;
  banks.shots = c.shots_path.empty() ? builtin_shot_bank() : import_exemplars(c.shots_path);
  banks.exemplars =
      c.exemplars_path.empty() ? builtin_exemplar_bank() : import_exemplars(c.exemplars_path);
  return banks;
}

inline RenderedPrompt render_for(StrategyKind strategy, const ImplicatureExample& ex,
                                 const PromptBanks& banks, const RenderOptions& opts = {}) {
  switch (strategy) {
    case StrategyKind::ZeroShot: return render_zero_shot(ex, opts);
    case StrategyKind::FewShot: return render_few_shot(ex, banks.shots, opts);
    default: return render_cot(ex, banks.exemplars, opts);
  }
}

inline Corpus load_dataset(const DatasetConfig& d) {
  if (d.format == "bigbench") return load_bigbench(d.path, d.mapping);
  if (d.format == "ludwig") return load_ludwig(d.path, d.mapping);
  return load_canonical(d.path);
}

// ---------------------------------------------------------------------------
// Evaluation loop

inline EvalRun run_eval(const RunConfig& config) {
  validate_config(config);
  const auto t_start = std::chrono::steady_clock::now();

  Corpus corpus = load_dataset(config.dataset);
  PromptBanks banks = load_banks(config);
  RenderOptions opts{config.neutral_pronouns};

  // Backend chain: cache(retry(throttle(count(base)))). The counter sits
  // innermost so cache hits never reach it; the throttle sits inside retry so
  // every attempt consumes rate budget.
  std::shared_ptr<CompletionBackend> base;
  if (config.backend.kind == "mock") {
    base = std::make_shared<MockBackend>(MockBackend::from_script_file(config.backend.script));
  } else {
    HttpBackendConfig http;
    http.endpoint = config.backend.endpoint;
    http.wire = *parse_wire(config.backend.wire);
    http.api_key = config.backend.api_key;
    http.timeout_ms = config.backend.timeout_ms;
    base = std::make_shared<HttpBackend>(std::move(http));
  }
  auto counter = std::make_shared<CountingBackend>(base);
  std::shared_ptr<CompletionBackend> throttled = counter;
  if (config.rate_per_minute > 0)
    throttled = std::make_shared<ThrottledBackend>(counter, config.rate_per_minute);
  auto retry = std::make_shared<RetryBackend>(throttled, config.retries);
  auto backend =
      std::make_shared<CachedBackend>(retry, config.cache_dir, config.template_version);

  struct Task {
    std::size_t strategy_idx;
    std::size_t example_idx;
    int sample;
  };
  std::vector<Task> tasks;
  tasks.reserve(config.strategies.size() * corpus.examples.size() *
                static_cast<std::size_t>(config.samples_per_example));
  for (std::size_t si = 0; si < config.strategies.size(); ++si)
    for (std::size_t ei = 0; ei < corpus.examples.size(); ++ei)
      for (int s = 0; s < config.samples_per_example; ++s) tasks.push_back({si, ei, s});

  std::vector<RecordEntry> records(tasks.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> cache_hits{0};

  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= tasks.size()) return;
      const Task& t = tasks[i];
      const StrategyKind strategy = config.strategies[t.strategy_idx];
      const ImplicatureExample& ex = corpus.examples[t.example_idx];
      RecordEntry& rec = records[i];
      rec.id = ex.id;
      rec.strategy = strategy;
      rec.sample = t.sample;
      rec.gold = ex.gold;
      try {
        RenderedPrompt prompt = render_for(strategy, ex, banks, opts);
        rec.prompt_digest = sha256_hex(prompt.text);
        CompletionRequest req{config.backend.model, prompt.text, config.backend.max_tokens,
                              config.backend.temperature, config.backend.stop};
        CompletionResponse res = backend->complete(req);
        if (res.cached) cache_hits.fetch_add(1, std::memory_order_relaxed);
        rec.cached = res.cached;
        rec.raw = res.text;
        Verdict v = extract_verdict(res.text);
        rec.verdict = v.value;
        rec.evidence = v.evidence;
        rec.outcome = apply_policy(v, ex.gold, config.policy);
      } catch (const std::exception& e) {
        rec.failed = true;
        rec.error = e.what();
      }
    }
  };

  const std::size_t n_threads =
      std::min<std::size_t>(static_cast<std::size_t>(config.concurrency), tasks.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  EvalRun run;
  run.report.records = std::move(records);
  run.stats.backend_calls = counter->calls();
  run.stats.cache_hits = cache_hits.load();

  for (std::size_t si = 0; si < config.strategies.size(); ++si) {
    std::vector<const RecordEntry*> strategy_records;
    for (const auto& r : run.report.records)
      if (r.strategy == config.strategies[si]) strategy_records.push_back(&r);
    auto rows = detail::rows_for_strategy(config.strategies[si], strategy_records, config.policy,
                                          config.aggregation);
    run.report.rows.insert(run.report.rows.end(), rows.begin(), rows.end());
  }

  ReportMeta& meta = run.report.meta;
  meta.config_digest = config_digest(config);
  meta.template_version = config.template_version;
  meta.created_at = detail::utc_timestamp();
  meta.duration_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - t_start)
                         .count();
  meta.dataset_source = corpus.source;
  meta.dataset_path = config.dataset.path;
  meta.n_examples = corpus.examples.size();
  meta.policy = config.policy;
  meta.samples_per_example = config.samples_per_example;
  meta.aggregation = config.aggregation;
  meta.strategies = config.strategies;
  meta.backend_kind = config.backend.kind;
  meta.model = config.backend.model;
  for (const auto& r : run.report.records)
    if (r.failed) ++meta.failed_records;
  run.stats.failed_records = meta.failed_records;
  return run;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  const ReportMeta& m = report.meta;
  j["meta"] = {{"tool", "gricecheck"},
               {"config_digest", m.config_digest},
               {"template_version", m.template_version},
               {"created_at", m.created_at},
               {"duration_ms", m.duration_ms},
               {"dataset",
                {{"source", std::string(to_string(m.dataset_source))},
                 {"path", m.dataset_path},
                 {"examples", m.n_examples}}},
               {"indeterminate_policy", std::string(to_string(m.policy))},
               {"samples_per_example", m.samples_per_example},
               {"aggregation", std::string(to_string(m.aggregation))},
               {"backend", {{"kind", m.backend_kind}, {"model", m.model}}},
               {"human_baseline_accuracy", kHumanBaselineAccuracy},
               {"failed_records", m.failed_records}};
  auto strategies = nlohmann::json::array();
  for (auto s : m.strategies) strategies.push_back(std::string(to_string(s)));
  j["meta"]["strategies"] = strategies;

  j["rows"] = nlohmann::json::array();
  for (const auto& row : report.rows) {
    j["rows"].push_back({{"strategy", std::string(to_string(row.strategy))},
                         {"averaging", std::string(to_string(row.averaging))},
                         {"precision", row.precision},
                         {"recall", row.recall},
                         {"f1", row.f1},
                         {"accuracy", row.accuracy},
                         {"n", row.n},
                         {"excluded", row.excluded},
                         {"indeterminate", row.indeterminate},
                         {"human_delta", row.human_delta}});
  }

  j["records"] = nlohmann::json::array();
  for (const auto& r : report.records) {
    nlohmann::json rec = {{"id", r.id},
                          {"strategy", std::string(to_string(r.strategy))},
                          {"sample", r.sample},
                          {"prompt_digest", r.prompt_digest},
                          {"raw", r.raw},
                          {"verdict", std::string(to_string(r.verdict))},
                          {"evidence", r.evidence},
                          {"gold", std::string(to_string(r.gold))},
                          {"outcome", r.failed ? "failed" : std::string(to_string(r.outcome))}};
    if (r.failed) rec["error"] = r.error;
    j["records"].push_back(std::move(rec));
  }
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport report;
  try {
    const auto& m = j.at("meta");
    report.meta.config_digest = m.at("config_digest").get<std::string>();
    report.meta.template_version = m.at("template_version").get<std::string>();
    report.meta.created_at = m.value("created_at", "");
    report.meta.duration_ms = m.value("duration_ms", std::int64_t{0});
    auto src = detail::parse_source(m.at("dataset").at("source").get<std::string>());
    if (!src) throw ReportError("bad dataset source");
    report.meta.dataset_source = *src;
    report.meta.dataset_path = m.at("dataset").value("path", "");
    report.meta.n_examples = m.at("dataset").at("examples").get<std::size_t>();
    auto policy = parse_policy(m.at("indeterminate_policy").get<std::string>());
    if (!policy) throw ReportError("bad indeterminate_policy");
    report.meta.policy = *policy;
    report.meta.samples_per_example = m.at("samples_per_example").get<int>();
    auto agg = parse_aggregation(m.value("aggregation", "per_sample"));
    if (!agg) throw ReportError("bad aggregation");
    report.meta.aggregation = *agg;
    for (const auto& s : m.at("strategies")) {
      auto kind = parse_strategy(s.get<std::string>());
      if (!kind) throw ReportError("bad strategy tag");
      report.meta.strategies.push_back(*kind);
    }
    report.meta.backend_kind = m.at("backend").value("kind", "");
    report.meta.model = m.at("backend").value("model", "");
    report.meta.failed_records = m.value("failed_records", std::size_t{0});

    for (const auto& rj : j.at("rows")) {
      MetricRow row;
      auto kind = parse_strategy(rj.at("strategy").get<std::string>());
      auto avg = parse_averaging(rj.at("averaging").get<std::string>());
      if (!kind || !avg) throw ReportError("bad row tags");
      row.strategy = *kind;
      row.averaging = *avg;
      row.precision = rj.at("precision").get<double>();
      row.recall = rj.at("recall").get<double>();
      row.f1 = rj.at("f1").get<double>();
      row.accuracy = rj.at("accuracy").get<double>();
      row.n = rj.at("n").get<std::size_t>();
      row.excluded = rj.at("excluded").get<std::size_t>();
      row.indeterminate = rj.at("indeterminate").get<std::size_t>();
      row.human_delta = rj.at("human_delta").get<double>();
      report.rows.push_back(row);
    }

    for (const auto& rj : j.at("records")) {
      RecordEntry r;
      r.id = rj.at("id").get<std::string>();
      auto kind = parse_strategy(rj.at("strategy").get<std::string>());
      if (!kind) throw ReportError("bad record strategy");
      r.strategy = *kind;
      r.sample = rj.at("sample").get<int>();
      r.prompt_digest = rj.at("prompt_digest").get<std::string>();
      r.raw = rj.at("raw").get<std::string>();
      auto v = parse_verdict_value(rj.at("verdict").get<std::string>());
      if (!v) throw ReportError("bad record verdict");
      r.verdict = *v;
      r.evidence = rj.value("evidence", "");
      auto gold = detail::parse_label(rj.at("gold").get<std::string>());
      if (!gold) throw ReportError("bad record gold");
      r.gold = *gold;
      std::string outcome = rj.at("outcome").get<std::string>();
      if (outcome == "failed") {
        r.failed = true;
        r.error = rj.value("error", "");
      } else if (outcome == "correct") {
        r.outcome = Outcome::Correct;
      } else if (outcome == "wrong") {
        r.outcome = Outcome::Wrong;
      } else if (outcome == "excluded") {
        r.outcome = Outcome::Excluded;
      } else {
        throw ReportError("bad record outcome '" + outcome + "'");
      }
      report.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ReportError(std::string("malformed report: ") + e.what());
  }
  return report;
}

namespace detail {

inline std::string format_2dp(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string format_3dp(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

inline std::string format_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

}  // namespace detail

/// Markdown report mirroring the benchmark tables: one row per strategy with
/// prec./rec./F1/acc. columns, macro scores as the headline, the positive-
/// class reading alongside, and the human-baseline comparison.
inline std::string emit_markdown(const EvalReport& report) {
  const ReportMeta& m = report.meta;
  std::string out;
  out += "# Implicature evaluation report\n\n";
  out += "- dataset: " + std::string(to_string(m.dataset_source)) + " (" +
         std::to_string(m.n_examples) + " examples)\n";
  out += "- strategies: ";
  for (std::size_t i = 0; i < m.strategies.size(); ++i) {
    if (i) out += ", ";
    out += std::string(display_name(m.strategies[i]));
  }
  out += "\n";
  out += "- backend: " + m.backend_kind + "\n";
  out += "- template version: " + m.template_version + "\n";
  out += "- indeterminate policy: " + std::string(to_string(m.policy)) + "\n";
  out += "- samples per example: " + std::to_string(m.samples_per_example) + "\n";

  auto table = [&](Averaging avg) {
    std::string t = "| strategy | prec. | rec. | F1 | acc. |\n| --- | --- | --- | --- | --- |\n";
    for (auto strategy : m.strategies) {
      for (const auto& row : report.rows) {
        if (row.strategy != strategy || row.averaging != avg) continue;
        t += "| " + std::string(display_name(strategy)) + " | " +
             detail::format_2dp(row.precision) + " | " + detail::format_2dp(row.recall) + " | " +
             detail::format_2dp(row.f1) + " | " + detail::format_2dp(row.accuracy) + " |\n";
      }
    }
    return t;
  };

  out += "\n## Macro-averaged scores\n\n" + table(Averaging::Macro);
  out += "\n## Positive-class (yes) scores\n\n" + table(Averaging::PerClassYes);

  out += "\n## Accuracy vs. human baseline\n\n";
  out += "Human baseline: " + detail::format_3dp(kHumanBaselineAccuracy) +
         " accuracy (LUDWIG average human).\n\n";
  out += "| strategy | acc. | delta |\n| --- | --- | --- |\n";
  for (auto strategy : m.strategies) {
    for (const auto& row : report.rows) {
      if (row.strategy != strategy || row.averaging != Averaging::Macro) continue;
      out += "| " + std::string(display_name(strategy)) + " | " +
             detail::format_2dp(row.accuracy) + " | " + detail::format_3dp(row.human_delta) +
             " |\n";
    }
  }

  out += "\n## Counts\n\n";
  out += "| strategy | n | excluded | indeterminate | failed |\n";
  out += "| --- | --- | --- | --- | --- |\n";
  for (auto strategy : m.strategies) {
    std::size_t failed = 0;
    for (const auto& r : report.records)
      if (r.strategy == strategy && r.failed) ++failed;
    for (const auto& row : report.rows) {
      if (row.strategy != strategy || row.averaging != Averaging::Macro) continue;
      out += "| " + std::string(display_name(strategy)) + " | " + std::to_string(row.n) + " | " +
             std::to_string(row.excluded) + " | " + std::to_string(row.indeterminate) + " | " +
             std::to_string(failed) + " |\n";
    }
  }
  return out;
}

/// Metric rows at full precision.
inline std::string emit_rows_csv(const EvalReport& report) {
  std::string out =
      "strategy,averaging,precision,recall,f1,accuracy,n,excluded,indeterminate,human_delta\n";
  for (const auto& row : report.rows) {
    out += std::string(to_string(row.strategy)) + "," + std::string(to_string(row.averaging)) +
           "," + detail::format_full(row.precision) + "," + detail::format_full(row.recall) + "," +
           detail::format_full(row.f1) + "," + detail::format_full(row.accuracy) + "," +
           std::to_string(row.n) + "," + std::to_string(row.excluded) + "," +
           std::to_string(row.indeterminate) + "," + detail::format_full(row.human_delta) + "\n";
  }
  return out;
}

/// Per-example records.
inline std::string emit_records_csv(const EvalReport& report) {
  std::string out = "id,strategy,sample,prompt_digest,gold,verdict,evidence,outcome,error,raw\n";
  for (const auto& r : report.records) {
    out += detail::csv_escape(r.id) + "," + std::string(to_string(r.strategy)) + "," +
           std::to_string(r.sample) + "," + r.prompt_digest + "," +
           std::string(to_string(r.gold)) + "," + std::string(to_string(r.verdict)) + "," +
           detail::csv_escape(r.evidence) + "," +
           (r.failed ? "failed" : std::string(to_string(r.outcome))) + "," +
           detail::csv_escape(r.error) + "," + detail::csv_escape(r.raw) + "\n";
  }
  return out;
}

struct ReportFiles {
  std::filesystem::path json;
  std::filesystem::path markdown;
  std::filesystem::path rows_csv;
  std::filesystem::path records_csv;
};

inline ReportFiles write_report_files(const EvalReport& report,
                                      const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw ReportError("cannot create output dir " + out_dir.string());
  ReportFiles files{out_dir / "report.json", out_dir / "report.md", out_dir / "report.csv",
                    out_dir / "records.csv"};
  auto write = [](const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ReportError("cannot write " + p.string());
    out << content;
  };
  write(files.json, report_to_json(report).dump(1) + "\n");
  write(files.markdown, emit_markdown(report));
  write(files.rows_csv, emit_rows_csv(report));
  write(files.records_csv, emit_records_csv(report));
  return files;
}

inline EvalReport load_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReportError("report not found: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ReportError("malformed report " + path + ": " + e.what());
  }
  return report_from_json(j);
}

// ---------------------------------------------------------------------------
// Verification: recompute everything derivable and compare against what the
// report claims. Guards against tampering and metric drift across versions.

inline std::vector<std::string> verify_report(const EvalReport& report) {
  std::vector<std::string> problems;
  const ReportMeta& m = report.meta;

  const std::size_t expected_records =
      m.n_examples * m.strategies.size() * static_cast<std::size_t>(m.samples_per_example);
  if (report.records.size() != expected_records)
    problems.push_back("record count " + std::to_string(report.records.size()) +
                       " differs from examples x strategies x samples = " +
                       std::to_string(expected_records));

  std::size_t failed = 0;
  for (const auto& r : report.records) {
    if (r.failed) {
      ++failed;
      continue;
    }
    Verdict v;
    v.value = r.verdict;
    Outcome expected = apply_policy(v, r.gold, m.policy);
    if (expected != r.outcome)
      problems.push_back("record " + r.id + "/" + std::string(to_string(r.strategy)) +
                         " outcome '" + std::string(to_string(r.outcome)) +
                         "' does not follow from verdict under policy");
  }
  if (failed != m.failed_records)
    problems.push_back("failed_records " + std::to_string(m.failed_records) +
                       " but records show " + std::to_string(failed));

  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
  for (auto strategy : m.strategies) {
    std::vector<const RecordEntry*> strategy_records;
    for (const auto& r : report.records)
      if (r.strategy == strategy) strategy_records.push_back(&r);
    auto recomputed =
        detail::rows_for_strategy(strategy, strategy_records, m.policy, m.aggregation);
    for (const auto& want : recomputed) {
      const MetricRow* have = nullptr;
      for (const auto& row : report.rows)
        if (row.strategy == want.strategy && row.averaging == want.averaging) have = &row;
      if (!have) {
        problems.push_back("missing row " + std::string(to_string(want.strategy)) + "/" +
                           std::string(to_string(want.averaging)));
        continue;
      }
      if (!close(have->precision, want.precision) || !close(have->recall, want.recall) ||
          !close(have->f1, want.f1) || !close(have->accuracy, want.accuracy) ||
          !close(have->human_delta, want.human_delta) || have->n != want.n ||
          have->excluded != want.excluded || have->indeterminate != want.indeterminate)
        problems.push_back("row " + std::string(to_string(want.strategy)) + "/" +
                           std::string(to_string(want.averaging)) +
                           " does not match its records");
    }
  }
  if (report.rows.size() != m.strategies.size() * 2)
    problems.push_back("expected " + std::to_string(m.strategies.size() * 2) + " rows, found " +
                       std::to_string(report.rows.size()));
  return problems;
}

inline std::vector<std::string> verify_report_file(const std::string& path) {
  return verify_report(load_report(path));
}

// ---------------------------------------------------------------------------
// Dry run: render every prompt to disk without touching any backend.

inline std::size_t write_rendered_prompts(const RunConfig& config) {
  validate_config(config);
  Corpus corpus = load_dataset(config.dataset);
  PromptBanks banks = load_banks(config);
  RenderOptions opts{config.neutral_pronouns};
  std::size_t written = 0;
  for (auto strategy : config.strategies) {
    auto dir = std::filesystem::path(config.output_dir) / "prompts" /
               std::string(to_string(strategy));
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ReportError("cannot create " + dir.string());
    for (const auto& ex : corpus.examples) {
      RenderedPrompt p = render_for(strategy, ex, banks, opts);
      std::ofstream out(dir / (ex.id + ".txt"), std::ios::binary);
      if (!out) throw ReportError("cannot write prompt file for " + ex.id);
      out << p.text;
      ++written;
    }
  }
  return written;
}

}  // namespace gricecheck
