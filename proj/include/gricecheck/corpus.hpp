#pragma once

// Dataset ingestion: canonical line-delimited records plus mapped loaders for
// upstream dataset files (JSON document, JSONL, or CSV with a header row).
// Loading is fail-fast: one malformed record rejects the whole file.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <optional>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace gricecheck {

enum class Label { Yes, No };
enum class Source { BigBench, Ludwig, Custom };

inline std::string_view to_string(Label l) { return l == Label::Yes ? "yes" : "no"; }

inline std::string_view to_string(Source s) {
  switch (s) {
    case Source::BigBench: return "bigbench";
    case Source::Ludwig: return "ludwig";
    default: return "custom";
  }
}

struct ImplicatureExample {
  std::string id;
  std::string speaker_a;  // asker
  std::string speaker_b;  // responder
  std::string utterance;
  std::string response;
  Label gold = Label::Yes;
  Source source = Source::Custom;
};

// Immutable after load; iteration order equals file order.
struct Corpus {
  std::vector<ImplicatureExample> examples;
  Source source = Source::Custom;

  const ImplicatureExample* find(std::string_view id) const {
    for (const auto& ex : examples)
      if (ex.id == id) return &ex;
    return nullptr;
  }
};

class CorpusError : public std::runtime_error {
 public:
  enum class Kind {
    FileNotFound,
    MalformedRecord,
    DuplicateId,
    EmptyCorpus,
    MappingMiss,
    BadMapping,
  };

  CorpusError(Kind kind, std::string message, std::size_t record = 0)
      : std::runtime_error(std::move(message)), kind_(kind), record_(record) {}

  Kind kind() const { return kind_; }
  // 1-based line number for line-delimited inputs, record ordinal otherwise.
  std::size_t record() const { return record_; }

 private:
  Kind kind_;
  std::size_t record_;
};

// Maps upstream dataset fields onto the canonical schema. Upstream formats
// vary by release, so nothing is hard-coded: field names and the label-value
// dictionary come from configuration.
struct FieldMapping {
  std::string container;       // "json" | "jsonl" | "csv"; empty = by extension
  std::string records_field;   // JSON document: array field holding records (default "examples")
  std::string id_field;        // empty = synthesize "<tag>-<0-padded ordinal>"
  std::string speaker_a_field;
  std::string speaker_b_field;
  std::string utterance_field;
  std::string response_field;
  std::string combined_field;    // single field holding both turns...
  std::string combined_pattern;  // ...split by a regex with two capture groups
  std::string label_field;
  std::unordered_map<std::string, std::string> label_map;  // normalized label -> "yes"/"no"
};

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError(CorpusError::Kind::FileNotFound, "file not found: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.emplace_back(text.substr(pos));
      break;
    }
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    pos = nl + 1;
  }
  return lines;
}

// Minimal RFC 4180 reader: quoted fields, "" escapes, newlines inside quotes.
// Returns rows of cells; the first row is the header.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        any = true;
        break;
      case ',':
        row.push_back(std::move(cell));
        cell.clear();
        any = true;
        break;
      case '\r':
        break;
      case '\n':
        row.push_back(std::move(cell));
        cell.clear();
        rows.push_back(std::move(row));
        row.clear();
        any = false;
        break;
      default:
        cell += c;
        any = true;
        break;
    }
  }
  if (any || !cell.empty() || !row.empty()) {
    row.push_back(std::move(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "yes") return Label::Yes;
  if (s == "no") return Label::No;
  return std::nullopt;
}

inline std::optional<Source> parse_source(std::string_view s) {
  if (s == "bigbench") return Source::BigBench;
  if (s == "ludwig") return Source::Ludwig;
  if (s == "custom") return Source::Custom;
  return std::nullopt;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  enum class Kind { EmptyField };
  Kind kind;
  std::string field;
};

/// Per-example invariant checks; an empty result means the example is valid.
inline std::vector<Violation> validate(const ImplicatureExample& ex) {
  std::vector<Violation> out;
  auto check = [&](const std::string& value, const char* name) {
    if (detail::trim(value).empty()) out.push_back({Violation::Kind::EmptyField, name});
  };
  check(ex.id, "id");
  check(ex.speaker_a, "speaker_a");
  check(ex.speaker_b, "speaker_b");
  check(ex.utterance, "utterance");
  check(ex.response, "response");
  return out;
}

namespace detail {

inline void reject_if_invalid(const ImplicatureExample& ex, std::size_t record) {
  auto violations = validate(ex);
  if (violations.empty()) return;
  std::string msg = "record " + std::to_string(record) + ": ";
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) msg += ", ";
    msg += "empty field '" + violations[i].field + "'";
  }
  throw CorpusError(CorpusError::Kind::MalformedRecord, msg, record);
}

inline void finalize(Corpus& corpus, const std::string& path) {
  if (corpus.examples.empty())
    throw CorpusError(CorpusError::Kind::EmptyCorpus, "no records in " + path);
  std::unordered_set<std::string_view> seen;
  for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
    if (!seen.insert(corpus.examples[i].id).second)
      throw CorpusError(CorpusError::Kind::DuplicateId,
                        "duplicate id '" + corpus.examples[i].id + "'", i + 1);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Canonical format: UTF-8, one JSON object per line, exactly the fields of
// ImplicatureExample, gold as "yes"/"no". Blank lines are ignored.

inline ImplicatureExample parse_canonical_record(const std::string& line, std::size_t lineno) {
  namespace nj = nlohmann;
  nj::json j;
  try {
    j = nj::json::parse(line);
  } catch (const nj::json::exception& e) {
    throw CorpusError(CorpusError::Kind::MalformedRecord,
                      "line " + std::to_string(lineno) + ": " + e.what(), lineno);
  }
  auto fail = [&](const std::string& why) -> CorpusError {
    return CorpusError(CorpusError::Kind::MalformedRecord,
                       "line " + std::to_string(lineno) + ": " + why, lineno);
  };
  if (!j.is_object()) throw fail("record is not an object");
  static const char* kFields[] = {"id",       "speaker_a", "speaker_b", "utterance",
                                  "response", "gold",      "source"};
  for (const char* f : kFields) {
    if (!j.contains(f)) throw fail(std::string("missing field '") + f + "'");
    if (!j.at(f).is_string()) throw fail(std::string("field '") + f + "' is not a string");
  }
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(std::begin(kFields), std::end(kFields),
                     [&](const char* f) { return key == f; }) == std::end(kFields)) {
      throw fail("unexpected field '" + key + "'");
    }
  }
  ImplicatureExample ex;
  ex.id = j.at("id").get<std::string>();
  ex.speaker_a = j.at("speaker_a").get<std::string>();
  ex.speaker_b = j.at("speaker_b").get<std::string>();
  ex.utterance = j.at("utterance").get<std::string>();
  ex.response = j.at("response").get<std::string>();
  auto gold = detail::parse_label(j.at("gold").get<std::string>());
  if (!gold) throw fail("gold must be \"yes\" or \"no\"");
  ex.gold = *gold;
  auto src = detail::parse_source(j.at("source").get<std::string>());
  if (!src) throw fail("source must be bigbench, ludwig, or custom");
  ex.source = *src;
  return ex;
}

inline Corpus load_canonical(const std::string& path) {
  Corpus corpus;
  auto lines = detail::split_lines(detail::read_file(path));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    ImplicatureExample ex = parse_canonical_record(lines[i], i + 1);
    detail::reject_if_invalid(ex, i + 1);
    corpus.examples.push_back(std::move(ex));
  }
  detail::finalize(corpus, path);
  corpus.source = corpus.examples.front().source;
  for (const auto& ex : corpus.examples)
    if (ex.source != corpus.source) {
      corpus.source = Source::Custom;
      break;
    }
  return corpus;
}

inline void write_canonical(const Corpus& corpus, std::ostream& out) {
  namespace nj = nlohmann;
  for (const auto& ex : corpus.examples) {
    nj::ordered_json j;
    j["id"] = ex.id;
    j["speaker_a"] = ex.speaker_a;
    j["speaker_b"] = ex.speaker_b;
    j["utterance"] = ex.utterance;
    j["response"] = ex.response;
    j["gold"] = std::string(to_string(ex.gold));
    j["source"] = std::string(to_string(ex.source));
    out << j.dump() << '\n';
  }
}

inline void write_canonical(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError(CorpusError::Kind::FileNotFound, "cannot open for write: " + path);
  write_canonical(corpus, out);
}

// ---------------------------------------------------------------------------
// Mapped loaders

namespace detail {

// One upstream record, abstracted over container format.
struct RawRecord {
  const nlohmann::json* json = nullptr;                       // json/jsonl
  const std::unordered_map<std::string, std::string>* csv = nullptr;  // csv
};

inline std::string json_value_to_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return v.dump();
  return v.dump();
}

inline std::optional<std::string> get_field(const RawRecord& rec, const std::string& name) {
  if (rec.json) {
    auto it = rec.json->find(name);
    if (it == rec.json->end()) return std::nullopt;
    return json_value_to_string(*it);
  }
  auto it = rec.csv->find(name);
  if (it == rec.csv->end()) return std::nullopt;
  return it->second;
}

// Labels may be plain values or a {"label": score} object (argmax wins).
inline std::optional<std::string> get_label_value(const RawRecord& rec, const std::string& name) {
  if (rec.json) {
    auto it = rec.json->find(name);
    if (it == rec.json->end()) return std::nullopt;
    if (it->is_object()) {
      std::string best;
      double best_score = -1e300;
      for (const auto& [key, score] : it->items()) {
        double s = score.is_number() ? score.get<double>() : 0.0;
        if (s > best_score) {
          best_score = s;
          best = key;
        }
      }
      if (best.empty()) return std::nullopt;
      return best;
    }
    return json_value_to_string(*it);
  }
  return get_field(rec, name);
}

inline std::string infer_container(const FieldMapping& mapping, const std::string& path) {
  if (!mapping.container.empty()) return mapping.container;
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : ascii_lower(path.substr(dot + 1));
  if (ext == "jsonl" || ext == "ndjson") return "jsonl";
  if (ext == "csv" || ext == "tsv") return "csv";
  return "json";
}

inline Corpus load_mapped(const std::string& path, const FieldMapping& mapping, Source tag) {
  const bool combined = !mapping.combined_field.empty();
  if (combined == !mapping.utterance_field.empty() || combined == !mapping.response_field.empty()) {
    // exactly one of (utterance_field+response_field) or combined_field must be set
    throw CorpusError(CorpusError::Kind::BadMapping,
                      "mapping must set either utterance_field+response_field or combined_field");
  }
  if (mapping.label_field.empty())
    throw CorpusError(CorpusError::Kind::BadMapping, "mapping must set label_field");
  if (mapping.label_map.empty())
    throw CorpusError(CorpusError::Kind::BadMapping, "mapping must set label_map");
  for (const auto& [k, v] : mapping.label_map) {
    if (!parse_label(v))
      throw CorpusError(CorpusError::Kind::BadMapping,
                        "label_map value for '" + k + "' must be \"yes\" or \"no\"");
  }
  std::optional<std::regex> combined_re;
  if (combined) {
    if (mapping.combined_pattern.empty())
      throw CorpusError(CorpusError::Kind::BadMapping, "combined_field requires combined_pattern");
    try {
      combined_re.emplace(mapping.combined_pattern);
    } catch (const std::regex_error& e) {
      throw CorpusError(CorpusError::Kind::BadMapping,
                        std::string("combined_pattern: ") + e.what());
    }
    if (combined_re->mark_count() < 2)
      throw CorpusError(CorpusError::Kind::BadMapping,
                        "combined_pattern needs two capture groups");
  }

  const std::string text = read_file(path);
  const std::string container = infer_container(mapping, path);

  nlohmann::json doc;
  std::vector<nlohmann::json> jsonl_records;
  std::vector<std::unordered_map<std::string, std::string>> csv_records;
  std::size_t n_records = 0;
  const nlohmann::json* json_array = nullptr;

  if (container == "json") {
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError(CorpusError::Kind::MalformedRecord, std::string("json: ") + e.what(), 1);
    }
    if (doc.is_array()) {
      json_array = &doc;
    } else if (doc.is_object()) {
      std::string field = mapping.records_field.empty() ? "examples" : mapping.records_field;
      auto it = doc.find(field);
      if (it == doc.end())
        throw CorpusError(CorpusError::Kind::MappingMiss, "records field '" + field + "' absent");
      if (!it->is_array())
        throw CorpusError(CorpusError::Kind::MalformedRecord,
                          "records field '" + field + "' is not an array", 1);
      json_array = &*it;
    } else {
      throw CorpusError(CorpusError::Kind::MalformedRecord, "top-level json is not array/object", 1);
    }
    n_records = json_array->size();
  } else if (container == "jsonl") {
    auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (trim(lines[i]).empty()) continue;
      try {
        jsonl_records.push_back(nlohmann::json::parse(lines[i]));
      } catch (const nlohmann::json::exception& e) {
        throw CorpusError(CorpusError::Kind::MalformedRecord,
                          "line " + std::to_string(i + 1) + ": " + e.what(), i + 1);
      }
    }
    n_records = jsonl_records.size();
  } else if (container == "csv") {
    auto rows = parse_csv(text);
    if (rows.empty())
      throw CorpusError(CorpusError::Kind::EmptyCorpus, "no records in " + path);
    const auto& header = rows[0];
    auto require_column = [&](const std::string& name) {
      if (name.empty()) return;
      if (std::find(header.begin(), header.end(), name) == header.end())
        throw CorpusError(CorpusError::Kind::MappingMiss, "column '" + name + "' absent");
    };
    require_column(mapping.id_field);
    require_column(mapping.speaker_a_field);
    require_column(mapping.speaker_b_field);
    require_column(mapping.utterance_field);
    require_column(mapping.response_field);
    require_column(mapping.combined_field);
    require_column(mapping.label_field);
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (rows[r].size() == 1 && trim(rows[r][0]).empty()) continue;  // trailing blank row
      std::unordered_map<std::string, std::string> rec;
      for (std::size_t c = 0; c < header.size() && c < rows[r].size(); ++c)
        rec[header[c]] = rows[r][c];
      csv_records.push_back(std::move(rec));
    }
    n_records = csv_records.size();
  } else {
    throw CorpusError(CorpusError::Kind::BadMapping, "unknown container '" + container + "'");
  }

  Corpus corpus;
  corpus.source = tag;
  for (std::size_t i = 0; i < n_records; ++i) {
    const std::size_t ordinal = i + 1;
    RawRecord rec;
    if (json_array)
      rec.json = &(*json_array)[i];
    else if (!jsonl_records.empty() || container == "jsonl")
      rec.json = &jsonl_records[i];
    else
      rec.csv = &csv_records[i];
    if (rec.json && !rec.json->is_object())
      throw CorpusError(CorpusError::Kind::MalformedRecord,
                        "record " + std::to_string(ordinal) + ": not an object", ordinal);

    auto need = [&](const std::string& name) -> std::string {
      auto v = get_field(rec, name);
      if (!v)
        throw CorpusError(CorpusError::Kind::MappingMiss,
                          "field '" + name + "' absent in record " + std::to_string(ordinal),
                          ordinal);
      return *v;
    };

    ImplicatureExample ex;
    ex.source = tag;
    if (!mapping.id_field.empty()) {
      ex.id = trim(need(mapping.id_field));
    } else {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s-%04zu", std::string(to_string(tag)).c_str(), ordinal);
      ex.id = buf;
    }
    ex.speaker_a = mapping.speaker_a_field.empty() ? "Esther" : trim(need(mapping.speaker_a_field));
    ex.speaker_b = mapping.speaker_b_field.empty() ? "Juan" : trim(need(mapping.speaker_b_field));

    if (combined) {
      std::string value = need(mapping.combined_field);
      std::smatch m;
      if (!std::regex_search(value, m, *combined_re))
        throw CorpusError(CorpusError::Kind::MalformedRecord,
                          "record " + std::to_string(ordinal) +
                              ": combined field does not match pattern",
                          ordinal);
      ex.utterance = trim(m[1].str());
      ex.response = trim(m[2].str());
    } else {
      ex.utterance = trim(need(mapping.utterance_field));
      ex.response = trim(need(mapping.response_field));
    }

    auto label_raw = get_label_value(rec, mapping.label_field);
    if (!label_raw)
      throw CorpusError(CorpusError::Kind::MappingMiss,
                        "field '" + mapping.label_field + "' absent in record " +
                            std::to_string(ordinal),
                        ordinal);
    std::string norm = ascii_lower(trim(*label_raw));
    auto mapped = mapping.label_map.find(norm);
    if (mapped == mapping.label_map.end())
      throw CorpusError(CorpusError::Kind::MalformedRecord,
                        "record " + std::to_string(ordinal) + ": label '" + norm +
                            "' not in label_map",
                        ordinal);
    ex.gold = *parse_label(mapped->second);

    reject_if_invalid(ex, ordinal);
    corpus.examples.push_back(std::move(ex));
  }
  finalize(corpus, path);
  return corpus;
}

}  // namespace detail

inline Corpus load_bigbench(const std::string& path, const FieldMapping& mapping) {
  return detail::load_mapped(path, mapping, Source::BigBench);
}

inline Corpus load_ludwig(const std::string& path, const FieldMapping& mapping) {
  return detail::load_mapped(path, mapping, Source::Ludwig);
}

}  // namespace gricecheck
