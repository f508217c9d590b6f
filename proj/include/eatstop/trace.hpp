#pragma once

// Reasoning-trace data model and its JSONL encoding (schema_version 1).
//
// One trace object per line:
//
//   {"schema_version":1,"question_id":...,"dataset":...,"question":...,
//    "reasoning_model_id":...,"decoding":{"temperature":..,"top_p":..},
//    "ended_with_end_think":bool,
//    "lines":[{"index":0,"text":...,"token_count":N,"cumulative_tokens":N,
//              "probes":[{"probe_model_id":..,"variant":..,"value":..,
//                         "exactness":"exact"|"bounded"[,"lower":..,"upper":..]}],
//              "rollouts":[{"answer_text":..,"extracted_answer":..,
//                           "correct":bool[,"token_count":N]}],
//              "pass1":p}],
//    "meta":{"key":"text",...}}
//
// `rollouts`, `pass1` and a rollout's `token_count` are optional. Unknown
// keys are kept in `meta` (line-level ones as "lines.<i>.<key>").

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "eatstop/answers.hpp"
#include "eatstop/error.hpp"
#include "eatstop/signals.hpp"

namespace eatstop {

inline constexpr int kTraceSchemaVersion = 1;

struct DecodingConfig {
  double temperature = 0.6;
  double top_p = 0.95;

  friend bool operator==(const DecodingConfig&, const DecodingConfig&) = default;
};

struct ProbeValue {
  double value = 0.0;
  Exactness exactness = Exactness::exact;
  double lower = 0.0;  // bounded only
  double upper = 0.0;  // bounded only

  // Bounds take part in equality only for bounded probes.
  friend bool operator==(const ProbeValue& a, const ProbeValue& b) {
    if (a.value != b.value || a.exactness != b.exactness) return false;
    return a.exactness == Exactness::exact || (a.lower == b.lower && a.upper == b.upper);
  }
};

struct RolloutRecord {
  std::string answer_text;
  std::string extracted_answer;
  bool correct = false;
  std::optional<std::size_t> token_count;

  friend bool operator==(const RolloutRecord&, const RolloutRecord&) = default;
};

struct LineRecord {
  std::size_t index = 0;
  std::string text;
  std::size_t token_count = 0;
  std::map<ProbeKey, ProbeValue> probes;
  std::optional<std::vector<RolloutRecord>> rollouts;
  std::optional<double> pass1;

  const ProbeValue* probe(const ProbeKey& key) const {
    auto it = probes.find(key);
    return it == probes.end() ? nullptr : &it->second;
  }

  friend bool operator==(const LineRecord&, const LineRecord&) = default;
};

struct ReasoningTrace {
  int schema_version = kTraceSchemaVersion;
  std::string question_id;
  std::string dataset;
  std::string question;
  std::string reasoning_model_id;
  DecodingConfig decoding{};
  std::vector<LineRecord> lines;
  bool ended_with_end_think = false;
  std::map<std::string, std::string> meta;

  friend bool operator==(const ReasoningTrace&, const ReasoningTrace&) = default;
};

inline std::size_t cumulative_tokens(const ReasoningTrace& trace, std::size_t line_index) {
  if (line_index >= trace.lines.size()) {
    throw InvalidArgument("cumulative_tokens: line " + std::to_string(line_index) +
                          " out of range (" + std::to_string(trace.lines.size()) + " lines)");
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i <= line_index; ++i) total += trace.lines[i].token_count;
  return total;
}

inline std::size_t total_tokens(const ReasoningTrace& trace) {
  return trace.lines.empty() ? 0 : cumulative_tokens(trace, trace.lines.size() - 1);
}

inline std::optional<double> rollout_pass1(const LineRecord& line) {
  if (!line.rollouts || line.rollouts->empty()) return std::nullopt;
  std::size_t correct = 0;
  for (const auto& r : *line.rollouts) correct += r.correct ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(line.rollouts->size());
}

/// Pass@1 at a reasoning prefix: the stored value if present, otherwise
/// the fraction of correct rollouts.
inline double pass1_at(const ReasoningTrace& trace, std::size_t line_index) {
  if (line_index >= trace.lines.size()) {
    throw InvalidArgument("pass1_at: line " + std::to_string(line_index) + " out of range");
  }
  const auto& line = trace.lines[line_index];
  if (line.pass1) return *line.pass1;
  if (auto p = rollout_pass1(line)) return *p;
  throw MissingData("pass1_at: trace '" + trace.question_id + "' line " +
                    std::to_string(line_index) + " has neither pass1 nor rollouts");
}

/// Checks every structural invariant; throws InvariantViolation naming the
/// offending line and field.
inline void validate_trace(const ReasoningTrace& t, std::optional<std::size_t> record = std::nullopt) {
  if (t.schema_version != kTraceSchemaVersion) {
    throw SchemaViolation("unsupported schema_version " + std::to_string(t.schema_version),
                          record, "schema_version");
  }
  if (t.lines.empty()) throw InvariantViolation("trace has no lines", record, "lines");
  const bool builtin_extractor = [&] {
    auto it = t.meta.find("answer_extractor");
    return it != t.meta.end() && it->second == "builtin";
  }();
  for (std::size_t i = 0; i < t.lines.size(); ++i) {
    const auto& line = t.lines[i];
    const std::string at = "lines[" + std::to_string(i) + "]";
    if (line.index != i) {
      throw InvariantViolation("line indices must be contiguous from 0, got " +
                                   std::to_string(line.index),
                               record, at + ".index");
    }
    if (line.token_count == 0) {
      throw InvariantViolation("token_count must be positive (cumulative tokens must strictly increase)",
                               record, at + ".token_count");
    }
    for (const auto& [key, probe] : line.probes) {
      const std::string pf = at + ".probes[" + key.model_id + "/" +
                             std::string(to_string(key.variant)) + "]";
      if (!std::isfinite(probe.value) || probe.value < 0.0) {
        throw InvariantViolation("probe entropy must be finite and non-negative", record,
                                 pf + ".value");
      }
      if (probe.exactness == Exactness::bounded &&
          !(probe.lower <= probe.value && probe.value <= probe.upper)) {
        throw InvariantViolation("bounded probe requires lower <= value <= upper", record, pf);
      }
    }
    if (line.pass1) {
      if (!(*line.pass1 >= 0.0 && *line.pass1 <= 1.0)) {
        throw InvariantViolation("pass1 must lie in [0, 1]", record, at + ".pass1");
      }
      if (auto computed = rollout_pass1(line);
          computed && std::fabs(*computed - *line.pass1) > 1e-9) {
        throw InvariantViolation("pass1 " + std::to_string(*line.pass1) +
                                     " disagrees with rollout fraction " +
                                     std::to_string(*computed),
                                 record, at + ".pass1");
      }
    }
    if (builtin_extractor && line.rollouts) {
      for (std::size_t k = 0; k < line.rollouts->size(); ++k) {
        const auto& r = (*line.rollouts)[k];
        if (r.extracted_answer != normalize_answer(r.answer_text)) {
          throw InvariantViolation("extracted_answer does not match the builtin extractor", record,
                                   at + ".rollouts[" + std::to_string(k) + "].extracted_answer");
        }
      }
    }
  }
}

namespace detail {

using ojson = nlohmann::ordered_json;

inline std::string json_kind(const ojson& v) { return v.type_name(); }

struct ObjectReader {
  const ojson& obj;
  std::optional<std::size_t> record;
  std::string path;  // "" for top level, else "lines[3]" etc.

  std::string field(std::string_view key) const {
    return path.empty() ? std::string(key) : path + "." + std::string(key);
  }

  const ojson* find(std::string_view key) const {
    auto it = obj.find(std::string(key));
    return it == obj.end() ? nullptr : &*it;
  }

  const ojson& require(std::string_view key) const {
    const ojson* v = find(key);
    if (!v) throw SchemaViolation("missing required field", record, field(key));
    return *v;
  }

  [[noreturn]] void wrong_type(std::string_view key, std::string_view expected, const ojson& v) const {
    throw SchemaViolation("expected " + std::string(expected) + ", got " + json_kind(v), record,
                          field(key));
  }

  std::string string_at(std::string_view key) const {
    const auto& v = require(key);
    if (!v.is_string()) wrong_type(key, "string", v);
    return v.get<std::string>();
  }

  double number_at(const ojson& v, std::string_view key) const {
    if (!v.is_number()) wrong_type(key, "number", v);
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw SchemaViolation("non-finite number", record, field(key));
    return d;
  }

  double number_at(std::string_view key) const { return number_at(require(key), key); }

  std::size_t natural_at(const ojson& v, std::string_view key) const {
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.is_number_integer()) {
      if (v.get<std::int64_t>() < 0) {
        throw SchemaViolation("expected non-negative integer", record, field(key));
      }
      return static_cast<std::size_t>(v.get<std::int64_t>());
    }
    wrong_type(key, "non-negative integer", v);
  }

  std::size_t natural_at(std::string_view key) const { return natural_at(require(key), key); }

  bool bool_at(std::string_view key) const {
    const auto& v = require(key);
    if (!v.is_boolean()) wrong_type(key, "boolean", v);
    return v.get<bool>();
  }
};

inline void check_object(const ojson& v, std::optional<std::size_t> record, const std::string& path) {
  if (!v.is_object()) {
    throw SchemaViolation("expected object, got " + json_kind(v), record, path);
  }
}

inline std::string json_text(const ojson& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

inline ProbeValue parse_probe(const ObjectReader& r, ProbeKey& key) {
  key.model_id = r.string_at("probe_model_id");
  const auto variant = r.string_at("variant");
  try {
    key.variant = parse_probe_variant(variant);
  } catch (const InvalidArgument& e) {
    throw SchemaViolation(e.what(), r.record, r.field("variant"));
  }
  ProbeValue pv;
  pv.value = r.number_at("value");
  std::string exactness = "exact";
  if (r.find("exactness")) exactness = r.string_at("exactness");
  if (exactness == "exact") {
    pv.lower = pv.upper = pv.value;
  } else if (exactness == "bounded") {
    pv.exactness = Exactness::bounded;
    pv.lower = r.number_at("lower");
    pv.upper = r.number_at("upper");
  } else {
    throw SchemaViolation("exactness must be 'exact' or 'bounded'", r.record, r.field("exactness"));
  }
  return pv;
}

inline LineRecord parse_line(const ojson& v, std::optional<std::size_t> record, std::size_t i,
                             std::optional<std::size_t>& cumulative, std::map<std::string, std::string>& extra) {
  const std::string path = "lines[" + std::to_string(i) + "]";
  check_object(v, record, path);
  ObjectReader r{v, record, path};
  LineRecord line;
  line.index = r.natural_at("index");
  line.text = r.string_at("text");
  line.token_count = r.natural_at("token_count");
  const std::size_t running = (cumulative ? *cumulative : 0) + line.token_count;
  if (const auto* c = r.find("cumulative_tokens")) {
    const auto stated = r.natural_at(*c, "cumulative_tokens");
    if (cumulative && stated <= *cumulative) {
      throw InvariantViolation("cumulative_tokens must strictly increase (" +
                                   std::to_string(stated) + " after " +
                                   std::to_string(*cumulative) + ")",
                               record, r.field("cumulative_tokens"));
    }
    if (stated != running) {
      throw InvariantViolation("cumulative_tokens " + std::to_string(stated) +
                                   " does not equal running token sum " + std::to_string(running),
                               record, r.field("cumulative_tokens"));
    }
  }
  cumulative = running;

  if (const auto* probes = r.find("probes")) {
    if (!probes->is_array()) r.wrong_type("probes", "array", *probes);
    for (std::size_t p = 0; p < probes->size(); ++p) {
      const std::string pp = path + ".probes[" + std::to_string(p) + "]";
      check_object((*probes)[p], record, pp);
      ProbeKey key;
      auto value = parse_probe(ObjectReader{(*probes)[p], record, pp}, key);
      if (!line.probes.emplace(key, value).second) {
        throw SchemaViolation("duplicate probe key", record, pp);
      }
    }
  }
  if (const auto* rollouts = r.find("rollouts")) {
    if (!rollouts->is_array()) r.wrong_type("rollouts", "array", *rollouts);
    line.rollouts.emplace();
    for (std::size_t k = 0; k < rollouts->size(); ++k) {
      const std::string rp = path + ".rollouts[" + std::to_string(k) + "]";
      check_object((*rollouts)[k], record, rp);
      ObjectReader rr{(*rollouts)[k], record, rp};
      RolloutRecord rec;
      rec.answer_text = rr.string_at("answer_text");
      rec.extracted_answer = rr.string_at("extracted_answer");
      rec.correct = rr.bool_at("correct");
      if (rr.find("token_count")) rec.token_count = rr.natural_at("token_count");
      line.rollouts->push_back(std::move(rec));
    }
  }
  if (const auto* p1 = r.find("pass1")) line.pass1 = r.number_at(*p1, "pass1");

  static const std::vector<std::string> known = {"index", "text", "token_count", "cumulative_tokens",
                                                 "probes", "rollouts", "pass1"};
  for (const auto& [key, val] : v.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      extra["lines." + std::to_string(i) + "." + key] = json_text(val);
    }
  }
  return line;
}

}  // namespace detail

/// Decodes one trace object. `record` labels errors (1-based JSONL line).
inline ReasoningTrace parse_trace_json(const nlohmann::ordered_json& doc,
                                       std::optional<std::size_t> record = std::nullopt) {
  using detail::ObjectReader;
  detail::check_object(doc, record, "");
  ObjectReader r{doc, record, ""};
  ReasoningTrace t;
  const auto& version = r.require("schema_version");
  if (!version.is_number_integer()) r.wrong_type("schema_version", "integer", version);
  if (version.get<std::int64_t>() != kTraceSchemaVersion) {
    throw SchemaViolation("unsupported schema_version " + version.dump(), record, "schema_version");
  }
  t.schema_version = kTraceSchemaVersion;
  t.question_id = r.string_at("question_id");
  t.dataset = r.string_at("dataset");
  t.question = r.string_at("question");
  t.reasoning_model_id = r.string_at("reasoning_model_id");
  {
    const auto& dec = r.require("decoding");
    detail::check_object(dec, record, "decoding");
    ObjectReader dr{dec, record, "decoding"};
    t.decoding.temperature = dr.number_at("temperature");
    t.decoding.top_p = dr.number_at("top_p");
  }
  t.ended_with_end_think = r.bool_at("ended_with_end_think");

  std::map<std::string, std::string> extra;
  const auto& lines = r.require("lines");
  if (!lines.is_array()) r.wrong_type("lines", "array", lines);
  std::optional<std::size_t> cumulative;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    t.lines.push_back(detail::parse_line(lines[i], record, i, cumulative, extra));
  }
  if (const auto* meta = r.find("meta")) {
    if (!meta->is_object()) r.wrong_type("meta", "object", *meta);
    for (const auto& [key, val] : meta->items()) {
      if (!val.is_string()) {
        throw SchemaViolation("meta values must be strings", record, "meta." + key);
      }
      t.meta[key] = val.get<std::string>();
    }
  }
  static const std::vector<std::string> known = {
      "schema_version", "question_id", "dataset", "question", "reasoning_model_id",
      "decoding", "ended_with_end_think", "lines", "meta"};
  for (const auto& [key, val] : doc.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) extra[key] = detail::json_text(val);
  }
  for (auto& [key, val] : extra) {
    if (!t.meta.emplace(key, val).second) {
      throw SchemaViolation("unknown field collides with an existing meta key", record, key);
    }
  }
  validate_trace(t, record);
  return t;
}

inline nlohmann::ordered_json trace_to_json(const ReasoningTrace& t) {
  using detail::ojson;
  ojson doc;
  doc["schema_version"] = t.schema_version;
  doc["question_id"] = t.question_id;
  doc["dataset"] = t.dataset;
  doc["question"] = t.question;
  doc["reasoning_model_id"] = t.reasoning_model_id;
  doc["decoding"] = ojson{{"temperature", t.decoding.temperature}, {"top_p", t.decoding.top_p}};
  doc["ended_with_end_think"] = t.ended_with_end_think;
  ojson lines = ojson::array();
  std::size_t cumulative = 0;
  for (const auto& line : t.lines) {
    cumulative += line.token_count;
    ojson l;
    l["index"] = line.index;
    l["text"] = line.text;
    l["token_count"] = line.token_count;
    l["cumulative_tokens"] = cumulative;
    ojson probes = ojson::array();
    for (const auto& [key, pv] : line.probes) {
      ojson p;
      p["probe_model_id"] = key.model_id;
      p["variant"] = std::string(to_string(key.variant));
      p["value"] = pv.value;
      if (pv.exactness == Exactness::exact) {
        p["exactness"] = "exact";
      } else {
        p["exactness"] = "bounded";
        p["lower"] = pv.lower;
        p["upper"] = pv.upper;
      }
      probes.push_back(std::move(p));
    }
    l["probes"] = std::move(probes);
    if (line.rollouts) {
      ojson rs = ojson::array();
      for (const auto& r : *line.rollouts) {
        ojson o;
        o["answer_text"] = r.answer_text;
        o["extracted_answer"] = r.extracted_answer;
        o["correct"] = r.correct;
        if (r.token_count) o["token_count"] = *r.token_count;
        rs.push_back(std::move(o));
      }
      l["rollouts"] = std::move(rs);
    }
    if (line.pass1) l["pass1"] = *line.pass1;
    lines.push_back(std::move(l));
  }
  doc["lines"] = std::move(lines);
  ojson meta = ojson::object();
  for (const auto& [k, v] : t.meta) meta[k] = v;
  doc["meta"] = std::move(meta);
  return doc;
}

/// Single-line JSON encoding (no trailing newline). Field order is fixed.
inline std::string serialize_trace(const ReasoningTrace& t) { return trace_to_json(t).dump(); }

inline std::string serialize_traces(const std::vector<ReasoningTrace>& traces) {
  std::string out;
  for (const auto& t : traces) {
    out += serialize_trace(t);
    out += '\n';
  }
  return out;
}

/// Decodes a corpus: JSONL (one trace per line), a single JSON document,
/// or a JSON array of traces. Blank lines are skipped.
inline std::vector<ReasoningTrace> parse_traces(std::string_view bytes) {
  using detail::ojson;
  std::vector<ReasoningTrace> out;
  // Whole-document first: handles pretty-printed single traces and arrays.
  ojson whole = ojson::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (!whole.is_discarded()) {
    if (whole.is_array()) {
      for (std::size_t i = 0; i < whole.size(); ++i) out.push_back(parse_trace_json(whole[i], i + 1));
    } else {
      out.push_back(parse_trace_json(whole, 1));
    }
    return out;
  }
  std::size_t record = 0;
  std::size_t start = 0;
  while (start <= bytes.size()) {
    auto end = bytes.find('\n', start);
    if (end == std::string_view::npos) end = bytes.size();
    ++record;
    const auto line = bytes.substr(start, end - start);
    if (!trim(line).empty()) {
      ojson doc;
      try {
        doc = ojson::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw MalformedJson(e.what(), record);
      }
      out.push_back(parse_trace_json(doc, record));
    }
    start = end + 1;
  }
  if (out.empty()) throw SchemaViolation("input contains no traces");
  return out;
}

/// Decodes exactly one trace.
inline ReasoningTrace parse_trace(std::string_view bytes) {
  auto all = parse_traces(bytes);
  if (all.size() != 1) {
    throw SchemaViolation("expected exactly one trace, found " + std::to_string(all.size()));
  }
  return std::move(all.front());
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

inline std::vector<ReasoningTrace> load_traces(const std::string& path) {
  return parse_traces(read_file(path));
}

}  // namespace eatstop
