#pragma once

// Plot-ready serialization of efficiency curves and replay outcomes.
//
// CSV header (exact): policy_family,threshold,mean_total_tokens,agg_pass1,auc
// Numbers are written in shortest round-trip form, so reports are
// byte-stable for identical inputs.

#include <charconv>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "eatstop/error.hpp"
#include "eatstop/replay.hpp"
#include "eatstop/stopping.hpp"

namespace eatstop {

enum class ReportFormat { json, csv };

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  throw InvalidArgument("unsupported report format '" + std::string(s) + "'");
}

inline constexpr std::string_view kCsvHeader =
    "policy_family,threshold,mean_total_tokens,agg_pass1,auc";
inline constexpr std::string_view kReportSchema = "eatstop-report";

inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace detail

inline nlohmann::ordered_json policy_to_json(const StoppingPolicy& policy) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(policy_kind(policy));
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, EatVariancePolicy>) {
          j["delta"] = p.delta;
          j["alpha"] = p.alpha;
          j["probe_model_id"] = p.probe.model_id;
          j["variant"] = std::string(to_string(p.probe.variant));
        } else if constexpr (std::is_same_v<P, UniqueAnswersPolicy>) {
          j["k"] = p.k;
          j["uniq_threshold"] = p.uniq_threshold;
        }
        j["token_limit"] = p.token_limit;
      },
      policy);
  return j;
}

inline nlohmann::ordered_json curves_to_json(const std::vector<EfficiencyCurve>& curves) {
  nlohmann::ordered_json doc;
  doc["schema"] = std::string(kReportSchema);
  doc["version"] = 1;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : curves) {
    nlohmann::ordered_json jc;
    jc["policy_family"] = c.policy_family;
    jc["auc"] = c.auc;
    auto pts = nlohmann::ordered_json::array();
    for (const auto& p : c.points) {
      pts.push_back(nlohmann::ordered_json{{"threshold", p.threshold},
                                           {"mean_total_tokens", p.mean_total_tokens},
                                           {"mean_reasoning_tokens", p.mean_reasoning_tokens},
                                           {"mean_overhead_tokens", p.mean_overhead_tokens},
                                           {"agg_pass1", p.agg_pass1}});
    }
    jc["points"] = std::move(pts);
    arr.push_back(std::move(jc));
  }
  doc["curves"] = std::move(arr);
  return doc;
}

/// Serializes curves; an empty list yields a valid empty document.
inline std::string emit_report(const std::vector<EfficiencyCurve>& curves, ReportFormat format) {
  if (format == ReportFormat::json) return curves_to_json(curves).dump(2) + "\n";
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      out += detail::csv_field(c.policy_family);
      out += ',' + format_number(p.threshold);
      out += ',' + format_number(p.mean_total_tokens);
      out += ',' + format_number(p.agg_pass1);
      out += ',' + format_number(c.auc);
      out += '\n';
    }
  }
  return out;
}

inline std::string emit_report(const std::vector<EfficiencyCurve>& curves, std::string_view format) {
  return emit_report(curves, parse_report_format(format));
}

/// Reads back a JSON report written by emit_report.
inline std::vector<EfficiencyCurve> parse_report(std::string_view bytes) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedJson(e.what());
  }
  try {
    if (doc.at("schema").get<std::string>() != kReportSchema) {
      throw SchemaViolation("not an eatstop report", std::nullopt, "schema");
    }
    std::vector<EfficiencyCurve> curves;
    for (const auto& jc : doc.at("curves")) {
      EfficiencyCurve c;
      c.policy_family = jc.at("policy_family").get<std::string>();
      c.auc = jc.at("auc").get<double>();
      for (const auto& jp : jc.at("points")) {
        CurvePoint p;
        p.threshold = jp.at("threshold").get<double>();
        p.mean_total_tokens = jp.at("mean_total_tokens").get<double>();
        p.mean_reasoning_tokens = jp.value("mean_reasoning_tokens", p.mean_total_tokens);
        p.mean_overhead_tokens = jp.value("mean_overhead_tokens", 0.0);
        p.agg_pass1 = jp.at("agg_pass1").get<double>();
        c.points.push_back(p);
      }
      curves.push_back(std::move(c));
    }
    return curves;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaViolation(e.what());
  }
}

inline nlohmann::ordered_json outcome_to_json(const ExitOutcome& o) {
  return nlohmann::ordered_json{{"question_id", o.question_id},
                                {"repeat", o.repeat},
                                {"stop_line", o.stop_line},
                                {"exit_reason", std::string(to_string(o.exit_reason))},
                                {"reasoning_tokens", o.reasoning_tokens},
                                {"overhead_tokens", o.overhead_tokens},
                                {"probes", o.probes},
                                {"pass1_at_stop", o.pass1_at_stop}};
}

/// Per-question outcomes plus corpus summary for a fixed-parameter replay.
inline std::string emit_replay(const std::vector<ExitOutcome>& outcomes, const StoppingPolicy& policy,
                               ReportFormat format) {
  // Repeated UA@K draws collapse to one Pass@1 per question before averaging.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ExitOutcome*>> by_question;
  for (const auto& o : outcomes) {
    auto& bucket = by_question[o.question_id];
    if (bucket.empty()) order.push_back(o.question_id);
    bucket.push_back(&o);
  }
  std::vector<double> pass1, reasoning, overhead;
  for (const auto& q : order) {
    std::vector<double> p, r, h;
    for (const auto* o : by_question[q]) {
      p.push_back(o->pass1_at_stop);
      r.push_back(static_cast<double>(o->reasoning_tokens));
      h.push_back(static_cast<double>(o->overhead_tokens));
    }
    pass1.push_back(detail::mean_of(p));
    reasoning.push_back(detail::mean_of(r));
    overhead.push_back(detail::mean_of(h));
  }

  if (format == ReportFormat::csv) {
    std::string out =
        "question_id,repeat,stop_line,exit_reason,reasoning_tokens,overhead_tokens,probes,pass1_at_stop\n";
    for (const auto& o : outcomes) {
      out += detail::csv_field(o.question_id) + ',' + std::to_string(o.repeat) + ',' +
             std::to_string(o.stop_line) + ',' + std::string(to_string(o.exit_reason)) + ',' +
             std::to_string(o.reasoning_tokens) + ',' + std::to_string(o.overhead_tokens) + ',' +
             std::to_string(o.probes) + ',' +
             (std::isnan(o.pass1_at_stop) ? std::string() : format_number(o.pass1_at_stop)) + '\n';
    }
    return out;
  }
  nlohmann::ordered_json doc;
  doc["schema"] = "eatstop-replay";
  doc["version"] = 1;
  doc["policy"] = policy_to_json(policy);
  auto arr = nlohmann::ordered_json::array();
  for (const auto& o : outcomes) arr.push_back(outcome_to_json(o));
  doc["outcomes"] = std::move(arr);
  nlohmann::ordered_json summary;
  summary["questions"] = order.size();
  if (!order.empty()) {
    summary["agg_pass1"] = detail::mean_of(pass1);
    summary["mean_reasoning_tokens"] = detail::mean_of(reasoning);
    summary["mean_overhead_tokens"] = detail::mean_of(overhead);
    summary["mean_total_tokens"] = detail::mean_of(reasoning) + detail::mean_of(overhead);
  }
  doc["summary"] = std::move(summary);
  return doc.dump(2) + "\n";
}

}  // namespace eatstop
