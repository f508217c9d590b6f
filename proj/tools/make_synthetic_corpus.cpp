// Generates the bundled synthetic trace corpora.
//
//   make_synthetic_corpus adaptivity --seed 7 -o data/adaptivity_corpus.jsonl
//   make_synthetic_corpus sample --seed 3 -o data/sample_traces.jsonl
//
// adaptivity: 50 easy traces whose EAT settles by line 10 and 50 hard
// traces whose EAT settles between lines 60 and 80. Pass@1 reaches 1.0
// exactly when the EAT settles, so the settling line is the ground truth.
//
// sample: a small mixed corpus with two probe models, both probe variants,
// and recorded rollouts, used by the CLI samples and the golden report.

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eatstop/answers.hpp"
#include "eatstop/trace.hpp"

using namespace eatstop;

namespace {

struct Rng {
  std::mt19937_64 engine;
  explicit Rng(std::uint64_t seed) : engine(seed) {}
  // Integer in [lo, hi] without relying on std::uniform_int_distribution,
  // whose output is library-specific.
  std::size_t between(std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(engine() % (hi - lo + 1));
  }
  double unit() { return static_cast<double>(engine() >> 11) * 0x1.0p-53; }
};

std::string line_text(std::size_t i, bool settled) {
  if (settled) return "Re-checking step " + std::to_string(i) + ": the result holds.\n\n";
  return "Step " + std::to_string(i) + ": work through the next sub-case.\n\n";
}

ReasoningTrace make_adaptivity_trace(const std::string& id, std::size_t settle, std::size_t n_lines,
                                     Rng& rng) {
  ReasoningTrace t;
  t.question_id = id;
  t.dataset = "synthetic-adaptivity";
  t.question = "Synthetic question " + id + ".";
  t.reasoning_model_id = "synthetic-reasoner";
  t.ended_with_end_think = true;
  t.meta["settle_line"] = std::to_string(settle);
  const double plateau = 0.3 + 0.4 * rng.unit();
  const double start = plateau + 1.5 + rng.unit();
  for (std::size_t i = 0; i < n_lines; ++i) {
    LineRecord line;
    line.index = i;
    line.token_count = rng.between(40, 60);
    const bool settled = i >= settle;
    line.text = line_text(i, settled);
    double value;
    if (settled) {
      value = plateau + 1e-4 * (rng.unit() - 0.5);
      line.pass1 = 1.0;
    } else {
      // Decreasing base with an alternating jitter: the EMA variance stays
      // well above any threshold that would fire on the plateau.
      const double frac = static_cast<double>(i) / static_cast<double>(settle);
      const double jitter = (i % 2 == 0 ? 1.0 : -1.0) * (0.3 + 0.05 * rng.unit());
      value = start + (plateau - start) * frac + jitter;
      if (value < 0.0) value = 0.0;
      line.pass1 = 0.5 * frac;
    }
    line.probes.emplace(ProbeKey{"synthetic-reasoner", ProbeVariant::eat_prefix}, ProbeValue{value});
    t.lines.push_back(std::move(line));
  }
  return t;
}

std::vector<ReasoningTrace> adaptivity_corpus(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ReasoningTrace> out;
  for (int i = 0; i < 50; ++i) {
    out.push_back(make_adaptivity_trace("easy-" + std::to_string(i), rng.between(6, 10), 150, rng));
  }
  for (int i = 0; i < 50; ++i) {
    out.push_back(make_adaptivity_trace("hard-" + std::to_string(i), rng.between(60, 80), 150, rng));
  }
  return out;
}

RolloutRecord make_rollout(const std::string& answer, bool correct, Rng& rng) {
  RolloutRecord r;
  r.answer_text = "So the answer is \\boxed{" + answer + "}.";
  r.extracted_answer = normalize_answer(r.answer_text);
  r.correct = correct;
  r.token_count = rng.between(20, 80);
  return r;
}

std::vector<ReasoningTrace> sample_corpus(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ReasoningTrace> out;
  const std::size_t n_traces = 8;
  for (std::size_t q = 0; q < n_traces; ++q) {
    ReasoningTrace t;
    t.question_id = "sample-" + std::to_string(q);
    t.dataset = "synthetic-sample";
    t.question = "What is " + std::to_string(q + 2) + " squared?";
    t.reasoning_model_id = "sample-reasoner-8b";
    t.ended_with_end_think = q % 3 != 2;
    t.meta["answer_extractor"] = "builtin";
    const std::string gold = std::to_string((q + 2) * (q + 2));
    // Two traces never become reliably solvable.
    const double final_acc = q % 4 == 3 ? 0.5 : 1.0;
    const std::size_t n_lines = rng.between(30, 60);
    const std::size_t settle = rng.between(5, n_lines - 5);
    const double plateau = 0.2 + 0.5 * rng.unit();
    for (std::size_t i = 0; i < n_lines; ++i) {
      LineRecord line;
      line.index = i;
      line.token_count = rng.between(15, 90);
      line.text = line_text(i, i >= settle);
      const double frac = i >= settle ? 1.0 : static_cast<double>(i) / static_cast<double>(settle);
      const double noise = i >= settle ? 0.02 * (rng.unit() - 0.5) : 0.6 * (rng.unit() - 0.5);
      const double eat = std::max(0.01, plateau + (1.0 - frac) * 2.0 + noise);
      line.probes.emplace(ProbeKey{t.reasoning_model_id, ProbeVariant::eat}, ProbeValue{eat + 0.3});
      line.probes.emplace(ProbeKey{t.reasoning_model_id, ProbeVariant::eat_prefix}, ProbeValue{eat});
      const double proxy = eat * 1.1 + 0.05;
      line.probes.emplace(ProbeKey{"sample-proxy-1.5b", ProbeVariant::eat_prefix},
                          ProbeValue{proxy, Exactness::bounded, proxy - 0.05, proxy});
      std::vector<RolloutRecord> rollouts;
      const double acc = final_acc * (0.2 + 0.8 * frac);
      std::size_t correct = 0;
      for (std::size_t k = 0; k < 16; ++k) {
        const bool ok = rng.unit() < acc;
        correct += ok;
        const std::string wrong = std::to_string((q + 2) * (q + 2) + 1 + rng.between(0, i >= settle ? 0 : 4));
        rollouts.push_back(make_rollout(ok ? gold : wrong, ok, rng));
      }
      line.pass1 = static_cast<double>(correct) / 16.0;
      line.rollouts = std::move(rollouts);
      t.lines.push_back(std::move(line));
    }
    validate_trace(t);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic EAT trace corpora"};
  std::string kind;
  std::uint64_t seed = 7;
  std::string output = "-";
  app.add_option("kind", kind, "adaptivity | sample")->required()->check(CLI::IsMember({"adaptivity", "sample"}));
  app.add_option("--seed", seed, "Generator seed")->capture_default_str();
  app.add_option("-o,--output", output, "Output JSONL path, - for stdout")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    const auto traces = kind == "adaptivity" ? adaptivity_corpus(seed) : sample_corpus(seed);
    for (const auto& t : traces) validate_trace(t);
    const auto text = serialize_traces(traces);
    if (output == "-") {
      std::cout << text;
    } else {
      write_file(output, text);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
