// Library usage: replay the EAT stopping rule over a trace file and compare
// it with a fixed token budget.
//
//   sample_replay data/sample_traces.jsonl

#include <iostream>

#include "eatstop/replay.hpp"
#include "eatstop/report.hpp"
#include "eatstop/trace.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: sample_replay TRACES.jsonl\n";
    return 2;
  }
  try {
    const auto traces = eatstop::load_traces(argv[1]);

    eatstop::EatVariancePolicy eat;
    eat.delta = 1.0 / 1024.0;
    eat.probe = {"", eatstop::ProbeVariant::eat_prefix};  // same-model probes
    for (const auto& t : traces) {
      const auto o = eatstop::simulate_policy(t, eat);
      std::cout << t.question_id << ": stop at line " << o.stop_line << " (" << to_string(o.exit_reason)
                << "), " << o.reasoning_tokens << " reasoning tokens, pass@1 " << o.pass1_at_stop << "\n";
    }

    const auto eat_curve = eatstop::sweep(traces, {"eat", eat}, eatstop::grids::delta_negative_powers());
    const auto token_curve =
        eatstop::sweep(traces, {"token", eatstop::TokenBudgetPolicy{}}, eatstop::grids::token_limits());
    std::cout << eatstop::emit_report({eat_curve, token_curve}, eatstop::ReportFormat::csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
