//===- report.hpp - JSON documents --------------------------------------===//
//
// Every document carries a "schema" field of the form cleanstack.<kind>/<n>.
//
//===----------------------------------------------------------------------===//
#pragma once

#include "cleanstack/frontend.hpp"
#include "cleanstack/harness.hpp"
#include "cleanstack/heuristic.hpp"
#include "cleanstack/taint.hpp"
#include "cleanstack/transform.hpp"
#include "cleanstack/verify.hpp"
#include "cleanstack/vm.hpp"

#include <json.hpp>

#include <optional>

namespace cleanstack {

using Json = nlohmann::ordered_json;

Json span_json(const SourceSpan &s);
Json verify_json(const VerifyReport &r);
Json diagnostics_json(const std::vector<Diagnostic> &d);

/// Parse result: function/instruction counts plus verification.
Json parse_report(const Program &p, const VerifyReport &r);

/// Per function, tainted objects with the first instruction that taints each.
Json taint_report(const Program &p, const TaintResult &r);

/// `divergence` holds one entry per function when both methods ran.
Json classification_report(const Program &p, Method method, const ProgramClassification &c,
                           const std::vector<DivergenceReport> &divergence = {});

/// Layout sidecar for an instrumented module.
Json layout_sidecar(const InstrumentationConfig &config, const InstrumentationStats &stats);

Json run_trace(const RunOutcome &r, bool full = true);

Json stats_json(const ProgramStats &s, bool canary_randomized);

Json outcome_json(const AttackOutcome &o, bool with_run);

Json experiment_report(const Scenario &sc, Build build, const MonteCarloResult &m,
                       std::uint64_t base_seed, const InstrumentationConfig &config,
                       bool per_trial = true);

Json overhead_json(const OverheadReport &r);

} // namespace cleanstack
