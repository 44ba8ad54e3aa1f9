//===- harness.hpp - Attack scenarios and measurements --------------------===//
//
// Runs attacker inputs against baseline and protected builds of a fixture,
// estimates success rates over fresh layout seeds, computes the analytic
// success probability from program statistics, and compares instruction
// counts between builds.
//
// Attacker model: knows the program text and the baseline frame layout,
// does not know the layout seed of a protected build, writes once per trial.
//
//===----------------------------------------------------------------------===//
#pragma once

#include "cleanstack/transform.hpp"
#include "cleanstack/vm.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cleanstack {

enum class AttackClass {
  ContiguousIntraFrame,
  ContiguousInterFrame,
  NonContiguousIntraFrame,
  NonContiguousInterFrame,
};

std::string_view attack_class_name(AttackClass c);
AttackClass parse_attack_class(std::string_view s);

struct Goal {
  enum class Kind { HijackReturn, CorruptVariable };
  Kind kind = Kind::HijackReturn;
  std::string function;      // HijackReturn: function the attacker wants entered
  std::string object;        // CorruptVariable: variable the fixture outputs last
  std::int64_t value = 0;    // CorruptVariable: value the attacker wants there
};

/// How the attacker turns the baseline layout into an input stream.
///
///   overflow       fill `buffer` (in `function`) from taint-source global
///                  `source` with `length` bytes of `fill`; when the goal is a
///                  hijack, the bytes over the return address hold the goal
///                  function's address. Stream: global contents, then the
///                  8-byte length.
///   indexed_write  one write of `value` at buffer + (target - buffer) as seen
///                  in the baseline. Stream: count 1, offset, value.
struct AttackPlan {
  std::string kind;
  std::string function;
  std::string buffer;
  std::string target;
  std::string source;
  std::int64_t length = 0;
  std::int64_t value = 0;
  std::uint8_t fill = 'A';
};

struct Scenario {
  std::string name;
  std::string fixture;
  Program program;
  AttackClass attack_class = AttackClass::ContiguousIntraFrame;
  Goal goal;
  AttackPlan plan;
  std::uint64_t step_limit = 1'000'000;
  std::string description;
};

enum class Build { Baseline, Protected };
std::string_view build_name(Build b);

enum class FailureMode { None, GuardTrap, CanaryTrap, MissedTarget, NoEffect };
std::string_view failure_name(FailureMode m);

struct AttackOutcome {
  bool success = false;
  FailureMode failure = FailureMode::None;
  std::uint64_t seed = 0;
  /// Offsets the attacker derived from the baseline layout.
  std::map<std::string, std::int64_t> guessed_layout;
  /// Offsets in the build that actually ran (unclean frame of the attacked
  /// function; empty for baseline).
  std::map<std::string, std::int64_t> actual_layout;
  RunOutcome run;
};

/// Attacker input, derived from the baseline layout only.
std::vector<std::uint8_t> attack_input(const Scenario &sc,
                                       std::map<std::string, std::int64_t> *guessed = nullptr);

bool goal_met(const Goal &g, const RunOutcome &r);

/// Protected builds are instrumented with `seed`; the VM canary uses it too.
AttackOutcome run_scenario(const Scenario &sc, Build build, std::uint64_t seed,
                           const InstrumentationConfig &base = {});

struct MonteCarloResult {
  std::size_t trials = 0;
  std::size_t successes = 0;
  double rate = 0;
  double ci_low = 0;
  double ci_high = 0;
  std::map<FailureMode, std::size_t> failures;
  std::size_t ra_corrupted = 0;
  std::vector<AttackOutcome> outcomes; // trial order; run traces trimmed
};

/// Wilson score interval at z (default 95%).
std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n,
                                          double z = 1.959963984540054);

/// Seed of trial i; fresh and reproducible.
std::uint64_t trial_seed(std::uint64_t base, std::size_t i);

MonteCarloResult monte_carlo(const Scenario &sc, Build build, std::size_t trials,
                             std::uint64_t base_seed = 0, const InstrumentationConfig &base = {},
                             unsigned jobs = 1);

struct ProgramStats {
  std::size_t total_functions = 0;
  std::size_t unclean_functions = 0;
  std::size_t unclean_allocas_total = 0;
  bool cross_checked = false;

  double unclean_fraction() const;
  double avg_unclean_objects() const;
};

/// Counts from the instrumentation stats, cross-checked against the printed
/// protected module re-parsed (functions carrying a canary check, allocas
/// that left the clean stack). Throws Error on disagreement.
ProgramStats collect_stats(const Program &baseline, const std::string &protected_text,
                           const InstrumentationStats &stats);

/// fraction × (1 / avg); halved with a randomized canary position.
double analytic_success_probability(double unclean_fraction, double avg_unclean_objects,
                                    bool canary_randomized);
double analytic_success_probability(const ProgramStats &s, bool canary_randomized);

struct OverheadReport {
  std::uint64_t baseline_instructions = 0;
  std::uint64_t protected_instructions = 0;
  std::int64_t delta = 0;
  double relative = 0;
  bool expect_zero = false;
};

/// Throws Error when the two runs disagree on outputs or status.
OverheadReport overhead_report(const RunOutcome &baseline, const RunOutcome &protected_run,
                               bool clean_only = false);

/// Input stream from a list of segments: {"text": s, "pad": n} and
/// {"i64": [..]} (little-endian words) and {"hex": "..."}.
std::vector<std::uint8_t> encode_input(const std::string &segments_json);

struct FixtureEntry {
  std::string file;
  std::vector<std::vector<std::uint8_t>> inputs;
  bool well_defined = true; // safe for baseline/protected differential runs
};

struct Manifest {
  std::string directory;
  std::vector<FixtureEntry> fixtures;
  std::vector<Scenario> scenarios;

  const Scenario &scenario(std::string_view name) const;
};

Manifest load_manifest(const std::string &path);

} // namespace cleanstack
