//===- taint.hpp - Inter-procedural taint analysis ------------------------===//
//
// Forward may-analysis over the instruction-level CFG. Facts name SSA values,
// whole stack objects, globals, the memory behind a pointer parameter, and
// "some memory reached through an unknown pointer". Calls are resolved with
// per-parameter function summaries computed bottom-up over the call graph;
// the final pass is context-insensitive.
//
//===----------------------------------------------------------------------===//
#pragma once

#include "cleanstack/address_flow.hpp"
#include "cleanstack/cfg.hpp"
#include "cleanstack/classification.hpp"

#include <compare>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace cleanstack {

struct TaintFact {
  enum class Kind { Value, StackObject, Global, Pointee, UnknownMemory };

  Kind kind = Kind::Value;
  std::string name;
  int index = -1; // parameter position for Pointee

  static TaintFact value(std::string n) { return {Kind::Value, std::move(n), -1}; }
  static TaintFact object(std::string n) { return {Kind::StackObject, std::move(n), -1}; }
  static TaintFact global(std::string n) { return {Kind::Global, std::move(n), -1}; }
  static TaintFact pointee(int j) { return {Kind::Pointee, {}, j}; }
  static TaintFact unknown_memory() { return {Kind::UnknownMemory, {}, -1}; }

  auto operator<=>(const TaintFact &) const = default;
};

std::string format_fact(const TaintFact &f);

using FactSet = std::set<TaintFact>;

struct NodeState {
  FactSet in;
  FactSet out;
  FactSet gen;
  FactSet kill;

  bool operator==(const NodeState &) const = default;
};

struct FunctionSummary {
  std::vector<bool> param_to_return;
  std::vector<std::set<int>> param_to_ref_params;
  /// Parameter taint reaches memory through a pointer of unknown origin.
  std::vector<bool> param_to_unknown;
  bool is_source = false;
  std::set<int> source_ref_params;
  bool source_unknown = false;

  static FunctionSummary empty(std::size_t arity);
  bool operator==(const FunctionSummary &) const = default;
};

using SummaryMap = std::map<std::string, FunctionSummary>;

struct TaintConfig {
  /// Treat the entry function's parameters (argv analogue) as tainted.
  bool taint_entry_params = true;
};

/// Everything the transfer function needs about the enclosing function and
/// program. Built once per function and analysis round.
struct TaintContext {
  const Program *program = nullptr;
  const Function *function = nullptr;
  const SummaryMap *summaries = nullptr;
  std::set<std::string> tainted_globals;
  AddressFlow flow;
  std::map<std::string, std::int64_t> object_sizes; // static allocas only
  /// Whether any taint source exists anywhere; decides setjmp results.
  bool program_has_source = false;
  /// Memory behind pointers of unknown origin may already hold taint on
  /// entry (an escaped object was tainted somewhere in the program).
  bool unknown_memory_tainted = false;
  /// Receives one message per call resolved without a summary.
  std::set<std::string> *warnings = nullptr;
};

TaintContext make_taint_context(const Program &p, const Function &f, const SummaryMap &summaries,
                                const std::set<std::string> &tainted_globals,
                                bool program_has_source, std::set<std::string> *warnings = nullptr);

bool program_has_taint_source(const Program &p, const TaintConfig &config);

/// gen and kill of one node for a given in-set.
std::pair<FactSet, FactSet> gen_kill(const Instruction &inst, const FactSet &in,
                                     const TaintContext &ctx);

/// gen ∪ (in − kill).
FactSet transfer(const Instruction &inst, const FactSet &in, const TaintContext &ctx);

FactSet join(const std::vector<FactSet> &states);

struct FunctionTaint {
  std::vector<NodeState> states; // indexed by CFG node
  std::size_t iterations = 0;    // transfer applications
  FactSet seeds;
};

/// Worklist fixpoint; `seeds` are added to the entry node's in-set.
FunctionTaint analyze_function(const Function &f, const CFG &cfg, const TaintContext &ctx,
                               const FactSet &seeds);

FunctionSummary summarize_function(const Function &f, const CFG &cfg, const TaintContext &ctx);

struct TaintResult {
  std::map<std::string, FunctionTaint> functions;
  SummaryMap summaries;
  std::map<std::string, std::set<std::string>> tainted_objects;
  std::set<std::string> tainted_globals;
  std::vector<std::string> warnings;
  std::size_t rounds = 0;

  bool is_tainted(const std::string &function, const std::string &object) const;
};

TaintResult analyze_program(const Program &p, const TaintConfig &config = {});

ObjectClassification classify_by_taint(const Function &f, const TaintResult &r);

} // namespace cleanstack
