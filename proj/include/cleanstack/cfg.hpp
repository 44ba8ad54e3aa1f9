#pragma once

#include "cleanstack/ir.hpp"

#include <map>
#include <set>
#include <string>
#include <vector>

namespace cleanstack {

/// Position of an instruction inside its function.
struct NodeRef {
  int block = 0;
  int index = 0;

  friend bool operator==(const NodeRef &, const NodeRef &) = default;
};

/// Instruction-level control-flow graph: node i is the i-th instruction in
/// block order. Edges inside a block are linear; a terminator links to the
/// first instruction of each successor block.
struct CFG {
  std::vector<NodeRef> nodes;
  std::vector<std::vector<int>> pred;
  std::vector<std::vector<int>> succ;
  std::vector<int> block_head; // node id of each block's first instruction

  std::size_t size() const { return nodes.size(); }
  int node_of(int block, int index) const { return block_head[block] + index; }
  const Instruction &inst(const Function &f, int node) const {
    const auto &r = nodes[node];
    return f.blocks[r.block].instructions[r.index];
  }
};

/// Requires a verified function; throws Error on unresolved labels.
CFG build_cfg(const Function &f);

/// Block-level predecessor lists, indexed by block.
std::vector<std::vector<int>> block_predecessors(const Function &f);

struct CallSite {
  std::string caller;
  std::string callee;
  SourceSpan span;
};

struct CallGraph {
  std::vector<std::string> nodes;
  std::map<std::string, std::set<std::string>> callees;
  std::vector<CallSite> sites;
  /// Strongly connected components in reverse topological order: every
  /// component appears after all components it calls into.
  std::vector<std::vector<std::string>> sccs;
  std::map<std::string, int> scc_of;

  bool is_recursive(const std::string &fn) const;
};

/// Edges come from Call and Spawn. Calls to declared externs become leaf
/// nodes; calls to undeclared symbols throw Error naming the site.
CallGraph build_call_graph(const Program &p);

} // namespace cleanstack
