#include "cleanstack/cfg.hpp"

#include <algorithm>
#include <functional>

namespace cleanstack {

std::vector<std::vector<int>> block_predecessors(const Function &f) {
  std::vector<std::vector<int>> preds(f.blocks.size());
  for (std::size_t b = 0; b < f.blocks.size(); ++b) {
    const auto &bb = f.blocks[b];
    if (bb.instructions.empty())
      continue;
    const auto &term = bb.instructions.back();
    if (!is_terminator(term.op))
      continue;
    std::vector<int> seen;
    for (const auto &l : term.labels) {
      int t = f.block_index(l);
      if (t < 0 || std::find(seen.begin(), seen.end(), t) != seen.end())
        continue;
      seen.push_back(t);
      preds[static_cast<std::size_t>(t)].push_back(static_cast<int>(b));
    }
  }
  return preds;
}

CFG build_cfg(const Function &f) {
  CFG g;
  for (std::size_t b = 0; b < f.blocks.size(); ++b) {
    g.block_head.push_back(static_cast<int>(g.nodes.size()));
    if (f.blocks[b].instructions.empty())
      throw Error("build_cfg: block '" + f.blocks[b].label + "' in '" + f.name + "' is empty");
    for (std::size_t i = 0; i < f.blocks[b].instructions.size(); ++i)
      g.nodes.push_back({static_cast<int>(b), static_cast<int>(i)});
  }
  g.pred.assign(g.nodes.size(), {});
  g.succ.assign(g.nodes.size(), {});
  auto link = [&](int from, int to) {
    if (std::find(g.succ[from].begin(), g.succ[from].end(), to) != g.succ[from].end())
      return;
    g.succ[from].push_back(to);
    g.pred[to].push_back(from);
  };
  for (std::size_t b = 0; b < f.blocks.size(); ++b) {
    const auto &insts = f.blocks[b].instructions;
    int head = g.block_head[b];
    for (std::size_t i = 0; i + 1 < insts.size(); ++i)
      link(head + static_cast<int>(i), head + static_cast<int>(i) + 1);
    int last = head + static_cast<int>(insts.size()) - 1;
    for (const auto &l : insts.back().labels) {
      int t = f.block_index(l);
      if (t < 0)
        throw Error("build_cfg: unknown label '" + l + "' in '" + f.name + "'");
      link(last, g.block_head[static_cast<std::size_t>(t)]);
    }
  }
  return g;
}

bool CallGraph::is_recursive(const std::string &fn) const {
  auto it = scc_of.find(fn);
  if (it == scc_of.end())
    return false;
  if (sccs[static_cast<std::size_t>(it->second)].size() > 1)
    return true;
  auto c = callees.find(fn);
  return c != callees.end() && c->second.count(fn);
}

CallGraph build_call_graph(const Program &p) {
  CallGraph cg;
  for (const auto &f : p.functions) {
    cg.nodes.push_back(f.name);
    cg.callees[f.name];
  }
  for (const auto &e : p.externs) {
    cg.nodes.push_back(e);
    cg.callees[e];
  }
  for (const auto &f : p.functions) {
    for (const auto &bb : f.blocks) {
      for (const auto &inst : bb.instructions) {
        if (inst.op != Opcode::Call && inst.op != Opcode::Spawn)
          continue;
        if (!p.find_function(inst.callee) && !p.is_extern(inst.callee)) {
          const auto &s = inst.span;
          throw Error("call to undeclared symbol '" + inst.callee + "' in function '" + f.name +
                      "' at " + (s.file.empty() ? "<input>" : s.file) + ":" +
                      std::to_string(s.line) + ":" + std::to_string(s.column));
        }
        cg.callees[f.name].insert(inst.callee);
        cg.sites.push_back({f.name, inst.callee, inst.span});
      }
    }
  }

  // Tarjan emits components callee-first, which is the order the bottom-up
  // analysis wants.
  std::map<std::string, int> index, low;
  std::vector<std::string> stack;
  std::set<std::string> on_stack;
  int counter = 0;
  std::function<void(const std::string &)> strongconnect = [&](const std::string &v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack.insert(v);
    for (const auto &w : cg.callees[v]) {
      if (!index.count(w)) {
        strongconnect(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack.count(w)) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<std::string> comp;
      std::string w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack.erase(w);
        comp.push_back(w);
      } while (w != v);
      std::sort(comp.begin(), comp.end());
      int id = static_cast<int>(cg.sccs.size());
      for (const auto &n : comp)
        cg.scc_of[n] = id;
      cg.sccs.push_back(std::move(comp));
    }
  };
  for (const auto &n : cg.nodes)
    if (!index.count(n))
      strongconnect(n);
  return cg;
}

} // namespace cleanstack
