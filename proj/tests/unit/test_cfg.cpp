#include "support.hpp"

#include "cleanstack/frontend.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace cstest;

TEST(Cfg, LinearAndBranchEdges) {
  const char *text = R"(entry main

func main() {
entry:
  %c = input 1
  condbr %c, a, b
a:
  br b
b:
  ret
}
)";
  Program p = parse_module(text);
  CFG g = build_cfg(p.functions[0]);
  ASSERT_EQ(g.size(), 4u);
  EXPECT_EQ(g.succ[0], std::vector<int>{1});
  EXPECT_EQ(g.succ[1], (std::vector<int>{2, 3}));
  EXPECT_EQ(g.succ[2], std::vector<int>{3});
  EXPECT_TRUE(g.succ[3].empty());
  EXPECT_EQ(g.pred[3].size(), 2u);
  EXPECT_EQ(g.block_head, (std::vector<int>{0, 2, 3}));
}

TEST(Cfg, PredAndSuccAreInverse) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Generated gen = random_program(s);
    for (const auto &f : gen.program.functions) {
      CFG g = build_cfg(f);
      std::set<std::pair<int, int>> fw, bw;
      for (std::size_t u = 0; u < g.size(); ++u) {
        for (int v : g.succ[u])
          fw.insert({static_cast<int>(u), v});
        for (int w : g.pred[u])
          bw.insert({w, static_cast<int>(u)});
      }
      EXPECT_EQ(fw, bw);
      // A node has successors within its block unless it is a terminator.
      for (std::size_t u = 0; u < g.size(); ++u) {
        const Instruction &in = g.inst(f, static_cast<int>(u));
        if (!is_terminator(in.op))
          EXPECT_EQ(g.succ[u], std::vector<int>{static_cast<int>(u) + 1});
      }
    }
  }
}

namespace {

// Random module whose call graph has n functions and random edges.
Program random_call_program(std::mt19937_64 &rng, int n) {
  std::string text = "entry f0\n";
  for (int i = 0; i < n; ++i) {
    text += "\nfunc f" + std::to_string(i) + "() {\nentry:\n";
    for (int j = 0; j < n; ++j)
      if (rng() % 4 == 0)
        text += "  call f" + std::to_string(j) + "()\n";
    text += "  ret\n}\n";
  }
  return parse_module(text);
}

} // namespace

TEST(CallGraph, SccsMatchMutualReachability) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 7);
    Program p = random_call_program(rng, n);
    CallGraph cg = build_call_graph(p);

    // Transitive closure by Floyd-Warshall.
    std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
    for (int i = 0; i < n; ++i) {
      reach[i][i] = true;
      for (const auto &b : p.functions[i].blocks)
        for (const auto &in : b.instructions)
          if (in.op == Opcode::Call)
            reach[i][std::stoi(in.callee.substr(1))] = true;
    }
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (reach[i][k] && reach[k][j])
            reach[i][j] = true;

    std::map<std::string, int> comp;
    for (std::size_t c = 0; c < cg.sccs.size(); ++c)
      for (const auto &fn : cg.sccs[c])
        comp[fn] = static_cast<int>(c);
    ASSERT_EQ(comp.size(), static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        EXPECT_EQ(comp["f" + std::to_string(i)] == comp["f" + std::to_string(j)],
                  reach[i][j] && reach[j][i]);

    // Bottom-up order: callees' components come no later than callers'.
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (reach[i][j])
          EXPECT_LE(comp["f" + std::to_string(j)], comp["f" + std::to_string(i)]);
  }
}

TEST(CallGraph, RecursionIsDetected) {
  CallGraph cg = build_call_graph(load_fixture("recursion.cir"));
  EXPECT_TRUE(cg.is_recursive("rec"));
  EXPECT_FALSE(cg.is_recursive("main"));
}
