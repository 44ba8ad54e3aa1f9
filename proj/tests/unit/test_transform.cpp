#include "support.hpp"

#include "cleanstack/frontend.hpp"
#include "cleanstack/transform.hpp"
#include "cleanstack/verify.hpp"

#include <gtest/gtest.h>

using namespace cstest;

namespace {

std::vector<LayoutObject> objs(std::initializer_list<std::tuple<const char *, int, int>> l) {
  std::vector<LayoutObject> out;
  for (auto [n, s, a] : l)
    out.push_back({n, s, a});
  return out;
}

// Index of the canary among the packed elements.
std::size_t canary_index(const FrameLayout &L) {
  std::size_t i = 0;
  for (const auto &s : L.slots)
    if (s.offset < L.canary_slot)
      ++i;
  return i;
}

void check_well_formed(const FrameLayout &L, const std::vector<LayoutObject> &in) {
  EXPECT_EQ(L.frame_size % 16, 0);
  EXPECT_EQ(L.canary_slot % 8, 0);
  EXPECT_GE(L.canary_slot, 0);
  EXPECT_LE(L.canary_slot + 8, L.frame_size);
  ASSERT_EQ(L.slots.size(), in.size());
  ASSERT_EQ(L.permutation.size(), in.size());
  std::vector<std::pair<std::int64_t, std::int64_t>> spans{{L.canary_slot, L.canary_slot + 8}};
  for (std::size_t i = 0; i < L.slots.size(); ++i) {
    const auto &s = L.slots[i];
    EXPECT_EQ(s.object, L.permutation[i]);
    EXPECT_EQ(s.offset % s.align, 0);
    EXPECT_GE(s.offset, 0);
    EXPECT_LE(s.offset + s.size, L.frame_size);
    if (i)
      EXPECT_GT(s.offset, L.slots[i - 1].offset);
    spans.push_back({s.offset, s.offset + s.size});
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i)
    EXPECT_LE(spans[i - 1].second, spans[i].first);
  std::vector<std::string> a = L.permutation, b;
  for (const auto &o : in)
    b.push_back(o.name);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

} // namespace

TEST(Layout, DeterministicPerSeed) {
  auto in = objs({{"a", 8, 8}, {"b", 16, 8}, {"c", 32, 16}, {"d", 8, 8}});
  for (std::uint64_t s = 0; s < 50; ++s) {
    EXPECT_EQ(compute_layout(in, s, false), compute_layout(in, s, false));
    EXPECT_EQ(compute_layout(in, s, true), compute_layout(in, s, true));
  }
}

TEST(Layout, SeedChangesOrder) {
  auto in = objs({{"a", 8, 8}, {"b", 8, 8}, {"c", 8, 8}, {"d", 8, 8}});
  std::set<std::vector<std::string>> perms;
  for (std::uint64_t s = 0; s < 2000; ++s)
    perms.insert(compute_layout(in, s, false).permutation);
  EXPECT_EQ(perms.size(), 24u); // every order is reachable
}

TEST(Layout, WellFormedOverRandomObjects) {
  SeededRng rng(3);
  for (int t = 0; t < 300; ++t) {
    std::vector<LayoutObject> in;
    const int k = static_cast<int>(rng.below(6));
    for (int i = 0; i < k; ++i) {
      const std::int64_t align = std::int64_t{1} << rng.below(6);
      in.push_back({"o" + std::to_string(i), 1 + static_cast<std::int64_t>(rng.below(100)), align});
    }
    for (bool randomized : {false, true}) {
      FrameLayout L = compute_layout(in, rng.next(), randomized);
      check_well_formed(L, in);
      if (!randomized) {
        // The canary sits flush against the frame base, above every object.
        EXPECT_EQ(L.canary_slot, L.frame_size - 8);
      }
    }
  }
}

TEST(Layout, OffsetsMatchDirectPacking) {
  auto in = objs({{"a", 8, 8}, {"b", 24, 8}, {"c", 32, 16}, {"d", 1, 1}, {"e", 12, 4}});
  std::map<std::string, LayoutObject> by_name;
  for (const auto &o : in)
    by_name[o.name] = o;
  for (bool randomized : {false, true}) {
    for (std::uint64_t s = 0; s < 500; ++s) {
      FrameLayout L = compute_layout(in, s, randomized);
      std::vector<PackObject> order;
      for (const auto &n : L.permutation)
        order.push_back({n, by_name[n].size, by_name[n].align});
      const std::size_t ci = canary_index(L);
      if (!randomized)
        EXPECT_EQ(ci, in.size());
      auto at = pack(order, ci);
      for (const auto &slot : L.slots)
        EXPECT_EQ(slot.offset, at.at(slot.object));
      if (ci < in.size())
        EXPECT_EQ(L.canary_slot, at.at("<canary>"));
    }
  }
}

TEST(Layout, RandomizedCanaryTakesEveryPosition) {
  auto in = objs({{"a", 8, 8}, {"b", 8, 8}, {"c", 8, 8}});
  std::set<std::size_t> seen;
  for (std::uint64_t s = 0; s < 500; ++s)
    seen.insert(canary_index(compute_layout(in, s, true)));
  EXPECT_EQ(seen, (std::set<std::size_t>{0, 1, 2, 3}));
}

TEST(Layout, SingleGuessRateMatchesEnumeration) {
  // Frequency of a fixed buffer-to-target distance over seeds against the
  // exact count over every arrangement.
  std::vector<PackObject> po{{"buf", 8, 8}, {"cp", 8, 8}, {"i", 8, 8}, {"blen", 8, 8}};
  std::vector<LayoutObject> in;
  for (const auto &o : po)
    in.push_back({o.name, o.size, o.align});
  for (bool randomized : {false, true}) {
    Enumeration e = enumerate_single_guess(po, "buf", "cp", 8, randomized);
    std::size_t hits = 0;
    const std::size_t n = 20000;
    for (std::uint64_t s = 0; s < n; ++s) {
      FrameLayout L = compute_layout(in, splitmix64(s), randomized);
      if (L.find("cp")->offset - L.find("buf")->offset == 8)
        ++hits;
    }
    const double p = e.rate();
    const double sd = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(static_cast<double>(hits) / n, p, 5 * sd) << randomized;
  }
  EXPECT_EQ(enumerate_single_guess(po, "buf", "cp", 8, false).hits, 6u);
  EXPECT_EQ(enumerate_single_guess(po, "buf", "cp", 8, false).total, 24u);
}

TEST(Layout, EmptyFrameHoldsOnlyTheCanary) {
  FrameLayout L = compute_layout({}, 9, false);
  EXPECT_TRUE(L.slots.empty());
  EXPECT_EQ(L.frame_size, 16);
  EXPECT_EQ(L.canary_slot, 8);
  FrameLayout R = compute_layout({}, 9, true);
  EXPECT_EQ(R.frame_size, 16);
}

TEST(Layout, Errors) {
  EXPECT_THROW(compute_layout(objs({{"a", 0, 8}}), 1, false), Error);
  EXPECT_THROW(compute_layout(objs({{"a", 8, 3}}), 1, false), Error);
  EXPECT_THROW(compute_layout(objs({{"a", 8192, 8}}), 1, false, 4096), Error);
  EXPECT_NO_THROW(compute_layout(objs({{"a", 4000, 8}}), 1, false, 4096));
}

TEST(Layout, RngAndSeeds) {
  SeededRng r(1);
  EXPECT_THROW(r.below(0), Error);
  for (int i = 0; i < 1000; ++i)
    EXPECT_LT(r.below(7), 7u);
  EXPECT_NE(function_seed(5, "a"), function_seed(5, "b"));
  EXPECT_NE(function_seed(5, "a"), function_seed(6, "a"));
  EXPECT_EQ(function_seed(5, "a"), function_seed(5, "a"));
  // Published splitmix64 reference output for state 0.
  EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Instrument, ConfigValidation) {
  InstrumentationConfig c;
  c.unclean_stack_size = 1000;
  EXPECT_THROW(c.validate(), Error);
  c.unclean_stack_size = 8192;
  c.guard_page_size = 0;
  EXPECT_THROW(c.validate(), Error);
  c.guard_page_size = 4096;
  EXPECT_NO_THROW(c.validate());
  EXPECT_THROW(instrument_program(load_fixture("dnstracer.cir"),
                                  InstrumentationConfig{.unclean_stack_size = 100}),
               Error);
}

TEST(Instrument, CleanOnlyProgramIsUnchanged) {
  Program p = load_fixture("clean_only.cir");
  for (Method m : {Method::Heuristic, Method::Taint, Method::Union}) {
    InstrumentationConfig c;
    c.method = m;
    c.seed = 42;
    auto r = instrument_program(p, c);
    EXPECT_EQ(r.program, p);
    EXPECT_EQ(r.stats.unclean_functions, 0u);
    EXPECT_EQ(r.program.find_global(kCanaryGlobal), nullptr);
  }
}

TEST(Instrument, ProtectOffIsIdentityWithSameStats) {
  for (const auto &name : fixture_names()) {
    SCOPED_TRACE(name);
    Program p = load_fixture(name);
    InstrumentationConfig on;
    on.seed = 5;
    InstrumentationConfig off = on;
    off.protect = false;
    auto a = instrument_program(p, on);
    auto b = instrument_program(p, off);
    EXPECT_EQ(b.program, p);
    EXPECT_EQ(a.stats.total_functions, b.stats.total_functions);
    EXPECT_EQ(a.stats.unclean_functions, b.stats.unclean_functions);
    EXPECT_EQ(a.stats.unclean_allocas_total, b.stats.unclean_allocas_total);
    ASSERT_EQ(a.stats.functions.size(), b.stats.functions.size());
    for (std::size_t i = 0; i < a.stats.functions.size(); ++i) {
      EXPECT_EQ(a.stats.functions[i].static_unclean, b.stats.functions[i].static_unclean);
      EXPECT_EQ(a.stats.functions[i].dynamic_unclean, b.stats.functions[i].dynamic_unclean);
      EXPECT_EQ(a.stats.functions[i].restore_points, b.stats.functions[i].restore_points);
      EXPECT_EQ(a.stats.functions[i].layout, b.stats.functions[i].layout);
    }
  }
}

TEST(Instrument, DnstracerBufferMovesOffTheCleanStack) {
  Program p = load_fixture("dnstracer.cir");
  auto r = instrument_program(p, InstrumentationConfig{.seed = 7});
  const Function &run = *r.program.find_function("run");
  for (const auto *a : run.allocas())
    EXPECT_NE(a->object, "argv0");
  const auto *info = r.stats.find("run");
  ASSERT_NE(info, nullptr);
  EXPECT_TRUE(info->has_frame);
  ASSERT_NE(info->layout.find("argv0"), nullptr);
  EXPECT_EQ(info->layout.find("argv0")->size, 1024);
  EXPECT_EQ(r.stats.unclean_functions, 1u);
  EXPECT_EQ(r.stats.unclean_allocas_total, 1u);
  const GlobalDef *g = r.program.find_global(kCanaryGlobal);
  ASSERT_NE(g, nullptr);
  EXPECT_TRUE(g->is_canary);
  // The prologue reads and lowers the unclean top before anything else.
  const auto &entry = run.blocks[0].instructions;
  ASSERT_GE(entry.size(), 3u);
  EXPECT_EQ(entry[0].op, Opcode::UncleanTop);
  EXPECT_EQ(entry[2].op, Opcode::UncleanSetTop);
  // Every return is preceded by a canary check.
  int fails = 0;
  for (const auto &b : run.blocks)
    for (const auto &i : b.instructions)
      fails += i.op == Opcode::StackChkFail;
  EXPECT_EQ(fails, 1);
  // Functions without unclean objects are copied as they are.
  EXPECT_EQ(*r.program.find_function("shell"), *p.find_function("shell"));
  EXPECT_EQ(*r.program.find_function("main"), *p.find_function("main"));
}

TEST(Instrument, ReservedNamesAreRejected) {
  Program p = parse_module("entry main\n\nfunc main() {\nentry:\n  %__x = input 8\n  ret\n}\n");
  EXPECT_THROW(instrument_program(p, InstrumentationConfig{}), Error);
  // Instrumenting twice hits the same check.
  Program once = instrument_program(load_fixture("dnstracer.cir"), InstrumentationConfig{}).program;
  EXPECT_THROW(instrument_program(once, InstrumentationConfig{}), Error);
}

TEST(Instrument, MissingClassificationIsAnError) {
  Program p = load_fixture("dnstracer.cir");
  EXPECT_THROW(instrument_program(p, ProgramClassification{}, InstrumentationConfig{}), Error);
}

TEST(Instrument, RestorePoints) {
  Program p = load_fixture("setjmp.cir");
  auto points = mark_stack_restore_points(*p.find_function("work"));
  ASSERT_EQ(points.size(), 1u);
  EXPECT_EQ(points[0].block, 0);
  EXPECT_EQ(points[0].index, 2);
  EXPECT_TRUE(mark_stack_restore_points(*p.find_function("bail")).empty());
  auto r = instrument_program(p, InstrumentationConfig{});
  const auto *work = r.stats.find("work");
  EXPECT_EQ(work->restore_points, 1u);
  EXPECT_EQ(work->dynamic_unclean, 1u);
  // The jump buffer holds a longjmp target and escapes to a call.
  EXPECT_EQ(work->static_unclean, 1u);
  // After the setjmp the unclean top is set again.
  const Function &f = *r.program.find_function("work");
  bool after = false;
  for (const auto &b : f.blocks)
    for (std::size_t i = 0; i + 1 < b.instructions.size(); ++i)
      if (b.instructions[i].op == Opcode::SetJmp)
        for (std::size_t j = i + 1; j < b.instructions.size(); ++j)
          after = after || b.instructions[j].op == Opcode::UncleanSetTop;
  EXPECT_TRUE(after);
}

TEST(Instrument, OutputVerifiesForGeneratedPrograms) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    Generated g = random_program(s);
    for (Method m : {Method::Heuristic, Method::Taint}) {
      InstrumentationConfig c;
      c.method = m;
      c.seed = s;
      c.canary_randomized = s % 2;
      auto r = instrument_program(g.program, c);
      EXPECT_TRUE(verify_program(r.program).empty()) << g.text;
      // No unclean static alloca survives in the clean frame.
      auto classes = classify_program(g.program, m);
      for (const auto &f : r.program.functions)
        for (const auto *a : f.allocas())
          if (!a->object.starts_with("__"))
            EXPECT_FALSE(classes.at(f.name).is_unclean(a->object)) << f.name << " " << a->object;
    }
  }
}

TEST(Instrument, SameSeedSameText) {
  Program p = load_fixture("sreplace.cir");
  InstrumentationConfig c;
  c.seed = 7;
  const std::string a = print_module(instrument_program(p, c).program);
  const std::string b = print_module(instrument_program(p, c).program);
  EXPECT_EQ(a, b);
  std::set<std::string> texts;
  for (std::uint64_t s = 0; s < 40; ++s) {
    c.seed = s;
    texts.insert(print_module(instrument_program(p, c).program));
  }
  EXPECT_GT(texts.size(), 1u);
}
