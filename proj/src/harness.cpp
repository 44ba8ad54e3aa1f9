#include "cleanstack/harness.hpp"

#include "cleanstack/frontend.hpp"
#include "cleanstack/verify.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace cleanstack {

using nlohmann::json;

std::string_view attack_class_name(AttackClass c) {
  switch (c) {
  case AttackClass::ContiguousIntraFrame:
    return "ContiguousIntraFrame";
  case AttackClass::ContiguousInterFrame:
    return "ContiguousInterFrame";
  case AttackClass::NonContiguousIntraFrame:
    return "NonContiguousIntraFrame";
  case AttackClass::NonContiguousInterFrame:
    return "NonContiguousInterFrame";
  }
  return "?";
}

AttackClass parse_attack_class(std::string_view s) {
  for (AttackClass c : {AttackClass::ContiguousIntraFrame, AttackClass::ContiguousInterFrame,
                        AttackClass::NonContiguousIntraFrame, AttackClass::NonContiguousInterFrame})
    if (attack_class_name(c) == s)
      return c;
  throw Error("unknown attack class '" + std::string(s) + "'");
}

std::string_view build_name(Build b) { return b == Build::Baseline ? "baseline" : "protected"; }

std::string_view failure_name(FailureMode m) {
  switch (m) {
  case FailureMode::None:
    return "None";
  case FailureMode::GuardTrap:
    return "GuardTrap";
  case FailureMode::CanaryTrap:
    return "CanaryTrap";
  case FailureMode::MissedTarget:
    return "MissedTarget";
  case FailureMode::NoEffect:
    return "NoEffect";
  }
  return "?";
}

namespace {

void put_le(std::vector<std::uint8_t> &buf, std::size_t at, std::uint64_t v) {
  if (buf.size() < at + 8)
    buf.resize(at + 8, 0);
  for (int i = 0; i < 8; ++i)
    buf[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

void append_le(std::vector<std::uint8_t> &out, std::uint64_t v) { put_le(out, out.size(), v); }

const Function &require_function(const Program &p, const std::string &name) {
  const Function *f = p.find_function(name);
  if (!f)
    throw Error("scenario names unknown function '" + name + "'");
  return *f;
}

std::int64_t object_offset(const CleanFrameLayout &L, const std::string &fn,
                           const std::string &obj) {
  auto it = L.objects.find(obj);
  if (it == L.objects.end())
    throw Error("scenario names unknown stack object '" + obj + "' in '" + fn + "'");
  return it->second;
}

// The caller whose frame sits directly above `callee` (first static call site).
std::pair<const Function *, std::size_t> find_call_site(const Program &p, const std::string &callee) {
  for (const auto &f : p.functions) {
    std::size_t node = 0;
    for (const auto &bb : f.blocks)
      for (const auto &inst : bb.instructions) {
        if (inst.op == Opcode::Call && inst.callee == callee)
          return {&f, node};
        ++node;
      }
  }
  throw Error("no call site of '" + callee + "'");
}

// Clean-stack top of a function reached by a chain of first call sites from
// the entry function of thread 0.
std::uint64_t baseline_frame_top(const Program &p, const std::string &fn, const VmConfig &vc) {
  std::vector<std::string> chain{fn};
  while (chain.back() != p.entry) {
    if (chain.size() > p.functions.size())
      throw Error("no acyclic call chain from the entry to '" + fn + "'");
    chain.push_back(find_call_site(p, chain.back()).first->name);
  }
  std::uint64_t top = kCleanTop - static_cast<std::uint64_t>(vc.startup_reserve);
  for (std::size_t i = chain.size(); i-- > 1;) {
    const CleanFrameLayout L = clean_frame_layout(require_function(p, chain[i]));
    top = static_cast<std::uint64_t>(static_cast<std::int64_t>(top) + L.stack_pointer);
  }
  return top;
}

} // namespace

std::vector<std::uint8_t> attack_input(const Scenario &sc,
                                       std::map<std::string, std::int64_t> *guessed) {
  const Program &p = sc.program;
  const AttackPlan &plan = sc.plan;
  const Function &fn = require_function(p, plan.function);
  const CleanFrameLayout L = clean_frame_layout(fn);
  const std::int64_t buf = object_offset(L, fn.name, plan.buffer);
  std::map<std::string, std::int64_t> g;
  g[plan.buffer] = buf;
  std::vector<std::uint8_t> stream;

  if (plan.kind == "overflow") {
    const GlobalDef *src = p.find_global(plan.source);
    if (!src || !src->is_taint_source)
      throw Error("overflow source must be an input global");
    if (plan.length <= 0 || plan.length > src->size)
      throw Error("overflow length must fit the source global");
    std::vector<std::uint8_t> payload(static_cast<std::size_t>(src->size), 0);
    std::fill_n(payload.begin(), plan.length, plan.fill);
    const std::int64_t ra_at = L.return_address - buf;
    g["return_address"] = L.return_address;
    if (sc.goal.kind == Goal::Kind::HijackReturn) {
      if (ra_at + 8 > plan.length)
        throw Error("overflow too short to reach the return address");
      put_le(payload, static_cast<std::size_t>(ra_at), function_address(p, sc.goal.function));
    } else {
      // Corrupt a variable beyond the frame; rewrite the linkage with the
      // values it already holds so the return still works.
      if (plan.target.empty())
        throw Error("corrupting overflow needs a target object");
      const VmConfig vc;
      auto [caller, node] = find_call_site(p, fn.name);
      const CleanFrameLayout C = clean_frame_layout(*caller);
      const std::int64_t tgt = C.stack_pointer * -1 + object_offset(C, caller->name, plan.target);
      g[plan.target] = tgt;
      const std::int64_t at = tgt - buf;
      if (at < 0 || at + 8 > plan.length)
        throw Error("overflow does not cover the target object");
      const std::uint64_t caller_top = baseline_frame_top(p, caller->name, vc);
      put_le(payload, static_cast<std::size_t>(L.saved_frame_pointer - buf), caller_top);
      put_le(payload, static_cast<std::size_t>(ra_at),
             function_address(p, caller->name) + node + 1);
      put_le(payload, static_cast<std::size_t>(at), static_cast<std::uint64_t>(plan.value));
    }
    for (const auto &gd : p.globals) {
      if (!gd.is_taint_source)
        continue;
      if (gd.name == src->name)
        stream.insert(stream.end(), payload.begin(), payload.end());
      else
        stream.insert(stream.end(), static_cast<std::size_t>(gd.size), 0);
    }
    append_le(stream, static_cast<std::uint64_t>(plan.length));
  } else if (plan.kind == "indexed_write") {
    const std::int64_t tgt = object_offset(L, fn.name, plan.target);
    g[plan.target] = tgt;
    for (const auto &gd : p.globals)
      if (gd.is_taint_source)
        stream.insert(stream.end(), static_cast<std::size_t>(gd.size), 0);
    append_le(stream, 1);
    append_le(stream, static_cast<std::uint64_t>(tgt - buf));
    append_le(stream, static_cast<std::uint64_t>(plan.value));
  } else {
    throw Error("unknown attack plan kind '" + plan.kind + "'");
  }
  if (guessed)
    *guessed = std::move(g);
  return stream;
}

bool goal_met(const Goal &g, const RunOutcome &r) {
  if (g.kind == Goal::Kind::HijackReturn)
    return r.hijack_target == g.function;
  return r.status == RunStatus::Exited && !r.outputs.empty() && r.outputs.back() == g.value;
}

namespace {

FailureMode classify_failure(const Goal &g, const RunOutcome &r) {
  if (r.status == RunStatus::Trapped && r.trap) {
    if (r.trap->kind == TrapKind::GuardPageFault)
      return FailureMode::GuardTrap;
    if (r.trap->kind == TrapKind::CanaryMismatch)
      return FailureMode::CanaryTrap;
    return FailureMode::MissedTarget;
  }
  if (r.status == RunStatus::StepLimit)
    return FailureMode::MissedTarget;
  return g.kind == Goal::Kind::HijackReturn ? FailureMode::NoEffect : FailureMode::MissedTarget;
}

VmConfig vm_config_for(const Scenario &sc, std::uint64_t seed, const InstrumentationConfig &ic) {
  VmConfig vc;
  vc.seed = seed;
  vc.step_limit = sc.step_limit;
  vc.unclean_stack_size = ic.unclean_stack_size;
  vc.guard_page_size = ic.guard_page_size;
  return vc;
}

AttackOutcome run_one(const Scenario &sc, Build build, std::uint64_t seed,
                      const InstrumentationConfig &base, const ProgramClassification *classes,
                      const std::vector<std::uint8_t> &input,
                      const std::map<std::string, std::int64_t> &guessed) {
  AttackOutcome o;
  o.seed = seed;
  o.guessed_layout = guessed;
  if (build == Build::Baseline) {
    o.run = run_program(sc.program, input, vm_config_for(sc, seed, base));
  } else {
    InstrumentationConfig ic = base;
    ic.seed = seed;
    ic.protect = true;
    InstrumentResult ir = classes ? instrument_program(sc.program, *classes, ic)
                                  : instrument_program(sc.program, ic);
    if (const FunctionInstrumentation *fi = ir.stats.find(sc.plan.function)) {
      for (const auto &s : fi->layout.slots)
        o.actual_layout[s.object] = s.offset;
      if (fi->has_frame)
        o.actual_layout["canary"] = fi->layout.canary_slot;
    }
    o.run = run_program(ir.program, input, vm_config_for(sc, seed, ic));
  }
  o.success = goal_met(sc.goal, o.run);
  o.failure = o.success ? FailureMode::None : classify_failure(sc.goal, o.run);
  return o;
}

} // namespace

AttackOutcome run_scenario(const Scenario &sc, Build build, std::uint64_t seed,
                           const InstrumentationConfig &base) {
  require_valid(sc.program);
  std::map<std::string, std::int64_t> guessed;
  const auto input = attack_input(sc, &guessed);
  return run_one(sc, build, seed, base, nullptr, input, guessed);
}

std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n, double z) {
  if (n == 0)
    return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double ph = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1 + z2 / nn;
  const double centre = (ph + z2 / (2 * nn)) / denom;
  const double half = z * std::sqrt(ph * (1 - ph) / nn + z2 / (4 * nn * nn)) / denom;
  const double lo = successes == 0 ? 0.0 : std::max(0.0, centre - half);
  const double hi = successes == n ? 1.0 : std::min(1.0, centre + half);
  return {lo, hi};
}

std::uint64_t trial_seed(std::uint64_t base, std::size_t i) {
  return splitmix64(base + static_cast<std::uint64_t>(i));
}

MonteCarloResult monte_carlo(const Scenario &sc, Build build, std::size_t trials,
                             std::uint64_t base_seed, const InstrumentationConfig &base,
                             unsigned jobs) {
  require_valid(sc.program);
  std::map<std::string, std::int64_t> guessed;
  const auto input = attack_input(sc, &guessed);
  const ProgramClassification classes = classify_program(sc.program, base.method, base.taint);

  std::vector<AttackOutcome> outs(trials);
  std::vector<std::exception_ptr> errors(trials);
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < trials; i += stride) {
      try {
        outs[i] = run_one(sc, build, trial_seed(base_seed, i), base, &classes, input, guessed);
        RunOutcome &r = outs[i].run;
        r.dynamic_taint.clear();
        r.schedule.clear();
        r.unclean_top_trace.clear();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(1, trials))));
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j)
      pool.emplace_back(work, j, jobs);
    for (auto &t : pool)
      t.join();
  }
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);

  MonteCarloResult m;
  m.trials = trials;
  for (const auto &o : outs) {
    if (o.success)
      ++m.successes;
    else
      ++m.failures[o.failure];
    if (o.run.ra_corrupted)
      ++m.ra_corrupted;
  }
  m.rate = trials ? static_cast<double>(m.successes) / static_cast<double>(trials) : 0.0;
  std::tie(m.ci_low, m.ci_high) = wilson_interval(m.successes, trials);
  m.outcomes = std::move(outs);
  return m;
}

double ProgramStats::unclean_fraction() const {
  return total_functions ? static_cast<double>(unclean_functions) / static_cast<double>(total_functions)
                         : 0.0;
}

double ProgramStats::avg_unclean_objects() const {
  return unclean_functions
             ? static_cast<double>(unclean_allocas_total) / static_cast<double>(unclean_functions)
             : 0.0;
}

ProgramStats collect_stats(const Program &baseline, const std::string &protected_text,
                           const InstrumentationStats &stats) {
  ProgramStats s;
  s.total_functions = stats.total_functions;
  s.unclean_functions = stats.unclean_functions;
  s.unclean_allocas_total = stats.unclean_allocas_total;

  // Recount from the emitted text: an object left the clean stack when its
  // alloca is gone from the protected function.
  const Program prot = parse_module(protected_text, "<protected>");
  std::size_t fns = 0, unclean = 0, moved_total = 0;
  for (const auto &f : baseline.functions) {
    ++fns;
    const Function *pf = prot.find_function(f.name);
    if (!pf)
      throw Error("protected module lacks function '" + f.name + "'");
    std::size_t moved = 0;
    for (const auto *a : f.allocas())
      if (!pf->find_alloca(a->object))
        ++moved;
    if (moved) {
      ++unclean;
      moved_total += moved;
    }
  }
  if (fns != s.total_functions || unclean != s.unclean_functions ||
      moved_total != s.unclean_allocas_total)
    throw Error("instrumentation statistics disagree with the emitted module (" +
                std::to_string(unclean) + "/" + std::to_string(fns) + " functions, " +
                std::to_string(moved_total) + " objects recounted)");
  s.cross_checked = true;
  return s;
}

double analytic_success_probability(double unclean_fraction, double avg_unclean_objects,
                                    bool canary_randomized) {
  if (unclean_fraction <= 0 || avg_unclean_objects <= 0)
    return 0.0;
  const double p = unclean_fraction / avg_unclean_objects;
  return canary_randomized ? p * 0.5 : p;
}

double analytic_success_probability(const ProgramStats &s, bool canary_randomized) {
  if (s.unclean_functions == 0)
    return 0.0;
  return analytic_success_probability(s.unclean_fraction(), s.avg_unclean_objects(),
                                      canary_randomized);
}

OverheadReport overhead_report(const RunOutcome &b, const RunOutcome &p, bool clean_only) {
  if (b.status != p.status || b.exit_code != p.exit_code || b.outputs != p.outputs)
    throw Error("protected run diverges from baseline (status " +
                std::string(status_name(b.status)) + " vs " + std::string(status_name(p.status)) +
                ", " + std::to_string(b.outputs.size()) + " vs " +
                std::to_string(p.outputs.size()) + " outputs)");
  OverheadReport r;
  r.baseline_instructions = b.dynamic_instructions;
  r.protected_instructions = p.dynamic_instructions;
  r.delta = static_cast<std::int64_t>(p.dynamic_instructions) -
            static_cast<std::int64_t>(b.dynamic_instructions);
  r.relative = b.dynamic_instructions
                   ? static_cast<double>(r.delta) / static_cast<double>(b.dynamic_instructions)
                   : 0.0;
  r.expect_zero = clean_only;
  return r;
}

namespace {

std::vector<std::uint8_t> encode_segments(const json &segs) {
  if (!segs.is_array())
    throw Error("input must be a list of segments");
  std::vector<std::uint8_t> out;
  for (const auto &s : segs) {
    if (s.contains("text")) {
      const std::string t = s.at("text").get<std::string>();
      std::size_t pad = s.value("pad", std::size_t{0});
      out.insert(out.end(), t.begin(), t.end());
      if (pad > t.size())
        out.insert(out.end(), pad - t.size(), 0);
    } else if (s.contains("i64")) {
      for (const auto &w : s.at("i64"))
        append_le(out, static_cast<std::uint64_t>(w.get<std::int64_t>()));
    } else if (s.contains("hex")) {
      const std::string h = s.at("hex").get<std::string>();
      if (h.size() % 2)
        throw Error("hex segment has odd length");
      for (std::size_t i = 0; i < h.size(); i += 2)
        out.push_back(static_cast<std::uint8_t>(std::stoul(h.substr(i, 2), nullptr, 16)));
    } else if (s.contains("zeros")) {
      out.insert(out.end(), s.at("zeros").get<std::size_t>(), 0);
    } else {
      throw Error("unknown input segment " + s.dump());
    }
  }
  return out;
}

Goal parse_goal(const json &j) {
  Goal g;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "hijack_return") {
    g.kind = Goal::Kind::HijackReturn;
    g.function = j.at("function").get<std::string>();
  } else if (kind == "corrupt_variable") {
    g.kind = Goal::Kind::CorruptVariable;
    g.object = j.at("object").get<std::string>();
    g.value = j.at("value").get<std::int64_t>();
  } else {
    throw Error("unknown goal kind '" + kind + "'");
  }
  return g;
}

AttackPlan parse_plan(const json &j) {
  AttackPlan a;
  a.kind = j.at("kind").get<std::string>();
  a.function = j.at("function").get<std::string>();
  a.buffer = j.at("buffer").get<std::string>();
  a.target = j.value("target", std::string{});
  a.source = j.value("source", std::string{});
  a.length = j.value("length", std::int64_t{0});
  a.value = j.value("value", std::int64_t{0});
  a.fill = static_cast<std::uint8_t>(j.value("fill", int{'A'}));
  return a;
}

} // namespace

std::vector<std::uint8_t> encode_input(const std::string &segments_json) {
  try {
    return encode_segments(json::parse(segments_json));
  } catch (const json::exception &e) {
    throw Error(std::string("bad input segments: ") + e.what());
  }
}

const Scenario &Manifest::scenario(std::string_view name) const {
  for (const auto &s : scenarios)
    if (s.name == name)
      return s;
  throw Error("no scenario '" + std::string(name) + "'");
}

Manifest load_manifest(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw Error("cannot open manifest '" + path + "'");
  Manifest m;
  m.directory = std::filesystem::path(path).parent_path().string();
  auto resolve = [&](const std::string &f) {
    return (std::filesystem::path(m.directory) / f).string();
  };
  try {
    const json j = json::parse(in);
    if (j.value("schema", std::string{}) != "cleanstack.manifest/1")
      throw Error("manifest schema must be cleanstack.manifest/1");
    for (const auto &f : j.at("fixtures")) {
      FixtureEntry e;
      e.file = f.at("file").get<std::string>();
      e.well_defined = f.value("well_defined", true);
      for (const auto &in : f.value("inputs", json::array()))
        e.inputs.push_back(encode_segments(in));
      m.fixtures.push_back(std::move(e));
    }
    for (const auto &s : j.at("scenarios")) {
      Scenario sc;
      sc.name = s.at("name").get<std::string>();
      sc.fixture = s.at("fixture").get<std::string>();
      sc.program = parse_file(resolve(sc.fixture));
      require_valid(sc.program);
      sc.attack_class = parse_attack_class(s.at("class").get<std::string>());
      sc.goal = parse_goal(s.at("goal"));
      sc.plan = parse_plan(s.at("plan"));
      sc.step_limit = s.value("step_limit", sc.step_limit);
      sc.description = s.value("description", std::string{});
      m.scenarios.push_back(std::move(sc));
    }
  } catch (const json::exception &e) {
    throw Error("malformed manifest '" + path + "': " + e.what());
  }
  return m;
}

} // namespace cleanstack
