#include "cleanstack/report.hpp"

#include "cleanstack/cfg.hpp"

namespace cleanstack {

Json span_json(const SourceSpan &s) {
  return Json{{"file", s.file}, {"line", s.line}, {"column", s.column}};
}

Json verify_json(const VerifyReport &r) {
  Json out = Json::array();
  for (const auto &v : r) {
    Json j{{"function", v.function}, {"block", v.block}, {"index", v.index},
           {"message", v.message}, {"span", span_json(v.span)}};
    out.push_back(std::move(j));
  }
  return out;
}

Json diagnostics_json(const std::vector<Diagnostic> &d) {
  static const char *kinds[] = {"lexical", "syntax", "duplicate", "unresolved", "semantic"};
  Json out = Json::array();
  for (const auto &x : d)
    out.push_back(Json{{"kind", kinds[static_cast<int>(x.kind)]},
                       {"message", x.message},
                       {"span", span_json(x.span)}});
  return out;
}

Json parse_report(const Program &p, const VerifyReport &r) {
  Json fns = Json::array();
  for (const auto &f : p.functions)
    fns.push_back(Json{{"name", f.name},
                       {"params", f.params.size()},
                       {"blocks", f.blocks.size()},
                       {"instructions", f.instruction_count()},
                       {"allocas", f.allocas().size()}});
  return Json{{"schema", "cleanstack.parse/1"},
              {"entry", p.entry},
              {"globals", p.globals.size()},
              {"externs", p.externs},
              {"functions", std::move(fns)},
              {"valid", r.empty()},
              {"violations", verify_json(r)}};
}

namespace {

Json summary_json(const FunctionSummary &s) {
  Json refs = Json::array();
  for (const auto &r : s.param_to_ref_params)
    refs.push_back(Json(std::vector<int>(r.begin(), r.end())));
  return Json{{"is_source", s.is_source},
              {"param_to_return", s.param_to_return},
              {"param_to_ref_params", std::move(refs)},
              {"param_to_unknown", s.param_to_unknown},
              {"source_ref_params", std::vector<int>(s.source_ref_params.begin(),
                                                     s.source_ref_params.end())},
              {"source_unknown", s.source_unknown}};
}

} // namespace

Json taint_report(const Program &p, const TaintResult &r) {
  Json fns = Json::array();
  for (const auto &f : p.functions) {
    Json objs = Json::array();
    auto ft = r.functions.find(f.name);
    auto to = r.tainted_objects.find(f.name);
    if (ft != r.functions.end() && to != r.tainted_objects.end()) {
      const CFG cfg = build_cfg(f);
      for (const auto &obj : to->second) {
        TaintFact fact{TaintFact::Kind::StackObject, obj};
        int first = -1;
        for (std::size_t n = 0; n < ft->second.states.size() && first < 0; ++n)
          if (ft->second.states[n].gen.count(fact))
            first = static_cast<int>(n);
        for (std::size_t n = 0; n < ft->second.states.size() && first < 0; ++n)
          if (ft->second.states[n].out.count(fact))
            first = static_cast<int>(n);
        Json o{{"object", obj}};
        if (first >= 0) {
          const NodeRef nr = cfg.nodes[first];
          const Instruction &inst = cfg.inst(f, first);
          o["first_source"] = Json{{"node", first},
                                   {"block", f.blocks[nr.block].label},
                                   {"index", nr.index},
                                   {"instruction", print_instruction(inst)},
                                   {"span", span_json(inst.span)}};
        }
        objs.push_back(std::move(o));
      }
    }
    Json fj{{"name", f.name}, {"tainted_objects", std::move(objs)}};
    if (auto s = r.summaries.find(f.name); s != r.summaries.end())
      fj["summary"] = summary_json(s->second);
    if (ft != r.functions.end())
      fj["iterations"] = ft->second.iterations;
    fns.push_back(std::move(fj));
  }
  return Json{{"schema", "cleanstack.taint/1"},
              {"functions", std::move(fns)},
              {"tainted_globals", std::vector<std::string>(r.tainted_globals.begin(),
                                                           r.tainted_globals.end())},
              {"rounds", r.rounds},
              {"warnings", r.warnings}};
}

Json classification_report(const Program &p, Method method, const ProgramClassification &c,
                           const std::vector<DivergenceReport> &divergence) {
  Json fns = Json::array();
  for (const auto &f : p.functions) {
    auto it = c.find(f.name);
    if (it == c.end())
      continue;
    Json objs = Json::array();
    for (const auto &o : it->second.objects) {
      Json reasons = Json::array();
      for (ReasonCode rc : o.reasons)
        reasons.push_back(reason_name(rc));
      objs.push_back(Json{{"object", o.object},
                          {"label", o.unclean ? "unclean" : "clean"},
                          {"reasons", std::move(reasons)},
                          {"dynamic", o.dynamic},
                          {"size", o.size},
                          {"span", span_json(o.span)}});
    }
    fns.push_back(Json{{"name", f.name}, {"objects", std::move(objs)}});
  }
  Json out{{"schema", "cleanstack.classification/1"},
           {"method", method_name(method)},
           {"functions", std::move(fns)}};
  if (!divergence.empty()) {
    Json d = Json::array();
    for (const auto &x : divergence)
      d.push_back(Json{{"function", x.function},
                       {"heuristic_only", x.heuristic_only},
                       {"taint_only", x.taint_only},
                       {"agree_unclean", x.agree_unclean},
                       {"agree_clean", x.agree_clean}});
    out["divergence"] = std::move(d);
  }
  return out;
}

Json layout_sidecar(const InstrumentationConfig &config, const InstrumentationStats &stats) {
  Json fns = Json::array();
  for (const auto &fi : stats.functions) {
    Json slots = Json::array();
    for (const auto &s : fi.layout.slots)
      slots.push_back(
          Json{{"object", s.object}, {"offset", s.offset}, {"size", s.size}, {"align", s.align}});
    Json fj{{"name", fi.function},
            {"unclean_objects", fi.unclean_objects},
            {"static_unclean", fi.static_unclean},
            {"dynamic_unclean", fi.dynamic_unclean},
            {"restore_points", fi.restore_points},
            {"has_frame", fi.has_frame}};
    if (fi.has_frame) {
      fj["seed"] = fi.layout.seed;
      fj["frame_size"] = fi.layout.frame_size;
      fj["canary_slot"] = fi.layout.canary_slot;
      fj["permutation"] = fi.layout.permutation;
      fj["slots"] = std::move(slots);
    }
    fns.push_back(std::move(fj));
  }
  return Json{{"schema", "cleanstack.layout/1"},
              {"seed", config.seed},
              {"method", method_name(config.method)},
              {"canary_randomized", config.canary_randomized},
              {"unclean_stack_size", config.unclean_stack_size},
              {"guard_page_size", config.guard_page_size},
              {"total_functions", stats.total_functions},
              {"unclean_functions", stats.unclean_functions},
              {"unclean_allocas_total", stats.unclean_allocas_total},
              {"functions", std::move(fns)}};
}

Json run_trace(const RunOutcome &r, bool full) {
  Json j{{"schema", "cleanstack.run/1"},
         {"status", status_name(r.status)},
         {"exit_code", r.exit_code},
         {"vm_exit_code", r.vm_exit_code()},
         {"outputs", r.outputs},
         {"dynamic_instructions", r.dynamic_instructions},
         {"ra_corrupted", r.ra_corrupted},
         {"isolation_violations", r.isolation_violations}};
  if (r.trap) {
    const Trap &t = *r.trap;
    j["trap"] = Json{{"kind", trap_name(t.kind)}, {"address", t.address},
                     {"function", t.function},    {"block", t.block},
                     {"index", t.index},          {"thread", t.thread},
                     {"message", t.message}};
  } else {
    j["trap"] = nullptr;
  }
  if (!r.hijack_target.empty())
    j["hijack_target"] = r.hijack_target;
  Json objs = Json::array();
  for (const auto &[f, o] : r.tainted_objects)
    objs.push_back(Json{{"function", f}, {"object", o}});
  j["tainted_objects"] = std::move(objs);
  if (full) {
    Json ranges = Json::array();
    for (const auto &[b, e] : r.dynamic_taint)
      ranges.push_back(Json::array({b, e}));
    j["dynamic_taint"] = std::move(ranges);
    j["schedule"] = r.schedule;
    Json tops = Json::array();
    for (const auto &t : r.unclean_top_trace)
      tops.push_back(Json{{"thread", t.thread}, {"top", t.top}});
    j["unclean_top_trace"] = std::move(tops);
  }
  j["warnings"] = r.warnings;
  return j;
}

Json stats_json(const ProgramStats &s, bool canary_randomized) {
  return Json{{"schema", "cleanstack.stats/1"},
              {"total_functions", s.total_functions},
              {"unclean_functions", s.unclean_functions},
              {"unclean_allocas_total", s.unclean_allocas_total},
              {"unclean_fraction", s.unclean_fraction()},
              {"avg_unclean_objects", s.avg_unclean_objects()},
              {"cross_checked", s.cross_checked},
              {"canary_randomized", canary_randomized},
              {"analytic_success_probability", analytic_success_probability(s, canary_randomized)},
              {"analytic_fixed_canary", analytic_success_probability(s, false)},
              {"analytic_randomized_canary", analytic_success_probability(s, true)}};
}

Json outcome_json(const AttackOutcome &o, bool with_run) {
  Json j{{"seed", o.seed},
         {"success", o.success},
         {"failure", failure_name(o.failure)},
         {"status", status_name(o.run.status)},
         {"trap", o.run.trap ? Json(trap_name(o.run.trap->kind)) : Json(nullptr)},
         {"ra_corrupted", o.run.ra_corrupted},
         {"isolation_violations", o.run.isolation_violations},
         {"guessed_layout", o.guessed_layout},
         {"actual_layout", o.actual_layout}};
  if (with_run)
    j["run"] = run_trace(o.run, false);
  return j;
}

Json experiment_report(const Scenario &sc, Build build, const MonteCarloResult &m,
                       std::uint64_t base_seed, const InstrumentationConfig &config,
                       bool per_trial) {
  Json failures = Json::object();
  for (const auto &[k, n] : m.failures)
    failures[std::string(failure_name(k))] = n;
  Json j{{"schema", "cleanstack.experiment/1"},
         {"scenario", sc.name},
         {"fixture", sc.fixture},
         {"class", attack_class_name(sc.attack_class)},
         {"build", build_name(build)},
         {"method", method_name(config.method)},
         {"canary_randomized", config.canary_randomized},
         {"base_seed", base_seed},
         {"trials", m.trials},
         {"successes", m.successes},
         {"rate", m.rate},
         {"wilson95", Json::array({m.ci_low, m.ci_high})},
         {"failures", std::move(failures)},
         {"ra_corrupted", m.ra_corrupted}};
  if (per_trial) {
    Json t = Json::array();
    for (const auto &o : m.outcomes)
      t.push_back(outcome_json(o, false));
    j["outcomes"] = std::move(t);
  }
  return j;
}

Json overhead_json(const OverheadReport &r) {
  return Json{{"schema", "cleanstack.overhead/1"},
              {"baseline_instructions", r.baseline_instructions},
              {"protected_instructions", r.protected_instructions},
              {"delta", r.delta},
              {"relative", r.relative},
              {"expect_zero", r.expect_zero}};
}

} // namespace cleanstack
