#include "cleanstack/taint.hpp"

#include <algorithm>
#include <deque>

namespace cleanstack {

namespace {

bool value_tainted(const Operand &op, const FactSet &in) {
  return op.is_value() && in.count(TaintFact::value(op.name));
}

bool any_memory_fact(const FactSet &in, const TaintContext &ctx) {
  for (const auto &f : in) {
    switch (f.kind) {
    case TaintFact::Kind::Global:
    case TaintFact::Kind::Pointee:
    case TaintFact::Kind::UnknownMemory:
      return true;
    case TaintFact::Kind::StackObject:
      if (ctx.flow.escaped_objects.count(f.name))
        return true;
      break;
    default:
      break;
    }
  }
  return false;
}

bool memory_tainted(const std::set<MemRoot> &roots, const FactSet &in, const TaintContext &ctx) {
  for (const auto &r : roots) {
    switch (r.kind) {
    case MemRoot::Kind::Object:
      if (in.count(TaintFact::object(r.name)))
        return true;
      break;
    case MemRoot::Kind::Global:
      if (in.count(TaintFact::global(r.name)))
        return true;
      break;
    case MemRoot::Kind::Param:
      if (in.count(TaintFact::pointee(r.index)))
        return true;
      break;
    case MemRoot::Kind::Unknown:
      if (any_memory_fact(in, ctx))
        return true;
      break;
    }
  }
  return false;
}

/// Facts generated by a tainted write through an address with these roots.
void write_targets(const std::set<MemRoot> &roots, const TaintContext &ctx, FactSet &gen) {
  for (const auto &r : roots) {
    switch (r.kind) {
    case MemRoot::Kind::Object:
      gen.insert(TaintFact::object(r.name));
      break;
    case MemRoot::Kind::Global:
      gen.insert(TaintFact::global(r.name));
      break;
    case MemRoot::Kind::Param:
      gen.insert(TaintFact::pointee(r.index));
      break;
    case MemRoot::Kind::Unknown:
      gen.insert(TaintFact::unknown_memory());
      for (const auto &o : ctx.flow.escaped_objects)
        gen.insert(TaintFact::object(o));
      for (const auto &g : ctx.program->globals)
        gen.insert(TaintFact::global(g.name));
      for (std::size_t j = 0; j < ctx.function->params.size(); ++j)
        gen.insert(TaintFact::pointee(static_cast<int>(j)));
      break;
    }
  }
}

const std::set<MemRoot> &unknown_roots() {
  static const std::set<MemRoot> s{MemRoot::unknown()};
  return s;
}

void call_effects(const Instruction &inst, const FactSet &in, const TaintContext &ctx,
                  FactSet &gen, bool &ret_tainted) {
  const FunctionSummary *s = nullptr;
  if (ctx.summaries && ctx.program->find_function(inst.callee)) {
    auto it = ctx.summaries->find(inst.callee);
    if (it != ctx.summaries->end())
      s = &it->second;
  }
  const auto &args = inst.operands;
  if (!s) {
    if (ctx.warnings)
      ctx.warnings->insert("no summary for '" + inst.callee +
                           "'; treated as a taint source writing through every argument");
    ret_tainted = true;
    for (const auto &a : args)
      write_targets(ctx.flow.roots_of(a), ctx, gen);
  } else {
    std::vector<bool> tainted(args.size());
    for (std::size_t i = 0; i < args.size(); ++i)
      tainted[i] = value_tainted(args[i], in) || memory_tainted(ctx.flow.roots_of(args[i]), in, ctx);

    ret_tainted = s->is_source;
    std::set<int> refs = s->source_ref_params;
    bool unknown = s->source_unknown;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (!tainted[i])
        continue;
      if (i < s->param_to_return.size() && s->param_to_return[i])
        ret_tainted = true;
      if (i < s->param_to_ref_params.size())
        refs.insert(s->param_to_ref_params[i].begin(), s->param_to_ref_params[i].end());
      if (i < s->param_to_unknown.size() && s->param_to_unknown[i])
        unknown = true;
    }
    for (int k : refs)
      if (k >= 0 && static_cast<std::size_t>(k) < args.size())
        write_targets(ctx.flow.roots_of(args[k]), ctx, gen);
    if (unknown)
      write_targets(unknown_roots(), ctx, gen);
  }
  for (const auto &g : ctx.tainted_globals)
    gen.insert(TaintFact::global(g));
}

} // namespace

std::string format_fact(const TaintFact &f) {
  switch (f.kind) {
  case TaintFact::Kind::Value:
    return "%" + f.name;
  case TaintFact::Kind::StackObject:
    return "%obj." + f.name;
  case TaintFact::Kind::Global:
    return "@" + f.name;
  case TaintFact::Kind::Pointee:
    return "*param" + std::to_string(f.index);
  case TaintFact::Kind::UnknownMemory:
    return "*?";
  }
  return "?";
}

FunctionSummary FunctionSummary::empty(std::size_t arity) {
  FunctionSummary s;
  s.param_to_return.assign(arity, false);
  s.param_to_ref_params.assign(arity, {});
  s.param_to_unknown.assign(arity, false);
  return s;
}

bool program_has_taint_source(const Program &p, const TaintConfig &config) {
  for (const auto &g : p.globals)
    if (g.is_taint_source)
      return true;
  if (!p.externs.empty())
    return true;
  for (const auto &f : p.functions) {
    if (f.is_taint_source)
      return true;
    if (config.taint_entry_params && f.name == p.entry && !f.params.empty())
      return true;
    for (const auto &bb : f.blocks)
      for (const auto &inst : bb.instructions)
        if (inst.op == Opcode::Input)
          return true;
  }
  return false;
}

TaintContext make_taint_context(const Program &p, const Function &f, const SummaryMap &summaries,
                                const std::set<std::string> &tainted_globals,
                                bool program_has_source, std::set<std::string> *warnings) {
  TaintContext ctx;
  ctx.program = &p;
  ctx.function = &f;
  ctx.summaries = &summaries;
  ctx.tainted_globals = tainted_globals;
  ctx.flow = compute_address_flow(f);
  for (const auto *a : f.allocas())
    if (a->op == Opcode::AllocaStatic)
      ctx.object_sizes[a->object] = a->size;
  ctx.program_has_source = program_has_source;
  ctx.warnings = warnings;
  return ctx;
}

std::pair<FactSet, FactSet> gen_kill(const Instruction &inst, const FactSet &in,
                                     const TaintContext &ctx) {
  FactSet gen, kill;
  const auto &ops = inst.operands;
  bool dst_tainted = false;

  switch (inst.op) {
  case Opcode::Load:
    dst_tainted = value_tainted(ops[0], in) || memory_tainted(ctx.flow.roots_of(ops[0]), in, ctx);
    break;
  case Opcode::Store: {
    const auto &roots = ctx.flow.roots_of(ops[0]);
    bool tainted = value_tainted(ops[0], in) || value_tainted(ops[1], in);
    if (tainted) {
      write_targets(roots, ctx, gen);
    } else if (roots.size() == 1 && ctx.flow.offset_of(ops[0]) == 0) {
      // Strong update: an untainted store covering the whole object.
      const MemRoot &r = *roots.begin();
      if (r.kind == MemRoot::Kind::Object) {
        auto it = ctx.object_sizes.find(r.name);
        if (it != ctx.object_sizes.end() && it->second == inst.size)
          kill.insert(TaintFact::object(r.name));
      } else if (r.kind == MemRoot::Kind::Global) {
        const GlobalDef *g = ctx.program->find_global(r.name);
        if (g && g->size == inst.size)
          kill.insert(TaintFact::global(r.name));
      }
    }
    break;
  }
  case Opcode::Copy: {
    bool tainted = value_tainted(ops[0], in) || value_tainted(ops[1], in) ||
                   value_tainted(ops[2], in) ||
                   memory_tainted(ctx.flow.roots_of(ops[1]), in, ctx);
    if (tainted)
      write_targets(ctx.flow.roots_of(ops[0]), ctx, gen);
    break;
  }
  case Opcode::AtomicRMW: {
    const auto &roots = ctx.flow.roots_of(ops[0]);
    dst_tainted = value_tainted(ops[0], in) || memory_tainted(roots, in, ctx);
    if (value_tainted(ops[0], in) || value_tainted(ops[1], in))
      write_targets(roots, ctx, gen);
    break;
  }
  case Opcode::BinOp:
  case Opcode::UnOp:
  case Opcode::Cmp:
  case Opcode::PtrAdd:
  case Opcode::PtrToInt:
  case Opcode::IntToPtr:
  case Opcode::Select:
  case Opcode::Phi:
    for (const auto &op : ops)
      dst_tainted = dst_tainted || value_tainted(op, in);
    break;
  case Opcode::Input:
    dst_tainted = true;
    break;
  case Opcode::SetJmp:
    // The second return delivers whatever longjmp passed.
    dst_tainted = ctx.program_has_source;
    break;
  case Opcode::Call:
  case Opcode::Spawn: {
    bool ret = false;
    call_effects(inst, in, ctx, gen, ret);
    dst_tainted = inst.op == Opcode::Call && ret;
    break;
  }
  default:
    break;
  }

  if (!inst.dst.empty()) {
    kill.insert(TaintFact::value(inst.dst));
    if (dst_tainted)
      gen.insert(TaintFact::value(inst.dst));
  }
  return {std::move(gen), std::move(kill)};
}

FactSet transfer(const Instruction &inst, const FactSet &in, const TaintContext &ctx) {
  auto [gen, kill] = gen_kill(inst, in, ctx);
  FactSet out = gen;
  for (const auto &f : in)
    if (!kill.count(f))
      out.insert(f);
  return out;
}

FactSet join(const std::vector<FactSet> &states) {
  FactSet out;
  for (const auto &s : states)
    out.insert(s.begin(), s.end());
  return out;
}

FunctionTaint analyze_function(const Function &f, const CFG &cfg, const TaintContext &ctx,
                               const FactSet &seeds) {
  FunctionTaint r;
  r.seeds = seeds;
  const std::size_t n = cfg.size();
  r.states.assign(n, {});
  std::deque<int> work;
  std::vector<char> queued(n, 1);
  for (std::size_t i = 0; i < n; ++i)
    work.push_back(static_cast<int>(i));

  while (!work.empty()) {
    int node = work.front();
    work.pop_front();
    queued[node] = 0;
    NodeState &st = r.states[node];

    FactSet in = node == 0 ? seeds : FactSet{};
    for (int p : cfg.pred[node])
      in.insert(r.states[p].out.begin(), r.states[p].out.end());

    auto [gen, kill] = gen_kill(cfg.inst(f, node), in, ctx);
    FactSet out = gen;
    for (const auto &fact : in)
      if (!kill.count(fact))
        out.insert(fact);
    ++r.iterations;

    st.in = std::move(in);
    st.gen = std::move(gen);
    st.kill = std::move(kill);
    if (out != st.out) {
      st.out = std::move(out);
      for (int s : cfg.succ[node])
        if (!queued[s]) {
          queued[s] = 1;
          work.push_back(s);
        }
    }
  }
  return r;
}

namespace {

FactSet base_seeds(const TaintContext &ctx) {
  FactSet s;
  for (const auto &g : ctx.tainted_globals)
    s.insert(TaintFact::global(g));
  if (ctx.unknown_memory_tainted)
    s.insert(TaintFact::unknown_memory());
  return s;
}

struct Effects {
  bool returns = false;
  std::set<int> refs;
  bool unknown = false;
};

// UnknownMemory already in the seeds is context, not an effect of f.
Effects collect_effects(const Function &f, const CFG &cfg, const FunctionTaint &t,
                        const FactSet &seeds) {
  Effects e;
  const bool seeded_unknown = seeds.count(TaintFact::unknown_memory()) != 0;
  for (std::size_t node = 0; node < cfg.size(); ++node) {
    const NodeState &st = t.states[node];
    for (const auto &fact : st.out) {
      if (fact.kind == TaintFact::Kind::Pointee)
        e.refs.insert(fact.index);
      else if (fact.kind == TaintFact::Kind::UnknownMemory && !seeded_unknown)
        e.unknown = true;
    }
    const Instruction &inst = cfg.inst(f, static_cast<int>(node));
    if (inst.op == Opcode::Return && !inst.operands.empty() &&
        value_tainted(inst.operands[0], st.in))
      e.returns = true;
  }
  return e;
}

} // namespace

FunctionSummary summarize_function(const Function &f, const CFG &cfg, const TaintContext &ctx) {
  const std::size_t arity = f.params.size();
  FunctionSummary s = FunctionSummary::empty(arity);
  const FactSet base = base_seeds(ctx);
  const Effects none = collect_effects(f, cfg, analyze_function(f, cfg, ctx, base), base);

  for (std::size_t j = 0; j < arity; ++j) {
    FactSet seeds = base;
    seeds.insert(TaintFact::value(f.params[j].name));
    seeds.insert(TaintFact::pointee(static_cast<int>(j)));
    Effects e = collect_effects(f, cfg, analyze_function(f, cfg, ctx, seeds), seeds);
    s.param_to_return[j] = e.returns;
    s.param_to_ref_params[j] = e.refs;
    s.param_to_unknown[j] = e.unknown;
  }

  bool has_input = false;
  for (const auto &bb : f.blocks)
    for (const auto &inst : bb.instructions)
      has_input = has_input || inst.op == Opcode::Input;

  s.is_source = f.is_taint_source || has_input || none.returns;
  s.source_ref_params = none.refs;
  s.source_unknown = none.unknown;
  if (f.is_taint_source)
    for (std::size_t j = 0; j < arity; ++j)
      s.source_ref_params.insert(static_cast<int>(j));
  return s;
}

bool TaintResult::is_tainted(const std::string &function, const std::string &object) const {
  auto it = tainted_objects.find(function);
  return it != tainted_objects.end() && it->second.count(object);
}

TaintResult analyze_program(const Program &p, const TaintConfig &config) {
  const CallGraph cg = build_call_graph(p);
  std::map<std::string, CFG> cfgs;
  for (const auto &f : p.functions)
    cfgs.emplace(f.name, build_cfg(f));

  const bool has_source = program_has_taint_source(p, config);
  std::set<std::string> input_globals;
  for (const auto &g : p.globals)
    if (g.is_taint_source)
      input_globals.insert(g.name);

  std::set<std::string> warnings;
  std::set<std::string> tainted_globals = input_globals;
  bool unknown_tainted = false;
  TaintResult result;

  auto context = [&](const Function &f, const SummaryMap &sm) {
    TaintContext ctx = make_taint_context(p, f, sm, tainted_globals, has_source, &warnings);
    ctx.unknown_memory_tainted = unknown_tainted;
    return ctx;
  };

  for (;;) {
    ++result.rounds;

    // Bottom-up summaries; each SCC iterated to a fixpoint from all-false.
    SummaryMap summaries;
    for (const auto &f : p.functions)
      summaries[f.name] = FunctionSummary::empty(f.params.size());
    for (const auto &scc : cg.sccs) {
      bool changed = true;
      while (changed) {
        changed = false;
        for (const auto &name : scc) {
          const Function *f = p.find_function(name);
          if (!f)
            continue; // extern leaf
          FunctionSummary s = summarize_function(*f, cfgs.at(name), context(*f, summaries));
          if (s != summaries[name]) {
            summaries[name] = std::move(s);
            changed = true;
          }
        }
      }
    }

    // Final context-insensitive pass with real seeds.
    std::map<std::string, FactSet> seeds;
    std::map<std::string, TaintContext> contexts;
    for (const auto &f : p.functions) {
      contexts.emplace(f.name, context(f, summaries));
      seeds[f.name] = base_seeds(contexts.at(f.name));
      if (config.taint_entry_params && f.name == p.entry)
        for (std::size_t j = 0; j < f.params.size(); ++j) {
          seeds[f.name].insert(TaintFact::value(f.params[j].name));
          seeds[f.name].insert(TaintFact::pointee(static_cast<int>(j)));
        }
    }

    std::map<std::string, FunctionTaint> functions;
    bool seeds_changed = true;
    while (seeds_changed) {
      seeds_changed = false;
      for (const auto &f : p.functions)
        functions[f.name] = analyze_function(f, cfgs.at(f.name), contexts.at(f.name), seeds[f.name]);
      for (const auto &f : p.functions) {
        const CFG &cfg = cfgs.at(f.name);
        const TaintContext &ctx = contexts.at(f.name);
        const FunctionTaint &ft = functions.at(f.name);
        for (std::size_t node = 0; node < cfg.size(); ++node) {
          const Instruction &inst = cfg.inst(f, static_cast<int>(node));
          if (inst.op != Opcode::Call && inst.op != Opcode::Spawn)
            continue;
          const Function *callee = p.find_function(inst.callee);
          if (!callee)
            continue;
          FactSet &cs = seeds[callee->name];
          const FactSet &in = ft.states[node].in;
          for (std::size_t i = 0; i < inst.operands.size() && i < callee->params.size(); ++i) {
            const Operand &a = inst.operands[i];
            if (value_tainted(a, in) && cs.insert(TaintFact::value(callee->params[i].name)).second)
              seeds_changed = true;
            if (memory_tainted(ctx.flow.roots_of(a), in, ctx) &&
                cs.insert(TaintFact::pointee(static_cast<int>(i))).second)
              seeds_changed = true;
          }
        }
      }
    }

    std::set<std::string> next_globals = input_globals;
    bool next_unknown = false;
    std::map<std::string, std::set<std::string>> objects;
    for (const auto &f : p.functions) {
      const TaintContext &ctx = contexts.at(f.name);
      auto &objs = objects[f.name];
      for (const auto &st : functions.at(f.name).states) {
        for (const auto &fact : st.out) {
          switch (fact.kind) {
          case TaintFact::Kind::Global:
            next_globals.insert(fact.name);
            break;
          case TaintFact::Kind::UnknownMemory:
            next_unknown = true;
            break;
          case TaintFact::Kind::StackObject:
            objs.insert(fact.name);
            if (ctx.flow.escaped_objects.count(fact.name))
              next_unknown = true;
            break;
          default:
            break;
          }
        }
      }
    }
    next_unknown = next_unknown || unknown_tainted;
    next_globals.insert(tainted_globals.begin(), tainted_globals.end());

    if (next_globals == tainted_globals && next_unknown == unknown_tainted) {
      result.functions = std::move(functions);
      result.summaries = std::move(summaries);
      result.tainted_objects = std::move(objects);
      result.tainted_globals = tainted_globals;
      break;
    }
    tainted_globals = std::move(next_globals);
    unknown_tainted = next_unknown;
  }
  result.warnings.assign(warnings.begin(), warnings.end());
  return result;
}

ObjectClassification classify_by_taint(const Function &f, const TaintResult &r) {
  ObjectClassification out;
  out.function = f.name;
  for (const auto *a : f.allocas()) {
    ObjectLabel l;
    l.object = a->object;
    l.dynamic = a->op == Opcode::AllocaDynamic;
    l.size = l.dynamic ? 0 : a->size;
    l.span = a->span;
    if (r.is_tainted(f.name, a->object)) {
      l.unclean = true;
      l.reasons.insert(ReasonCode::TaintReached);
    }
    out.objects.push_back(std::move(l));
  }
  return out;
}

} // namespace cleanstack
