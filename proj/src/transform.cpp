#include "cleanstack/transform.hpp"

#include "cleanstack/heuristic.hpp"
#include "cleanstack/verify.hpp"

#include <algorithm>
#include <numeric>

namespace cleanstack {

namespace {

std::int64_t align_up(std::int64_t x, std::int64_t a) { return (x + a - 1) / a * a; }

bool reserved(std::string_view name) { return name.starts_with("__"); }

} // namespace

void InstrumentationConfig::validate() const {
  auto page_multiple = [](std::int64_t v) { return v > 0 && v % kPageSize == 0; };
  if (!page_multiple(unclean_stack_size))
    throw Error("unclean stack size must be a positive multiple of " + std::to_string(kPageSize));
  if (!page_multiple(guard_page_size))
    throw Error("guard size must be a positive multiple of " + std::to_string(kPageSize));
}

const LayoutSlot *FrameLayout::find(std::string_view object) const {
  for (const auto &s : slots)
    if (s.object == object)
      return &s;
  return nullptr;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t function_seed(std::uint64_t seed, std::string_view function) {
  return splitmix64(seed ^ fnv1a(function));
}

SeededRng::SeededRng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t SeededRng::next() { return engine_(); }

std::uint64_t SeededRng::below(std::uint64_t n) {
  if (n == 0)
    throw Error("empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

FrameLayout compute_layout(const std::vector<LayoutObject> &objects, std::uint64_t seed,
                           bool canary_randomized, std::int64_t unclean_stack_size) {
  for (const auto &o : objects) {
    if (o.size <= 0)
      throw Error("object '" + o.name + "' has non-positive size");
    if (o.align <= 0 || (o.align & (o.align - 1)))
      throw Error("object '" + o.name + "' has invalid alignment");
  }
  FrameLayout L;
  L.seed = seed;
  SeededRng rng(seed);

  std::vector<std::size_t> order(objects.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
  const std::size_t k = order.size();
  const std::size_t canary_pos = canary_randomized ? rng.below(k + 1) : k;

  std::int64_t cur = 0;
  for (std::size_t pos = 0; pos <= k; ++pos) {
    if (pos == canary_pos) {
      if (pos == k) {
        // Flush against the frame base.
        L.frame_size = align_up(cur + 8, 16);
        L.canary_slot = L.frame_size - 8;
        cur = L.frame_size;
      } else {
        L.canary_slot = align_up(cur, 8);
        cur = L.canary_slot + 8;
      }
      continue;
    }
    const LayoutObject &o = objects[order[pos < canary_pos ? pos : pos - 1]];
    std::int64_t off = align_up(cur, o.align);
    L.slots.push_back({o.name, off, o.size, o.align});
    L.permutation.push_back(o.name);
    cur = off + o.size;
  }
  L.frame_size = align_up(cur, 16);
  if (L.frame_size > unclean_stack_size)
    throw Error("unclean frame of " + std::to_string(L.frame_size) +
                " bytes exceeds the unclean stack size " + std::to_string(unclean_stack_size));
  return L;
}

UncleanPartition select_unclean_objects(const Function &f, const ObjectClassification &c,
                                        const InstrumentationConfig &) {
  UncleanPartition part;
  for (const auto *a : f.allocas())
    (c.is_unclean(a->object) ? part.unclean : part.clean).push_back(a->object);
  return part;
}

std::vector<NodeRef> mark_stack_restore_points(const Function &f) {
  std::vector<NodeRef> out;
  for (std::size_t b = 0; b < f.blocks.size(); ++b)
    for (std::size_t i = 0; i < f.blocks[b].instructions.size(); ++i)
      if (f.blocks[b].instructions[i].op == Opcode::SetJmp)
        out.push_back({static_cast<int>(b), static_cast<int>(i)});
  return out;
}

ProgramClassification classify_program(const Program &p, Method method,
                                       const TaintConfig &taint) {
  ProgramClassification out;
  if (method == Method::Heuristic) {
    for (const auto &f : p.functions)
      out[f.name] = classify_heuristic(f);
    return out;
  }
  TaintResult r = analyze_program(p, taint);
  for (const auto &f : p.functions) {
    ObjectClassification t = classify_by_taint(f, r);
    out[f.name] = method == Method::Union ? merge_classifications(classify_heuristic(f), t) : t;
  }
  return out;
}

const FunctionInstrumentation *InstrumentationStats::find(std::string_view fn) const {
  for (const auto &f : functions)
    if (f.function == fn)
      return &f;
  return nullptr;
}

namespace {

using namespace make;

void check_reserved(const Function &f) {
  auto bad = [&](const std::string &what) {
    throw Error("function '" + f.name + "' uses reserved name '" + what +
                "' (already instrumented?)");
  };
  for (const auto &p : f.params)
    if (reserved(p.name))
      bad(p.name);
  for (const auto &bb : f.blocks) {
    if (reserved(bb.label))
      bad(bb.label);
    for (const auto &inst : bb.instructions) {
      if (reserved(inst.dst))
        bad(inst.dst);
      if (!inst.object_is_global && reserved(inst.object))
        bad(inst.object);
    }
  }
}

Function rewrite(const Function &f, const std::set<std::string> &unclean,
                 const FrameLayout *layout, FunctionInstrumentation &info) {
  const bool frame = layout != nullptr;
  std::map<std::string, std::string> dyn_top; // dynamic object -> SSA value of its base
  for (const auto *a : f.allocas())
    if (a->op == Opcode::AllocaDynamic && unclean.count(a->object))
      dyn_top[a->object] = "__dyn" + std::to_string(dyn_top.size()) + ".new";
  const bool dynamic = !dyn_top.empty();

  Function g;
  g.name = f.name;
  g.params = f.params;
  g.is_taint_source = f.is_taint_source;
  g.span = f.span;

  std::vector<Instruction> prologue;
  if (dynamic)
    prologue.push_back(alloca_static("__dyntop", 8, 8));
  prologue.push_back(unclean_top("__us.top"));
  if (frame) {
    prologue.push_back(ptr_add("__us.frame", v("__us.top"), c(-layout->frame_size)));
    prologue.push_back(unclean_set_top(v("__us.frame")));
    prologue.push_back(addr_of("__cs.guard", std::string(kCanaryGlobal), true));
    prologue.push_back(load("__cs.val", v("__cs.guard")));
    prologue.push_back(ptr_add("__cs.slot", v("__us.frame"), c(layout->canary_slot)));
    prologue.push_back(store(v("__cs.slot"), v("__cs.val")));
  }
  if (dynamic) {
    prologue.push_back(addr_of("__dyntop.addr", "__dyntop"));
    prologue.push_back(store(v("__dyntop.addr"), v("__us.frame")));
  }

  int dyn_index = 0, sj_index = 0, ret_index = 0;
  bool needs_fail = false;
  for (std::size_t b = 0; b < f.blocks.size(); ++b) {
    const BasicBlock &bb = f.blocks[b];
    BasicBlock nb;
    nb.label = bb.label;
    if (b == 0)
      nb.instructions = prologue;
    std::vector<BasicBlock> extra;

    for (const auto &inst : bb.instructions) {
      switch (inst.op) {
      case Opcode::AllocaStatic:
        if (unclean.count(inst.object)) {
          ++info.static_unclean;
          continue;
        }
        break;
      case Opcode::AllocaDynamic:
        if (unclean.count(inst.object)) {
          ++info.dynamic_unclean;
          std::string p = "__dyn" + std::to_string(dyn_index++) + ".";
          auto emit = [&](Instruction i) {
            i.span = inst.span;
            nb.instructions.push_back(std::move(i));
          };
          emit(unclean_top(p + "top"));
          emit(binop(p + "sz", BinaryOp::Add, inst.operands[0], c(15)));
          emit(binop(p + "al", BinaryOp::And, v(p + "sz"), c(-16)));
          emit(unop(p + "neg", UnaryOp::Neg, v(p + "al")));
          emit(ptr_add(p + "new", v(p + "top"), v(p + "neg")));
          emit(unclean_set_top(v(p + "new")));
          emit(store(v("__dyntop.addr"), v(p + "new")));
          continue;
        }
        break;
      case Opcode::AddrOf:
        if (!inst.object_is_global && unclean.count(inst.object)) {
          Instruction r;
          if (auto it = dyn_top.find(inst.object); it != dyn_top.end())
            r = ptr_add(inst.dst, v(it->second), c(0));
          else
            r = ptr_add(inst.dst, v("__us.frame"), c(layout->find(inst.object)->offset));
          r.span = inst.span;
          nb.instructions.push_back(std::move(r));
          continue;
        }
        break;
      case Opcode::SetJmp: {
        ++info.restore_points;
        std::string p = "__sj" + std::to_string(sj_index++) + ".";
        if (dynamic)
          nb.instructions.push_back(load(p + "snap", v("__dyntop.addr")));
        nb.instructions.push_back(inst);
        if (dynamic) {
          nb.instructions.push_back(store(v("__dyntop.addr"), v(p + "snap")));
          nb.instructions.push_back(unclean_set_top(v(p + "snap")));
        } else {
          nb.instructions.push_back(unclean_set_top(v(frame ? "__us.frame" : "__us.top")));
        }
        continue;
      }
      case Opcode::Return:
        if (frame) {
          std::string p = "__ret" + std::to_string(ret_index++) + ".";
          nb.instructions.push_back(load(p + "c", v("__cs.slot")));
          nb.instructions.push_back(load(p + "g", v("__cs.guard")));
          nb.instructions.push_back(cmp(p + "ok", CmpPred::Eq, v(p + "c"), v(p + "g")));
          std::string exit_label = bb.label + ".__ret";
          nb.instructions.push_back(cond_br(v(p + "ok"), exit_label, "__cs.fail"));
          BasicBlock eb;
          eb.label = exit_label;
          eb.instructions.push_back(unclean_set_top(v("__us.top")));
          eb.instructions.push_back(inst);
          extra.push_back(std::move(eb));
          needs_fail = true;
          continue;
        }
        break;
      default:
        break;
      }
      nb.instructions.push_back(inst);
    }
    g.blocks.push_back(std::move(nb));
    for (auto &e : extra)
      g.blocks.push_back(std::move(e));
  }
  if (needs_fail) {
    BasicBlock fail;
    fail.label = "__cs.fail";
    fail.instructions.push_back(stack_chk_fail());
    g.blocks.push_back(std::move(fail));
  }
  return g;
}

} // namespace

InstrumentResult instrument_program(const Program &p, const ProgramClassification &classes,
                                    const InstrumentationConfig &config) {
  config.validate();
  InstrumentResult res;
  res.program = p;
  res.stats.total_functions = p.functions.size();
  if (config.protect)
    res.program.functions.clear();

  if (config.protect)
    for (const auto &f : p.functions)
      check_reserved(f);

  bool any_frame = false;
  for (const auto &f : p.functions) {
    auto cit = classes.find(f.name);
    if (cit == classes.end())
      throw Error("no classification for function '" + f.name + "'");
    UncleanPartition part = select_unclean_objects(f, cit->second, config);

    FunctionInstrumentation info;
    info.function = f.name;
    info.unclean_objects = part.unclean.size();
    info.has_frame = !part.unclean.empty();
    std::set<std::string> unclean(part.unclean.begin(), part.unclean.end());
    if (info.has_frame) {
      ++res.stats.unclean_functions;
      res.stats.unclean_allocas_total += part.unclean.size();
      std::vector<LayoutObject> objs;
      for (const auto *a : f.allocas())
        if (a->op == Opcode::AllocaStatic && unclean.count(a->object))
          objs.push_back({a->object, a->size, a->align});
      info.layout = compute_layout(objs, function_seed(config.seed, f.name),
                                   config.canary_randomized, config.unclean_stack_size);
    }
    const bool touched = info.has_frame || !mark_stack_restore_points(f).empty();

    if (config.protect) {
      if (touched) {
        FunctionInstrumentation scratch = info;
        res.program.functions.push_back(
            rewrite(f, unclean, info.has_frame ? &info.layout : nullptr, scratch));
        info = scratch;
      } else {
        res.program.functions.push_back(f);
      }
    } else {
      info.static_unclean = 0;
      for (const auto *a : f.allocas())
        if (unclean.count(a->object))
          ++(a->op == Opcode::AllocaStatic ? info.static_unclean : info.dynamic_unclean);
      info.restore_points = mark_stack_restore_points(f).size();
    }
    any_frame = any_frame || info.has_frame;
    res.stats.functions.push_back(std::move(info));
  }

  if (config.protect && any_frame && !res.program.find_global(kCanaryGlobal)) {
    GlobalDef g;
    g.name = std::string(kCanaryGlobal);
    g.size = 8;
    g.is_canary = true;
    res.program.globals.push_back(g);
  }
  if (config.protect) {
    VerifyReport rep = verify_program(res.program);
    if (!rep.empty())
      throw Error("instrumented program fails verification: " + format_violation(rep.front()));
  }
  return res;
}

InstrumentResult instrument_program(const Program &p, const InstrumentationConfig &config) {
  return instrument_program(p, classify_program(p, config.method, config.taint), config);
}

} // namespace cleanstack
