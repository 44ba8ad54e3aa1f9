#include "cleanstack/heuristic.hpp"

#include "cleanstack/address_flow.hpp"

#include <algorithm>

namespace cleanstack {

namespace {

bool in(const std::set<std::string> &s, const Operand &op) {
  return op.is_value() && s.count(op.name);
}

/// Values carrying the address of one object (`addr`) or an integer computed
/// from it (`ints`), closed over AddrOf/PtrAdd/Select/Phi and int round trips.
struct Derivation {
  std::set<std::string> addr;
  std::set<std::string> ints;
};

Derivation derive(const Function &f, const std::string &object) {
  Derivation d;
  bool changed = true;
  while (changed) {
    changed = false;
    auto add = [&](std::set<std::string> &s, const std::string &v) {
      if (s.insert(v).second)
        changed = true;
    };
    for (const auto &bb : f.blocks) {
      for (const auto &inst : bb.instructions) {
        switch (inst.op) {
        case Opcode::AddrOf:
          if (!inst.object_is_global && inst.object == object)
            add(d.addr, inst.dst);
          break;
        case Opcode::PtrAdd:
          if (in(d.addr, inst.operands[0]))
            add(d.addr, inst.dst);
          break;
        case Opcode::Select:
          if (in(d.addr, inst.operands[1]) || in(d.addr, inst.operands[2]))
            add(d.addr, inst.dst);
          if (in(d.ints, inst.operands[1]) || in(d.ints, inst.operands[2]))
            add(d.ints, inst.dst);
          break;
        case Opcode::Phi:
          for (const auto &op : inst.operands) {
            if (in(d.addr, op))
              add(d.addr, inst.dst);
            if (in(d.ints, op))
              add(d.ints, inst.dst);
          }
          break;
        case Opcode::PtrToInt:
          if (in(d.addr, inst.operands[0]))
            add(d.ints, inst.dst);
          break;
        case Opcode::BinOp:
        case Opcode::UnOp:
          for (const auto &op : inst.operands)
            if (in(d.ints, op))
              add(d.ints, inst.dst);
          break;
        case Opcode::IntToPtr:
          if (in(d.ints, inst.operands[0]))
            add(d.addr, inst.dst);
          break;
        default:
          break;
        }
      }
    }
  }
  return d;
}

} // namespace

ObjectClassification classify_heuristic(const Function &f) {
  ObjectClassification out;
  out.function = f.name;
  AddressFlow flow = compute_address_flow(f);

  std::vector<const Instruction *> allocas = f.allocas();
  std::map<std::string, Derivation> derivations;
  for (const auto *a : allocas)
    derivations[a->object] = derive(f, a->object);

  // Objects used as setjmp/longjmp buffers.
  std::set<std::string> jmp_bufs;
  for (const auto &bb : f.blocks)
    for (const auto &inst : bb.instructions)
      if (inst.op == Opcode::SetJmp || inst.op == Opcode::LongJmp)
        for (const auto &[obj, d] : derivations)
          if (in(d.addr, inst.operands[0]))
            jmp_bufs.insert(obj);

  for (const auto *a : allocas) {
    ObjectLabel label;
    label.object = a->object;
    label.dynamic = a->op == Opcode::AllocaDynamic;
    label.size = label.dynamic ? 0 : a->size;
    label.span = a->span;
    auto &r = label.reasons;
    // A variable-length alloca is an array whose bound is only known at run time.
    if (a->is_array || label.dynamic)
      r.insert(ReasonCode::IsArray);
    if (a->contains_array)
      r.insert(ReasonCode::StructContainsArray);

    const Derivation &d = derivations[a->object];
    for (const auto &bb : f.blocks) {
      for (const auto &inst : bb.instructions) {
        const auto &ops = inst.operands;
        switch (inst.op) {
        case Opcode::Store:
          if (in(d.addr, ops[1])) {
            r.insert(ReasonCode::AddrStored);
            for (const auto &jb : jmp_bufs)
              if (in(derivations[jb].addr, ops[0]))
                r.insert(ReasonCode::AddrEscapesControlFlow);
          }
          break;
        case Opcode::AtomicRMW:
          if (in(d.addr, ops[0]))
            r.insert(ReasonCode::AtomicNewVal);
          if (in(d.addr, ops[1]))
            r.insert(ReasonCode::AddrStored);
          break;
        case Opcode::PtrToInt:
          if (in(d.addr, ops[0]))
            r.insert(ReasonCode::AddrPtrToInt);
          break;
        case Opcode::Call:
        case Opcode::Spawn:
          for (const auto &op : ops)
            if (in(d.addr, op) || in(d.ints, op))
              r.insert(ReasonCode::AddrPassedToCall);
          break;
        case Opcode::Return:
          if (!ops.empty() && (in(d.addr, ops[0]) || in(d.ints, ops[0])))
            r.insert(ReasonCode::AddrEscapesControlFlow);
          break;
        case Opcode::LongJmp:
          if (in(d.addr, ops[1]) || in(d.ints, ops[1]))
            r.insert(ReasonCode::AddrEscapesControlFlow);
          break;
        case Opcode::IntToPtr:
          if (in(d.ints, ops[0]))
            r.insert(ReasonCode::ComplexPtrOp);
          break;
        case Opcode::PtrAdd:
          if (in(d.addr, ops[0])) {
            if (!ops[1].is_const()) {
              r.insert(ReasonCode::ComplexPtrOp);
            } else {
              // Constant offsets are field/element accesses unless they leave
              // the object.
              auto off = flow.offset.find(inst.dst);
              const auto &roots = flow.roots_of(Operand::value(inst.dst));
              bool single = roots.size() == 1 && roots.begin()->kind == MemRoot::Kind::Object &&
                            roots.begin()->name == a->object;
              if (single && off != flow.offset.end() && off->second) {
                std::int64_t o = *off->second;
                if (o < 0 || (!label.dynamic && o > a->size))
                  r.insert(ReasonCode::ComplexPtrOp);
              } else if (!single) {
                r.insert(ReasonCode::ComplexPtrOp);
              }
            }
          }
          break;
        case Opcode::Phi:
          for (const auto &op : ops)
            if (in(d.addr, op))
              r.insert(ReasonCode::PhiPropagated);
          break;
        default:
          break;
        }
      }
    }
    label.unclean = !r.empty();
    out.objects.push_back(std::move(label));
  }
  return out;
}

DivergenceReport compare_methods(const Function &f, const ObjectClassification &heuristic,
                                 const ObjectClassification &taint) {
  DivergenceReport rep;
  rep.function = f.name;
  for (const auto *a : f.allocas()) {
    bool h = heuristic.is_unclean(a->object);
    bool t = taint.is_unclean(a->object);
    if (h && !t)
      rep.heuristic_only.push_back(a->object);
    else if (t && !h)
      rep.taint_only.push_back(a->object);
    else if (h)
      ++rep.agree_unclean;
    else
      ++rep.agree_clean;
  }
  return rep;
}

} // namespace cleanstack
