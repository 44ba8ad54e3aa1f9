#include "cleanstack/address_flow.hpp"

namespace cleanstack {

namespace {

const std::set<MemRoot> &unknown_set() {
  static const std::set<MemRoot> s{MemRoot::unknown()};
  return s;
}

// Offset lattice: nullopt in `offset` means "varies"; absence means "not yet
// computed".
struct OffsetMeet {
  bool seen = false;
  bool varies = false;
  std::int64_t value = 0;

  void add(std::optional<std::int64_t> v) {
    if (!v) {
      varies = true;
      return;
    }
    if (!seen) {
      seen = true;
      value = *v;
    } else if (value != *v) {
      varies = true;
    }
  }
  std::optional<std::int64_t> result() const {
    if (varies || !seen)
      return std::nullopt;
    return value;
  }
};

} // namespace

const std::set<MemRoot> &AddressFlow::roots_of(const Operand &op) const {
  if (!op.is_value())
    return unknown_set();
  auto it = roots.find(op.name);
  return it == roots.end() ? unknown_set() : it->second;
}

std::optional<std::int64_t> AddressFlow::offset_of(const Operand &op) const {
  if (!op.is_value())
    return std::nullopt;
  auto it = offset.find(op.name);
  return it == offset.end() ? std::nullopt : it->second;
}

AddressFlow compute_address_flow(const Function &f) {
  AddressFlow af;
  for (std::size_t i = 0; i < f.params.size(); ++i) {
    af.roots[f.params[i].name] = {MemRoot::param(static_cast<int>(i))};
    af.offset[f.params[i].name] = 0;
  }

  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto &bb : f.blocks) {
      for (const auto &inst : bb.instructions) {
        if (inst.dst.empty())
          continue;
        std::set<MemRoot> r;
        std::optional<std::int64_t> off;
        switch (inst.op) {
        case Opcode::AddrOf:
          r = {inst.object_is_global ? MemRoot::global(inst.object) : MemRoot::object(inst.object)};
          off = 0;
          break;
        case Opcode::PtrAdd: {
          r = af.roots_of(inst.operands[0]);
          auto base = af.offset_of(inst.operands[0]);
          if (base && inst.operands[1].is_const())
            off = *base + inst.operands[1].imm;
          break;
        }
        case Opcode::Phi:
        case Opcode::Select: {
          OffsetMeet meet;
          std::size_t first = inst.op == Opcode::Select ? 1 : 0;
          for (std::size_t k = first; k < inst.operands.size(); ++k) {
            const auto &op = inst.operands[k];
            if (op.is_value() && !af.roots.count(op.name))
              continue; // not computed yet (back edge)
            const auto &rs = af.roots_of(op);
            r.insert(rs.begin(), rs.end());
            meet.add(af.offset_of(op));
          }
          if (r.empty())
            continue;
          off = meet.result();
          break;
        }
        default:
          r = {MemRoot::unknown()};
          break;
        }
        auto &slot = af.roots[inst.dst];
        std::size_t before = slot.size();
        bool fresh = before == 0;
        slot.insert(r.begin(), r.end());
        if (slot.size() != before)
          changed = true;
        if (slot.size() > 1)
          off = std::nullopt;
        auto oit = af.offset.find(inst.dst);
        if (oit == af.offset.end() || fresh) {
          af.offset[inst.dst] = off;
        } else if (oit->second && oit->second != off) {
          oit->second = std::nullopt;
          changed = true;
        }
      }
    }
  }

  auto escape = [&](const Operand &op) {
    for (const auto &root : af.roots_of(op))
      if (root.kind == MemRoot::Kind::Object)
        af.escaped_objects.insert(root.name);
  };
  for (const auto &bb : f.blocks) {
    for (const auto &inst : bb.instructions) {
      switch (inst.op) {
      case Opcode::Store:
      case Opcode::AtomicRMW:
      case Opcode::LongJmp:
        escape(inst.operands[1]);
        break;
      case Opcode::PtrToInt:
      case Opcode::Return:
        for (const auto &op : inst.operands)
          escape(op);
        break;
      case Opcode::Call:
      case Opcode::Spawn:
        for (const auto &op : inst.operands)
          escape(op);
        break;
      default:
        break;
      }
    }
  }
  return af;
}

} // namespace cleanstack
