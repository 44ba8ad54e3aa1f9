#include "cleanstack/verify.hpp"

#include "cleanstack/cfg.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

namespace cleanstack {

namespace {

bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

class FunctionVerifier {
public:
  FunctionVerifier(const Program &p, const Function &f, VerifyReport &out)
      : prog_(p), fn_(f), out_(out) {}

  void run() {
    if (fn_.blocks.empty()) {
      report("", -1, "function has no blocks", fn_.span);
      return;
    }
    collect_definitions();
    check_blocks();
    if (structural_ok_)
      check_def_before_use();
  }

private:
  void report(const std::string &block, int index, std::string msg, const SourceSpan &span) {
    out_.push_back({fn_.name, block, index, std::move(msg), span});
  }

  void collect_definitions() {
    for (const auto &param : fn_.params) {
      if (!defs_.insert(param.name).second)
        report("", -1, "value %" + param.name + " defined more than once", fn_.span);
    }
    std::set<std::string> labels;
    for (const auto &bb : fn_.blocks) {
      if (!labels.insert(bb.label).second)
        report(bb.label, -1, "duplicate block label '" + bb.label + "'", fn_.span);
      for (std::size_t i = 0; i < bb.instructions.size(); ++i) {
        const auto &inst = bb.instructions[i];
        if (!inst.dst.empty() && !defs_.insert(inst.dst).second)
          report(bb.label, static_cast<int>(i), "value %" + inst.dst + " defined more than once",
                 inst.span);
        if (inst.op == Opcode::AllocaStatic || inst.op == Opcode::AllocaDynamic) {
          if (!objects_.insert(inst.object).second)
            report(bb.label, static_cast<int>(i),
                   "stack object %obj." + inst.object + " defined more than once", inst.span);
          if (inst.op == Opcode::AllocaDynamic)
            dynamic_objects_.insert(inst.object);
        }
      }
    }
  }

  void check_operand(const std::string &block, int idx, const Instruction &inst,
                     const Operand &op) {
    if (op.is_value() && !defs_.count(op.name))
      report(block, idx, "use of undefined value %" + op.name, inst.span);
  }

  void check_label(const std::string &block, int idx, const Instruction &inst,
                   const std::string &label) {
    int target = fn_.block_index(label);
    if (target < 0) {
      report(block, idx, "unknown block label '" + label + "'", inst.span);
      structural_ok_ = false;
    } else if (target == 0 && inst.op != Opcode::Phi) {
      report(block, idx, "branch to entry block '" + label + "'", inst.span);
    }
  }

  void check_blocks() {
    for (std::size_t b = 0; b < fn_.blocks.size(); ++b) {
      const auto &bb = fn_.blocks[b];
      if (bb.instructions.empty()) {
        report(bb.label, -1, "block '" + bb.label + "' has no terminator", fn_.span);
        structural_ok_ = false;
        continue;
      }
      if (!is_terminator(bb.instructions.back().op)) {
        report(bb.label, static_cast<int>(bb.instructions.size()) - 1,
               "block '" + bb.label + "' does not end in a terminator",
               bb.instructions.back().span);
        structural_ok_ = false;
      }
      bool past_phis = false;
      for (std::size_t i = 0; i < bb.instructions.size(); ++i) {
        const auto &inst = bb.instructions[i];
        int idx = static_cast<int>(i);
        if (is_terminator(inst.op) && i + 1 != bb.instructions.size()) {
          report(bb.label, idx, "terminator in the middle of block '" + bb.label + "'", inst.span);
          structural_ok_ = false;
        }
        if (inst.op == Opcode::Phi) {
          if (past_phis || b == 0)
            report(bb.label, idx, "phi node not at the head of a non-entry block", inst.span);
        } else {
          past_phis = true;
        }
        for (const auto &op : inst.operands)
          check_operand(bb.label, idx, inst, op);
        for (auto ai : address_operand_indices(inst))
          if (ai < inst.operands.size() && inst.operands[ai].is_const())
            report(bb.label, idx, "literal used as an address", inst.span);
        for (const auto &l : inst.labels)
          check_label(bb.label, idx, inst, l);
        check_shape(bb.label, idx, inst);
      }
    }
    if (structural_ok_)
      check_phi_incoming();
  }

  void check_shape(const std::string &block, int idx, const Instruction &inst) {
    auto bad = [&](const std::string &m) { report(block, idx, m, inst.span); };
    auto need = [&](std::size_t n) {
      if (inst.operands.size() != n)
        bad(std::string(opcode_name(inst.op)) + " expects " + std::to_string(n) + " operands");
    };
    switch (inst.op) {
    case Opcode::AllocaStatic:
      if (inst.size <= 0)
        bad("alloca size must be positive");
      if (!is_power_of_two(inst.align) || inst.align > 4096)
        bad("alloca alignment must be a power of two no larger than 4096");
      break;
    case Opcode::AllocaDynamic:
      need(1);
      if (!is_power_of_two(inst.align) || inst.align > 4096)
        bad("alloca alignment must be a power of two no larger than 4096");
      break;
    case Opcode::Load:
    case Opcode::Store:
      need(inst.op == Opcode::Load ? 1 : 2);
      if (inst.size != 1 && inst.size != 2 && inst.size != 4 && inst.size != 8)
        bad("memory access width must be 1, 2, 4 or 8");
      break;
    case Opcode::Input:
      need(0);
      if (inst.size < 1 || inst.size > 8)
        bad("input width must be between 1 and 8 bytes");
      break;
    case Opcode::Copy:
    case Opcode::Select:
      need(3);
      break;
    case Opcode::BinOp:
    case Opcode::Cmp:
    case Opcode::PtrAdd:
    case Opcode::AtomicRMW:
    case Opcode::LongJmp:
      need(2);
      break;
    case Opcode::UnOp:
    case Opcode::PtrToInt:
    case Opcode::IntToPtr:
    case Opcode::Output:
    case Opcode::Join:
    case Opcode::SetJmp:
    case Opcode::UncleanSetTop:
    case Opcode::CondBranch:
      need(1);
      break;
    case Opcode::AddrOf:
      if (inst.object_is_global) {
        if (!prog_.find_global(inst.object))
          bad("unknown global @" + inst.object);
      } else if (!objects_.count(inst.object)) {
        bad("unknown stack object %obj." + inst.object);
      }
      break;
    case Opcode::Call:
    case Opcode::Spawn: {
      const Function *callee = prog_.find_function(inst.callee);
      if (!callee) {
        if (inst.op == Opcode::Spawn || !prog_.is_extern(inst.callee))
          bad("call to undeclared function '" + inst.callee + "'");
      } else if (callee->params.size() != inst.operands.size()) {
        bad("call to '" + inst.callee + "' passes " + std::to_string(inst.operands.size()) +
            " arguments, expected " + std::to_string(callee->params.size()));
      }
      if (inst.op == Opcode::Spawn && inst.dst.empty())
        bad("spawn must define a thread id");
      break;
    }
    case Opcode::Return:
      if (inst.operands.size() > 1)
        bad("ret takes at most one operand");
      break;
    case Opcode::Branch:
      if (inst.labels.size() != 1)
        bad("br expects one label");
      break;
    case Opcode::Phi:
      if (inst.operands.size() != inst.labels.size() || inst.operands.empty())
        bad("malformed phi");
      break;
    default:
      break;
    }
    if (inst.op == Opcode::CondBranch && inst.labels.size() != 2)
      bad("condbr expects two labels");
  }

  void check_phi_incoming() {
    auto preds = block_predecessors(fn_);
    for (std::size_t b = 0; b < fn_.blocks.size(); ++b) {
      const auto &bb = fn_.blocks[b];
      std::multiset<std::string> expected;
      for (int p : preds[b])
        expected.insert(fn_.blocks[static_cast<std::size_t>(p)].label);
      for (std::size_t i = 0; i < bb.instructions.size(); ++i) {
        const auto &inst = bb.instructions[i];
        if (inst.op != Opcode::Phi)
          continue;
        std::multiset<std::string> got(inst.labels.begin(), inst.labels.end());
        if (got != expected)
          report(bb.label, static_cast<int>(i),
                 "phi %" + inst.dst + " incoming blocks do not match predecessors", inst.span);
      }
    }
  }

  // Forward must-analysis: a value (or dynamic object) is available at a
  // point only if it is defined on every path reaching it.
  void check_def_before_use() {
    const std::size_t nb = fn_.blocks.size();
    auto preds = block_predecessors(fn_);
    std::set<std::string> universe = defs_;
    for (const auto &o : dynamic_objects_)
      universe.insert("%obj." + o);

    std::set<std::string> entry_in;
    for (const auto &param : fn_.params)
      entry_in.insert(param.name);

    std::vector<std::set<std::string>> out(nb, universe);
    std::vector<bool> reachable(nb, false);
    reachable[0] = true;
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t b = 0; b < nb; ++b) {
        std::set<std::string> in;
        if (b == 0) {
          in = entry_in;
        } else {
          bool first = true;
          bool any_reachable = false;
          for (int p : preds[b]) {
            if (!reachable[static_cast<std::size_t>(p)])
              continue;
            any_reachable = true;
            if (first) {
              in = out[static_cast<std::size_t>(p)];
              first = false;
            } else {
              std::set<std::string> tmp;
              std::set_intersection(in.begin(), in.end(), out[static_cast<std::size_t>(p)].begin(),
                                    out[static_cast<std::size_t>(p)].end(),
                                    std::inserter(tmp, tmp.begin()));
              in = std::move(tmp);
            }
          }
          if (!any_reachable)
            continue;
          if (!reachable[b]) {
            reachable[b] = true;
            changed = true;
          }
        }
        for (const auto &inst : fn_.blocks[b].instructions) {
          if (!inst.dst.empty())
            in.insert(inst.dst);
          if (inst.op == Opcode::AllocaDynamic)
            in.insert("%obj." + inst.object);
        }
        if (in != out[b]) {
          out[b] = std::move(in);
          changed = true;
        }
      }
    }

    for (std::size_t b = 0; b < nb; ++b) {
      if (!reachable[b])
        continue;
      const auto &bb = fn_.blocks[b];
      std::set<std::string> avail;
      if (b == 0) {
        avail = entry_in;
      } else {
        bool first = true;
        for (int p : preds[b]) {
          if (!reachable[static_cast<std::size_t>(p)])
            continue;
          if (first) {
            avail = out[static_cast<std::size_t>(p)];
            first = false;
          } else {
            std::set<std::string> tmp;
            std::set_intersection(avail.begin(), avail.end(),
                                  out[static_cast<std::size_t>(p)].begin(),
                                  out[static_cast<std::size_t>(p)].end(),
                                  std::inserter(tmp, tmp.begin()));
            avail = std::move(tmp);
          }
        }
      }
      for (std::size_t i = 0; i < bb.instructions.size(); ++i) {
        const auto &inst = bb.instructions[i];
        int idx = static_cast<int>(i);
        if (inst.op == Opcode::Phi) {
          for (std::size_t k = 0; k < inst.operands.size(); ++k) {
            const auto &op = inst.operands[k];
            if (!op.is_value() || !defs_.count(op.name))
              continue;
            int pb = fn_.block_index(inst.labels[k]);
            if (pb >= 0 && reachable[static_cast<std::size_t>(pb)] &&
                !out[static_cast<std::size_t>(pb)].count(op.name))
              report(bb.label, idx,
                     "value %" + op.name + " is not defined on every path from '" +
                         inst.labels[k] + "'",
                     inst.span);
          }
        } else {
          for (const auto &op : inst.operands)
            if (op.is_value() && defs_.count(op.name) && !avail.count(op.name))
              report(bb.label, idx, "value %" + op.name + " is not defined on every path to its use",
                     inst.span);
          if (inst.op == Opcode::AddrOf && !inst.object_is_global &&
              dynamic_objects_.count(inst.object) && !avail.count("%obj." + inst.object))
            report(bb.label, idx,
                   "dynamic object %obj." + inst.object + " used before its allocation",
                   inst.span);
        }
        if (!inst.dst.empty())
          avail.insert(inst.dst);
        if (inst.op == Opcode::AllocaDynamic)
          avail.insert("%obj." + inst.object);
      }
    }
  }

  const Program &prog_;
  const Function &fn_;
  VerifyReport &out_;
  std::set<std::string> defs_;
  std::set<std::string> objects_;
  std::set<std::string> dynamic_objects_;
  bool structural_ok_ = true;
};

} // namespace

VerifyReport verify_program(const Program &p) {
  VerifyReport out;
  if (!p.find_function(p.entry) || p.is_extern(p.entry))
    out.push_back({"", "", -1, "entry not found: '" + p.entry + "'", {}});

  std::set<std::string> names;
  for (const auto &f : p.functions)
    if (!names.insert(f.name).second)
      out.push_back({f.name, "", -1, "function '" + f.name + "' defined more than once", f.span});
  for (const auto &e : p.externs)
    if (!names.insert(e).second)
      out.push_back({"", "", -1, "extern '" + e + "' conflicts with another definition", {}});
  std::set<std::string> gnames;
  for (const auto &g : p.globals) {
    if (!gnames.insert(g.name).second)
      out.push_back({"", "", -1, "global @" + g.name + " defined more than once", {}});
    if (g.size <= 0)
      out.push_back({"", "", -1, "global @" + g.name + " must have positive size", {}});
  }

  for (const auto &f : p.functions)
    FunctionVerifier(p, f, out).run();
  return out;
}

std::string format_violation(const Violation &v) {
  std::ostringstream os;
  if (!v.span.file.empty() || v.span.line > 1 || v.span.column > 1)
    os << (v.span.file.empty() ? "<input>" : v.span.file) << ":" << v.span.line << ":"
       << v.span.column << ": ";
  if (!v.function.empty()) {
    os << "in function '" << v.function << "'";
    if (!v.block.empty())
      os << ", block '" << v.block << "'";
    if (v.index >= 0)
      os << ", instruction " << v.index;
    os << ": ";
  }
  os << v.message;
  return os.str();
}

namespace {
std::string summarize(const VerifyReport &r) {
  std::string s = "program failed verification";
  for (const auto &v : r)
    s += "\n  " + format_violation(v);
  return s;
}
} // namespace

VerifyError::VerifyError(VerifyReport report)
    : Error(summarize(report)), report_(std::move(report)) {}

void require_valid(const Program &p) {
  auto r = verify_program(p);
  if (!r.empty())
    throw VerifyError(std::move(r));
}

} // namespace cleanstack
