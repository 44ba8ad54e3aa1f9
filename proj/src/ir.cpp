#include "cleanstack/ir.hpp"

#include <algorithm>
#include <array>

namespace cleanstack {

bool Instruction::operator==(const Instruction &o) const {
  return op == o.op && dst == o.dst && operands == o.operands && object == o.object &&
         object_is_global == o.object_is_global && size == o.size && align == o.align &&
         is_array == o.is_array && contains_array == o.contains_array && binop == o.binop &&
         unop == o.unop && pred == o.pred && callee == o.callee && labels == o.labels;
}

const BasicBlock *Function::find_block(std::string_view label) const {
  int idx = block_index(label);
  return idx < 0 ? nullptr : &blocks[static_cast<std::size_t>(idx)];
}

int Function::block_index(std::string_view label) const {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].label == label)
      return static_cast<int>(i);
  return -1;
}

std::vector<const Instruction *> Function::allocas() const {
  std::vector<const Instruction *> out;
  for (const auto &bb : blocks)
    for (const auto &inst : bb.instructions)
      if (inst.op == Opcode::AllocaStatic || inst.op == Opcode::AllocaDynamic)
        out.push_back(&inst);
  return out;
}

const Instruction *Function::find_alloca(std::string_view object) const {
  for (const auto *a : allocas())
    if (a->object == object)
      return a;
  return nullptr;
}

std::size_t Function::instruction_count() const {
  std::size_t n = 0;
  for (const auto &bb : blocks)
    n += bb.instructions.size();
  return n;
}

bool Function::operator==(const Function &o) const {
  return name == o.name && params == o.params && blocks == o.blocks &&
         is_taint_source == o.is_taint_source;
}

const Function *Program::find_function(std::string_view name) const {
  for (const auto &f : functions)
    if (f.name == name)
      return &f;
  return nullptr;
}

Function *Program::find_function(std::string_view name) {
  for (auto &f : functions)
    if (f.name == name)
      return &f;
  return nullptr;
}

int Program::function_index(std::string_view name) const {
  for (std::size_t i = 0; i < functions.size(); ++i)
    if (functions[i].name == name)
      return static_cast<int>(i);
  return -1;
}

const GlobalDef *Program::find_global(std::string_view name) const {
  for (const auto &g : globals)
    if (g.name == name)
      return &g;
  return nullptr;
}

bool Program::is_extern(std::string_view name) const {
  return std::find(externs.begin(), externs.end(), name) != externs.end();
}

bool is_terminator(Opcode op) {
  return op == Opcode::Branch || op == Opcode::CondBranch || op == Opcode::Return ||
         op == Opcode::StackChkFail;
}

std::string_view opcode_name(Opcode op) {
  switch (op) {
  case Opcode::AllocaStatic: return "alloca";
  case Opcode::AllocaDynamic: return "alloca_dyn";
  case Opcode::Load: return "load";
  case Opcode::Store: return "store";
  case Opcode::Copy: return "copy";
  case Opcode::BinOp: return "binop";
  case Opcode::UnOp: return "unop";
  case Opcode::Cmp: return "cmp";
  case Opcode::AddrOf: return "addrof";
  case Opcode::PtrAdd: return "ptradd";
  case Opcode::PtrToInt: return "ptrtoint";
  case Opcode::IntToPtr: return "inttoptr";
  case Opcode::Phi: return "phi";
  case Opcode::Select: return "select";
  case Opcode::Call: return "call";
  case Opcode::Input: return "input";
  case Opcode::Output: return "output";
  case Opcode::AtomicRMW: return "atomicrmw";
  case Opcode::Spawn: return "spawn";
  case Opcode::Join: return "join";
  case Opcode::SetJmp: return "setjmp";
  case Opcode::LongJmp: return "longjmp";
  case Opcode::UncleanTop: return "unclean.top";
  case Opcode::UncleanSetTop: return "unclean.settop";
  case Opcode::StackChkFail: return "stack_chk_fail";
  case Opcode::Branch: return "br";
  case Opcode::CondBranch: return "condbr";
  case Opcode::Return: return "ret";
  }
  return "?";
}

namespace {
constexpr std::array<std::string_view, 10> kBinNames = {"add", "sub", "mul", "sdiv", "srem",
                                                        "and", "or",  "xor", "shl",  "shr"};
constexpr std::array<std::string_view, 3> kUnNames = {"neg", "not", "abs"};
constexpr std::array<std::string_view, 6> kCmpNames = {"eq", "ne", "lt", "le", "gt", "ge"};
} // namespace

std::string_view binop_name(BinaryOp op) { return kBinNames[static_cast<std::size_t>(op)]; }
std::string_view unop_name(UnaryOp op) { return kUnNames[static_cast<std::size_t>(op)]; }
std::string_view cmp_name(CmpPred p) { return kCmpNames[static_cast<std::size_t>(p)]; }

std::optional<BinaryOp> parse_binop(std::string_view s) {
  for (std::size_t i = 0; i < kBinNames.size(); ++i)
    if (kBinNames[i] == s)
      return static_cast<BinaryOp>(i);
  return std::nullopt;
}

std::optional<UnaryOp> parse_unop(std::string_view s) {
  for (std::size_t i = 0; i < kUnNames.size(); ++i)
    if (kUnNames[i] == s)
      return static_cast<UnaryOp>(i);
  return std::nullopt;
}

std::optional<CmpPred> parse_cmp(std::string_view s) {
  for (std::size_t i = 0; i < kCmpNames.size(); ++i)
    if (kCmpNames[i] == s)
      return static_cast<CmpPred>(i);
  return std::nullopt;
}

std::vector<std::size_t> address_operand_indices(const Instruction &inst) {
  switch (inst.op) {
  case Opcode::Load:
  case Opcode::Store:
  case Opcode::PtrAdd:
  case Opcode::AtomicRMW:
  case Opcode::SetJmp:
  case Opcode::LongJmp:
    return {0};
  case Opcode::Copy:
    return {0, 1};
  default:
    return {};
  }
}

namespace make {

Instruction alloca_static(std::string object, std::int64_t size, std::int64_t align, bool is_array,
                          bool contains_array) {
  Instruction i;
  i.op = Opcode::AllocaStatic;
  i.object = std::move(object);
  i.size = size;
  i.align = align;
  i.is_array = is_array;
  i.contains_array = contains_array;
  return i;
}

Instruction alloca_dynamic(std::string object, Operand size) {
  Instruction i;
  i.op = Opcode::AllocaDynamic;
  i.object = std::move(object);
  i.operands = {std::move(size)};
  i.align = 16;
  return i;
}

Instruction load(std::string dst, Operand addr, std::int64_t size) {
  Instruction i;
  i.op = Opcode::Load;
  i.dst = std::move(dst);
  i.operands = {std::move(addr)};
  i.size = size;
  return i;
}

Instruction store(Operand addr, Operand value, std::int64_t size) {
  Instruction i;
  i.op = Opcode::Store;
  i.operands = {std::move(addr), std::move(value)};
  i.size = size;
  return i;
}

Instruction copy(Operand dst, Operand src, Operand len) {
  Instruction i;
  i.op = Opcode::Copy;
  i.operands = {std::move(dst), std::move(src), std::move(len)};
  return i;
}

Instruction binop(std::string dst, BinaryOp op, Operand lhs, Operand rhs) {
  Instruction i;
  i.op = Opcode::BinOp;
  i.dst = std::move(dst);
  i.binop = op;
  i.operands = {std::move(lhs), std::move(rhs)};
  return i;
}

Instruction unop(std::string dst, UnaryOp op, Operand x) {
  Instruction i;
  i.op = Opcode::UnOp;
  i.dst = std::move(dst);
  i.unop = op;
  i.operands = {std::move(x)};
  return i;
}

Instruction cmp(std::string dst, CmpPred p, Operand lhs, Operand rhs) {
  Instruction i;
  i.op = Opcode::Cmp;
  i.dst = std::move(dst);
  i.pred = p;
  i.operands = {std::move(lhs), std::move(rhs)};
  return i;
}

Instruction addr_of(std::string dst, std::string object, bool global) {
  Instruction i;
  i.op = Opcode::AddrOf;
  i.dst = std::move(dst);
  i.object = std::move(object);
  i.object_is_global = global;
  return i;
}

Instruction ptr_add(std::string dst, Operand base, Operand offset) {
  Instruction i;
  i.op = Opcode::PtrAdd;
  i.dst = std::move(dst);
  i.operands = {std::move(base), std::move(offset)};
  return i;
}

Instruction ptr_to_int(std::string dst, Operand x) {
  Instruction i;
  i.op = Opcode::PtrToInt;
  i.dst = std::move(dst);
  i.operands = {std::move(x)};
  return i;
}

Instruction int_to_ptr(std::string dst, Operand x) {
  Instruction i;
  i.op = Opcode::IntToPtr;
  i.dst = std::move(dst);
  i.operands = {std::move(x)};
  return i;
}

Instruction phi(std::string dst, std::vector<std::pair<Operand, std::string>> incoming) {
  Instruction i;
  i.op = Opcode::Phi;
  i.dst = std::move(dst);
  for (auto &[val, label] : incoming) {
    i.operands.push_back(std::move(val));
    i.labels.push_back(std::move(label));
  }
  return i;
}

Instruction select(std::string dst, Operand cond, Operand a, Operand b) {
  Instruction i;
  i.op = Opcode::Select;
  i.dst = std::move(dst);
  i.operands = {std::move(cond), std::move(a), std::move(b)};
  return i;
}

Instruction call(std::string dst, std::string callee, std::vector<Operand> args) {
  Instruction i;
  i.op = Opcode::Call;
  i.dst = std::move(dst);
  i.callee = std::move(callee);
  i.operands = std::move(args);
  return i;
}

Instruction input(std::string dst, std::int64_t nbytes) {
  Instruction i;
  i.op = Opcode::Input;
  i.dst = std::move(dst);
  i.size = nbytes;
  return i;
}

Instruction output(Operand x) {
  Instruction i;
  i.op = Opcode::Output;
  i.operands = {std::move(x)};
  return i;
}

Instruction atomic_rmw(std::string dst, Operand addr, Operand value) {
  Instruction i;
  i.op = Opcode::AtomicRMW;
  i.dst = std::move(dst);
  i.operands = {std::move(addr), std::move(value)};
  i.size = 8;
  return i;
}

Instruction spawn(std::string dst, std::string callee, std::vector<Operand> args) {
  Instruction i = call(std::move(dst), std::move(callee), std::move(args));
  i.op = Opcode::Spawn;
  return i;
}

Instruction join(Operand tid) {
  Instruction i;
  i.op = Opcode::Join;
  i.operands = {std::move(tid)};
  return i;
}

Instruction set_jmp(std::string dst, Operand buf) {
  Instruction i;
  i.op = Opcode::SetJmp;
  i.dst = std::move(dst);
  i.operands = {std::move(buf)};
  return i;
}

Instruction long_jmp(Operand buf, Operand value) {
  Instruction i;
  i.op = Opcode::LongJmp;
  i.operands = {std::move(buf), std::move(value)};
  return i;
}

Instruction unclean_top(std::string dst) {
  Instruction i;
  i.op = Opcode::UncleanTop;
  i.dst = std::move(dst);
  return i;
}

Instruction unclean_set_top(Operand top) {
  Instruction i;
  i.op = Opcode::UncleanSetTop;
  i.operands = {std::move(top)};
  return i;
}

Instruction stack_chk_fail() {
  Instruction i;
  i.op = Opcode::StackChkFail;
  return i;
}

Instruction br(std::string target) {
  Instruction i;
  i.op = Opcode::Branch;
  i.labels = {std::move(target)};
  return i;
}

Instruction cond_br(Operand cond, std::string then_label, std::string else_label) {
  Instruction i;
  i.op = Opcode::CondBranch;
  i.operands = {std::move(cond)};
  i.labels = {std::move(then_label), std::move(else_label)};
  return i;
}

Instruction ret() {
  Instruction i;
  i.op = Opcode::Return;
  return i;
}

Instruction ret(Operand value) {
  Instruction i;
  i.op = Opcode::Return;
  i.operands = {std::move(value)};
  return i;
}

} // namespace make

} // namespace cleanstack
