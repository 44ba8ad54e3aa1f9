//===- ir.hpp - Mini SSA intermediate representation ---------------------===//
//
// The program representation every stage of the pipeline operates on: a
// closed-world module of functions made of basic blocks, one instruction per
// CFG node. Values are SSA names ("%x"), stack objects are named allocas
// ("%obj.x") and globals are "@x". Only three semantic types exist (int64,
// addr, none); byte sizes are explicit on allocas, loads and stores.
//
//===----------------------------------------------------------------------===//
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cleanstack {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class ValueType { Int64, Addr, None };

enum class Opcode {
  AllocaStatic,
  AllocaDynamic,
  Load,
  Store,
  Copy,
  BinOp,
  UnOp,
  Cmp,
  AddrOf,
  PtrAdd,
  PtrToInt,
  IntToPtr,
  Phi,
  Select,
  Call,
  Input,
  Output,
  AtomicRMW,
  Spawn,
  Join,
  SetJmp,
  LongJmp,
  // Pseudo-ops emitted by the dual-stack transform.
  UncleanTop,
  UncleanSetTop,
  StackChkFail,
  // Terminators.
  Branch,
  CondBranch,
  Return,
};

enum class BinaryOp { Add, Sub, Mul, SDiv, SRem, And, Or, Xor, Shl, Shr };
enum class UnaryOp { Neg, Not, Abs };
enum class CmpPred { Eq, Ne, Lt, Le, Gt, Ge };

struct SourceSpan {
  std::string file;
  int line = 1;
  int column = 1;
  int length = 0;
};

/// An instruction operand: an SSA value reference or a signed 64-bit literal.
struct Operand {
  enum class Kind { Value, Const };

  Kind kind = Kind::Const;
  std::string name;
  std::int64_t imm = 0;

  static Operand value(std::string name) { return {Kind::Value, std::move(name), 0}; }
  static Operand constant(std::int64_t v) { return {Kind::Const, {}, v}; }

  bool is_value() const { return kind == Kind::Value; }
  bool is_const() const { return kind == Kind::Const; }

  friend bool operator==(const Operand &, const Operand &) = default;
};

/// One IR instruction. The meaning of `operands` depends on `op`:
///
///   AllocaStatic   object, size, align, is_array, contains_array
///   AllocaDynamic  object, operands = {size}
///   Load           dst, operands = {addr}, size
///   Store          operands = {addr, value}, size
///   Copy           operands = {dst addr, src addr, len}
///   BinOp/Cmp      dst, operands = {lhs, rhs}
///   UnOp/PtrToInt/IntToPtr  dst, operands = {x}
///   AddrOf         dst, object (global when object_is_global)
///   PtrAdd         dst, operands = {base, offset}
///   Phi            dst, operands[i] flows in from labels[i]
///   Select         dst, operands = {cond, a, b}
///   Call/Spawn     dst (optional for Call), callee, operands = args
///   Input          dst, size = bytes read (1..8)
///   Output         operands = {x}
///   AtomicRMW      dst (old value), operands = {addr, new value}
///   Join           operands = {thread id}
///   SetJmp         dst, operands = {jmp buf addr}
///   LongJmp        operands = {jmp buf addr, value}
///   UncleanTop     dst
///   UncleanSetTop  operands = {new top}
///   Branch         labels = {target}
///   CondBranch     operands = {cond}, labels = {then, else}
///   Return         operands = {} or {value}
struct Instruction {
  Opcode op = Opcode::Return;
  std::string dst;
  std::vector<Operand> operands;
  std::string object;
  bool object_is_global = false;
  std::int64_t size = 0;
  std::int64_t align = 0;
  bool is_array = false;
  bool contains_array = false;
  BinaryOp binop = BinaryOp::Add;
  UnaryOp unop = UnaryOp::Neg;
  CmpPred pred = CmpPred::Eq;
  std::string callee;
  std::vector<std::string> labels;
  SourceSpan span;

  /// Structural equality; source spans are not part of the structure.
  bool operator==(const Instruction &other) const;
};

struct BasicBlock {
  std::string label;
  std::vector<Instruction> instructions;

  bool operator==(const BasicBlock &) const = default;
};

struct Param {
  std::string name;
  ValueType type = ValueType::Int64;

  bool operator==(const Param &) const = default;
};

struct Function {
  std::string name;
  std::vector<Param> params;
  std::vector<BasicBlock> blocks;
  bool is_taint_source = false;
  SourceSpan span;

  const BasicBlock *find_block(std::string_view label) const;
  int block_index(std::string_view label) const;
  /// Every AllocaStatic / AllocaDynamic instruction in block order.
  std::vector<const Instruction *> allocas() const;
  const Instruction *find_alloca(std::string_view object) const;
  std::size_t instruction_count() const;

  bool operator==(const Function &other) const;
};

struct GlobalDef {
  std::string name;
  std::int64_t size = 8;
  std::optional<std::int64_t> init;
  bool is_taint_source = false;
  /// Holds the per-run stack canary (the _stack_chk_guard analogue).
  bool is_canary = false;

  bool operator==(const GlobalDef &) const = default;
};

struct Program {
  std::vector<GlobalDef> globals;
  std::vector<std::string> externs;
  std::vector<Function> functions;
  std::string entry = "main";

  const Function *find_function(std::string_view name) const;
  Function *find_function(std::string_view name);
  int function_index(std::string_view name) const;
  const GlobalDef *find_global(std::string_view name) const;
  bool is_extern(std::string_view name) const;

  bool operator==(const Program &) const = default;
};

inline constexpr std::string_view kCanaryGlobal = "__stack_chk_guard";

bool is_terminator(Opcode op);
std::string_view opcode_name(Opcode op);
std::string_view binop_name(BinaryOp op);
std::string_view unop_name(UnaryOp op);
std::string_view cmp_name(CmpPred p);
std::optional<BinaryOp> parse_binop(std::string_view s);
std::optional<UnaryOp> parse_unop(std::string_view s);
std::optional<CmpPred> parse_cmp(std::string_view s);

/// Operands that are addresses (must not be literals).
std::vector<std::size_t> address_operand_indices(const Instruction &inst);

//===----------------------------------------------------------------------===//
// Construction helpers
//===----------------------------------------------------------------------===//

namespace make {

inline Operand v(std::string name) { return Operand::value(std::move(name)); }
inline Operand c(std::int64_t imm) { return Operand::constant(imm); }

Instruction alloca_static(std::string object, std::int64_t size, std::int64_t align = 8,
                          bool is_array = false, bool contains_array = false);
Instruction alloca_dynamic(std::string object, Operand size);
Instruction load(std::string dst, Operand addr, std::int64_t size = 8);
Instruction store(Operand addr, Operand value, std::int64_t size = 8);
Instruction copy(Operand dst, Operand src, Operand len);
Instruction binop(std::string dst, BinaryOp op, Operand lhs, Operand rhs);
Instruction unop(std::string dst, UnaryOp op, Operand x);
Instruction cmp(std::string dst, CmpPred p, Operand lhs, Operand rhs);
Instruction addr_of(std::string dst, std::string object, bool global = false);
Instruction ptr_add(std::string dst, Operand base, Operand offset);
Instruction ptr_to_int(std::string dst, Operand x);
Instruction int_to_ptr(std::string dst, Operand x);
Instruction phi(std::string dst, std::vector<std::pair<Operand, std::string>> incoming);
Instruction select(std::string dst, Operand cond, Operand a, Operand b);
Instruction call(std::string dst, std::string callee, std::vector<Operand> args);
Instruction input(std::string dst, std::int64_t nbytes = 8);
Instruction output(Operand x);
Instruction atomic_rmw(std::string dst, Operand addr, Operand value);
Instruction spawn(std::string dst, std::string callee, std::vector<Operand> args);
Instruction join(Operand tid);
Instruction set_jmp(std::string dst, Operand buf);
Instruction long_jmp(Operand buf, Operand value);
Instruction unclean_top(std::string dst);
Instruction unclean_set_top(Operand top);
Instruction stack_chk_fail();
Instruction br(std::string target);
Instruction cond_br(Operand cond, std::string then_label, std::string else_label);
Instruction ret();
Instruction ret(Operand value);

} // namespace make

} // namespace cleanstack
