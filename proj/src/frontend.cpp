#include "cleanstack/frontend.hpp"

#include "cleanstack/verify.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace cleanstack {

namespace {

constexpr std::string_view kObjPrefix = "obj.";

struct Token {
  enum class Kind { Ident, Value, Global, Int, Punct, End };

  Kind kind = Kind::End;
  std::string text; // identifier / name without sigil / punct char
  std::int64_t num = 0;
  int column = 1;
  int length = 0;
};

bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

class LineParser {
public:
  LineParser(std::string_view line, int lineno, const std::string &file)
      : lineno_(lineno), file_(file) {
    tokenize(line);
  }

  SourceSpan span_at(const Token &t) const { return {file_, lineno_, t.column, t.length}; }
  SourceSpan line_span() const {
    int len = toks_.empty() ? 0 : toks_.back().column + toks_.back().length - 1;
    return {file_, lineno_, toks_.empty() ? 1 : toks_.front().column, len};
  }

  bool empty() const { return toks_.size() == 1; }
  const Token &peek(std::size_t ahead = 0) const {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }
  bool at_end() const { return peek().kind == Token::Kind::End; }

  [[noreturn]] void fail(const Token &t, const std::string &msg,
                         Diagnostic::Kind kind = Diagnostic::Kind::Syntax) const {
    throw ParseError({{kind, span_at(t), msg}});
  }

  const Token &next() {
    const Token &t = peek();
    if (pos_ < toks_.size() - 1)
      ++pos_;
    return t;
  }

  bool accept_punct(char c) {
    if (peek().kind == Token::Kind::Punct && peek().text[0] == c) {
      next();
      return true;
    }
    return false;
  }

  void expect_punct(char c) {
    if (!accept_punct(c))
      fail(peek(), std::string("expected '") + c + "'" + found());
  }

  bool accept_ident(std::string_view word) {
    if (peek().kind == Token::Kind::Ident && peek().text == word) {
      next();
      return true;
    }
    return false;
  }

  std::string expect_ident(const char *what) {
    if (peek().kind != Token::Kind::Ident)
      fail(peek(), std::string("expected ") + what + found());
    return next().text;
  }

  std::int64_t expect_int(const char *what) {
    if (peek().kind != Token::Kind::Int)
      fail(peek(), std::string("expected ") + what + found());
    return next().num;
  }

  std::string expect_value(const char *what) {
    if (peek().kind != Token::Kind::Value)
      fail(peek(), std::string("expected ") + what + found());
    return next().text;
  }

  Operand operand() {
    const Token &t = peek();
    if (t.kind == Token::Kind::Value) {
      if (t.text.rfind(kObjPrefix, 0) == 0)
        fail(t, "stack object %" + t.text + " cannot be used as a value; take its address with addrof");
      next();
      return Operand::value(t.text);
    }
    if (t.kind == Token::Kind::Int) {
      next();
      return Operand::constant(t.num);
    }
    fail(t, "expected operand" + found());
  }

  void expect_end() {
    if (!at_end())
      fail(peek(), "unexpected trailing input" + found());
  }

  std::string found() const {
    const Token &t = peek();
    switch (t.kind) {
    case Token::Kind::End: return ", found end of line";
    case Token::Kind::Value: return ", found '%" + t.text + "'";
    case Token::Kind::Global: return ", found '@" + t.text + "'";
    default: return ", found '" + t.text + "'";
    }
  }

private:
  void tokenize(std::string_view line) {
    std::size_t i = 0;
    while (i < line.size()) {
      char c = line[i];
      int col = static_cast<int>(i) + 1;
      if (c == '#')
        break;
      if (c == ' ' || c == '\t' || c == '\r') {
        ++i;
        continue;
      }
      Token t;
      t.column = col;
      if (c == '%' || c == '@') {
        std::size_t j = i + 1;
        while (j < line.size() && is_ident_char(line[j]))
          ++j;
        if (j == i + 1)
          throw ParseError({{Diagnostic::Kind::Lexical, {file_, lineno_, col, 1},
                             std::string("expected a name after '") + c + "'"}});
        t.kind = c == '%' ? Token::Kind::Value : Token::Kind::Global;
        t.text = std::string(line.substr(i + 1, j - i - 1));
        t.length = static_cast<int>(j - i);
        i = j;
      } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                 (c == '-' && i + 1 < line.size() &&
                  std::isdigit(static_cast<unsigned char>(line[i + 1])))) {
        std::size_t j = i + 1;
        while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j])))
          ++j;
        std::int64_t v = 0;
        auto res = std::from_chars(line.data() + i, line.data() + j, v);
        if (res.ec != std::errc())
          throw ParseError({{Diagnostic::Kind::Lexical,
                             {file_, lineno_, col, static_cast<int>(j - i)},
                             "integer literal out of signed 64-bit range"}});
        if (j < line.size() && is_ident_char(line[j]))
          throw ParseError({{Diagnostic::Kind::Lexical, {file_, lineno_, col, 1},
                             "malformed integer literal"}});
        t.kind = Token::Kind::Int;
        t.num = v;
        t.text = std::string(line.substr(i, j - i));
        t.length = static_cast<int>(j - i);
        i = j;
      } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        std::size_t j = i;
        while (j < line.size() && is_ident_char(line[j]))
          ++j;
        t.kind = Token::Kind::Ident;
        t.text = std::string(line.substr(i, j - i));
        t.length = static_cast<int>(j - i);
        i = j;
      } else if (std::string_view("=,()[]:{}").find(c) != std::string_view::npos) {
        t.kind = Token::Kind::Punct;
        t.text = std::string(1, c);
        t.length = 1;
        ++i;
      } else {
        throw ParseError({{Diagnostic::Kind::Lexical, {file_, lineno_, col, 1},
                           std::string("unexpected character '") + c + "'"}});
      }
      toks_.push_back(std::move(t));
    }
    Token end;
    end.kind = Token::Kind::End;
    end.column = static_cast<int>(line.size()) + 1;
    toks_.push_back(end);
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int lineno_;
  const std::string &file_;
};

class ModuleParser {
public:
  ModuleParser(std::string_view text, std::string file) : text_(text), file_(std::move(file)) {}

  Program parse() {
    int lineno = 0;
    std::size_t start = 0;
    while (start <= text_.size()) {
      std::size_t end = text_.find('\n', start);
      if (end == std::string_view::npos)
        end = text_.size();
      ++lineno;
      LineParser lp(text_.substr(start, end - start), lineno, file_);
      if (!lp.empty())
        handle_line(lp);
      if (end == text_.size())
        break;
      start = end + 1;
    }
    if (in_function_) {
      Token t;
      t.column = 1;
      throw ParseError({{Diagnostic::Kind::Syntax, fn_.span,
                         "function '" + fn_.name + "' is missing its closing '}'"}});
    }
    return std::move(prog_);
  }

private:
  void handle_line(LineParser &lp) {
    if (in_function_) {
      if (lp.accept_punct('}')) {
        lp.expect_end();
        finish_function(lp);
        return;
      }
      // "label:"
      if (lp.peek().kind == Token::Kind::Ident && lp.peek(1).kind == Token::Kind::Punct &&
          lp.peek(1).text == ":") {
        const Token &lt = lp.next();
        lp.next();
        lp.expect_end();
        if (!labels_.insert(lt.text).second)
          lp.fail(lt, "duplicate definition of block label '" + lt.text + "'",
                  Diagnostic::Kind::Duplicate);
        fn_.blocks.push_back({lt.text, {}});
        return;
      }
      if (fn_.blocks.empty())
        lp.fail(lp.peek(), "instruction outside of a block; start the body with a label");
      fn_.blocks.back().instructions.push_back(parse_instruction(lp));
      return;
    }

    const Token &kw = lp.peek();
    if (lp.accept_ident("entry")) {
      prog_.entry = lp.expect_ident("entry function name");
      lp.expect_end();
    } else if (lp.accept_ident("extern")) {
      prog_.externs.push_back(lp.expect_ident("extern function name"));
      lp.expect_end();
    } else if (lp.accept_ident("global")) {
      parse_global(lp);
    } else if (lp.accept_ident("func")) {
      parse_function_header(lp, kw);
    } else {
      lp.fail(kw, "expected 'func', 'global', 'extern' or 'entry'" + lp.found());
    }
  }

  void parse_global(LineParser &lp) {
    const Token &nt = lp.peek();
    if (nt.kind != Token::Kind::Global)
      lp.fail(nt, "expected global name '@name'" + lp.found());
    lp.next();
    GlobalDef g;
    g.name = nt.text;
    g.size = lp.expect_int("global size in bytes");
    while (!lp.at_end()) {
      if (lp.accept_ident("init"))
        g.init = lp.expect_int("initializer");
      else if (lp.accept_ident("input"))
        g.is_taint_source = true;
      else if (lp.accept_ident("canary"))
        g.is_canary = true;
      else
        lp.fail(lp.peek(), "unknown global attribute" + lp.found());
    }
    if (!globals_.insert(g.name).second)
      lp.fail(nt, "duplicate definition of global @" + g.name, Diagnostic::Kind::Duplicate);
    prog_.globals.push_back(std::move(g));
  }

  void parse_function_header(LineParser &lp, const Token &kw) {
    fn_ = Function{};
    fn_.span = lp.span_at(kw);
    const Token &nt = lp.peek();
    fn_.name = lp.expect_ident("function name");
    if (!functions_.insert(fn_.name).second)
      lp.fail(nt, "duplicate definition of function '" + fn_.name + "'",
              Diagnostic::Kind::Duplicate);
    values_.clear();
    objects_.clear();
    labels_.clear();
    lp.expect_punct('(');
    if (!lp.accept_punct(')')) {
      do {
        const Token &pt = lp.peek();
        Param param;
        param.name = lp.expect_value("parameter name");
        lp.expect_punct(':');
        std::string ty = lp.expect_ident("parameter type");
        if (ty == "i64")
          param.type = ValueType::Int64;
        else if (ty == "ptr")
          param.type = ValueType::Addr;
        else
          lp.fail(pt, "unknown parameter type '" + ty + "' (expected i64 or ptr)");
        define_value(lp, pt, param.name);
        fn_.params.push_back(std::move(param));
      } while (lp.accept_punct(','));
      lp.expect_punct(')');
    }
    if (lp.accept_ident("source"))
      fn_.is_taint_source = true;
    lp.expect_punct('{');
    if (lp.accept_punct('}')) {
      lp.expect_end();
      finish_function(lp);
      return;
    }
    lp.expect_end();
    in_function_ = true;
  }

  void finish_function(LineParser &) {
    in_function_ = false;
    prog_.functions.push_back(std::move(fn_));
  }

  void define_value(LineParser &lp, const Token &t, const std::string &name) {
    if (name.rfind(kObjPrefix, 0) == 0)
      lp.fail(t, "value names may not start with 'obj.'");
    if (!values_.insert(name).second)
      lp.fail(t, "duplicate definition of value %" + name, Diagnostic::Kind::Duplicate);
  }

  std::string object_name(LineParser &lp, const Token &t) {
    if (t.kind != Token::Kind::Value || t.text.rfind(kObjPrefix, 0) != 0 ||
        t.text.size() == kObjPrefix.size())
      lp.fail(t, "expected stack object '%obj.name'" + lp.found());
    return t.text.substr(kObjPrefix.size());
  }

  std::vector<Operand> call_args(LineParser &lp) {
    std::vector<Operand> args;
    lp.expect_punct('(');
    if (!lp.accept_punct(')')) {
      do
        args.push_back(lp.operand());
      while (lp.accept_punct(','));
      lp.expect_punct(')');
    }
    return args;
  }

  Instruction parse_instruction(LineParser &lp) {
    const Token first = lp.peek();
    SourceSpan span = lp.line_span();
    std::optional<Token> dst_tok;
    if (first.kind == Token::Kind::Value && lp.peek(1).kind == Token::Kind::Punct &&
        lp.peek(1).text == "=") {
      dst_tok = lp.next();
      lp.next();
    }
    const Token &opt = lp.peek();
    std::string opname = lp.expect_ident("instruction");
    Instruction inst;
    inst.span = span;

    auto need_dst = [&](bool required) {
      if (required && !dst_tok)
        lp.fail(opt, "'" + opname + "' must define a value");
      if (!required && dst_tok)
        lp.fail(*dst_tok, "'" + opname + "' does not produce a value");
    };
    auto set_dst = [&]() {
      if (dst_tok) {
        define_value(lp, *dst_tok, dst_tok->text);
        inst.dst = dst_tok->text;
      }
    };

    if (opname == "alloca" || opname == "alloca_dyn") {
      if (!dst_tok)
        lp.fail(opt, "'" + opname + "' must name a stack object");
      inst.object = object_name(lp, *dst_tok);
      if (!objects_.insert(inst.object).second)
        lp.fail(*dst_tok, "duplicate definition of stack object %obj." + inst.object,
                Diagnostic::Kind::Duplicate);
      if (opname == "alloca") {
        inst.op = Opcode::AllocaStatic;
        inst.size = lp.expect_int("alloca size");
        inst.align = 8;
        while (lp.accept_punct(',')) {
          if (lp.accept_ident("align"))
            inst.align = lp.expect_int("alignment");
          else if (lp.accept_ident("array"))
            inst.is_array = true;
          else if (lp.accept_ident("struct"))
            inst.contains_array = true;
          else
            lp.fail(lp.peek(), "unknown alloca attribute" + lp.found());
        }
      } else {
        inst.op = Opcode::AllocaDynamic;
        inst.align = 16;
        inst.operands.push_back(lp.operand());
        if (lp.accept_punct(',')) {
          if (!lp.accept_ident("align"))
            lp.fail(lp.peek(), "expected 'align'" + lp.found());
          inst.align = lp.expect_int("alignment");
        }
      }
      lp.expect_end();
      return inst;
    }

    if (auto b = parse_binop(opname)) {
      need_dst(true);
      inst.op = Opcode::BinOp;
      inst.binop = *b;
      inst.operands.push_back(lp.operand());
      lp.expect_punct(',');
      inst.operands.push_back(lp.operand());
    } else if (auto u = parse_unop(opname)) {
      need_dst(true);
      inst.op = Opcode::UnOp;
      inst.unop = *u;
      inst.operands.push_back(lp.operand());
    } else if (opname == "cmp") {
      need_dst(true);
      inst.op = Opcode::Cmp;
      const Token &pt = lp.peek();
      auto p = parse_cmp(lp.expect_ident("comparison predicate"));
      if (!p)
        lp.fail(pt, "unknown comparison predicate '" + pt.text + "'");
      inst.pred = *p;
      inst.operands.push_back(lp.operand());
      lp.expect_punct(',');
      inst.operands.push_back(lp.operand());
    } else if (opname == "load") {
      need_dst(true);
      inst.op = Opcode::Load;
      inst.size = lp.expect_int("access width");
      lp.expect_punct(',');
      inst.operands.push_back(lp.operand());
    } else if (opname == "store") {
      need_dst(false);
      inst.op = Opcode::Store;
      inst.size = lp.expect_int("access width");
      lp.expect_punct(',');
      inst.operands.push_back(lp.operand());
      lp.expect_punct(',');
      inst.operands.push_back(lp.operand());
    } else if (opname == "copy") {
      need_dst(false);
      inst.op = Opcode::Copy;
      for (int k = 0; k < 3; ++k) {
        if (k)
          lp.expect_punct(',');
        inst.operands.push_back(lp.operand());
      }
    } else if (opname == "addrof") {
      need_dst(true);
      inst.op = Opcode::AddrOf;
      const Token &ot = lp.next();
      if (ot.kind == Token::Kind::Global) {
        inst.object = ot.text;
        inst.object_is_global = true;
      } else {
        inst.object = object_name(lp, ot);
      }
    } else if (opname == "ptradd") {
      need_dst(true);
      inst.op = Opcode::PtrAdd;
      inst.operands.push_back(lp.operand());
      lp.expect_punct(',');
      inst.operands.push_back(lp.operand());
    } else if (opname == "ptrtoint" || opname == "inttoptr") {
      need_dst(true);
      inst.op = opname == "ptrtoint" ? Opcode::PtrToInt : Opcode::IntToPtr;
      inst.operands.push_back(lp.operand());
    } else if (opname == "phi") {
      need_dst(true);
      inst.op = Opcode::Phi;
      do {
        lp.expect_punct('[');
        inst.operands.push_back(lp.operand());
        lp.expect_punct(',');
        inst.labels.push_back(lp.expect_ident("incoming block label"));
        lp.expect_punct(']');
      } while (lp.accept_punct(','));
    } else if (opname == "select") {
      need_dst(true);
      inst.op = Opcode::Select;
      for (int k = 0; k < 3; ++k) {
        if (k)
          lp.expect_punct(',');
        inst.operands.push_back(lp.operand());
      }
    } else if (opname == "call" || opname == "spawn") {
      inst.op = opname == "call" ? Opcode::Call : Opcode::Spawn;
      if (inst.op == Opcode::Spawn)
        need_dst(true);
      inst.callee = lp.expect_ident("callee name");
      inst.operands = call_args(lp);
    } else if (opname == "input") {
      need_dst(true);
      inst.op = Opcode::Input;
      inst.size = lp.expect_int("input width");
    } else if (opname == "output") {
      need_dst(false);
      inst.op = Opcode::Output;
      inst.operands.push_back(lp.operand());
    } else if (opname == "atomicrmw") {
      need_dst(true);
      inst.op = Opcode::AtomicRMW;
      inst.size = 8;
      inst.operands.push_back(lp.operand());
      lp.expect_punct(',');
      inst.operands.push_back(lp.operand());
    } else if (opname == "join") {
      need_dst(false);
      inst.op = Opcode::Join;
      inst.operands.push_back(lp.operand());
    } else if (opname == "setjmp") {
      need_dst(true);
      inst.op = Opcode::SetJmp;
      inst.operands.push_back(lp.operand());
    } else if (opname == "longjmp") {
      need_dst(false);
      inst.op = Opcode::LongJmp;
      inst.operands.push_back(lp.operand());
      lp.expect_punct(',');
      inst.operands.push_back(lp.operand());
    } else if (opname == "unclean.top") {
      need_dst(true);
      inst.op = Opcode::UncleanTop;
    } else if (opname == "unclean.settop") {
      need_dst(false);
      inst.op = Opcode::UncleanSetTop;
      inst.operands.push_back(lp.operand());
    } else if (opname == "stack_chk_fail") {
      need_dst(false);
      inst.op = Opcode::StackChkFail;
    } else if (opname == "br") {
      need_dst(false);
      inst.op = Opcode::Branch;
      inst.labels.push_back(lp.expect_ident("branch target"));
    } else if (opname == "condbr") {
      need_dst(false);
      inst.op = Opcode::CondBranch;
      inst.operands.push_back(lp.operand());
      lp.expect_punct(',');
      inst.labels.push_back(lp.expect_ident("branch target"));
      lp.expect_punct(',');
      inst.labels.push_back(lp.expect_ident("branch target"));
    } else if (opname == "ret") {
      need_dst(false);
      inst.op = Opcode::Return;
      if (!lp.at_end())
        inst.operands.push_back(lp.operand());
    } else {
      lp.fail(opt, "unknown instruction '" + opname + "'");
    }
    lp.expect_end();
    set_dst();
    return inst;
  }

  std::string_view text_;
  std::string file_;
  Program prog_;
  Function fn_;
  bool in_function_ = false;
  std::set<std::string> functions_, globals_, values_, objects_, labels_;
};

Diagnostic::Kind classify_violation(const std::string &msg) {
  if (msg.find("more than once") != std::string::npos)
    return Diagnostic::Kind::Duplicate;
  if (msg.find("undefined") != std::string::npos || msg.find("unknown") != std::string::npos ||
      msg.find("undeclared") != std::string::npos || msg.find("not found") != std::string::npos)
    return Diagnostic::Kind::Unresolved;
  return Diagnostic::Kind::Semantic;
}

} // namespace

std::string format_diagnostic(const Diagnostic &d) {
  static constexpr const char *kinds[] = {"lexical error", "syntax error", "duplicate definition",
                                          "unresolved reference", "error"};
  std::ostringstream os;
  os << d.span.file << ":" << d.span.line << ":" << d.span.column << ": "
     << kinds[static_cast<int>(d.kind)] << ": " << d.message;
  return os.str();
}

namespace {
std::string join_diags(const std::vector<Diagnostic> &ds) {
  std::string s;
  for (const auto &d : ds) {
    if (!s.empty())
      s += "\n";
    s += format_diagnostic(d);
  }
  return s;
}
} // namespace

ParseError::ParseError(std::vector<Diagnostic> diags)
    : Error(join_diags(diags)), diags_(std::move(diags)) {}

Program parse_module(std::string_view text, std::string file) {
  Program p = ModuleParser(text, file).parse();
  auto report = verify_program(p);
  if (!report.empty()) {
    std::vector<Diagnostic> diags;
    for (auto &v : report) {
      SourceSpan span = v.span;
      if (span.file.empty())
        span.file = file;
      diags.push_back({classify_violation(v.message), span, format_violation(Violation{
                                                              v.function, v.block, v.index,
                                                              v.message, {}})});
    }
    throw ParseError(std::move(diags));
  }
  return p;
}

Program parse_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_module(ss.str(), path);
}

//===----------------------------------------------------------------------===//
// Printer
//===----------------------------------------------------------------------===//

namespace {

std::string op_str(const Operand &o) {
  return o.is_value() ? "%" + o.name : std::to_string(o.imm);
}

std::string join_ops(const std::vector<Operand> &ops) {
  std::string s;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (i)
      s += ", ";
    s += op_str(ops[i]);
  }
  return s;
}

} // namespace

std::string print_instruction(const Instruction &inst) {
  std::string s;
  if (!inst.dst.empty())
    s = "%" + inst.dst + " = ";
  const auto &ops = inst.operands;
  switch (inst.op) {
  case Opcode::AllocaStatic:
    s = "%obj." + inst.object + " = alloca " + std::to_string(inst.size) + ", align " +
        std::to_string(inst.align);
    if (inst.is_array)
      s += ", array";
    if (inst.contains_array)
      s += ", struct";
    return s;
  case Opcode::AllocaDynamic:
    return "%obj." + inst.object + " = alloca_dyn " + op_str(ops.at(0)) + ", align " +
           std::to_string(inst.align);
  case Opcode::Load:
    return s + "load " + std::to_string(inst.size) + ", " + op_str(ops.at(0));
  case Opcode::Store:
    return "store " + std::to_string(inst.size) + ", " + join_ops(ops);
  case Opcode::BinOp:
    return s + std::string(binop_name(inst.binop)) + " " + join_ops(ops);
  case Opcode::UnOp:
    return s + std::string(unop_name(inst.unop)) + " " + join_ops(ops);
  case Opcode::Cmp:
    return s + "cmp " + std::string(cmp_name(inst.pred)) + " " + join_ops(ops);
  case Opcode::AddrOf:
    return s + "addrof " + (inst.object_is_global ? "@" : "%obj.") + inst.object;
  case Opcode::Phi: {
    s += "phi ";
    for (std::size_t i = 0; i < ops.size(); ++i) {
      if (i)
        s += ", ";
      s += "[" + op_str(ops[i]) + ", " + inst.labels.at(i) + "]";
    }
    return s;
  }
  case Opcode::Call:
  case Opcode::Spawn:
    return s + std::string(opcode_name(inst.op)) + " " + inst.callee + "(" + join_ops(ops) + ")";
  case Opcode::Input:
    return s + "input " + std::to_string(inst.size);
  case Opcode::Branch:
    return "br " + inst.labels.at(0);
  case Opcode::CondBranch:
    return "condbr " + op_str(ops.at(0)) + ", " + inst.labels.at(0) + ", " + inst.labels.at(1);
  default:
    s += std::string(opcode_name(inst.op));
    if (!ops.empty())
      s += " " + join_ops(ops);
    return s;
  }
}

std::string print_function(const Function &f) {
  std::string s = "func " + f.name + "(";
  for (std::size_t i = 0; i < f.params.size(); ++i) {
    if (i)
      s += ", ";
    s += "%" + f.params[i].name + ": " + (f.params[i].type == ValueType::Addr ? "ptr" : "i64");
  }
  s += ")";
  if (f.is_taint_source)
    s += " source";
  s += " {\n";
  for (const auto &bb : f.blocks) {
    s += bb.label + ":\n";
    for (const auto &inst : bb.instructions)
      s += "  " + print_instruction(inst) + "\n";
  }
  s += "}\n";
  return s;
}

std::string print_module(const Program &p) {
  std::string s = "entry " + p.entry + "\n";
  for (const auto &e : p.externs)
    s += "extern " + e + "\n";
  for (const auto &g : p.globals) {
    s += "global @" + g.name + " " + std::to_string(g.size);
    if (g.init)
      s += " init " + std::to_string(*g.init);
    if (g.is_taint_source)
      s += " input";
    if (g.is_canary)
      s += " canary";
    s += "\n";
  }
  for (const auto &f : p.functions)
    s += "\n" + print_function(f);
  return s;
}

} // namespace cleanstack
