//===- frontend.hpp - .cir text format ------------------------------------===//
//
// Line-oriented textual form of the IR. One instruction per line, blocks
// introduced by "label:", values "%name", stack objects "%obj.name", globals
// "@name", comments start with '#'. Integer literals are signed 64-bit
// decimal. The printer emits the canonical form (LF line endings) and
// parse_module(print_module(p)) is structurally equal to p.
//
//===----------------------------------------------------------------------===//
#pragma once

#include "cleanstack/ir.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace cleanstack {

struct Diagnostic {
  enum class Kind { Lexical, Syntax, Duplicate, Unresolved, Semantic };

  Kind kind = Kind::Syntax;
  SourceSpan span;
  std::string message;
};

std::string format_diagnostic(const Diagnostic &d);

class ParseError : public Error {
public:
  explicit ParseError(std::vector<Diagnostic> diags);
  const std::vector<Diagnostic> &diagnostics() const { return diags_; }

private:
  std::vector<Diagnostic> diags_;
};

/// Parses and verifies a module. Throws ParseError carrying one diagnostic
/// per problem; the returned program always passes verify_program.
Program parse_module(std::string_view text, std::string file = "<input>");

/// Reads `path` and parses it.
Program parse_file(const std::string &path);

std::string print_module(const Program &p);
std::string print_function(const Function &f);
std::string print_instruction(const Instruction &inst);

} // namespace cleanstack
