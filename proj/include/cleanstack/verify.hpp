#pragma once

#include "cleanstack/ir.hpp"

#include <string>
#include <vector>

namespace cleanstack {

struct Violation {
  std::string function; // empty for module-level problems
  std::string block;
  int index = -1;       // instruction index within the block, -1 if n/a
  std::string message;
  SourceSpan span;
};

using VerifyReport = std::vector<Violation>;

/// Checks SSA, terminator, reference and size rules. Never throws; an empty
/// report means the program is valid.
VerifyReport verify_program(const Program &p);

std::string format_violation(const Violation &v);

/// Thrown by stages that require verified input.
class VerifyError : public Error {
public:
  explicit VerifyError(VerifyReport report);
  const VerifyReport &report() const { return report_; }

private:
  VerifyReport report_;
};

/// Throws VerifyError when `p` has violations.
void require_valid(const Program &p);

} // namespace cleanstack
