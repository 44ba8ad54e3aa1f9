#pragma once

#include "cleanstack/ir.hpp"

#include <compare>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace cleanstack {

/// Where an address value may point, as far as intra-procedural derivation
/// (AddrOf, PtrAdd, Phi, Select) can tell.
struct MemRoot {
  enum class Kind { Object, Global, Param, Unknown };

  Kind kind = Kind::Unknown;
  std::string name;
  int index = -1; // parameter position for Kind::Param

  static MemRoot object(std::string n) { return {Kind::Object, std::move(n), -1}; }
  static MemRoot global(std::string n) { return {Kind::Global, std::move(n), -1}; }
  static MemRoot param(int i) { return {Kind::Param, {}, i}; }
  static MemRoot unknown() { return {Kind::Unknown, {}, -1}; }

  auto operator<=>(const MemRoot &) const = default;
};

struct AddressFlow {
  std::map<std::string, std::set<MemRoot>> roots;
  /// Byte offset from the single root, when every step is a constant.
  std::map<std::string, std::optional<std::int64_t>> offset;
  /// Objects whose derived address leaves the function's direct control:
  /// stored to memory, converted to an integer, passed to a call, returned
  /// or handed to longjmp.
  std::set<std::string> escaped_objects;

  /// Roots of an operand; literals and unknown names map to {Unknown}.
  const std::set<MemRoot> &roots_of(const Operand &op) const;
  std::optional<std::int64_t> offset_of(const Operand &op) const;
};

AddressFlow compute_address_flow(const Function &f);

} // namespace cleanstack
