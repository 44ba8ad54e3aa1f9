#pragma once

#include "cleanstack/ir.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace cleanstack {

enum class ReasonCode {
  IsArray,
  StructContainsArray,
  AddrStored,
  AtomicNewVal,
  AddrPtrToInt,
  AddrPassedToCall,
  AddrEscapesControlFlow,
  ComplexPtrOp,
  PhiPropagated,
  TaintReached,
};

std::string_view reason_name(ReasonCode r);

/// How unclean objects are identified.
enum class Method { Taint, Heuristic, Union };

std::string_view method_name(Method m);
std::optional<Method> parse_method(std::string_view s);

struct ObjectLabel {
  std::string object;
  bool unclean = false;
  std::set<ReasonCode> reasons; // nonempty iff unclean
  bool dynamic = false;
  std::int64_t size = 0; // 0 for dynamic objects
  SourceSpan span;
};

/// Every stack object of one function, in allocation order.
struct ObjectClassification {
  std::string function;
  std::vector<ObjectLabel> objects;

  const ObjectLabel *find(std::string_view object) const;
  bool is_unclean(std::string_view object) const;
  std::vector<std::string> unclean_objects() const;
  std::size_t unclean_count() const;
};

using ProgramClassification = std::map<std::string, ObjectClassification>;

/// Union of two classifications of the same function; reasons are merged.
ObjectClassification merge_classifications(const ObjectClassification &a,
                                           const ObjectClassification &b);

} // namespace cleanstack
