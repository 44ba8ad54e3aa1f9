//===- heuristic.hpp - Structural identification of unclean objects ------===//
//
// Marks stack objects that are likely to hold or propagate externally
// controlled data, without any dataflow: arrays, structures containing
// arrays, and objects whose address is taken in one of the risky ways
// (stored, used atomically, cast to an integer, passed to a call, escaping
// through a return or jump buffer, used in non-constant pointer arithmetic,
// or merged by a phi).
//
//===----------------------------------------------------------------------===//
#pragma once

#include "cleanstack/cfg.hpp"
#include "cleanstack/classification.hpp"

#include <string>
#include <vector>

namespace cleanstack {

ObjectClassification classify_heuristic(const Function &f);
inline ObjectClassification classify_heuristic(const Function &f, const CFG &) {
  return classify_heuristic(f);
}

struct DivergenceReport {
  std::string function;
  std::vector<std::string> heuristic_only;
  std::vector<std::string> taint_only;
  std::size_t agree_unclean = 0;
  std::size_t agree_clean = 0;

  bool empty() const { return heuristic_only.empty() && taint_only.empty(); }
};

DivergenceReport compare_methods(const Function &f, const ObjectClassification &heuristic,
                                 const ObjectClassification &taint);

} // namespace cleanstack
