//===- transform.hpp - Dual-stack instrumentation -------------------------===//
//
// Rewrites a classified program into its protected form. Unclean objects of
// each function move into a frame on the per-thread unclean stack (which
// grows downward); their order inside the frame is a seeded shuffle. A canary
// copied from @__stack_chk_guard sits next to the frame base and is checked
// before every return. setjmp sites reload the unclean top.
//
// Pseudo-ops used by the rewritten code:
//   %t = unclean.top        current unclean stack top of the running thread
//   unclean.settop %t       set it
//   stack_chk_fail          terminate with a canary mismatch
//
//===----------------------------------------------------------------------===//
#pragma once

#include "cleanstack/cfg.hpp"
#include "cleanstack/classification.hpp"
#include "cleanstack/taint.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace cleanstack {

inline constexpr std::int64_t kPageSize = 4096;

struct InstrumentationConfig {
  Method method = Method::Heuristic;
  std::uint64_t seed = 0;
  bool canary_randomized = false;
  std::int64_t unclean_stack_size = 1 << 20;
  std::int64_t guard_page_size = kPageSize;
  bool protect = true;
  TaintConfig taint;

  /// Throws Error unless sizes are positive page multiples.
  void validate() const;
};

struct LayoutObject {
  std::string name;
  std::int64_t size = 0;
  std::int64_t align = 8;
};

struct LayoutSlot {
  std::string object;
  std::int64_t offset = 0;
  std::int64_t size = 0;
  std::int64_t align = 8;

  bool operator==(const LayoutSlot &) const = default;
};

/// Offsets grow from the low end of the frame; frame_size is the distance
/// from the frame's low end to the unclean top at function entry.
struct FrameLayout {
  std::vector<LayoutSlot> slots; // in permuted (ascending offset) order
  std::int64_t canary_slot = 0;
  std::int64_t frame_size = 0;
  std::vector<std::string> permutation;
  std::uint64_t seed = 0;

  const LayoutSlot *find(std::string_view object) const;
  bool operator==(const FrameLayout &) const = default;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view s);
/// Layout seed of one function, derived from the build seed.
std::uint64_t function_seed(std::uint64_t seed, std::string_view function);

/// Uniform integer in [0, n) from a 64-bit Mersenne Twister, by rejection.
class SeededRng {
public:
  explicit SeededRng(std::uint64_t seed);
  std::uint64_t next();
  std::uint64_t below(std::uint64_t n);

private:
  std::mt19937_64 engine_;
};

/// Seeded shuffle of `objects` and greedy offset assignment. An empty object
/// list yields a canary-only frame. Throws Error when the frame does not fit
/// in `unclean_stack_size`.
FrameLayout compute_layout(const std::vector<LayoutObject> &objects, std::uint64_t seed,
                           bool canary_randomized,
                           std::int64_t unclean_stack_size = 1 << 20);

struct UncleanPartition {
  std::vector<std::string> clean;
  std::vector<std::string> unclean;
};

UncleanPartition select_unclean_objects(const Function &f, const ObjectClassification &c,
                                        const InstrumentationConfig &config);

/// setjmp sites, in block order.
std::vector<NodeRef> mark_stack_restore_points(const Function &f);

/// Classifies every function under `method`.
ProgramClassification classify_program(const Program &p, Method method,
                                       const TaintConfig &taint = {});

struct FunctionInstrumentation {
  std::string function;
  std::size_t unclean_objects = 0;
  std::size_t static_unclean = 0;
  std::size_t dynamic_unclean = 0;
  std::size_t restore_points = 0;
  bool has_frame = false;
  FrameLayout layout;
};

struct InstrumentationStats {
  std::size_t total_functions = 0;
  std::size_t unclean_functions = 0;
  std::size_t unclean_allocas_total = 0;
  std::vector<FunctionInstrumentation> functions; // program order

  const FunctionInstrumentation *find(std::string_view fn) const;
};

struct InstrumentResult {
  Program program;
  InstrumentationStats stats;
};

/// Full per-function pipeline. protect=off returns `p` unchanged with the
/// stats it would have produced.
InstrumentResult instrument_program(const Program &p, const ProgramClassification &classes,
                                    const InstrumentationConfig &config);

/// Classifies with config.method, then instruments.
InstrumentResult instrument_program(const Program &p, const InstrumentationConfig &config);

} // namespace cleanstack
