//===- vm.hpp - Dual-region stack machine ---------------------------------===//
//
// Executes baseline or protected programs over a flat 64-bit address space:
//
//   0x400000 + i*0x10000     code addresses of function i (entry at +0,
//                            return sites at +node+1)
//   0x10000000               globals
//   0x3000_0000_0000 + ...   unclean stacks, one per thread, 4 GiB apart
//   0x7f00_0000_0000 - ...   clean stacks, one per thread, 4 GiB apart
//
// Each stack has a guard range at both ends. Return addresses and saved frame
// pointers live in the clean stack; the VM keeps a private shadow of every
// return address to report corruption without influencing execution.
// Memory carries a taint bit per byte, registers a taint flag.
//
//===----------------------------------------------------------------------===//
#pragma once

#include "cleanstack/cfg.hpp"
#include "cleanstack/ir.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cleanstack {

inline constexpr std::uint64_t kCodeBase = 0x400000;
inline constexpr std::uint64_t kCodeStride = 0x10000;
inline constexpr std::uint64_t kExitAddress = 0x3ff000;
inline constexpr std::uint64_t kGlobalsBase = 0x10000000;
inline constexpr std::uint64_t kUncleanBase = 0x300000000000;
inline constexpr std::uint64_t kCleanTop = 0x7f0000000000;
inline constexpr std::uint64_t kThreadStride = 0x100000000;

enum class TrapKind { GuardPageFault, CanaryMismatch, InvalidAccess, DivByZero };
enum class RunStatus { Exited, Trapped, StepLimit };

std::string_view trap_name(TrapKind k);
std::string_view status_name(RunStatus s);

struct VmConfig {
  std::uint64_t seed = 0; // canary value
  std::int64_t clean_stack_size = 1 << 20;
  std::int64_t unclean_stack_size = 1 << 20;
  std::int64_t guard_page_size = 4096;
  std::uint64_t step_limit = 10'000'000;
  /// Bytes above the entry frame of every thread (argv/environment area).
  std::int64_t startup_reserve = 256;
  std::size_t max_threads = 64;

  void validate() const;
};

enum class RegionKind { Globals, CleanStack, UncleanStack, Guard };
std::string_view region_name(RegionKind k);

struct Region {
  RegionKind kind = RegionKind::Globals;
  std::uint64_t base = 0;
  std::uint64_t size = 0;
  int thread = -1;

  std::uint64_t end() const { return base + size; }
  bool contains(std::uint64_t a) const { return a >= base && a < end(); }
};

struct Fault {
  TrapKind kind = TrapKind::InvalidAccess;
  std::uint64_t address = 0;
};

/// Sparse byte-addressable memory with per-byte taint. Only mapped non-guard
/// regions are accessible.
class Memory {
public:
  /// Throws Error when the new region overlaps an existing one.
  void map(const Region &r);
  /// Removes the region starting at `base` and its contents.
  void unmap(std::uint64_t base);
  const Region *region_of(std::uint64_t addr) const;
  const std::map<std::uint64_t, Region> &regions() const { return regions_; }

  /// A guard byte anywhere in [addr, addr+len) yields GuardPageFault (at the
  /// first such byte); otherwise the first unmapped byte yields InvalidAccess.
  std::optional<Fault> check(std::uint64_t addr, std::uint64_t len) const;

  std::uint8_t read_byte(std::uint64_t a) const;
  bool taint_of(std::uint64_t a) const;
  void write_byte(std::uint64_t a, std::uint8_t v, bool taint);

  /// Tainted byte ranges [begin, end), ascending and coalesced.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> tainted_ranges() const;

private:
  struct Page {
    std::uint8_t data[4096] = {};
    std::uint8_t taint[4096] = {};
  };
  std::map<std::uint64_t, Region> regions_;
  std::unordered_map<std::uint64_t, std::unique_ptr<Page>> pages_;
  mutable std::uint64_t cached_no_ = ~0ULL;
  mutable Page *cached_ = nullptr;

  Page *page(std::uint64_t a, bool create) const;
};

/// Address ranges of the stacks of one thread.
struct ThreadRegions {
  Region clean, clean_guard_low, clean_guard_high;
  Region unclean, unclean_guard_low, unclean_guard_high;
};

ThreadRegions thread_regions(int tid, const VmConfig &config);

/// Memory with the main thread's stacks and guards installed.
Memory init_memory(const VmConfig &config);

struct Trap {
  TrapKind kind = TrapKind::InvalidAccess;
  std::uint64_t address = 0;
  std::string function;
  std::string block;
  int index = -1;
  int thread = 0;
  std::string message;
};

struct TopEvent {
  int thread = 0;
  std::uint64_t top = 0;
};

struct RunOutcome {
  RunStatus status = RunStatus::Exited;
  std::int64_t exit_code = 0;
  std::optional<Trap> trap;
  std::vector<std::int64_t> outputs;
  std::uint64_t dynamic_instructions = 0;
  bool ra_corrupted = false;
  /// Function entered through a corrupted return address.
  std::string hijack_target;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> dynamic_taint;
  /// (function, object) pairs that ever received a tainted byte.
  std::set<std::pair<std::string, std::string>> tainted_objects;
  std::size_t isolation_violations = 0;
  /// Thread chosen at each scheduling point, in order.
  std::vector<int> schedule;
  /// Every unclean top change, in order.
  std::vector<TopEvent> unclean_top_trace;
  std::vector<std::string> warnings;

  /// 0 normal exit, 2 trapped, 3 step limit.
  int vm_exit_code() const;
};

/// Runs `p` (which must verify). Taint-source globals are filled from the
/// head of `input`; Input instructions consume the rest.
RunOutcome run_program(const Program &p, const std::vector<std::uint8_t> &input,
                       const VmConfig &config = {});

std::uint64_t canary_value(std::uint64_t seed);

/// Where a clean frame keeps things, relative to its top (the caller's stack
/// pointer at the call), for a top aligned to every object's alignment.
struct CleanFrameLayout {
  std::map<std::string, std::int64_t> objects; // static allocas only
  std::int64_t return_address = -8;
  std::int64_t saved_frame_pointer = -16;
  std::int64_t stack_pointer = -16;
};

CleanFrameLayout clean_frame_layout(const Function &f);

/// Code address of a function's entry.
std::uint64_t function_address(const Program &p, std::string_view function);

} // namespace cleanstack
