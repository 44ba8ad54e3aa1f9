// Shared test helpers: fixture access, CLI driver, a random program
// generator, and oracles independent of the code under test.
#pragma once

#include "cleanstack/cfg.hpp"
#include "cleanstack/ir.hpp"
#include "cleanstack/taint.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cstest {

using namespace cleanstack;

std::string fixture_path(const std::string &name);
std::string read_file(const std::string &path);
Program load_fixture(const std::string &name);
/// Every .cir fixture at the top of the fixture directory, sorted.
std::vector<std::string> fixture_names();

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

/// Runs the CLI with `args`; `env` entries are set for the child only.
CliResult run_cli(const std::vector<std::string> &args,
                  const std::map<std::string, std::string> &env = {},
                  const std::string &stdin_text = {});

struct GenOptions {
  int max_blocks = 8;
  int max_instructions = 30; // whole module
  bool loops = true;
  bool calls = true;
  bool dynamic = true;
  bool input_global = true;
};

struct Generated {
  std::string text;
  Program program;
  std::vector<std::uint8_t> input;
};

/// A verified program whose behaviour does not depend on where stack
/// objects live: every access is in bounds, memory is initialised before
/// it is read, loops are bounded and no address value reaches an output
/// or a branch.
Generated random_program(std::uint64_t seed, const GenOptions &opts = {});

/// Round-robin chaotic iteration of gen/kill transfer until nothing
/// changes, visiting nodes in an order shuffled by `order_seed` each sweep.
std::vector<NodeState> chaotic_fixpoint(const Function &f, const CFG &cfg, const TaintContext &ctx,
                                        const FactSet &seeds, std::uint64_t order_seed);

/// Placement of objects in an unclean frame by direct packing, used to
/// enumerate permutations without the layout code.
struct PackObject {
  std::string name;
  std::int64_t size = 8;
  std::int64_t align = 8;
};

/// Offsets of `order` packed upward from 0, with an 8-byte canary inserted
/// before element `canary_pos` (canary_pos == order.size() puts it last).
std::map<std::string, std::int64_t> pack(const std::vector<PackObject> &order,
                                         std::size_t canary_pos);

struct Enumeration {
  std::size_t hits = 0;
  std::size_t total = 0;
  double rate() const { return total ? static_cast<double>(hits) / total : 0.0; }
};

/// Over all permutations (and canary positions when randomized), counts the
/// arrangements where target - buffer == delta.
Enumeration enumerate_single_guess(const std::vector<PackObject> &objects,
                                   const std::string &buffer, const std::string &target,
                                   std::int64_t delta, bool canary_randomized);

/// Least-squares fit y = a + b x; returns {a, b, r^2}.
struct LinearFit {
  double intercept = 0, slope = 0, r2 = 0;
};
LinearFit fit_line(const std::vector<double> &x, const std::vector<double> &y);

} // namespace cstest
