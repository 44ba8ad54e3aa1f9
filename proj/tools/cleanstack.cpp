// cleanstack - parse, analyze, classify, instrument, run and attack .cir modules.
//
// Exit status: 0 success, 1 usage, 2 parse/verify/analysis failure,
// 3 runtime trap or step limit in `run`.

#include "cleanstack/frontend.hpp"
#include "cleanstack/harness.hpp"
#include "cleanstack/heuristic.hpp"
#include "cleanstack/report.hpp"
#include "cleanstack/taint.hpp"
#include "cleanstack/transform.hpp"
#include "cleanstack/verify.hpp"
#include "cleanstack/vm.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef CLEANSTACK_DEFAULT_MANIFEST
#define CLEANSTACK_DEFAULT_MANIFEST "fixtures/manifest.json"
#endif

using namespace cleanstack;

namespace {

struct Options {
  std::vector<std::string> inputs;
  std::string method = "heuristic";
  std::optional<std::uint64_t> seed;
  std::string protect = "on";
  bool canary_randomized = false;
  bool json = false;
  std::uint64_t step_limit = 10'000'000;
  std::size_t trials = 1;
  unsigned jobs = 1;
  bool no_entry_taint = false;

  std::string output;
  std::string layout_out;
  std::string input_file;
  std::string input_segments;
  std::string manifest = CLEANSTACK_DEFAULT_MANIFEST;
  std::string scenario;
  bool baseline = false;
  bool per_trial = false;

  std::optional<double> unclean_fraction;
  std::optional<double> avg_objects;
};

struct UsageError : Error {
  using Error::Error;
};

struct RuntimeFailure {
  int code;
};

std::uint64_t resolve_seed(const Options &o) {
  if (o.seed)
    return *o.seed;
  if (const char *env = std::getenv("CLEANSTACK_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const std::uint64_t v = std::stoull(env, &used, 0);
      if (used == std::string_view(env).size())
        return v;
    } catch (const std::exception &) {
    }
    throw UsageError(std::string("CLEANSTACK_SEED is not an unsigned integer: ") + env);
  }
  return 0;
}

Method resolve_method(const Options &o) {
  auto m = parse_method(o.method);
  if (!m)
    throw UsageError("--method must be taint, heuristic or union");
  return *m;
}

std::string read_text(const std::string &path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw UsageError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw UsageError("cannot write '" + path + "'");
  out << text;
}

Program load(const std::string &path) {
  Program p = parse_module(read_text(path), path);
  require_valid(p);
  return p;
}

const std::string &single_input(const Options &o) {
  if (o.inputs.size() != 1)
    throw UsageError("expected exactly one input module");
  return o.inputs.front();
}

InstrumentationConfig instrumentation_config(const Options &o) {
  InstrumentationConfig c;
  c.method = resolve_method(o);
  c.seed = resolve_seed(o);
  c.canary_randomized = o.canary_randomized;
  c.taint.taint_entry_params = !o.no_entry_taint;
  if (o.protect == "on")
    c.protect = true;
  else if (o.protect == "off")
    c.protect = false;
  else
    throw UsageError("--protect must be on or off");
  return c;
}

void emit(const Json &j) { std::cout << j.dump(2) << "\n"; }

int cmd_parse(const Options &o) {
  const std::string &path = single_input(o);
  Program p = parse_module(read_text(path), path);
  const VerifyReport r = verify_program(p);
  if (o.json) {
    emit(parse_report(p, r));
  } else {
    for (const auto &v : r)
      std::cerr << format_violation(v) << "\n";
    if (r.empty())
      std::cout << print_module(p);
  }
  return r.empty() ? 0 : 2;
}

int cmd_analyze(const Options &o) {
  const Program p = load(single_input(o));
  TaintConfig tc;
  tc.taint_entry_params = !o.no_entry_taint;
  const TaintResult r = analyze_program(p, tc);
  if (o.json) {
    emit(taint_report(p, r));
    return 0;
  }
  for (const auto &f : p.functions) {
    auto it = r.tainted_objects.find(f.name);
    std::cout << f.name << ":";
    if (it != r.tainted_objects.end())
      for (const auto &obj : it->second)
        std::cout << " " << obj;
    std::cout << "\n";
  }
  for (const auto &w : r.warnings)
    std::cerr << "warning: " << w << "\n";
  return 0;
}

int cmd_classify(const Options &o) {
  const Program p = load(single_input(o));
  const Method m = resolve_method(o);
  TaintConfig tc;
  tc.taint_entry_params = !o.no_entry_taint;
  const ProgramClassification h = classify_program(p, Method::Heuristic, tc);
  const ProgramClassification t = classify_program(p, Method::Taint, tc);
  const ProgramClassification c = m == Method::Heuristic ? h
                                   : m == Method::Taint  ? t
                                                         : classify_program(p, Method::Union, tc);
  std::vector<DivergenceReport> div;
  for (const auto &f : p.functions)
    div.push_back(compare_methods(f, h.at(f.name), t.at(f.name)));
  if (o.json) {
    emit(classification_report(p, m, c, div));
    return 0;
  }
  for (const auto &f : p.functions) {
    for (const auto &obj : c.at(f.name).objects) {
      std::cout << f.name << "." << obj.object << " " << (obj.unclean ? "unclean" : "clean");
      const char *sep = " ";
      for (ReasonCode rc : obj.reasons) {
        std::cout << sep << reason_name(rc);
        sep = ",";
      }
      std::cout << "\n";
    }
  }
  for (const auto &d : div) {
    for (const auto &x : d.heuristic_only)
      std::cout << "divergence " << d.function << "." << x << " heuristic-only\n";
    for (const auto &x : d.taint_only)
      std::cout << "divergence " << d.function << "." << x << " taint-only\n";
  }
  return 0;
}

int cmd_instrument(const Options &o) {
  const Program p = load(single_input(o));
  const InstrumentationConfig c = instrumentation_config(o);
  const InstrumentResult r = instrument_program(p, c);
  const std::string text = print_module(r.program);
  const Json sidecar = layout_sidecar(c, r.stats);
  if (!o.output.empty())
    write_text(o.output, text);
  if (!o.layout_out.empty())
    write_text(o.layout_out, sidecar.dump(2) + "\n");
  if (o.json) {
    Json j{{"schema", "cleanstack.instrument/1"}, {"layout", sidecar}};
    if (o.output.empty())
      j["module"] = text;
    else
      j["output"] = o.output;
    emit(j);
  } else if (o.output.empty()) {
    std::cout << text;
  }
  return 0;
}

std::vector<std::uint8_t> run_input(const Options &o) {
  if (!o.input_file.empty() && !o.input_segments.empty())
    throw UsageError("--input and --input-json are exclusive");
  if (!o.input_segments.empty())
    return encode_input(o.input_segments);
  if (!o.input_file.empty()) {
    const std::string s = read_text(o.input_file);
    return {s.begin(), s.end()};
  }
  return {};
}

int cmd_run(const Options &o) {
  const Program p = load(single_input(o));
  const InstrumentationConfig c = instrumentation_config(o);
  VmConfig vc;
  vc.seed = c.seed;
  vc.step_limit = o.step_limit;
  vc.unclean_stack_size = c.unclean_stack_size;
  vc.guard_page_size = c.guard_page_size;
  const auto input = run_input(o);
  const Program exe = c.protect ? instrument_program(p, c).program : p;
  const RunOutcome r = run_program(exe, input, vc);
  if (o.json) {
    Json j = run_trace(r);
    j["protected"] = c.protect;
    j["seed"] = c.seed;
    emit(j);
  } else {
    for (std::int64_t v : r.outputs)
      std::cout << v << "\n";
    for (const auto &w : r.warnings)
      std::cerr << "warning: " << w << "\n";
    std::cerr << "status: " << status_name(r.status);
    if (r.trap)
      std::cerr << " (" << trap_name(r.trap->kind) << " at 0x" << std::hex << r.trap->address
                << std::dec << " in " << r.trap->function << ": " << r.trap->message << ")";
    std::cerr << ", exit " << r.exit_code << ", " << r.dynamic_instructions
              << " instructions\n";
  }
  return r.status == RunStatus::Exited ? 0 : 3;
}

int cmd_attack(const Options &o) {
  if (o.scenario.empty())
    throw UsageError("--scenario is required");
  if (o.trials == 0)
    throw UsageError("--trials must be positive");
  const Manifest m = load_manifest(o.manifest);
  const Scenario &sc = m.scenario(o.scenario);
  InstrumentationConfig c = instrumentation_config(o);
  const Build build = o.baseline ? Build::Baseline : Build::Protected;
  const std::uint64_t seed = c.seed;
  if (o.trials == 1) {
    const AttackOutcome a = run_scenario(sc, build, seed, c);
    if (o.json) {
      Json j{{"schema", "cleanstack.attack/1"},
             {"scenario", sc.name},
             {"class", attack_class_name(sc.attack_class)},
             {"build", build_name(build)}};
      j["outcome"] = outcome_json(a, true);
      emit(j);
    } else {
      std::cout << sc.name << " " << build_name(build) << " seed " << seed << ": "
                << (a.success ? "success" : "failure (" + std::string(failure_name(a.failure)) + ")")
                << "\n";
    }
    return 0;
  }
  const MonteCarloResult r = monte_carlo(sc, build, o.trials, seed, c, o.jobs);
  if (o.json) {
    emit(experiment_report(sc, build, r, seed, c, o.per_trial));
  } else {
    std::cout << sc.name << " " << build_name(build) << ": " << r.successes << "/" << r.trials
              << " rate " << r.rate << " [" << r.ci_low << ", " << r.ci_high << "]\n";
    for (const auto &[k, n] : r.failures)
      std::cout << "  " << failure_name(k) << " " << n << "\n";
  }
  return 0;
}

int cmd_stats(const Options &o) {
  const bool direct = o.unclean_fraction || o.avg_objects;
  if (direct) {
    if (!o.unclean_fraction || !o.avg_objects || !o.inputs.empty())
      throw UsageError("--unclean-fraction and --avg-objects go together, without modules");
    const double f = *o.unclean_fraction, a = *o.avg_objects;
    if (f < 0 || f > 1 || a < 0)
      throw UsageError("fraction must be in [0, 1] and average non-negative");
    const double p = analytic_success_probability(f, a, o.canary_randomized);
    if (o.json) {
      emit(Json{{"schema", "cleanstack.stats/1"},
                {"unclean_fraction", f},
                {"avg_unclean_objects", a},
                {"canary_randomized", o.canary_randomized},
                {"analytic_success_probability", p},
                {"analytic_fixed_canary", analytic_success_probability(f, a, false)},
                {"analytic_randomized_canary", analytic_success_probability(f, a, true)}});
    } else {
      std::cout << "analytic success probability " << p * 100 << "%\n";
    }
    return 0;
  }
  if (o.inputs.empty())
    throw UsageError("stats needs modules or --unclean-fraction/--avg-objects");
  const InstrumentationConfig c = instrumentation_config(o);
  ProgramStats total;
  total.cross_checked = true;
  for (const auto &path : o.inputs) {
    const Program p = load(path);
    const InstrumentResult r = instrument_program(p, c);
    const ProgramStats s = collect_stats(p, print_module(r.program), r.stats);
    total.total_functions += s.total_functions;
    total.unclean_functions += s.unclean_functions;
    total.unclean_allocas_total += s.unclean_allocas_total;
    total.cross_checked = total.cross_checked && s.cross_checked;
  }
  if (o.json) {
    Json j = stats_json(total, o.canary_randomized);
    j["modules"] = o.inputs;
    emit(j);
  } else {
    std::cout << "functions " << total.total_functions << ", unclean " << total.unclean_functions
              << ", unclean objects " << total.unclean_allocas_total << "\n"
              << "fraction " << total.unclean_fraction() << ", average "
              << total.avg_unclean_objects() << "\n"
              << "analytic success probability "
              << analytic_success_probability(total, o.canary_randomized) * 100 << "%\n";
  }
  return 0;
}

void report_error(const Options &o, const std::string &kind, const std::string &msg,
                  const Json &detail = nullptr) {
  if (o.json) {
    Json j{{"schema", "cleanstack.error/1"}, {"error", kind}, {"message", msg}};
    if (!detail.is_null())
      j["details"] = detail;
    emit(j);
  } else {
    std::cerr << "cleanstack: " << msg << "\n";
  }
}

} // namespace

int main(int argc, char **argv) {
  Options o;
  CLI::App app{"CleanStack pipeline over .cir modules", "cleanstack"};
  app.require_subcommand(1);

  auto add_common = [&](CLI::App *sub, bool modules) {
    if (modules)
      sub->add_option("inputs", o.inputs, ".cir modules ('-' for stdin)");
    sub->add_flag("--json", o.json, "machine-readable output");
  };
  auto add_build = [&](CLI::App *sub) {
    sub->add_option("--method", o.method, "taint | heuristic | union")->capture_default_str();
    sub->add_option("--seed", o.seed, "layout and canary seed (default $CLEANSTACK_SEED, then 0)");
    sub->add_option("--protect", o.protect, "on | off")->capture_default_str();
    sub->add_flag("--canary-randomized", o.canary_randomized, "place the canary among the objects");
    sub->add_flag("--no-entry-taint", o.no_entry_taint, "entry parameters are not taint sources");
  };

  auto *parse = app.add_subcommand("parse", "verify a module and print it canonically");
  add_common(parse, true);
  auto *analyze = app.add_subcommand("analyze", "taint analysis report");
  add_common(analyze, true);
  analyze->add_flag("--no-entry-taint", o.no_entry_taint, "entry parameters are not taint sources");
  auto *classify = app.add_subcommand("classify", "unclean object classification");
  add_common(classify, true);
  classify->add_option("--method", o.method, "taint | heuristic | union")->capture_default_str();
  classify->add_flag("--no-entry-taint", o.no_entry_taint, "entry parameters are not taint sources");
  auto *instrument = app.add_subcommand("instrument", "emit the protected module");
  add_common(instrument, true);
  add_build(instrument);
  instrument->add_option("-o,--output", o.output, "module output path (default stdout)");
  instrument->add_option("--layout", o.layout_out, "layout sidecar output path");
  auto *run = app.add_subcommand("run", "execute a module");
  add_common(run, true);
  add_build(run);
  run->get_option("--protect")->default_str("off");
  run->add_option("--input", o.input_file, "raw input stream file");
  run->add_option("--input-json", o.input_segments, "input stream as JSON segments");
  run->add_option("--step-limit", o.step_limit)->capture_default_str();
  auto *attack = app.add_subcommand("attack", "run an attack scenario");
  add_common(attack, false);
  add_build(attack);
  attack->add_option("--manifest", o.manifest)->capture_default_str();
  attack->add_option("--scenario", o.scenario, "scenario name")->required();
  attack->add_option("--trials", o.trials, "fresh-seed trials")->capture_default_str();
  attack->add_option("--jobs", o.jobs, "parallel trials")->check(CLI::Range(1u, 256u));
  auto *bsel = attack->add_option_group("build");
  bsel->add_flag("--baseline", o.baseline, "attack the unprotected build");
  bool protected_flag = false;
  bsel->add_flag("--protected", protected_flag, "attack the protected build (default)");
  bsel->require_option(0, 1);
  attack->add_flag("--per-trial", o.per_trial, "include per-trial outcomes in JSON");
  auto *stats = app.add_subcommand("stats", "program statistics and analytic success probability");
  add_common(stats, true);
  add_build(stats);
  stats->add_option("--unclean-fraction", o.unclean_fraction, "use this fraction instead of modules");
  stats->add_option("--avg-objects", o.avg_objects, "use this average instead of modules");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  // `run` is unprotected unless asked.
  if (run->parsed() && run->get_option("--protect")->count() == 0)
    o.protect = "off";

  try {
    if (parse->parsed())
      return cmd_parse(o);
    if (analyze->parsed())
      return cmd_analyze(o);
    if (classify->parsed())
      return cmd_classify(o);
    if (instrument->parsed())
      return cmd_instrument(o);
    if (run->parsed())
      return cmd_run(o);
    if (attack->parsed())
      return cmd_attack(o);
    if (stats->parsed())
      return cmd_stats(o);
  } catch (const UsageError &e) {
    report_error(o, "usage", e.what());
    return 1;
  } catch (const ParseError &e) {
    report_error(o, "parse", e.what(), diagnostics_json(e.diagnostics()));
    return 2;
  } catch (const VerifyError &e) {
    report_error(o, "verify", e.what(), verify_json(e.report()));
    return 2;
  } catch (const Error &e) {
    report_error(o, "analysis", e.what());
    return 2;
  }
  return 1;
}
