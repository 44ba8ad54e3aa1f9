#include "support.hpp"

#include "cleanstack/frontend.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

using namespace cstest;
using nlohmann::json;

namespace {

json parse_json(const CliResult &r) {
  try {
    return json::parse(r.out);
  } catch (const json::exception &e) {
    ADD_FAILURE() << "not JSON: " << e.what() << "\n" << r.out << r.err;
    return json::object();
  }
}

std::string tmp(const std::string &name) {
  return (std::filesystem::path(::testing::TempDir()) / name).string();
}

} // namespace

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli({"parse", fixture_path("dnstracer.cir")}).code, 0);
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
  EXPECT_EQ(run_cli({"classify", fixture_path("dnstracer.cir"), "--method", "nope"}).code, 1);
  EXPECT_EQ(run_cli({"attack", "--scenario", "dnstracer", "--baseline", "--protected"}).code, 1);

  const std::string bad = tmp("bad.cir");
  std::ofstream(bad) << "func main() {\nentry:\n  %x = frobnicate 1\n  ret\n}\n";
  CliResult r = run_cli({"parse", bad});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bad.cir:3"), std::string::npos) << r.err;
  // An unreadable input path is a usage problem.
  EXPECT_EQ(run_cli({"parse", tmp("missing.cir")}).code, 1);

  const std::string div = tmp("div.cir");
  std::ofstream(div) << "entry main\n\nfunc main() {\nentry:\n  %x = input 8\n"
                        "  %y = sdiv 1, %x\n  ret 0\n}\n";
  EXPECT_EQ(run_cli({"run", div}).code, 3);
  CliResult limited = run_cli({"run", fixture_path("recursion.cir"), "--input-json",
                               R"([{"i64": [100]}])", "--step-limit", "10"});
  EXPECT_EQ(limited.code, 3);
}

TEST(Cli, ErrorsAsJson) {
  const std::string bad = tmp("bad2.cir");
  std::ofstream(bad) << "func main() {\nentry:\n  %y = add %nope, 1\n  ret\n}\n";
  CliResult r = run_cli({"parse", bad, "--json"});
  EXPECT_EQ(r.code, 2);
  json j = parse_json(r);
  EXPECT_EQ(j.value("schema", ""), "cleanstack.error/1");
  EXPECT_EQ(j.value("error", ""), "parse");
  ASSERT_TRUE(j.contains("details"));
  ASSERT_FALSE(j["details"].empty());
  EXPECT_EQ(j["details"][0]["span"]["line"], 3);
}

TEST(Cli, ParseIsCanonical) {
  CliResult r = run_cli({"parse", fixture_path("sreplace.cir")});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out, print_module(load_fixture("sreplace.cir")));
  // Reads stdin with '-'.
  CliResult s = run_cli({"parse", "-"}, {}, read_file(fixture_path("sreplace.cir")));
  EXPECT_EQ(s.code, 0);
  EXPECT_EQ(s.out, r.out);
}

TEST(Cli, InstrumentIsByteIdenticalPerSeed) {
  const std::string f = fixture_path("sreplace.cir");
  CliResult a = run_cli({"instrument", f, "--seed", "7"});
  CliResult b = run_cli({"instrument", f, "--seed", "7"});
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_FALSE(a.out.empty());
  // Output is a valid module.
  EXPECT_NO_THROW(parse_module(a.out));

  // Files and sidecar.
  const std::string out = tmp("prot.cir"), lay = tmp("prot.layout.json");
  CliResult w = run_cli({"instrument", f, "--seed", "7", "-o", out, "--layout", lay});
  ASSERT_EQ(w.code, 0);
  EXPECT_EQ(read_file(out), a.out);
  json sidecar = json::parse(read_file(lay));
  EXPECT_EQ(sidecar["schema"], "cleanstack.layout/1");
  EXPECT_EQ(sidecar["seed"], 7);
}

TEST(Cli, SeedFromEnvironmentAndFlagPrecedence) {
  const std::string f = fixture_path("sreplace.cir");
  CliResult flag = run_cli({"instrument", f, "--seed", "12"});
  CliResult env = run_cli({"instrument", f}, {{"CLEANSTACK_SEED", "12"}});
  CliResult both = run_cli({"instrument", f, "--seed", "12"}, {{"CLEANSTACK_SEED", "99"}});
  CliResult none = run_cli({"instrument", f});
  CliResult zero = run_cli({"instrument", f, "--seed", "0"});
  EXPECT_EQ(flag.out, env.out);
  EXPECT_EQ(flag.out, both.out);
  EXPECT_EQ(none.out, zero.out);
  CliResult hex = run_cli({"instrument", f}, {{"CLEANSTACK_SEED", "0xc"}});
  EXPECT_EQ(hex.out, flag.out);
  EXPECT_EQ(run_cli({"instrument", f}, {{"CLEANSTACK_SEED", "banana"}}).code, 1);
}

TEST(Cli, ProtectedDnstracerAttackFails) {
  CliResult r = run_cli({"attack", "--scenario", "dnstracer", "--trials", "500", "--protected",
                         "--jobs", "4", "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  json j = parse_json(r);
  EXPECT_EQ(j["schema"], "cleanstack.experiment/1");
  EXPECT_EQ(j["trials"], 500);
  EXPECT_EQ(j["rate"], 0.0);
  EXPECT_EQ(j["ra_corrupted"], 0);

  CliResult b = run_cli({"attack", "--scenario", "dnstracer", "--trials", "5", "--baseline",
                         "--json", "--per-trial"});
  json jb = parse_json(b);
  EXPECT_EQ(jb["rate"], 1.0);
  EXPECT_EQ(jb["outcomes"].size(), 5u);
  EXPECT_EQ(run_cli({"attack", "--scenario", "nope"}).code, 2);
}

TEST(Cli, StatsReportsAnalyticProbability) {
  CliResult r = run_cli({"stats", "--unclean-fraction", "0.1899", "--avg-objects", "2.56", "--json"});
  ASSERT_EQ(r.code, 0);
  json j = parse_json(r);
  EXPECT_EQ(j["schema"], "cleanstack.stats/1");
  EXPECT_NEAR(j["analytic_success_probability"].get<double>(), 0.1899 / 2.56, 1e-12);
  EXPECT_NEAR(j["analytic_randomized_canary"].get<double>(), 0.1899 / 5.12, 1e-12);

  CliResult m = run_cli({"stats", fixture_path("stats/corpus_a.cir"),
                         fixture_path("stats/corpus_b.cir"), "--json"});
  ASSERT_EQ(m.code, 0) << m.err;
  json jm = parse_json(m);
  EXPECT_EQ(jm["total_functions"], 200);
  EXPECT_EQ(jm["unclean_functions"], 38);
  EXPECT_NEAR(jm["analytic_success_probability"].get<double>(), 0.076, 1e-12);
  EXPECT_EQ(run_cli({"stats", "--unclean-fraction", "0.2"}).code, 1);
  EXPECT_EQ(run_cli({"stats"}).code, 1);
}

TEST(Cli, EveryJsonOutputHasASchema) {
  const std::string f = fixture_path("sreplace.cir");
  const std::vector<std::vector<std::string>> cmds{
      {"parse", f, "--json"},
      {"analyze", f, "--json"},
      {"classify", f, "--json", "--method", "taint"},
      {"classify", f, "--json", "--method", "union"},
      {"instrument", f, "--json", "--seed", "3"},
      {"run", f, "--json", "--input-json", R"([{"i64": [0]}])"},
      {"run", f, "--json", "--protect", "on", "--input-json", R"([{"i64": [0]}])"},
      {"attack", "--scenario", "sreplace2", "--trials", "10", "--json"},
      {"stats", f, "--json"},
  };
  for (const auto &c : cmds) {
    CliResult r = run_cli(c);
    EXPECT_EQ(r.code, 0) << c[0] << " " << r.err;
    json j = parse_json(r);
    ASSERT_TRUE(j.is_object()) << c[0];
    EXPECT_TRUE(j.contains("schema")) << c[0];
    EXPECT_TRUE(j["schema"].get<std::string>().starts_with("cleanstack.")) << c[0];
  }
}

TEST(Cli, ClassifyReportsReasonsAndDivergence) {
  CliResult r = run_cli({"classify", fixture_path("summary.cir"), "--json", "--method", "taint"});
  ASSERT_EQ(r.code, 0);
  json j = parse_json(r);
  EXPECT_EQ(j["schema"], "cleanstack.classification/1");
  bool saw_copy = false;
  for (const auto &f : j["functions"]) {
    if (f["name"] != "main")
      continue;
    for (const auto &o : f["objects"])
      if (o["object"] == "copy") {
        saw_copy = true;
        EXPECT_EQ(o["label"], "unclean");
        EXPECT_EQ(o["reasons"], json::array({"TaintReached"}));
      }
  }
  for (const auto &d : j["divergence"])
    if (d["function"] == "main") {
      EXPECT_EQ(d["heuristic_only"], json::array({"table"}));
      EXPECT_EQ(d["taint_only"], json::array({"copy"}));
    }
  EXPECT_TRUE(saw_copy) << r.out;
}

TEST(Cli, RunMatchesLibrary) {
  CliResult r = run_cli({"run", fixture_path("clean_only.cir"), "--input-json",
                         R"([{"i64": [4]}])", "--json"});
  ASSERT_EQ(r.code, 0);
  json j = parse_json(r);
  EXPECT_EQ(j["outputs"], json::array({0 + 1 + 4 + 9}));
  // Raw input file.
  const std::string in = tmp("four.bin");
  {
    std::ofstream o(in, std::ios::binary);
    const char w[8] = {4, 0, 0, 0, 0, 0, 0, 0};
    o.write(w, 8);
  }
  CliResult raw = run_cli({"run", fixture_path("clean_only.cir"), "--input", in, "--json"});
  EXPECT_EQ(parse_json(raw)["outputs"], j["outputs"]);
}
