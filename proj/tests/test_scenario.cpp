#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include "fblab/scenario.hpp"

using namespace fblab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fblab_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

struct CliResult {
  int code = -1;
  std::string out, err;
};

CliResult cli(const std::string& args, const fs::path& dir) {
  const fs::path o = dir / "stdout.txt", e = dir / "stderr.txt";
  const std::string cmd = std::string(FBLAB_CLI_PATH) + " " + args + " >" + o.string() + " 2>" + e.string();
  const int st = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

std::string config_path(const std::string& name) { return std::string(FBLAB_CONFIG_DIR) + "/" + name; }

ojson base_config() {
  return ojson::parse(R"({
    "schema": "fblab/config/v1",
    "scenario": "squeeze",
    "params": {"omega1_hz": 27000, "omega2_hz": 33000, "gamma_hz": 474, "g_hz": 300, "kd_pi": 0.5,
               "occupation": "equal"},
    "simulation": {"duration_s": 0.01, "burn_in_s": 0.005, "n_traj": 6}
  })");
}

std::string pointer_of(const ojson& j) {
  try {
    parse_config(j);
  } catch (const schema_error& e) {
    return e.pointer;
  }
  return "<accepted>";
}

void write_config(const fs::path& p, const ojson& j) { write_json(p, j); }

struct ScratchCleanup : ::testing::Environment {
  void TearDown() override {
    fs::remove_all(fs::temp_directory_path() / ("fblab_test_" + std::to_string(::getpid())));
  }
};
const auto* const cleanup = ::testing::AddGlobalTestEnvironment(new ScratchCleanup);

}  // namespace

TEST(Config, UnknownKeysRejectedWithPointer) {
  auto j = base_config();
  j["colour"] = "blue";
  EXPECT_EQ(pointer_of(j), "/colour");
  j = base_config();
  j["simulation"]["n_trajectories"] = 5;
  EXPECT_EQ(pointer_of(j), "/simulation/n_trajectories");
  j = base_config();
  j["analysis"] = {{"kd_pi", {0.1, 0.2}}};  // distance-scan key, not a squeeze key
  EXPECT_EQ(pointer_of(j), "/analysis/kd_pi");
  j = base_config();
  j["output"] = {{"dir", "x"}, {"plots", "y"}};
  EXPECT_EQ(pointer_of(j), "/output/plots");
}

TEST(Config, TypeAndValueViolations) {
  auto j = base_config();
  j.erase("schema");
  EXPECT_EQ(pointer_of(j), "/schema");
  j = base_config();
  j["schema"] = "fblab/config/v0";
  EXPECT_EQ(pointer_of(j), "/schema");
  j = base_config();
  j["scenario"] = "teleport";
  EXPECT_EQ(pointer_of(j), "/scenario");
  j = base_config();
  j["params"]["gamma_hz"] = "474";
  EXPECT_EQ(pointer_of(j), "/params/gamma_hz");
  j = base_config();
  j["params"]["gamma_hz"] = -1.0;
  EXPECT_EQ(pointer_of(j), "/params/gamma_hz");
  j = base_config();
  j["simulation"]["n_traj"] = 2.5;
  EXPECT_EQ(pointer_of(j), "/simulation/n_traj");
  j = base_config();
  j["params"].erase("g_hz");
  EXPECT_EQ(pointer_of(j), "/params/g_hz");
  j = base_config();
  j["preset"] = "fig9";
  EXPECT_EQ(pointer_of(j), "/preset");
  j = base_config();
  j["params"]["n1"] = 5.0;
  EXPECT_EQ(pointer_of(j), "/params/n2");
  j = base_config();
  j["output"] = {{"summary", "../escape.json"}};
  EXPECT_EQ(pointer_of(j), "/output/summary");
}

TEST(Config, BranchMustMatchScenario) {
  auto j = base_config();
  j["params"]["branch"] = "sum";
  EXPECT_EQ(pointer_of(j), "/params/branch");
  j = base_config();
  j["scenario"] = "sms";
  EXPECT_EQ(pointer_of(j), "/params/branch");
  j["params"]["branch"] = "single_mode_2";
  EXPECT_EQ(pointer_of(j), "<accepted>");
  j = base_config();
  j["scenario"] = "kd-estimate";
  EXPECT_EQ(pointer_of(j), "/params/delta_hz");
}

TEST(Config, PhysicalBlock) {
  ojson j = base_config();
  j.erase("params");
  j["physical"] = {{"omega1_hz", 27000}, {"omega2_hz", 33000}, {"gamma_hz", 474}};
  EXPECT_EQ(pointer_of(j), "/physical/rayleigh_length_m");
  j["physical"]["rayleigh_length_m"] = 1.1e-6;
  const auto c = parse_config(j);
  PhysicalConfig pc;
  pc.rayleigh_length = 1.1e-6;
  pc.gamma = hz_to_rad(474.0);
  const auto ref = reduce(pc, hz_to_rad(27e3), hz_to_rad(33e3));
  EXPECT_DOUBLE_EQ(c.params.g, ref.g);
  EXPECT_DOUBLE_EQ(c.params.kd, ref.kd);
  EXPECT_DOUBLE_EQ(c.ctx.k_prime, pc.k_prime());
  EXPECT_TRUE(c.resolved.contains("derived"));
  j["params"] = base_config()["params"];
  EXPECT_EQ(pointer_of(j), "/physical");
}

TEST(Config, ResolvedConfigCarriesDefaultsAndOverrides) {
  auto j = base_config();
  j["preset"] = "fig3c";
  j["params"] = {{"g_hz", 200.0}};
  RunOptions o;
  o.seed = 99;
  o.out_dir = "/tmp/elsewhere";
  const auto c = parse_config(j, o);
  EXPECT_EQ(c.resolved["params"]["gamma_hz"].get<double>(), 474.0);  // from the preset
  EXPECT_EQ(c.resolved["params"]["g_hz"].get<double>(), 200.0);      // overridden
  EXPECT_EQ(c.resolved["simulation"]["seed"].get<std::uint64_t>(), 99u);
  EXPECT_EQ(c.sim.seed, 99u);
  EXPECT_EQ(c.output.dir, "/tmp/elsewhere");
  EXPECT_FALSE(c.resolved["output"].contains("dir"));
  EXPECT_EQ(c.params.n1, c.params.n2);
  // Re-parsing the resolved config reproduces it.
  const auto again = parse_config(c.resolved);
  EXPECT_EQ(again.resolved.dump(), c.resolved.dump());
  const auto d = parse_config(base_config());
  EXPECT_EQ(d.sim.seed, kDefaultSeed);
}

TEST(Config, ShippedConfigsParse) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(FBLAB_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(e.path())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 6);
}

TEST(Cli, ListPresets) {
  const auto dir = scratch("presets");
  const auto r = cli("list-presets", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  int rows = 0;
  bool row_3a_bottom = false, row_fig4 = false;
  std::getline(in, line);  // header
  EXPECT_NE(line.find("gamma_hz"), std::string::npos);
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string name, gam, g, delta, kd;
    ls >> name >> gam >> g >> delta >> kd;
    if (gam == "147" && g == "722") row_3a_bottom = true;
    if (g == "276") row_fig4 = true;
    ++rows;
  }
  EXPECT_GE(rows, 5);
  EXPECT_TRUE(row_3a_bottom);
  EXPECT_TRUE(row_fig4);
}

TEST(Cli, SchemaViolationExitsTwo) {
  const auto dir = scratch("schema");
  auto j = base_config();
  j["simulation"]["speed"] = 3;
  write_config(dir / "bad.json", j);
  const auto r = cli("run " + (dir / "bad.json").string() + " --out " + (dir / "out").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/simulation/speed"), std::string::npos) << r.err;
  std::ofstream(dir / "broken.json") << "{\"schema\": ";
  EXPECT_EQ(cli("run " + (dir / "broken.json").string(), dir).code, 2);
  EXPECT_EQ(cli("run " + (dir / "missing.json").string(), dir).code, 2);
  EXPECT_EQ(cli("run", dir).code, 2);
}

TEST(Cli, NumericalFailureExitsThree) {
  const auto dir = scratch("numerical");
  auto j = base_config();
  j["params"]["g_hz"] = 900.0;  // |Im Lambda| = g > gamma: no stationary state
  write_config(dir / "unstable.json", j);
  const auto r = cli("run " + (dir / "unstable.json").string() + " --out " + (dir / "out").string(), dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("correlations"), std::string::npos) << r.err;
}

TEST(Cli, RunsAreByteIdentical) {
  const auto dir = scratch("determinism");
  auto j = base_config();
  j["simulation"]["n_traj"] = 4;
  write_config(dir / "c.json", j);
  const std::string cfg = (dir / "c.json").string();
  ASSERT_EQ(cli("run " + cfg + " --out " + (dir / "a").string(), dir).code, 0);
  ASSERT_EQ(cli("run " + cfg + " --out " + (dir / "b").string() + " --threads 3", dir).code, 0);
  ASSERT_EQ(cli("run " + cfg + " --out " + (dir / "c").string() + " --seed 7", dir).code, 0);
  for (const char* f : {"psd.csv", "modes.json", "correlations.csv", "summary.json"}) {
    const auto a = slurp(dir / "a" / f), b = slurp(dir / "b" / f);
    ASSERT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, b) << f;
    EXPECT_EQ(a.back(), '\n') << f;
  }
  EXPECT_NE(slurp(dir / "a" / "psd.csv"), slurp(dir / "c" / "psd.csv"));
}

TEST(Cli, OutputFormats) {
  const auto dir = scratch("formats");
  write_config(dir / "c.json", base_config());
  ASSERT_EQ(cli("run " + (dir / "c.json").string() + " --out " + (dir / "o").string(), dir).code, 0);
  const std::regex sci(R"(-?\d\.\d{17}e[+-]\d{2,3}|nan|-?inf)");
  const std::regex unit(R"(.*_(hz|s|rad|quanta|per_hz|per_rad|stderr|sim|analytic|pi)$)");
  for (const char* f : {"psd.csv", "correlations.csv"}) {
    std::istringstream in(slurp(dir / "o" / f));
    std::string line, cell;
    std::getline(in, line);
    std::istringstream hs(line);
    while (std::getline(hs, cell, ',')) EXPECT_TRUE(std::regex_match(cell, unit)) << f << ": " << cell;
    int rows = 0;
    while (std::getline(in, line)) {
      std::istringstream cs(line);
      while (std::getline(cs, cell, ',')) ASSERT_TRUE(std::regex_match(cell, sci)) << f << ": " << cell;
      ++rows;
    }
    EXPECT_GT(rows, 3) << f;
  }
  const auto s = ojson::parse(slurp(dir / "o" / "summary.json"));
  EXPECT_EQ(s["schema"], kSummarySchema);
  EXPECT_EQ(s["config"]["schema"], kConfigSchema);
  ASSERT_FALSE(s["results"].empty());
  for (const auto& e : s["results"]) {
    EXPECT_TRUE(e.contains("analytic"));
    EXPECT_TRUE(e.contains("rel_error"));
    const std::string prov = e["provenance"];
    EXPECT_TRUE(prov == "simulated" || prov == "analytic" || prov == "fitted") << prov;
  }
  const auto m = ojson::parse(slurp(dir / "o" / "modes.json"));
  EXPECT_EQ(m["config"], s["config"]);
  EXPECT_TRUE(m["analytic"].contains("lambda_re_hz"));
}

// g = 0: every comparison reduces to the uncoupled value.
TEST(Cli, NoInteractionPresetIsFlat) {
  const auto dir = scratch("flat");
  const auto r = cli("run " + config_path("no_interaction.json") + " --out " + (dir / "o").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = ojson::parse(slurp(dir / "o" / "summary.json"));
  EXPECT_TRUE(s["all_within_tolerance"].get<bool>());
  for (const auto& e : s["results"]) {
    const std::string name = e["name"];
    if (name.find("ratio") != std::string::npos || name.find("z_") == 0) {
      EXPECT_NEAR(e["analytic"].get<double>(), 1.0, 1e-12) << name;
    }
  }
}

TEST(Cli, Fig3cReportsSquashingRatios) {
  const auto dir = scratch("fig3c");
  const auto r = cli("run " + config_path("squeeze_fig3c.json") + " --out " + (dir / "o").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = ojson::parse(slurp(dir / "o" / "summary.json"));
  bool squashed = false, anti = false;
  for (const auto& e : s["results"]) {
    if (e["name"] == "squashed_ratio_vs_ideal_point") {
      squashed = true;
      EXPECT_NEAR(e["analytic"].get<double>(), 0.57, 0.005);
      EXPECT_TRUE(e["within_tolerance"].get<bool>());
    }
    if (e["name"] == "anti_squashed_ratio_vs_ideal_point") {
      anti = true;
      EXPECT_NEAR(e["analytic"].get<double>(), 4.05, 0.01);
      EXPECT_TRUE(e["within_tolerance"].get<bool>());
    }
  }
  EXPECT_TRUE(squashed && anti);
}

TEST(Cli, Fig3aTopReportsExchangeFrequency) {
  const auto dir = scratch("fig3a");
  auto j = ojson::parse(slurp(config_path("quench_fig3a_top.json")));
  j["simulation"]["n_traj"] = 300;
  write_config(dir / "c.json", j);
  const auto r = cli("run " + (dir / "c.json").string() + " --out " + (dir / "o").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = ojson::parse(slurp(dir / "o" / "summary.json"));
  bool found = false;
  for (const auto& e : s["results"])
    if (e["name"] == "exchange_frequency_hz") {
      found = true;
      // Re Lambda at g = 724 Hz, |delta| = 202 Hz, kd = -0.029 pi.
      EXPECT_NEAR(e["analytic"].get<double>(), 748.55, 0.05);
      EXPECT_LT(e["rel_error"].get<double>(), 0.05);
    }
  EXPECT_TRUE(found);
}
