#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "fblab/scenario.hpp"

namespace {

constexpr int kExitSchema = 2;
constexpr int kExitNumerical = 3;

std::string trim_number(double x) {
  std::ostringstream s;
  s << x;
  return s.str();
}

void list_presets() {
  std::printf("%-15s %9s %9s %11s %11s  %-9s %s\n", "name", "gamma_hz", "g_hz", "abs_delta_hz", "kd_pi", "branch",
              "description");
  for (const auto& p : fblab::presets()) {
    std::string kd = trim_number(p.kd_pi);
    if (!p.kd_grid_pi.empty()) {
      const auto [lo, hi] = std::minmax_element(p.kd_grid_pi.begin(), p.kd_grid_pi.end());
      kd = trim_number(*lo) + ".." + trim_number(*hi);
    }
    std::printf("%-15s %9s %9s %11s %11s  %-9s %s\n", p.name.c_str(), trim_number(p.gamma_hz).c_str(),
                trim_number(p.g_hz).c_str(), trim_number(p.delta_hz).c_str(), kd.c_str(), p.branch.c_str(),
                p.description.c_str());
  }
}

int run(const std::string& path, const fblab::RunOptions& opt) {
  try {
    const auto cfg = fblab::load_config(path, opt);
    const auto rep = fblab::run_scenario(cfg);
    for (const auto& f : rep.files) std::printf("wrote %s\n", f.string().c_str());
    std::printf("%s: %zu comparisons, %s\n", cfg.scenario.c_str(), rep.n_checked,
                rep.all_within_tolerance ? "all within tolerance" : "some outside tolerance (see summary)");
    return 0;
  } catch (const fblab::schema_error& e) {
    std::fprintf(stderr, "fblab: config error at %s\n", e.what());
    return kExitSchema;
  } catch (const fblab::numerical_failure& e) {
    std::fprintf(stderr, "fblab: numerical failure in %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fblab: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fblab: simulate and analyze optically bound particle pairs"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  unsigned threads = 1;
  auto* run_cmd = app.add_subcommand("run", "run the scenario described by a JSON config");
  run_cmd->add_option("config", config, "config file")->required();
  run_cmd->add_option("--seed", seed, "override simulation.seed");
  run_cmd->add_option("--out", out, "override output.dir");
  run_cmd->add_option("--threads", threads, "worker threads for trajectories")->check(CLI::Range(1u, 1024u));
  app.add_subcommand("list-presets", "print the named parameter sets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitSchema;
  }
  if (app.got_subcommand("list-presets")) {
    list_presets();
    return 0;
  }
  fblab::RunOptions opt;
  opt.seed = seed;
  opt.out_dir = out;
  opt.threads = threads;
  return run(config, opt);
}
