// dgnav: command-line front end for the batch harness.
//
// Exit codes: 0 success, 1 internal error, 2 user or configuration error.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dgnav/harness.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;
};

dgnav::RunConfig load(const Flags& f) {
  nlohmann::json j = f.config.empty() ? nlohmann::json::object() : dgnav::read_json_file(f.config);
  if (f.seed) j["seed"] = *f.seed;
  if (f.workers) j["workers"] = *f.workers;
  if (f.out) j["output_dir"] = *f.out;
  return dgnav::config_from_json(j);
}

void print_summary(const dgnav::Summary& s) {
  std::cout << "episodes " << s.episodes << "  SR " << s.sr << "  OSR " << s.osr << "  SPL " << s.spl << "  NE "
            << s.ne << "  TL " << s.tl << "  nDTW " << s.ndtw << "  SDTW " << s.sdtw << "  nodes " << s.nodes
            << "  steps " << s.steps << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dgnav: topological-map navigation with scene-adaptive graph granularity"};
  app.set_version_flag("--version", std::string(dgnav::kVersion));
  app.require_subcommand(1);
  Flags flags;
  auto add_flags = [&flags](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "override config seed");
    sub->add_option("--workers", flags.workers, "parallel episode workers")->check(CLI::PositiveNumber);
    sub->add_option("--out", flags.out, "override output directory");
  };
  auto* calibrate = app.add_subcommand("calibrate", "collect sigma statistics with fixed gamma");
  auto* run = app.add_subcommand("run", "evaluate a policy over the corpus");
  auto* train = app.add_subcommand("train", "imitation-train the planner");
  auto* ablate = app.add_subcommand("ablate", "paired ablation grid along one axis");
  auto* report = app.add_subcommand("report", "tabulate every run under the output directory");
  for (auto* sub : {calibrate, run, train, ablate, report}) add_flags(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const dgnav::RunConfig config = load(flags);
    if (calibrate->parsed()) {
      const auto out = dgnav::cmd_calibrate(config);
      std::cout << "sigma_med " << out.report.sigma_med << "  sigma_max " << out.report.sigma_max << "  samples "
                << out.report.sigma_samples.size() << "\nwrote " << out.dir.string() << '\n';
    } else if (run->parsed()) {
      const auto out = dgnav::cmd_run(config);
      print_summary(out.summary);
      std::cout << "wrote " << out.dir.string() << '\n';
    } else if (train->parsed()) {
      const auto out = dgnav::cmd_train(config);
      if (!out.losses.empty())
        std::cout << "loss " << out.losses.front() << " -> " << out.losses.back() << '\n';
      std::cout << "wrote " << out.dir.string() << '\n';
    } else if (ablate->parsed()) {
      const auto out = dgnav::cmd_ablate(config);
      for (const auto& row : out.rows) {
        std::cout << row.variant << ": ";
        print_summary(row.summary);
      }
      std::cout << "wrote " << out.dir.string() << '\n';
    } else if (report->parsed()) {
      std::cout << dgnav::cmd_report(config);
    }
  } catch (const dgnav::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.is_user_error() ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
