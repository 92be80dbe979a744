// slimcomm command line: scenario runs, sweeps, mode comparison and the
// gradient checks.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "slimcomm/slimcomm.hpp"

namespace fs = std::filesystem;
using namespace slimcomm;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool paper_shapes = false;
  std::string out = "out";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "scenario JSON")->required()->check(CLI::ExistingFile);
  app->add_option_function<std::uint64_t>(
      "--seed", [&c](std::uint64_t s) { c.seed = s, c.seed_set = true; }, "run seed (defaults to the scenario seed)");
  app->add_flag("--paper-shapes", c.paper_shapes, "use the full (128, 256, 512) channel pyramid");
  app->add_option("--out", c.out, "output directory");
}

Settings load(const Common& c) {
  Settings s = load_settings(c.config);
  if (c.paper_shapes) s.pyramid = PyramidConfig{};
  s.validate();
  return s;
}

std::uint64_t seed_of(const Common& c, const Settings& s) { return c.seed_set ? c.seed : s.scene.seed; }

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream(path) << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SlimComm cooperative-perception simulator"};
  app.require_subcommand(1);

  Common run_c;
  std::string mode_name = "slimcomm";
  std::optional<double> tau;
  bool no_erp = false, no_hrp = false, no_halo = false;
  std::string dump_messages, dump_fused;
  auto* run = app.add_subcommand("run", "run one scenario in one mode");
  add_common(run, run_c);
  run->add_option("--mode", mode_name, "slimcomm | full-map | no-erp | no-hrp | no-halo | no-comm");
  run->add_option("--tau", tau, "communication threshold in [0, 1]")->check(CLI::Range(0.0, 1.0));
  auto* f_erp = run->add_flag("--no-erp", no_erp, "disable the exploratory branch");
  auto* f_hrp = run->add_flag("--no-hrp", no_hrp, "disable the heuristic branch");
  auto* f_halo = run->add_flag("--no-halo", no_halo, "send centre cells only");
  f_erp->excludes(f_hrp)->excludes(f_halo);
  f_hrp->excludes(f_halo);
  run->add_option("--dump-messages", dump_messages, "write raw wire frames here");
  run->add_option("--dump-fused", dump_fused, "write fused grids (f32 + JSON sidecar) here");

  Common tau_c;
  std::vector<double> taus{0.0, 0.25, 0.5, 0.75, 1.0};
  auto* sweep_tau_cmd = app.add_subcommand("sweep-tau", "sweep the communication threshold");
  add_common(sweep_tau_cmd, tau_c);
  sweep_tau_cmd->add_option("--taus", taus, "threshold list")->delimiter(',');

  Common noise_c;
  std::vector<double> sig_pos{0.0, 0.3, 0.6};
  std::vector<double> sig_yaw{0.0, 0.5, 1.0};
  int noise_seeds = 20;
  auto* sweep_noise_cmd = app.add_subcommand("sweep-noise", "localisation / heading noise sweep");
  add_common(sweep_noise_cmd, noise_c);
  sweep_noise_cmd->add_option("--sigma-pos", sig_pos, "position sigmas (m)")->delimiter(',');
  sweep_noise_cmd->add_option("--sigma-yaw", sig_yaw, "yaw sigmas (deg)")->delimiter(',');
  sweep_noise_cmd->add_option("--seeds", noise_seeds, "seeds per cell")->check(CLI::PositiveNumber);

  Common cmp_c;
  int cmp_seeds = 20;
  auto* compare = app.add_subcommand("compare", "all modes side by side");
  add_common(compare, cmp_c);
  compare->add_option("--seeds", cmp_seeds, "seeds per mode")->check(CLI::PositiveNumber);

  int probes = 20;
  double eps = 1e-4;
  std::uint64_t grad_seed = 1;
  double tol = 1e-4;
  auto* grads = app.add_subcommand("check-gradients", "finite-difference checks of the analytic gradients");
  grads->add_option("--probes", probes, "random probe points")->check(CLI::PositiveNumber);
  grads->add_option("--eps", eps, "central difference step");
  grads->add_option("--seed", grad_seed, "probe seed");
  grads->add_option("--tol", tol, "maximum relative error");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      Settings s = load(run_c);
      Mode mode = parse_mode(mode_name);
      if (no_erp) mode = Mode::NoErp;
      if (no_hrp) mode = Mode::NoHrp;
      if (no_halo) mode = Mode::NoHalo;
      if (tau) s.comm.tau = *tau;
      FrameOptions opt;
      if (!dump_messages.empty()) opt.dump_messages = dump_messages;
      if (!dump_fused.empty()) opt.dump_fused = dump_fused;
      const auto result = run_scenario(s, mode, seed_of(run_c, s), opt);
      write_outputs(run_c.out, result, s);
      std::cout << metrics_csv({result});
    } else if (*sweep_tau_cmd) {
      const Settings s = load(tau_c);
      const auto csv = tau_csv(sweep_tau(s, taus, seed_of(tau_c, s)));
      write_text(fs::path(tau_c.out) / "sweep_tau.csv", csv);
      std::cout << csv;
    } else if (*sweep_noise_cmd) {
      const Settings s = load(noise_c);
      const auto rows = sweep_noise(s, sig_pos, sig_yaw, seed_of(noise_c, s), noise_seeds);
      for (const auto& r : rows)
        if (r.out_of_range)
          std::cerr << "warning: sigma (" << r.sigma_pos << " m, " << r.sigma_yaw_deg
                    << " deg) outside the studied range\n";
      const auto csv = noise_csv(rows);
      write_text(fs::path(noise_c.out) / "sweep_noise.csv", csv);
      std::cout << csv;
    } else if (*compare) {
      const Settings s = load(cmp_c);
      const auto rows = compare_modes(s, seed_of(cmp_c, s), cmp_seeds);
      write_text(fs::path(cmp_c.out) / "compare.csv", modes_csv(rows));
      write_text(fs::path(cmp_c.out) / "compare.md", modes_markdown(rows));
      std::cout << modes_markdown(rows);
    } else if (*grads) {
      const auto g = check_gradients(probes, eps, grad_seed);
      std::cout << "offset_regularization_loss max_rel_error " << g.offset_loss << "\n"
                << "attention_logits max_rel_error " << g.attention << "\n";
      const bool ok = g.finite && g.offset_loss < tol && g.attention < tol;
      std::cout << (ok ? "PASS" : "FAIL") << "\n";
      return ok ? EXIT_SUCCESS : EXIT_FAILURE;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return EXIT_SUCCESS;
}
