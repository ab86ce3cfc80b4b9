#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "diffaug/checkpoint.hpp"
#include "diffaug/data.hpp"
#include "diffaug/experiment.hpp"

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

diffaug::ExperimentConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  auto config = diffaug::load_config(path);
  for (const auto& o : overrides) diffaug::apply_override(config, o);
  return config;
}

int cmd_run(const std::string& path, const std::vector<std::string>& overrides) {
  const auto config = resolve_config(path, overrides);
  const auto result = diffaug::run_experiment(config);
  if (result.halted) {
    fmt::print(stderr, "halted at step {}: {}\n", result.final_step, result.halt_reason);
  } else {
    fmt::print("best_proxy_fid {:.6f} at step {}\n", result.best_proxy_fid, result.best_step);
  }
  return diffaug::exit_code(result);
}

int cmd_sweep(const std::string& path, const std::vector<std::string>& overrides) {
  const auto config = resolve_config(path, overrides);
  const auto rows = diffaug::run_sweep(config);
  bool halted = false;
  for (const auto& r : rows) {
    fmt::print("{}={:g} best_proxy_fid {:.6f} at step {}{}\n", config.sweep_axis, r.axis_value, r.best_proxy_fid,
               r.best_step, r.halted ? " (halted)" : "");
    halted = halted || r.halted;
  }
  return halted ? 3 : 0;
}

int cmd_interpolate(const std::string& checkpoint, int pairs, int steps, std::uint64_t seed, const std::string& out) {
  const auto ck = diffaug::load_checkpoint(checkpoint);
  const auto g = diffaug::ema_generator(ck.state);
  diffaug::Rng rng(seed);
  std::filesystem::create_directories(out);
  for (int p = 0; p < pairs; ++p) {
    const auto z0 = rng.normal_tensor({1, ck.net.latent_dim});
    const auto z1 = rng.normal_tensor({1, ck.net.latent_dim});
    const auto frames = diffaug::interpolate(g, z0, z1, steps);
    const auto path = std::filesystem::path(out) / fmt::format("strip_{:03d}.png", p);
    diffaug::write_image_grid(path, frames, steps);
    fmt::print("{}\n", path.string());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable augmentation for data-efficient GAN training"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config_flags = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--override", overrides, "key=value, repeatable")->take_all();
  };
  auto* run = app.add_subcommand("run", "Train one configuration with periodic evaluation");
  add_config_flags(run);
  auto* sweep = app.add_subcommand("sweep", "One run per value of the config's sweep axis");
  add_config_flags(sweep);

  std::string checkpoint, out = "interp";
  int pairs = 4, steps = 8;
  std::uint64_t seed = 0;
  auto* interp = app.add_subcommand("interpolate", "Latent interpolation strips from the EMA generator");
  interp->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  interp->add_option("--pairs", pairs, "Number of latent pairs")->check(CLI::PositiveNumber);
  interp->add_option("--steps", steps, "Frames per strip, endpoints included")->check(CLI::Range(2, 1024));
  interp->add_option("--seed", seed, "Seed for the latent endpoints");
  interp->add_option("--out", out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) return cmd_run(config_path, overrides);
    if (*sweep) return cmd_sweep(config_path, overrides);
    return cmd_interpolate(checkpoint, pairs, steps, seed, out);
  } catch (const diffaug::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitError;
  }
}
