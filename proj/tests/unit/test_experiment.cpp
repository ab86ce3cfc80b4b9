#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/core.h>

#include "diffaug/checkpoint.hpp"
#include "diffaug/experiment.hpp"
#include "diffaug/ops.hpp"

using namespace diffaug;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("diffaug_test_exp_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig small(const fs::path& out) {
  ExperimentConfig c;
  c.train.net = {8, 4, 16};
  c.train.batch_size = 8;
  c.train.total_steps = 20;
  c.train.eval_every = 10;
  c.dataset_size = 320;
  c.eval_samples = 64;
  c.output_dir = out.string();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

int run_cli(const std::string& args, const fs::path& log) {
  const auto cmd = std::string(DIFFAUG_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config JSON round trip and validation") {
  const auto c = small("x");
  const auto back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_WITH_AS(config_from_json(nlohmann::json{{"batch_sise", 3}}), doctest::Contains("batch_sise"), ConfigError);
  CHECK_THROWS_WITH_AS(config_from_json(nlohmann::json{{"batch_size", "big"}}), doctest::Contains("batch_size"), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"strategy", "everything"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"policy", "rotate"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"fraction", 0.0}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"resolution", 24}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), ConfigError);
}

TEST_CASE("overrides") {
  auto c = small("x");
  apply_override(c, "strategy=baseline");
  apply_override(c, "r1_gamma=10");
  apply_override(c, "policy=translation");
  apply_override(c, "output_dir=123");
  apply_override(c, "sweep_values=[8,16]");
  CHECK(c.train.strategy == Strategy::Baseline);
  CHECK(c.train.r1_gamma == 10.0f);
  CHECK(c.train.policy == Policy::parse("translation"));
  CHECK(c.output_dir == "123");
  CHECK(c.sweep_values == std::vector<double>{8, 16});
  CHECK_THROWS_WITH_AS(apply_override(c, "nope=1"), doctest::Contains("nope"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "batch_size"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "batch_size=1.5"), ConfigError);
}

TEST_CASE("zero steps evaluates once") {
  const auto out = scratch("zero");
  auto c = small(out);
  c.train.total_steps = 0;
  const auto r = run_experiment(c);
  CHECK(exit_code(r) == 0);
  const auto rows = lines(slurp(out / "metrics.csv"));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == metrics_csv_header());
  CHECK(rows[1].rfind("0,", 0) == 0);
  CHECK(fs::exists(out / "grids" / "step_00000000.png"));
  CHECK(fs::exists(out / "ckpt" / "step_00000000.ckpt"));
  CHECK(fs::exists(out / "summary.txt"));
}

TEST_CASE("runs are reproducible and the summary reports the CSV minimum") {
  const auto a = scratch("det_a"), b = scratch("det_b");
  const auto ra = run_experiment(small(a));
  run_experiment(small(b));
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  const auto rows = lines(slurp(a / "metrics.csv"));
  REQUIRE(rows.size() == 4);  // steps 0, 10, 20
  double best = 1e300;
  std::int64_t best_step = -1;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::istringstream is(rows[i]);
    std::string step, fid;
    std::getline(is, step, ',');
    std::getline(is, fid, ',');
    if (std::stod(fid) < best) {
      best = std::stod(fid);
      best_step = std::stoll(step);
    }
  }
  CHECK(ra.best_proxy_fid == doctest::Approx(best).epsilon(1e-6));
  CHECK(ra.best_step == best_step);
  const auto summary = slurp(a / "summary.txt");
  CHECK(summary.find(fmt::format("best_step: {}", best_step)) != std::string::npos);
  CHECK(summary.find("status: completed") != std::string::npos);
  CHECK(fs::exists(a / "ckpt" / "step_00000020.ckpt"));
}

TEST_CASE("a single-value sweep matches a plain run") {
  const auto out = scratch("sweep");
  auto c = small(out);
  c.sweep_axis = "base_channels";
  c.sweep_values = {4};
  const auto rows = run_sweep(c);
  REQUIRE(rows.size() == 1);
  const auto plain = run_experiment(small(scratch("sweep_plain")));
  CHECK(rows[0].best_proxy_fid == plain.best_proxy_fid);
  CHECK(rows[0].best_step == plain.best_step);
  const auto table = lines(slurp(out / "sweep.csv"));
  REQUIRE(table.size() == 2);
  CHECK(table[0] == "axis_value,best_proxy_fid,best_step");
  CHECK(table[1].rfind("4,", 0) == 0);
  CHECK(fs::exists(out / "base_channels_4" / "metrics.csv"));
}

TEST_CASE("interpolation endpoints, constancy and smoothness") {
  Rng rng(1);
  Generator g({8, 4, 16}, rng);
  std::vector<std::vector<float>> values;
  for (const auto& p : g.parameters()) {
    const Tensor t = rng.normal_tensor(p.shape(), 0.3f);
    values.emplace_back(t.data().begin(), t.data().end());
  }
  g.load_values(values);
  const Tensor z0 = rng.normal_tensor({1, 8}), z1 = rng.normal_tensor({1, 8});
  NoGradGuard no_grad;
  const Tensor ends = interpolate(g, z0, z1, 2);
  const Tensor direct = g.forward(concat({z0, z1}, 0));
  CHECK(std::vector<float>(ends.data().begin(), ends.data().end()) ==
        std::vector<float>(direct.data().begin(), direct.data().end()));

  const Tensor same = interpolate(g, z0, z0, 5);
  const auto frame = same.numel() / 5;
  for (int f = 1; f < 5; ++f) {
    for (std::int64_t i = 0; i < frame; ++i) CHECK(same.data()[f * frame + i] == same.data()[i]);
  }

  const int steps = 8;
  const Tensor strip = interpolate(g, z0, z1, steps);
  auto mad = [&](int a, int b) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < frame; ++i) acc += std::abs(strip.data()[a * frame + i] - strip.data()[b * frame + i]);
    return acc / frame;
  };
  const double endpoints = mad(0, steps - 1);
  for (int f = 0; f + 1 < steps; ++f) CHECK(mad(f, f + 1) < endpoints);
  CHECK_THROWS(interpolate(g, z0, z1, 1));
}

TEST_CASE("command line interface") {
  const auto dir = scratch("cli");
  fs::create_directories(dir);
  auto c = small(dir / "run");
  c.train.total_steps = 10;
  std::ofstream(dir / "config.json") << to_json(c).dump(2);

  CHECK(run_cli("run --config " + (dir / "config.json").string(), dir / "log1") == 0);
  CHECK(fs::exists(dir / "run" / "metrics.csv"));

  CHECK(run_cli("run --config " + (dir / "config.json").string() + " --override output_dir=" +
                    (dir / "run2").string() + " --override total_steps=0",
                dir / "log2") == 0);
  CHECK(lines(slurp(dir / "run2" / "metrics.csv")).size() == 2);

  CHECK(run_cli("run", dir / "log3") != 0);
  CHECK(run_cli("run --config " + (dir / "config.json").string() + " --override bogus_key=1", dir / "log4") == 2);
  CHECK(slurp(dir / "log4").find("bogus_key") != std::string::npos);

  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK(run_cli("run --config " + (dir / "broken.json").string(), dir / "log5") == 2);

  CHECK(run_cli("interpolate --checkpoint " + (dir / "run" / "ckpt" / "step_00000010.ckpt").string() +
                    " --pairs 2 --steps 4 --out " + (dir / "interp").string(),
                dir / "log6") == 0);
  CHECK(fs::exists(dir / "interp" / "strip_000.png"));
  CHECK(fs::exists(dir / "interp" / "strip_001.png"));

  std::ofstream(dir / "junk.ckpt") << "junk";
  CHECK(run_cli("interpolate --checkpoint " + (dir / "junk.ckpt").string(), dir / "log7") == 1);

  auto s = c;
  s.output_dir = (dir / "sweep").string();
  s.sweep_axis = "r1_gamma";
  s.sweep_values = {0.1, 10};
  std::ofstream(dir / "sweep.json") << to_json(s).dump(2);
  CHECK(run_cli("sweep --config " + (dir / "sweep.json").string(), dir / "log8") == 0);
  const auto table = lines(slurp(dir / "sweep" / "sweep.csv"));
  REQUIRE(table.size() == 3);
  CHECK(table[1].rfind("0.1,", 0) == 0);
  CHECK(table[2].rfind("10,", 0) == 0);
}

TEST_CASE("a halted run reports diagnostics and a nonzero exit") {
  const auto out = scratch("halt");
  auto c = small(out);
  c.train.adam_g.lr = c.train.adam_d.lr = 1e30f;
  c.train.total_steps = 50;
  const auto r = run_experiment(c);
  CHECK(r.halted);
  CHECK(exit_code(r) != 0);
  CHECK(fs::exists(out / "halt.txt"));
  CHECK(slurp(out / "summary.txt").find("status: halted") != std::string::npos);
}

TEST_CASE("shipped configs parse") {
  int n = 0;
  for (const auto& entry : fs::directory_iterator(DIFFAUG_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    INFO(entry.path().string());
    CHECK_NOTHROW(load_config(entry.path()));
    ++n;
  }
  CHECK(n >= 4);
}

TEST_CASE("DiffAugment training halves the proxy-FID within 2k steps") {
  auto c = small(scratch("learns"));
  c.train.net = NetConfig{};
  c.train.net.base_channels = 8;
  c.train.batch_size = 32;
  c.train.total_steps = 2000;
  c.train.eval_every = 500;
  c.train.adam_g.lr = c.train.adam_d.lr = 1e-3f;
  c.eval_samples = 128;
  c.write_grids = c.write_checkpoints = false;
  const auto r = run_experiment(c);
  REQUIRE(r.history.size() == 5);
  INFO("step 0: " << r.history.front().proxy_fid << ", final: " << r.history.back().proxy_fid);
  CHECK(r.history.back().proxy_fid <= 0.5 * r.history.front().proxy_fid);
}
