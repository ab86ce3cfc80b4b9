#include "diffaug/experiment.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "diffaug/checkpoint.hpp"
#include "diffaug/data.hpp"
#include "diffaug/ops.hpp"

namespace diffaug {

using nlohmann::json;

namespace {

template <typename T>
T get_typed(const json& j, const std::string& key) {
  const auto& v = j.at(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(fmt::format("config key '{}' must be a boolean", key));
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError(fmt::format("config key '{}' must be an integer", key));
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(fmt::format("config key '{}' must be a number", key));
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(fmt::format("config key '{}' must be a string", key));
  }
  return v.get<T>();
}

std::shared_ptr<const Dataset> build_dataset(const ExperimentConfig& c) {
  Dataset full;
  if (c.dataset == "synthetic") {
    full = make_synthetic({c.dataset_size, c.train.net.resolution, c.dataset_seed, 4});
  } else {
    full = load_folder(c.dataset_path, c.train.net.resolution, c.dataset_seed);
  }
  return std::make_shared<const Dataset>(subsample(full, c.fraction, c.train.seed));
}

struct EvalContext {
  const ExperimentConfig& config;
  std::shared_ptr<const Dataset> data;
  FeatureExtractor extractor;
  GaussianStats real_stats;
  Tensor latents;
  Tensor train_reals;
  Tensor val_reals;

  EvalContext(const ExperimentConfig& c, std::shared_ptr<const Dataset> d)
      : config(c), data(std::move(d)), extractor(c.feature_seed) {
    // The held-out split is the proxy-FID reference.
    if (static_cast<std::int64_t>(data->val_indices.size()) < kMinFidSamples) {
      throw ConfigError(fmt::format("validation split has {} images; proxy-FID needs at least {}",
                                    data->val_indices.size(), kMinFidSamples));
    }
    Rng eval = Rng::derive(c.train.seed, static_cast<std::uint64_t>(RngStream::Eval));
    latents = eval.normal_tensor({c.eval_samples, c.train.net.latent_dim});
    train_reals = data->train_images();
    val_reals = data->val_images();
    real_stats = gaussian_stats(extractor.features(val_reals));
  }

  MetricsRecord evaluate(const TrainState& state) const {
    NoGradGuard no_grad;
    MetricsRecord m;
    m.step = state.step;
    Tensor ema_samples = ema_generator(state).forward(latents);
    m.proxy_fid = frechet_distance(real_stats, gaussian_stats(extractor.features(ema_samples)));
    Tensor fakes = state.generator.forward(latents);
    Rng aug = Rng::derive(config.train.seed, 1000 + static_cast<std::uint64_t>(state.step));
    m.acc = d_accuracies(state.discriminator, train_reals, val_reals, fakes, config.train.policy, aug);
    return m;
  }
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  os << text;
}

std::string format_axis_value(const std::string& axis, double v) {
  return axis == "base_channels" ? fmt::format("{}", static_cast<long long>(std::llround(v))) : fmt::format("{:g}", v);
}

// Shortest decimal that reads back as the same float, so 2e-4 is written as
// 0.0002 and not as its double widening.
double decimal(float f) { return std::stod(fmt::format("{}", f)); }

}  // namespace

json to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  return json{{"strategy", std::string(to_string(t.strategy))},
              {"loss", std::string(to_string(t.loss))},
              {"policy", t.policy.to_string()},
              {"shared_draw", t.shared_draw},
              {"d_steps_per_g", t.d_steps_per_g},
              {"batch_size", t.batch_size},
              {"total_steps", t.total_steps},
              {"r1_gamma", decimal(t.r1_gamma)},
              {"r1_on_augmented", t.r1_on_augmented},
              {"lr_g", decimal(t.adam_g.lr)},
              {"lr_d", decimal(t.adam_d.lr)},
              {"beta1", decimal(t.adam_g.beta1)},
              {"beta2", decimal(t.adam_g.beta2)},
              {"ema_half_life_images", t.ema_half_life_images},
              {"seed", t.seed},
              {"eval_every", t.eval_every},
              {"flip", t.flip},
              {"latent_dim", t.net.latent_dim},
              {"base_channels", t.net.base_channels},
              {"resolution", t.net.resolution},
              {"dataset", c.dataset},
              {"dataset_path", c.dataset_path},
              {"dataset_size", c.dataset_size},
              {"dataset_seed", c.dataset_seed},
              {"fraction", c.fraction},
              {"output_dir", c.output_dir},
              {"eval_samples", c.eval_samples},
              {"feature_seed", c.feature_seed},
              {"sweep_axis", c.sweep_axis},
              {"sweep_values", c.sweep_values},
              {"write_grids", c.write_grids},
              {"write_checkpoints", c.write_checkpoints}};
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a flat JSON object");
  const json defaults = to_json(ExperimentConfig{});
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError(fmt::format("unknown config key '{}'", key));
  }
  json merged = defaults;
  merged.update(j);
  ExperimentConfig c;
  auto& t = c.train;
  try {
    t.strategy = parse_strategy(get_typed<std::string>(merged, "strategy"));
    t.loss = parse_loss_kind(get_typed<std::string>(merged, "loss"));
    t.policy = Policy::parse(get_typed<std::string>(merged, "policy"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  t.shared_draw = get_typed<bool>(merged, "shared_draw");
  t.d_steps_per_g = get_typed<int>(merged, "d_steps_per_g");
  t.batch_size = get_typed<int>(merged, "batch_size");
  t.total_steps = get_typed<std::int64_t>(merged, "total_steps");
  t.r1_gamma = get_typed<float>(merged, "r1_gamma");
  t.r1_on_augmented = get_typed<bool>(merged, "r1_on_augmented");
  t.adam_g.lr = get_typed<float>(merged, "lr_g");
  t.adam_d.lr = get_typed<float>(merged, "lr_d");
  t.adam_g.beta1 = t.adam_d.beta1 = get_typed<float>(merged, "beta1");
  t.adam_g.beta2 = t.adam_d.beta2 = get_typed<float>(merged, "beta2");
  t.ema_half_life_images = get_typed<double>(merged, "ema_half_life_images");
  t.seed = get_typed<std::uint64_t>(merged, "seed");
  t.eval_every = get_typed<std::int64_t>(merged, "eval_every");
  t.flip = get_typed<bool>(merged, "flip");
  t.net.latent_dim = get_typed<int>(merged, "latent_dim");
  t.net.base_channels = get_typed<int>(merged, "base_channels");
  t.net.resolution = get_typed<int>(merged, "resolution");
  c.dataset = get_typed<std::string>(merged, "dataset");
  c.dataset_path = get_typed<std::string>(merged, "dataset_path");
  c.dataset_size = get_typed<std::int64_t>(merged, "dataset_size");
  c.dataset_seed = get_typed<std::uint64_t>(merged, "dataset_seed");
  c.fraction = get_typed<double>(merged, "fraction");
  c.output_dir = get_typed<std::string>(merged, "output_dir");
  c.eval_samples = get_typed<std::int64_t>(merged, "eval_samples");
  c.feature_seed = get_typed<std::uint64_t>(merged, "feature_seed");
  c.sweep_axis = get_typed<std::string>(merged, "sweep_axis");
  const auto& values = merged.at("sweep_values");
  if (!values.is_array()) throw ConfigError("config key 'sweep_values' must be an array of numbers");
  for (const auto& v : values) {
    if (!v.is_number()) throw ConfigError("config key 'sweep_values' must be an array of numbers");
    c.sweep_values.push_back(v.get<double>());
  }
  c.write_grids = get_typed<bool>(merged, "write_grids");
  c.write_checkpoints = get_typed<bool>(merged, "write_checkpoints");

  if (c.dataset != "synthetic" && c.dataset != "folder") {
    throw ConfigError(fmt::format("config key 'dataset' must be 'synthetic' or 'folder', got '{}'", c.dataset));
  }
  if (c.dataset == "folder" && c.dataset_path.empty()) throw ConfigError("config key 'dataset_path' is required for folder datasets");
  if (!(c.fraction > 0.0 && c.fraction <= 1.0)) throw ConfigError("config key 'fraction' must be in (0, 1]");
  if (c.eval_samples < kMinFidSamples) {
    throw ConfigError(fmt::format("config key 'eval_samples' must be at least {}", kMinFidSamples));
  }
  if (!c.sweep_axis.empty() && c.sweep_axis != "base_channels" && c.sweep_axis != "r1_gamma") {
    throw ConfigError(fmt::format("config key 'sweep_axis' must be '', 'base_channels' or 'r1_gamma', got '{}'", c.sweep_axis));
  }
  try {
    validate(t);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return config_from_json(j);
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(fmt::format("override '{}' is not key=value", assignment));
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json j = to_json(config);
  if (!j.contains(key)) throw ConfigError(fmt::format("unknown config key '{}'", key));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded() || (j.at(key).is_string() && !value.is_string())) value = text;
  j[key] = value;
  config = config_from_json(j);
}

RunResult run_experiment(const ExperimentConfig& config) {
  const auto& tc = config.train;
  auto data = build_dataset(config);
  EvalContext eval(config, data);
  BatchSampler sampler(data, tc.batch_size, tc.flip ? 0.5 : 0.0,
                       Rng::derive(tc.seed, static_cast<std::uint64_t>(RngStream::Data)));
  TrainState state = init_train_state(tc);

  const bool write = !config.output_dir.empty();
  const std::filesystem::path out = config.output_dir;
  std::ofstream csv;
  if (write) {
    std::filesystem::create_directories(out);
    csv.open(out / "metrics.csv");
    if (!csv) throw std::runtime_error(fmt::format("cannot write '{}'", (out / "metrics.csv").string()));
    csv << metrics_csv_header() << '\n';
  }
  const std::string metadata = to_json(config).dump();

  RunResult result;
  double loss_d_acc = 0.0, loss_g_acc = 0.0;
  std::int64_t since_eval = 0;
  auto record = [&]() {
    MetricsRecord m = eval.evaluate(state);
    m.loss_d = since_eval ? loss_d_acc / static_cast<double>(since_eval) : std::numeric_limits<double>::quiet_NaN();
    m.loss_g = since_eval ? loss_g_acc / static_cast<double>(since_eval) : std::numeric_limits<double>::quiet_NaN();
    loss_d_acc = loss_g_acc = 0.0;
    since_eval = 0;
    result.history.push_back(m);
    if (!write) return;
    csv << metrics_csv_row(m) << '\n';
    csv.flush();
    if (config.write_grids) {
      NoGradGuard no_grad;
      const auto n = std::min<std::int64_t>(64, config.eval_samples);
      Tensor grid = ema_generator(state).forward(slice(eval.latents, 0, 0, n));
      write_image_grid(out / "grids" / fmt::format("step_{:08d}.png", state.step), grid, 8);
    }
    if (config.write_checkpoints) {
      save_checkpoint(out / "ckpt" / fmt::format("step_{:08d}.ckpt", state.step), state, &sampler, metadata);
    }
  };

  record();
  try {
    while (state.step < tc.total_steps) {
      const StepLosses l = train_step(state, tc, sampler);
      loss_d_acc += l.d_total;
      loss_g_acc += l.g;
      ++since_eval;
      if (state.step % tc.eval_every == 0 || state.step == tc.total_steps) record();
    }
  } catch (const TrainingHalted& e) {
    result.halted = true;
    result.halt_reason = e.what();
    if (write) write_text(out / "halt.txt", e.diagnostics());
  }

  result.final_step = state.step;
  result.best_proxy_fid = std::numeric_limits<double>::infinity();
  for (const auto& m : result.history) {
    if (m.proxy_fid < result.best_proxy_fid) {
      result.best_proxy_fid = m.proxy_fid;
      result.best_step = m.step;
    }
  }
  if (write) {
    write_text(out / "summary.txt",
               fmt::format("best_proxy_fid: {:.6f}\nbest_step: {}\nfinal_step: {}\nstatus: {}\n", result.best_proxy_fid,
                           result.best_step, result.final_step, result.halted ? "halted" : "completed"));
  }
  result.final_state = std::move(state);
  return result;
}

int exit_code(const RunResult& result) { return result.halted ? 3 : 0; }

std::vector<SweepRow> run_sweep(const ExperimentConfig& config) {
  if (config.sweep_axis.empty()) throw ConfigError("sweep requires 'sweep_axis'");
  if (config.sweep_values.empty()) throw ConfigError("sweep requires non-empty 'sweep_values'");
  std::vector<SweepRow> rows;
  const std::filesystem::path out = config.output_dir;
  for (double v : config.sweep_values) {
    ExperimentConfig c = config;
    if (config.sweep_axis == "base_channels") {
      if (v < 1 || v != std::floor(v)) throw ConfigError(fmt::format("base_channels sweep value {} is not a positive integer", v));
      c.train.net.base_channels = static_cast<int>(v);
    } else {
      if (v < 0) throw ConfigError(fmt::format("r1_gamma sweep value {} is negative", v));
      c.train.r1_gamma = static_cast<float>(v);
    }
    c.sweep_axis.clear();
    c.sweep_values.clear();
    if (!out.empty()) c.output_dir = (out / fmt::format("{}_{}", config.sweep_axis, format_axis_value(config.sweep_axis, v))).string();
    const RunResult r = run_experiment(c);
    rows.push_back({v, r.best_proxy_fid, r.best_step, r.halted});
  }
  if (!out.empty()) {
    std::string text = "axis_value,best_proxy_fid,best_step\n";
    for (const auto& r : rows) {
      text += fmt::format("{},{:.6f},{}\n", format_axis_value(config.sweep_axis, r.axis_value), r.best_proxy_fid, r.best_step);
    }
    std::filesystem::create_directories(out);
    write_text(out / "sweep.csv", text);
  }
  return rows;
}

Tensor interpolate(const Generator& generator, const Tensor& z0, const Tensor& z1, int steps) {
  if (steps < 2) throw std::invalid_argument("interpolate: steps must be at least 2");
  const auto dim = generator.config().latent_dim;
  if (z0.numel() != dim || z1.numel() != dim) throw ShapeError("interpolate", z0.shape(), z1.shape());
  std::vector<float> zs(static_cast<std::size_t>(steps) * dim);
  auto a = z0.data();
  auto b = z1.data();
  for (int s = 0; s < steps; ++s) {
    const float t = static_cast<float>(s) / static_cast<float>(steps - 1);
    for (int i = 0; i < dim; ++i) zs[s * dim + i] = (1.0f - t) * a[i] + t * b[i];
  }
  NoGradGuard no_grad;
  return generator.forward(Tensor::from_data({steps, dim}, std::move(zs)));
}

}  // namespace diffaug
