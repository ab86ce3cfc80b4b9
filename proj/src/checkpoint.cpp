#include "diffaug/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace diffaug {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'U', 'G', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void floats(std::span<const float> v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(float));
  }
  void vectors(const std::vector<std::vector<float>>& vs) {
    u64(vs.size());
    for (const auto& v : vs) floats(v);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  void raw(void* p, std::size_t n) {
    if (n > bytes_.size() - pos_) throw CheckpointError("checkpoint truncated");
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  std::int64_t i64() { return pod<std::int64_t>(); }
  float f32() { return pod<float>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    const auto n = length();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::vector<float> floats() {
    const auto n = length(sizeof(float));
    std::vector<float> v(n);
    raw(v.data(), n * sizeof(float));
    return v;
  }
  std::vector<std::vector<float>> vectors() {
    const auto n = length();
    std::vector<std::vector<float>> vs;
    for (std::uint64_t i = 0; i < n; ++i) vs.push_back(floats());
    return vs;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  template <typename T>
  T pod() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t length(std::size_t unit = 1) {
    const auto n = u64();
    if (n > (bytes_.size() - pos_) / unit) throw CheckpointError("checkpoint length field exceeds file size");
    return n;
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void write_module(Writer& w, const Module& m) {
  const auto& params = m.named_parameters();
  w.u64(params.size());
  for (const auto& p : params) {
    w.str(p.name);
    w.floats(p.value.data());
  }
}

void read_module(Reader& r, Module& m) {
  const auto n = r.u64();
  const auto& params = m.named_parameters();
  if (n != params.size()) throw CheckpointError("checkpoint parameter count does not match architecture");
  std::vector<std::vector<float>> values;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto name = r.str();
    if (name != params[i].name) throw CheckpointError(fmt::format("expected parameter '{}', found '{}'", params[i].name, name));
    values.push_back(r.floats());
    if (static_cast<std::int64_t>(values.back().size()) != params[i].value.numel()) {
      throw CheckpointError(fmt::format("parameter '{}' has wrong size", name));
    }
  }
  m.load_values(values);
}

void write_adam(Writer& w, const AdamState& s) {
  w.f32(s.config.lr);
  w.f32(s.config.beta1);
  w.f32(s.config.beta2);
  w.f32(s.config.eps);
  w.i64(s.step);
  w.vectors(s.m);
  w.vectors(s.v);
}

AdamState read_adam(Reader& r, const Module& m) {
  AdamState s;
  s.config.lr = r.f32();
  s.config.beta1 = r.f32();
  s.config.beta2 = r.f32();
  s.config.eps = r.f32();
  s.step = r.i64();
  s.m = r.vectors();
  s.v = r.vectors();
  const auto params = m.parameters();
  if (s.m.size() != params.size() || s.v.size() != params.size()) throw CheckpointError("Adam moment count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (static_cast<std::int64_t>(s.m[i].size()) != params[i].numel() ||
        static_cast<std::int64_t>(s.v[i].size()) != params[i].numel()) {
      throw CheckpointError("Adam moment shape mismatch");
    }
  }
  return s;
}

}  // namespace

std::string encode_checkpoint(const TrainState& state, const BatchSampler* sampler, const std::string& metadata) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u64(kCheckpointVersion);
  const auto& net = state.generator.config();
  w.i64(net.latent_dim);
  w.i64(net.base_channels);
  w.i64(net.resolution);
  w.i64(state.step);
  write_module(w, state.generator);
  write_module(w, state.discriminator);
  write_adam(w, state.adam_g);
  write_adam(w, state.adam_d);
  w.f64(state.ema.half_life_images);
  w.vectors(state.ema.values);
  w.str(state.latent_rng.serialize());
  w.str(state.augment_rng.serialize());
  w.u64(sampler ? 1 : 0);
  if (sampler) {
    const auto s = sampler->state();
    w.str(s.rng);
    w.u64(s.order.size());
    for (auto i : s.order) w.i64(i);
    w.i64(s.cursor);
  }
  w.str(metadata);
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  char magic[sizeof kMagic];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw CheckpointError("not a checkpoint file (bad magic)");
  const auto version = r.u64();
  if (version != kCheckpointVersion) throw CheckpointError(fmt::format("unsupported checkpoint version {}", version));
  NetConfig net;
  net.latent_dim = static_cast<int>(r.i64());
  net.base_channels = static_cast<int>(r.i64());
  net.resolution = static_cast<int>(r.i64());
  try {
    validate(net);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(fmt::format("corrupt checkpoint network config: {}", e.what()));
  }
  const auto step = r.i64();
  // Weights are overwritten below; the init stream only fixes shapes.
  Rng scratch(0);
  Generator g(net, scratch);
  Discriminator d(net, scratch);
  read_module(r, g);
  read_module(r, d);
  AdamState adam_g = read_adam(r, g);
  AdamState adam_d = read_adam(r, d);
  EmaShadow ema;
  ema.half_life_images = r.f64();
  ema.values = r.vectors();
  if (ema.values.size() != g.parameters().size()) throw CheckpointError("EMA shadow does not match generator");
  Rng latent, augment;
  try {
    latent.deserialize(r.str());
    augment.deserialize(r.str());
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
  Checkpoint ck{net, TrainState{std::move(g), std::move(d), std::move(adam_g), std::move(adam_d), std::move(ema),
                                std::move(latent), std::move(augment), step},
                std::nullopt, {}};
  if (r.u64() != 0) {
    BatchSampler::State s;
    s.rng = r.str();
    const auto n = r.u64();
    if (n > bytes.size()) throw CheckpointError("checkpoint sampler order too long");
    for (std::uint64_t i = 0; i < n; ++i) s.order.push_back(r.i64());
    s.cursor = r.i64();
    ck.sampler = std::move(s);
  }
  ck.metadata = r.str();
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const BatchSampler* sampler,
                     const std::string& metadata) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError(fmt::format("cannot write checkpoint '{}'", path.string()));
  const auto bytes = encode_checkpoint(state, sampler, metadata);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError(fmt::format("failed writing checkpoint '{}'", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError(fmt::format("cannot read checkpoint '{}'", path.string()));
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace diffaug
