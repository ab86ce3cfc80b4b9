#include "diffaug/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace diffaug {

namespace {

constexpr char kDatasetMagic[8] = {'D', 'A', 'U', 'G', 'D', 'S', 'E', 'T'};

// Background / foreground colors per class. Channel magnitudes stay well away
// from zero so zeroed regions are never confused with content.
constexpr std::array<std::array<std::array<float, 3>, 2>, 8> kPalettes{{
    {{{-0.7f, -0.6f, 0.6f}, {0.8f, 0.7f, -0.5f}}},
    {{{0.6f, -0.7f, -0.6f}, {-0.5f, 0.8f, 0.7f}}},
    {{{-0.6f, 0.6f, -0.7f}, {0.7f, -0.5f, 0.8f}}},
    {{{0.5f, 0.5f, 0.6f}, {-0.8f, -0.7f, -0.5f}}},
    {{{-0.8f, -0.8f, -0.8f}, {0.8f, 0.8f, 0.5f}}},
    {{{0.7f, 0.5f, -0.8f}, {-0.6f, -0.5f, 0.8f}}},
    {{{-0.5f, 0.7f, 0.7f}, {0.8f, -0.8f, -0.6f}}},
    {{{0.8f, -0.5f, 0.5f}, {-0.5f, 0.6f, -0.8f}}},
}};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("dataset cache truncated");
  return v;
}

}  // namespace

std::span<const float> Dataset::image(std::int64_t index) const {
  if (index < 0 || index >= count) throw DataError(fmt::format("image index {} out of range [0, {})", index, count));
  return std::span<const float>(pixels).subspan(index * image_size(), image_size());
}

Tensor Dataset::gather(std::span<const std::int64_t> indices) const {
  std::vector<float> out;
  out.reserve(indices.size() * image_size());
  for (auto i : indices) {
    auto img = image(i);
    out.insert(out.end(), img.begin(), img.end());
  }
  return Tensor::from_data({static_cast<std::int64_t>(indices.size()), 3, resolution, resolution}, std::move(out));
}

Tensor Dataset::all() const { return Tensor::from_data({count, 3, resolution, resolution}, pixels); }

void assign_split(Dataset& dataset, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0x5711);
  auto order = rng.permutation(dataset.count);
  const auto val = static_cast<std::int64_t>(std::ceil(kValidationFraction * static_cast<double>(dataset.count)));
  if (val < 1 || val >= dataset.count) throw DataError(fmt::format("dataset of {} images is too small to split", dataset.count));
  dataset.val_indices.assign(order.begin(), order.begin() + val);
  dataset.train_indices.assign(order.begin() + val, order.end());
  std::sort(dataset.val_indices.begin(), dataset.val_indices.end());
  std::sort(dataset.train_indices.begin(), dataset.train_indices.end());
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.resolution != 16 && spec.resolution != 32) {
    throw DataError(fmt::format("synthetic resolution must be 16 or 32, got {}", spec.resolution));
  }
  if (spec.count < 80) throw DataError(fmt::format("synthetic dataset needs at least 80 images, got {}", spec.count));
  if (spec.classes < 1 || spec.classes > static_cast<int>(kPalettes.size())) {
    throw DataError(fmt::format("synthetic classes must be in [1, {}]", kPalettes.size()));
  }
  Dataset ds;
  ds.name = fmt::format("synthetic-shapes-{}-{}", spec.count, spec.resolution);
  ds.resolution = spec.resolution;
  ds.count = spec.count;
  ds.pixels.resize(spec.count * ds.image_size());
  Rng rng = Rng::derive(spec.seed, 0xda7a);
  const int r = spec.resolution;
  const double rf = r;
  for (std::int64_t i = 0; i < spec.count; ++i) {
    const auto cls = rng.uniform_int(0, spec.classes);
    std::array<float, 3> bg{}, fg{};
    for (int c = 0; c < 3; ++c) {
      bg[c] = kPalettes[cls][0][c] + static_cast<float>(rng.uniform(-0.1, 0.1));
      fg[c] = kPalettes[cls][1][c] + static_cast<float>(rng.uniform(-0.15, 0.15));
    }
    const bool ellipse = rng.bernoulli(0.5);
    const double cy = rng.uniform(0.25 * rf, 0.75 * rf);
    const double cx = rng.uniform(0.25 * rf, 0.75 * rf);
    const double ry = rng.uniform(rf / 6.0, rf / 3.0);
    const double rx = rng.uniform(rf / 6.0, rf / 3.0);
    float* img = ds.pixels.data() + i * ds.image_size();
    for (int y = 0; y < r; ++y) {
      for (int x = 0; x < r; ++x) {
        const double dy = (y + 0.5 - cy) / ry;
        const double dx = (x + 0.5 - cx) / rx;
        const bool inside = ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        // Vertical shading so images are not piecewise constant.
        const float shade = static_cast<float>(0.1 * (y + 0.5 - rf / 2) / rf);
        for (int c = 0; c < 3; ++c) {
          const float v = (inside ? fg[c] : bg[c]) + (c == 0 ? shade : -shade);
          img[(c * r + y) * r + x] = std::clamp(v, -1.0f, 1.0f);
        }
      }
    }
  }
  assign_split(ds, spec.seed);
  return ds;
}

Dataset load_folder(const std::filesystem::path& folder, int resolution, std::uint64_t split_seed) {
  if (resolution < 1) throw DataError("load_folder: resolution must be positive");
  if (!std::filesystem::is_directory(folder)) throw DataError(fmt::format("load_folder: '{}' is not a directory", folder.string()));
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(folder)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  Dataset ds;
  ds.name = folder.filename().string();
  ds.resolution = resolution;
  for (const auto& file : files) {
    cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
      std::cerr << "warning: skipping unreadable image " << file << '\n';
      continue;
    }
    const int side = std::min(bgr.rows, bgr.cols);
    cv::Mat square = bgr(cv::Rect((bgr.cols - side) / 2, (bgr.rows - side) / 2, side, side));
    cv::Mat resized;
    if (side == resolution) {
      resized = square.clone();
    } else {
      cv::resize(square, resized, cv::Size(resolution, resolution), 0, 0, cv::INTER_LINEAR);
    }
    const auto base = ds.pixels.size();
    ds.pixels.resize(base + ds.image_size());
    for (int y = 0; y < resolution; ++y) {
      for (int x = 0; x < resolution; ++x) {
        const auto& px = resized.at<cv::Vec3b>(y, x);
        for (int c = 0; c < 3; ++c) {
          // OpenCV stores BGR.
          ds.pixels[base + (c * resolution + y) * resolution + x] = static_cast<float>(px[2 - c]) / 127.5f - 1.0f;
        }
      }
    }
    ++ds.count;
  }
  if (ds.count == 0) throw DataError(fmt::format("load_folder: no decodable images in '{}'", folder.string()));
  if (ds.count >= 2) assign_split(ds, split_seed);
  else ds.train_indices = {0};
  return ds;
}

Dataset subsample(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DataError(fmt::format("fraction must be in (0, 1], got {}", fraction));
  const auto n = static_cast<std::int64_t>(dataset.train_indices.size());
  // Guard against 0.1 * 100 evaluating to 10.000000000000002.
  const auto keep = static_cast<std::int64_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  if (keep < 1) throw DataError("subsample: fraction selects zero images");
  Rng rng = Rng::derive(seed, 0x50b5);
  auto order = rng.permutation(n);
  Dataset out = dataset;
  out.train_indices.clear();
  for (std::int64_t i = 0; i < keep; ++i) out.train_indices.push_back(dataset.train_indices[order[i]]);
  out.name = fmt::format("{}@{}", dataset.name, fraction);
  return out;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(fmt::format("cannot write '{}'", path.string()));
  os.write(kDatasetMagic, sizeof(kDatasetMagic));
  write_pod<std::int64_t>(os, dataset.count);
  write_pod<std::int64_t>(os, dataset.resolution);
  write_pod<std::int64_t>(os, static_cast<std::int64_t>(dataset.train_indices.size()));
  write_pod<std::int64_t>(os, static_cast<std::int64_t>(dataset.val_indices.size()));
  os.write(reinterpret_cast<const char*>(dataset.train_indices.data()), dataset.train_indices.size() * sizeof(std::int64_t));
  os.write(reinterpret_cast<const char*>(dataset.val_indices.data()), dataset.val_indices.size() * sizeof(std::int64_t));
  os.write(reinterpret_cast<const char*>(dataset.pixels.data()), dataset.pixels.size() * sizeof(float));
  write_pod<std::int64_t>(os, static_cast<std::int64_t>(dataset.name.size()));
  os.write(dataset.name.data(), dataset.name.size());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(fmt::format("cannot read '{}'", path.string()));
  char magic[sizeof(kDatasetMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0) throw DataError("not a dataset cache file");
  Dataset ds;
  ds.count = read_pod<std::int64_t>(is);
  ds.resolution = static_cast<int>(read_pod<std::int64_t>(is));
  const auto ntrain = read_pod<std::int64_t>(is);
  const auto nval = read_pod<std::int64_t>(is);
  if (ds.count < 0 || ds.resolution < 1 || ntrain < 0 || nval < 0 || ntrain + nval > ds.count) {
    throw DataError("dataset cache header is inconsistent");
  }
  ds.train_indices.resize(ntrain);
  ds.val_indices.resize(nval);
  ds.pixels.resize(ds.count * ds.image_size());
  is.read(reinterpret_cast<char*>(ds.train_indices.data()), ntrain * sizeof(std::int64_t));
  is.read(reinterpret_cast<char*>(ds.val_indices.data()), nval * sizeof(std::int64_t));
  is.read(reinterpret_cast<char*>(ds.pixels.data()), ds.pixels.size() * sizeof(float));
  const auto name_len = read_pod<std::int64_t>(is);
  ds.name.resize(name_len);
  is.read(ds.name.data(), name_len);
  if (!is) throw DataError("dataset cache truncated");
  return ds;
}

void flip_horizontal(std::span<float> images, std::int64_t channels, std::int64_t height, std::int64_t width) {
  const auto rows = static_cast<std::int64_t>(images.size()) / width;
  if (rows * width != static_cast<std::int64_t>(images.size()) || rows % (channels * height) != 0) {
    throw DataError("flip_horizontal: buffer size does not match image shape");
  }
  for (std::int64_t r = 0; r < rows; ++r) std::reverse(images.begin() + r * width, images.begin() + (r + 1) * width);
}

BatchSampler::BatchSampler(std::shared_ptr<const Dataset> dataset, int batch_size, double flip_probability, Rng rng)
    : dataset_(std::move(dataset)), batch_size_(batch_size), flip_probability_(flip_probability), rng_(std::move(rng)) {
  if (!dataset_ || dataset_->train_indices.empty()) throw DataError("BatchSampler: empty training split");
  if (batch_size_ < 1) throw DataError("BatchSampler: batch size must be positive");
  if (flip_probability_ < 0.0 || flip_probability_ > 1.0) throw DataError("BatchSampler: flip probability outside [0, 1]");
}

Tensor BatchSampler::next() {
  const auto& ds = *dataset_;
  const auto n = static_cast<std::int64_t>(ds.train_indices.size());
  std::vector<std::int64_t> picks;
  picks.reserve(batch_size_);
  if (n >= batch_size_) {
    while (static_cast<int>(picks.size()) < batch_size_) {
      if (cursor_ >= static_cast<std::int64_t>(order_.size())) {
        order_ = rng_.permutation(n);
        cursor_ = 0;
      }
      picks.push_back(ds.train_indices[order_[cursor_++]]);
    }
  } else {
    for (int i = 0; i < batch_size_; ++i) picks.push_back(ds.train_indices[rng_.uniform_int(0, n)]);
  }
  Tensor batch = ds.gather(picks);
  auto px = batch.mutable_data();
  const auto sz = ds.image_size();
  for (int i = 0; i < batch_size_; ++i) {
    if (flip_probability_ > 0.0 && rng_.bernoulli(flip_probability_)) {
      flip_horizontal(px.subspan(i * sz, sz), 3, ds.resolution, ds.resolution);
    }
  }
  return batch;
}

BatchSampler::State BatchSampler::state() const { return {rng_.serialize(), order_, cursor_}; }

void BatchSampler::restore(const State& state) {
  rng_.deserialize(state.rng);
  order_ = state.order;
  cursor_ = state.cursor;
}

void write_image_grid(const std::filesystem::path& path, const Tensor& images, int columns) {
  if (images.ndim() != 4 || images.dim(1) != 3) throw DataError("write_image_grid: expected (N, 3, H, W)");
  if (columns < 1) throw DataError("write_image_grid: columns must be positive");
  const auto n = images.dim(0), h = images.dim(2), w = images.dim(3);
  const auto rows = (n + columns - 1) / columns;
  cv::Mat grid(static_cast<int>(rows * h), static_cast<int>(columns * w), CV_8UC3, cv::Scalar(0, 0, 0));
  auto px = images.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto oy = (i / columns) * h, ox = (i % columns) * w;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        auto& out = grid.at<cv::Vec3b>(static_cast<int>(oy + y), static_cast<int>(ox + x));
        for (int c = 0; c < 3; ++c) {
          const float v = px[((i * 3 + c) * h + y) * w + x];
          out[2 - c] = static_cast<unsigned char>(std::lround(std::clamp((v + 1.0f) * 127.5f, 0.0f, 255.0f)));
        }
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), grid)) throw DataError(fmt::format("failed to write '{}'", path.string()));
}

}  // namespace diffaug
