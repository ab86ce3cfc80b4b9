#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "diffaug/rng.hpp"
#include "diffaug/tensor.hpp"

namespace diffaug {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Images (N, 3, R, R) in [-1, 1] with a disjoint train/validation split.
/// Immutable once built; subsampling produces a new Dataset.
struct Dataset {
  std::string name;
  int resolution = 16;
  std::int64_t count = 0;
  std::vector<float> pixels;
  std::vector<std::int64_t> train_indices;
  std::vector<std::int64_t> val_indices;

  std::int64_t image_size() const { return 3LL * resolution * resolution; }
  std::span<const float> image(std::int64_t index) const;
  Tensor gather(std::span<const std::int64_t> indices) const;
  Tensor all() const;
  Tensor train_images() const { return gather(train_indices); }
  Tensor val_images() const { return gather(val_indices); }
};

/// Fraction of the full dataset held out for validation, carved before any
/// subsampling.
inline constexpr double kValidationFraction = 0.2;

/// Seeded split: shuffles all indices, the first ceil(0.2 N) become val.
void assign_split(Dataset& dataset, std::uint64_t seed);

struct SyntheticSpec {
  std::int64_t count = 500;
  int resolution = 16;
  std::uint64_t seed = 0;
  int classes = 4;
};

/// Colored shapes: each image has a class-palette background and one ellipse
/// or rectangle of varying position, size and tint.
Dataset make_synthetic(const SyntheticSpec& spec);

/// Center-cropped, bilinearly resized, scaled to [-1, 1]. Undecodable files
/// are skipped with a warning on stderr. Files are read in name order.
Dataset load_folder(const std::filesystem::path& folder, int resolution, std::uint64_t split_seed);

/// Keeps ceil(fraction * |train|) training images chosen by a seeded
/// shuffle. For a fixed seed, smaller fractions select prefixes of larger
/// ones. Validation is untouched.
Dataset subsample(const Dataset& dataset, double fraction, std::uint64_t seed);

/// Flat binary cache: magic, count, resolution, split sizes, indices, pixels.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Mirrors each image left-right in place.
void flip_horizontal(std::span<float> images, std::int64_t channels, std::int64_t height, std::int64_t width);

/// Endless stream of training batches. Shuffled epochs when the training
/// split holds at least `batch_size` images, uniform sampling with
/// replacement otherwise. Each image is mirrored with `flip_probability`.
class BatchSampler {
 public:
  BatchSampler(std::shared_ptr<const Dataset> dataset, int batch_size, double flip_probability, Rng rng);

  Tensor next();

  struct State {
    std::string rng;
    std::vector<std::int64_t> order;
    std::int64_t cursor = 0;
    bool operator==(const State&) const = default;
  };
  State state() const;
  void restore(const State& state);

  int batch_size() const { return batch_size_; }

 private:
  std::shared_ptr<const Dataset> dataset_;
  int batch_size_;
  double flip_probability_;
  Rng rng_;
  std::vector<std::int64_t> order_;
  std::int64_t cursor_ = 0;
};

/// Writes images (N, 3, R, R) in [-1, 1] as one lossless PNG tiled
/// `columns` wide.
void write_image_grid(const std::filesystem::path& path, const Tensor& images, int columns);

}  // namespace diffaug
