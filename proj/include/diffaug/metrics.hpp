#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "diffaug/augment.hpp"
#include "diffaug/nn.hpp"
#include "diffaug/rng.hpp"
#include "diffaug/tensor.hpp"

namespace diffaug {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed random conv net (3 stride-2 blocks, global average pool, 64-dim
/// output) used in place of a trained classifier. Never trained; the seed
/// fully determines its weights.
class FeatureExtractor {
 public:
  static constexpr int kFeatureDim = 64;

  explicit FeatureExtractor(std::uint64_t seed);

  /// Rows are images, columns features.
  Eigen::MatrixXd features(const Tensor& images) const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

GaussianStats gaussian_stats(const Eigen::MatrixXd& features);

/// |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)). The trace of the root is
/// taken from the eigenvalues of S1^(1/2) S2 S1^(1/2), negatives clamped.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

inline constexpr std::int64_t kMinFidSamples = 64;

double proxy_fid(const Tensor& real_images, const Tensor& generated_images, const FeatureExtractor& extractor);

/// Fraction of logits with the correct strict sign (real > 0, fake < 0).
double sign_accuracy(const Tensor& logits, bool real);

struct AccuracyRecord {
  double train_real = 0.0;
  double val_real = 0.0;
  double fake = 0.0;
  double t_real = 0.0;
  double t_fake = 0.0;
  double raw_fake = 0.0;
};

/// Discriminator accuracies on raw train / validation reals and raw fakes,
/// plus the augmented streams T(x) (train reals) and T(G(z)).
AccuracyRecord d_accuracies(const Critic& d, const Tensor& train_reals, const Tensor& val_reals, const Tensor& fakes,
                            const Policy& policy, Rng& augment_rng);

/// Near-zero threshold used by the artifact detectors.
inline constexpr float kNearZero = 0.05f;

/// Mean over images of the largest near-zero pixel fraction inside any
/// (R/2)-side window.
double cutout_artifact_score(const Tensor& images);
/// Mean over images of the largest near-zero fraction in any border band of
/// width 1..R/8.
double translation_artifact_score(const Tensor& images);
/// Max of the detectors applicable to `policy` (0 when none applies).
double artifact_score(const Tensor& images, const Policy& policy);

struct MetricsRecord {
  std::int64_t step = 0;
  double proxy_fid = 0.0;
  AccuracyRecord acc;
  double loss_d = 0.0;
  double loss_g = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& record);

}  // namespace diffaug
