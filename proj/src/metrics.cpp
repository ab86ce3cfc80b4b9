#include "diffaug/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "diffaug/ops.hpp"

namespace diffaug {

namespace {

constexpr std::int64_t kChunk = 128;
constexpr int kWidths[] = {32, 64, FeatureExtractor::kFeatureDim};

// Symmetric PSD square root via eigendecomposition; nullopt when the solver
// does not converge.
std::optional<Eigen::MatrixXd> sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) return std::nullopt;
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

std::optional<double> trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  auto ra = sqrt_psd(a);
  if (!ra) return std::nullopt;
  Eigen::MatrixXd inner = *ra * b * *ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success || !es.eigenvalues().allFinite()) return std::nullopt;
  return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

std::vector<std::uint8_t> near_zero_mask(std::span<const float> img, std::int64_t h, std::int64_t w) {
  std::vector<std::uint8_t> mask(h * w);
  for (std::int64_t p = 0; p < h * w; ++p) {
    bool zero = true;
    for (int c = 0; c < 3; ++c) zero = zero && std::abs(img[c * h * w + p]) < kNearZero;
    mask[p] = zero ? 1 : 0;
  }
  return mask;
}

void check_images(const char* what, const Tensor& images) {
  if (images.ndim() != 4 || images.dim(1) != 3 || images.dim(2) != images.dim(3)) {
    throw MetricError(fmt::format("{}: expected square (N, 3, R, R) images, got {}", what, shape_str(images.shape())));
  }
}

}  // namespace

FeatureExtractor::FeatureExtractor(std::uint64_t seed) : seed_(seed) {
  Rng rng = Rng::derive(seed, 0xfea7);
  std::int64_t in = 3;
  for (int width : kWidths) {
    const float stddev = std::sqrt(2.0f / static_cast<float>(in * 9));
    weights_.push_back(rng.normal_tensor({width, in, 3, 3}, stddev));
    biases_.push_back(rng.normal_tensor({width}, 0.1f));
    in = width;
  }
}

Eigen::MatrixXd FeatureExtractor::features(const Tensor& images) const {
  check_images("features", images);
  NoGradGuard no_grad;
  const auto n = images.dim(0);
  Eigen::MatrixXd out(n, kFeatureDim);
  for (std::int64_t start = 0; start < n; start += kChunk) {
    const auto end = std::min(n, start + kChunk);
    Tensor h = slice(images, 0, start, end);
    for (std::size_t l = 0; l < weights_.size(); ++l) h = leaky_relu(conv2d(h, weights_[l], biases_[l], {2, 1}), 0.2f);
    const auto plane = h.dim(2) * h.dim(3);
    auto hv = h.data();
    for (std::int64_t i = 0; i < end - start; ++i) {
      for (int f = 0; f < kFeatureDim; ++f) {
        double acc = 0.0;
        for (std::int64_t p = 0; p < plane; ++p) acc += hv[(i * kFeatureDim + f) * plane + p];
        out(start + i, f) = acc / static_cast<double>(plane);
      }
    }
  }
  return out;
}

GaussianStats gaussian_stats(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw MetricError("gaussian_stats: need at least two samples");
  GaussianStats s;
  s.mean = features.colwise().mean().transpose();
  Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(features.rows() - 1);
  return s;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  const double mean_term = (a.mean - b.mean).squaredNorm();
  auto tr = trace_sqrt_product(a.cov, b.cov);
  Eigen::MatrixXd ca = a.cov, cb = b.cov;
  if (!tr) {
    const auto eps = 1e-6 * Eigen::MatrixXd::Identity(ca.rows(), ca.cols());
    ca += eps;
    cb += eps;
    tr = trace_sqrt_product(ca, cb);
    if (!tr) throw MetricError("frechet_distance: covariance square root failed after regularization");
  }
  const double d = mean_term + ca.trace() + cb.trace() - 2.0 * *tr;
  return std::max(0.0, d);
}

double proxy_fid(const Tensor& real_images, const Tensor& generated_images, const FeatureExtractor& extractor) {
  check_images("proxy_fid", real_images);
  check_images("proxy_fid", generated_images);
  if (real_images.dim(0) < kMinFidSamples || generated_images.dim(0) < kMinFidSamples) {
    throw MetricError(fmt::format("proxy_fid: need at least {} images per side, got {} and {}", kMinFidSamples,
                                  real_images.dim(0), generated_images.dim(0)));
  }
  return frechet_distance(gaussian_stats(extractor.features(real_images)),
                          gaussian_stats(extractor.features(generated_images)));
}

double sign_accuracy(const Tensor& logits, bool real) {
  if (logits.numel() == 0) throw MetricError("sign_accuracy: no samples");
  std::int64_t correct = 0;
  for (float v : logits.data()) correct += real ? (v > 0.0f) : (v < 0.0f);
  return static_cast<double>(correct) / static_cast<double>(logits.numel());
}

AccuracyRecord d_accuracies(const Critic& d, const Tensor& train_reals, const Tensor& val_reals, const Tensor& fakes,
                            const Policy& policy, Rng& augment_rng) {
  if (val_reals.ndim() == 0 || val_reals.dim(0) == 0) throw MetricError("d_accuracies: empty validation split");
  NoGradGuard no_grad;
  AccuracyRecord r;
  r.train_real = sign_accuracy(d.forward(train_reals), true);
  r.val_real = sign_accuracy(d.forward(val_reals), true);
  r.fake = sign_accuracy(d.forward(fakes), false);
  r.raw_fake = r.fake;
  r.t_real = sign_accuracy(d.forward(apply_policy(train_reals, policy, augment_rng).output), true);
  r.t_fake = sign_accuracy(d.forward(apply_policy(fakes, policy, augment_rng).output), false);
  return r;
}

double cutout_artifact_score(const Tensor& images) {
  check_images("cutout_artifact_score", images);
  const auto n = images.dim(0), r = images.dim(2);
  const auto side = std::max<std::int64_t>(1, r / 2);
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    auto mask = near_zero_mask(images.data().subspan(i * 3 * r * r, 3 * r * r), r, r);
    // Summed-area table for O(1) window counts.
    std::vector<std::int64_t> sat((r + 1) * (r + 1), 0);
    for (std::int64_t y = 0; y < r; ++y) {
      for (std::int64_t x = 0; x < r; ++x) {
        sat[(y + 1) * (r + 1) + x + 1] =
            mask[y * r + x] + sat[y * (r + 1) + x + 1] + sat[(y + 1) * (r + 1) + x] - sat[y * (r + 1) + x];
      }
    }
    std::int64_t best = 0;
    for (std::int64_t y = 0; y + side <= r; ++y) {
      for (std::int64_t x = 0; x + side <= r; ++x) {
        const auto c = sat[(y + side) * (r + 1) + x + side] - sat[y * (r + 1) + x + side] -
                       sat[(y + side) * (r + 1) + x] + sat[y * (r + 1) + x];
        best = std::max(best, c);
      }
    }
    total += static_cast<double>(best) / static_cast<double>(side * side);
  }
  return total / static_cast<double>(n);
}

double translation_artifact_score(const Tensor& images) {
  check_images("translation_artifact_score", images);
  const auto n = images.dim(0), r = images.dim(2);
  const auto max_band = std::max<std::int64_t>(1, r / 8);
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    auto mask = near_zero_mask(images.data().subspan(i * 3 * r * r, 3 * r * r), r, r);
    double best = 0.0;
    for (std::int64_t w = 1; w <= max_band; ++w) {
      std::int64_t top = 0, bottom = 0, left = 0, right = 0;
      for (std::int64_t a = 0; a < w; ++a) {
        for (std::int64_t b = 0; b < r; ++b) {
          top += mask[a * r + b];
          bottom += mask[(r - 1 - a) * r + b];
          left += mask[b * r + a];
          right += mask[b * r + (r - 1 - a)];
        }
      }
      const double denom = static_cast<double>(w * r);
      best = std::max({best, top / denom, bottom / denom, left / denom, right / denom});
    }
    total += best;
  }
  return total / static_cast<double>(n);
}

double artifact_score(const Tensor& images, const Policy& policy) {
  double score = 0.0;
  if (policy.contains(AugmentKind::Cutout)) score = std::max(score, cutout_artifact_score(images));
  if (policy.contains(AugmentKind::Translation)) score = std::max(score, translation_artifact_score(images));
  return score;
}

std::string metrics_csv_header() {
  return "step,proxy_fid,acc_train_real,acc_val_real,acc_fake,acc_T_real,acc_T_fake,acc_raw_fake,loss_d,loss_g";
}

std::string metrics_csv_row(const MetricsRecord& m) {
  return fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}", m.step, m.proxy_fid,
                     m.acc.train_real, m.acc.val_real, m.acc.fake, m.acc.t_real, m.acc.t_fake, m.acc.raw_fake, m.loss_d,
                     m.loss_g);
}

}  // namespace diffaug
