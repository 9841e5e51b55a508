#pragma once

#include "fsdiff/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fsdiff {

// Image-to-image distance. Implementations must give d(a, a) = 0 and be symmetric.
class PerceptualDistance {
 public:
  virtual ~PerceptualDistance() = default;
  virtual std::string name() const = 0;
  virtual double distance(const Tensor& a, const Tensor& b) const = 0;
};

// Image -> fixed-length feature vector. Must be deterministic.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  virtual Eigen::VectorXd embed(const Tensor& image) const = 0;
};

// Coefficient groups of a multi-level Haar decomposition of a (C, H, W) image:
// one group per level holding that level's LH, HL and HH bands, then a final
// group holding the coarsest LL. Levels stop early when a side turns odd.
std::vector<Eigen::VectorXd> haar_pyramid_groups(const Tensor& image, std::size_t levels);

// Built-in LPIPS stand-in ("haar-ms"). Per group g, the mean squared
// coefficient difference is divided by the pair's pooled mean-square energy
// 0.5 (E[a_g^2] + E[b_g^2]) + 1e-8; the result is the root of the mean over groups.
// Not equivalent to LPIPS; it is a deterministic, detail-sensitive surrogate.
class HaarMultiScaleDistance final : public PerceptualDistance {
 public:
  explicit HaarMultiScaleDistance(std::size_t levels = 3) : levels_(levels) {}
  std::string name() const override { return "haar-ms"; }
  double distance(const Tensor& a, const Tensor& b) const override;

 private:
  std::size_t levels_;
};

// Mean squared pixel difference ("pixel-mse").
class PixelMseDistance final : public PerceptualDistance {
 public:
  std::string name() const override { return "pixel-mse"; }
  double distance(const Tensor& a, const Tensor& b) const override;
};

// Built-in Frechet embedder ("haar-rp64"): the full 3-level Haar coefficient
// vector projected by a fixed seeded Gaussian matrix (entries N(0, 1/dim)).
class HaarRandomProjectionEmbedder final : public Embedder {
 public:
  explicit HaarRandomProjectionEmbedder(std::size_t dim = 64, std::uint64_t seed = 0x5eed0064ULL,
                                        std::size_t levels = 3)
      : dim_(dim), seed_(seed), levels_(levels) {}
  std::string name() const override { return "haar-rp64"; }
  Eigen::VectorXd embed(const Tensor& image) const override;

 private:
  const Eigen::MatrixXd& projection(Eigen::Index input_dim) const;
  std::size_t dim_;
  std::uint64_t seed_;
  std::size_t levels_;
  mutable std::mutex mu_;
  mutable std::map<Eigen::Index, Eigen::MatrixXd> cache_;
};

std::unique_ptr<PerceptualDistance> make_distance(const std::string& name);
std::unique_ptr<Embedder> make_embedder(const std::string& name);

// Mean over generated images of the minimum distance to any training image
// (horizontal flips of the training images added when include_flips).
double nearest_distance_score(std::span<const Tensor> generated, std::span<const Tensor> training,
                              const PerceptualDistance& d, bool include_flips);

struct ClusterReport {
  std::vector<std::size_t> assignment;        // generated index -> training index
  std::vector<std::size_t> member_counts;     // per training sample
  std::vector<std::optional<double>> cluster_mean;  // absent for clusters with < 2 members
  std::size_t included_clusters = 0;
  std::optional<double> overall_mean;         // absent when no cluster has >= 2 members
  std::optional<double> std_dev;              // population std across included clusters
  bool defined() const { return overall_mean.has_value(); }
};

// Assign each generated image to its nearest training image (ties -> lowest
// index); average pairwise distance within each cluster; mean and std over
// clusters with at least two members.
ClusterReport intra_cluster_diversity(std::span<const Tensor> generated, std::span<const Tensor> training,
                                      const PerceptualDistance& d);

// Mean distance over all unordered pairs.
double average_pairwise_diversity(std::span<const Tensor> samples, const PerceptualDistance& d);

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Sample mean and unbiased (n - 1) covariance of the rows.
GaussianMoments fit_gaussian(const Eigen::MatrixXd& rows);

// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}). The trace of the square root
// is taken as sum sqrt(max(lambda, 0)) over eigenvalues of the symmetric
// S1^{1/2} S2 S1^{1/2}, with S1^{1/2} from a symmetric eigendecomposition.
double frechet_distance(const GaussianMoments& a, const GaussianMoments& b);

struct FrechetResult {
  double value = 0.0;
  bool undersampled = false;  // some set has fewer samples than embedding dimensions
};

FrechetResult frechet_distance(std::span<const Tensor> set_a, std::span<const Tensor> set_b, const Embedder& e);

// Symmetric matrix square root via eigendecomposition, eigenvalues clamped at 0.
Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& m);

}  // namespace fsdiff
