#include "fsdiff/metrics.hpp"

#include "fsdiff/rng.hpp"
#include "fsdiff/wavelet.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fsdiff {

std::vector<Eigen::VectorXd> haar_pyramid_groups(const Tensor& image, std::size_t levels) {
  if (image.rank() < 2) throw ShapeError("haar_pyramid_groups: image needs at least 2 dimensions");
  std::vector<Eigen::VectorXd> groups;
  Tensor ll = image;
  for (std::size_t l = 0; l < levels; ++l) {
    const auto& s = ll.shape();
    const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
    if (h % 2 || w % 2 || h < 2 || w < 2) break;
    FrequencyBands<double> b = haar_decompose(ll);
    const auto n = static_cast<Eigen::Index>(b.lh.size());
    Eigen::VectorXd g(3 * n);
    g << b.lh.vec(), b.hl.vec(), b.hh.vec();
    groups.push_back(std::move(g));
    ll = std::move(b.ll);
  }
  groups.push_back(ll.vec());
  return groups;
}

double HaarMultiScaleDistance::distance(const Tensor& a, const Tensor& b) const {
  a.check_same(b, "haar-ms distance");
  const auto ga = haar_pyramid_groups(a, levels_);
  const auto gb = haar_pyramid_groups(b, levels_);
  double acc = 0.0;
  for (std::size_t g = 0; g < ga.size(); ++g) {
    const double n = static_cast<double>(ga[g].size());
    const double diff = (ga[g] - gb[g]).squaredNorm() / n;
    const double energy = 0.5 * (ga[g].squaredNorm() + gb[g].squaredNorm()) / n;
    acc += diff / (energy + 1e-8);
  }
  return std::sqrt(acc / static_cast<double>(ga.size()));
}

double PixelMseDistance::distance(const Tensor& a, const Tensor& b) const {
  a.check_same(b, "pixel-mse distance");
  return (a.vec() - b.vec()).squaredNorm() / static_cast<double>(a.size());
}

const Eigen::MatrixXd& HaarRandomProjectionEmbedder::projection(Eigen::Index input_dim) const {
  std::lock_guard lock(mu_);
  auto it = cache_.find(input_dim);
  if (it != cache_.end()) return it->second;
  SeededRng rng = SeededRng(seed_).child(static_cast<std::uint64_t>(input_dim));
  Eigen::MatrixXd p(static_cast<Eigen::Index>(dim_), input_dim);
  const double sc = 1.0 / std::sqrt(static_cast<double>(dim_));
  for (Eigen::Index r = 0; r < p.rows(); ++r)
    for (Eigen::Index c = 0; c < p.cols(); ++c) p(r, c) = sc * rng.normal();
  return cache_.emplace(input_dim, std::move(p)).first->second;
}

Eigen::VectorXd HaarRandomProjectionEmbedder::embed(const Tensor& image) const {
  const auto groups = haar_pyramid_groups(image, levels_);
  Eigen::Index total = 0;
  for (const auto& g : groups) total += g.size();
  Eigen::VectorXd feat(total);
  Eigen::Index off = 0;
  for (const auto& g : groups) {
    feat.segment(off, g.size()) = g;
    off += g.size();
  }
  return projection(total) * feat;
}

std::unique_ptr<PerceptualDistance> make_distance(const std::string& name) {
  if (name == "haar-ms") return std::make_unique<HaarMultiScaleDistance>();
  if (name == "pixel-mse") return std::make_unique<PixelMseDistance>();
  throw std::invalid_argument("unknown distance '" + name + "' (expected haar-ms or pixel-mse)");
}

std::unique_ptr<Embedder> make_embedder(const std::string& name) {
  if (name == "haar-rp64") return std::make_unique<HaarRandomProjectionEmbedder>();
  throw std::invalid_argument("unknown embedder '" + name + "' (expected haar-rp64)");
}

namespace {
void require_nonempty(std::span<const Tensor> s, const char* what) {
  if (s.empty()) throw std::invalid_argument(std::string(what) + ": image set is empty");
}
}  // namespace

double nearest_distance_score(std::span<const Tensor> generated, std::span<const Tensor> training,
                              const PerceptualDistance& d, bool include_flips) {
  require_nonempty(generated, "nearest_distance_score (generated)");
  require_nonempty(training, "nearest_distance_score (training)");
  std::vector<Tensor> refs(training.begin(), training.end());
  if (include_flips)
    for (const auto& t : training) refs.push_back(flip_horizontal(t));
  double sum = 0.0;
  for (const auto& g : generated) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : refs) best = std::min(best, d.distance(g, r));
    sum += best;
  }
  return sum / static_cast<double>(generated.size());
}

ClusterReport intra_cluster_diversity(std::span<const Tensor> generated, std::span<const Tensor> training,
                                      const PerceptualDistance& d) {
  require_nonempty(generated, "intra_cluster_diversity (generated)");
  require_nonempty(training, "intra_cluster_diversity (training)");
  ClusterReport rep;
  rep.member_counts.assign(training.size(), 0);
  rep.cluster_mean.assign(training.size(), std::nullopt);
  std::vector<std::vector<std::size_t>> members(training.size());
  for (std::size_t g = 0; g < generated.size(); ++g) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < training.size(); ++k) {
      const double dist = d.distance(generated[g], training[k]);
      if (dist < best_d) {
        best_d = dist;
        best = k;
      }
    }
    rep.assignment.push_back(best);
    members[best].push_back(g);
    ++rep.member_counts[best];
  }
  std::vector<double> means;
  for (std::size_t k = 0; k < training.size(); ++k) {
    const auto& m = members[k];
    if (m.size() < 2) continue;
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < m.size(); ++i)
      for (std::size_t j = i + 1; j < m.size(); ++j, ++pairs) sum += d.distance(generated[m[i]], generated[m[j]]);
    rep.cluster_mean[k] = sum / static_cast<double>(pairs);
    means.push_back(*rep.cluster_mean[k]);
  }
  rep.included_clusters = means.size();
  if (!means.empty()) {
    double mu = 0.0;
    for (double v : means) mu += v;
    mu /= static_cast<double>(means.size());
    double var = 0.0;
    for (double v : means) var += (v - mu) * (v - mu);
    rep.overall_mean = mu;
    rep.std_dev = std::sqrt(var / static_cast<double>(means.size()));
  }
  return rep;
}

double average_pairwise_diversity(std::span<const Tensor> samples, const PerceptualDistance& d) {
  if (samples.size() < 2) throw std::invalid_argument("average_pairwise_diversity: need at least 2 samples");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = i + 1; j < samples.size(); ++j, ++pairs) sum += d.distance(samples[i], samples[j]);
  return sum / static_cast<double>(pairs);
}

GaussianMoments fit_gaussian(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 2) throw std::invalid_argument("fit_gaussian: need at least 2 samples");
  if (!rows.allFinite()) throw std::invalid_argument("fit_gaussian: non-finite embeddings");
  GaussianMoments m;
  m.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - m.mean.transpose();
  m.cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
  return m;
}

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw std::runtime_error("symmetric_sqrt: eigendecomposition failed");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double frechet_distance(const GaussianMoments& a, const GaussianMoments& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows())
    throw ShapeError("frechet_distance: moment dimensions differ");
  const Eigen::MatrixXd root_a = symmetric_sqrt(a.cov);
  Eigen::MatrixXd inner = root_a * b.cov * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::runtime_error("frechet_distance: eigendecomposition failed");
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

FrechetResult frechet_distance(std::span<const Tensor> set_a, std::span<const Tensor> set_b, const Embedder& e) {
  auto embed_all = [&](std::span<const Tensor> set) {
    if (set.size() < 2) throw std::invalid_argument("frechet_distance: each set needs at least 2 images");
    Eigen::MatrixXd rows;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const Eigen::VectorXd v = e.embed(set[i]);
      if (!v.allFinite()) throw std::invalid_argument("frechet_distance: non-finite embedding");
      if (i == 0) rows.resize(static_cast<Eigen::Index>(set.size()), v.size());
      rows.row(static_cast<Eigen::Index>(i)) = v.transpose();
    }
    return rows;
  };
  const Eigen::MatrixXd ra = embed_all(set_a), rb = embed_all(set_b);
  FrechetResult r;
  r.undersampled = ra.rows() < ra.cols() || rb.rows() < rb.cols();
  r.value = frechet_distance(fit_gaussian(ra), fit_gaussian(rb));
  return r;
}

}  // namespace fsdiff
