#include "fsdiff/similarity.hpp"

#include "fsdiff/wavelet.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fsdiff {

namespace {

void check_batch(std::span<const Tensor> batch) {
  if (batch.size() < 2) throw std::invalid_argument("similarity: batch needs at least 2 items");
  for (const auto& t : batch) batch.front().check_same(t, "similarity batch");
}

struct CosineParts {
  RowMatrix sim;      // clipped similarities
  RowMatrix denom;    // |x_i||x_j| + eps
  RowMatrix dot;
  Eigen::VectorXd norm;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> clipped;
};

CosineParts cosine_parts(const RowMatrix& x) {
  CosineParts p;
  const Eigen::Index n = x.rows();
  p.dot = x * x.transpose();
  p.norm = p.dot.diagonal().cwiseMax(0.0).cwiseSqrt();
  p.denom = (p.norm * p.norm.transpose()).array() + kCosineEps;
  p.sim = p.dot.cwiseQuotient(p.denom);
  p.clipped.setConstant(n, n, false);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      double& s = p.sim(i, j);
      if (s > 1.0 || s < -1.0) {
        s = std::clamp(s, -1.0, 1.0);
        p.clipped(i, j) = true;
      }
    }
  return p;
}

// Row-wise softmax over off-diagonal entries; diagonal set to 0.
RowMatrix offdiag_softmax(const RowMatrix& logits) {
  const Eigen::Index n = logits.rows();
  RowMatrix p = RowMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) z += (p(i, j) = std::exp(logits(i, j) - mx));
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) p(i, j) /= z;
  }
  return p;
}

// Chain rule from dL/dS (symmetric contributions already combined) to dL/dX.
RowMatrix cosine_backward(const RowMatrix& x, const CosineParts& c, const RowMatrix& g_sim) {
  const Eigen::Index n = x.rows();
  RowMatrix coef_j = RowMatrix::Zero(n, n);  // multiplies x_j in grad of x_i
  Eigen::VectorXd coef_self = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j || c.clipped(i, j)) continue;
      const double g = g_sim(i, j);
      const double d = c.denom(i, j);
      coef_j(i, j) = g / d;
      if (c.norm(i) > 0.0) coef_self(i) -= g * c.dot(i, j) * c.norm(j) / (d * d * c.norm(i));
    }
  RowMatrix grad = coef_j * x;
  grad += coef_self.asDiagonal() * x;
  return grad;
}

}  // namespace

RowMatrix as_rows(std::span<const Tensor> batch) {
  if (batch.empty()) return {};
  const auto d = static_cast<Eigen::Index>(batch.front().size());
  RowMatrix m(static_cast<Eigen::Index>(batch.size()), d);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch.front().check_same(batch[i], "as_rows");
    m.row(static_cast<Eigen::Index>(i)) = batch[i].vec().transpose();
  }
  return m;
}

double cosine_sim(const Tensor& a, const Tensor& b) {
  a.check_same(b, "cosine_sim");
  const double dot = a.vec().dot(b.vec());
  const double s = dot / (a.vec().norm() * b.vec().norm() + kCosineEps);
  return std::clamp(s, -1.0, 1.0);
}

RowMatrix cosine_matrix(const RowMatrix& rows) { return cosine_parts(rows).sim; }

SimilarityDistribution sim_distribution(std::span<const Tensor> batch, std::size_t anchor) {
  check_batch(batch);
  if (anchor >= batch.size()) throw std::out_of_range("sim_distribution: anchor out of range");
  std::vector<double> sims;
  for (std::size_t j = 0; j < batch.size(); ++j)
    if (j != anchor) sims.push_back(cosine_sim(batch[anchor], batch[j]));
  const double mx = *std::max_element(sims.begin(), sims.end());
  double z = 0.0;
  for (double& s : sims) z += (s = std::exp(s - mx));
  for (double& s : sims) s /= z;
  return {anchor, std::move(sims)};
}

double pairwise_similarity_kl(const RowMatrix& source, const RowMatrix& adapted,
                              RowMatrix* grad_source, RowMatrix* grad_adapted) {
  if (source.rows() != adapted.rows() || source.cols() != adapted.cols())
    throw ShapeError("pairwise_similarity_kl: source and adapted batches differ in shape");
  if (source.rows() < 2) throw std::invalid_argument("pairwise_similarity_kl: N must be >= 2");
  const Eigen::Index n = source.rows();

  const CosineParts cs = cosine_parts(source);
  const CosineParts ca = cosine_parts(adapted);
  const RowMatrix q = offdiag_softmax(cs.sim);
  const RowMatrix p = offdiag_softmax(ca.sim);

  double loss = 0.0;
  Eigen::VectorXd kl = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) kl(i) += p(i, j) * (std::log(p(i, j)) - std::log(q(i, j)));
    loss += kl(i);
  }

  if (grad_adapted) {
    // dL/dz_ij for the adapted logits of anchor i.
    RowMatrix gz = RowMatrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (j != i) gz(i, j) = p(i, j) * (std::log(p(i, j)) - std::log(q(i, j)) - kl(i));
    const RowMatrix g_sim = gz + gz.transpose();
    *grad_adapted = cosine_backward(adapted, ca, g_sim);
  }
  if (grad_source) {
    RowMatrix gz = RowMatrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (j != i) gz(i, j) = q(i, j) - p(i, j);
    const RowMatrix g_sim = gz + gz.transpose();
    *grad_source = cosine_backward(source, cs, g_sim);
  }
  return loss;
}

double pairwise_similarity_loss(std::span<const Tensor> source, std::span<const Tensor> adapted) {
  check_batch(source);
  check_batch(adapted);
  if (source.size() != adapted.size())
    throw std::invalid_argument("pairwise_similarity_loss: batches differ in size");
  return pairwise_similarity_kl(as_rows(source), as_rows(adapted), nullptr, nullptr);
}

double hf_pairwise_similarity_loss(std::span<const Tensor> source, std::span<const Tensor> adapted) {
  std::vector<Tensor> hs, ha;
  for (const auto& t : source) hs.push_back(high_frequency(t));
  for (const auto& t : adapted) ha.push_back(high_frequency(t));
  return pairwise_similarity_loss(hs, ha);
}

}  // namespace fsdiff
