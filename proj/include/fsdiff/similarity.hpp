#pragma once

#include "fsdiff/tensor.hpp"

#include <span>
#include <vector>

namespace fsdiff {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kCosineEps = 1e-12;

// <a,b> / (|a||b| + 1e-12), clipped to [-1, 1]. Zero vectors give 0.
double cosine_sim(const Tensor& a, const Tensor& b);

// Softmax (temperature 1) over the cosine similarities from `anchor` to every
// other item, ordered by ascending index with the anchor skipped.
struct SimilarityDistribution {
  std::size_t anchor = 0;
  std::vector<double> probs;
};

SimilarityDistribution sim_distribution(std::span<const Tensor> batch, std::size_t anchor);

// sum_i KL(p_i^ada || p_i^src). The KL runs adapted-to-source, and there is
// no 1/N normalisation over anchors.
double pairwise_similarity_loss(std::span<const Tensor> source, std::span<const Tensor> adapted);

// Same loss after mapping every item through high_frequency().
double hf_pairwise_similarity_loss(std::span<const Tensor> source, std::span<const Tensor> adapted);

// Matrix form: each row is one flattened item. Optionally returns dL/dsource
// and dL/dadapted (pass nullptr to skip).
double pairwise_similarity_kl(const RowMatrix& source, const RowMatrix& adapted,
                              RowMatrix* grad_source, RowMatrix* grad_adapted);

// Pairwise cosine matrix of rows (diagonal left at 1 for nonzero rows).
RowMatrix cosine_matrix(const RowMatrix& rows);

RowMatrix as_rows(std::span<const Tensor> batch);

}  // namespace fsdiff
