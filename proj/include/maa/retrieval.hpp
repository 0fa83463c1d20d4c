#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace maa::eval {

using EmbeddingMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 0-based rank of each query's true gallery item under cosine similarity.
/// Ties are broken by gallery index (a tied item with a lower index ranks
/// ahead of the true match).
std::vector<std::size_t> true_match_ranks(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery,
                                          std::span<const std::size_t> ground_truth);

/// Percentage of queries whose true match is within the top K.
double recall_at_k(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery,
                   std::span<const std::size_t> ground_truth, std::size_t k);

double recall_from_ranks(std::span<const std::size_t> ranks, std::size_t k);

/// Among queries correct at K on clean data, the percentage whose
/// adversarial counterpart is not. nullopt when no query is cleanly correct.
std::optional<double> attack_success_rate(std::span<const std::size_t> clean_ranks,
                                          std::span<const std::size_t> adv_ranks, std::size_t k);

EmbeddingMatrix stack_rows(const std::vector<std::vector<float>>& rows);

}  // namespace maa::eval
