#pragma once

#include "nplda/embeddings_io.hpp"
#include "nplda/generative_plda.hpp"

#include <Eigen/Dense>

#include <vector>

namespace nplda {

struct TrainConfig;
struct TrainHistory;

// ---------------------------------------------------------------------------
// Discriminative PLDA: a linear model over a quadratic expansion of the pair.

struct DpldaModel {
  Eigen::VectorXd w;  // length 2d² + d + 1
  /// Thresholds for the soft detection-cost objective.
  Eigen::Vector2d theta = Eigen::Vector2d::Zero();

  /// Processed-embedding dimension implied by w's length.
  int dim() const;
};

/// 2d² + d + 1
Eigen::Index dplda_expansion_size(int d);

/// [vec(e tᵀ + t eᵀ); vec(e eᵀ + t tᵀ); e + t; 1], column-major vec.
Eigen::VectorXd dplda_expand(const Eigen::VectorXd& e, const Eigen::VectorXd& t);

/// w = [vec(P); vec(Q); 0; 0], which reproduces score_pair exactly.
DpldaModel dplda_init_from_plda(const ScoreMatrices& pq);

/// Also folds the PLDA mean removal into the linear and constant blocks, so
/// that scores equal plda_score(m, pq, e, t).
DpldaModel dplda_init_from_plda(const GenerativePlda& m, const ScoreMatrices& pq);

double dplda_score(const DpldaModel& m, const Eigen::VectorXd& phi);

/// Scores trials of already preprocessed embeddings.
ScoreSet dplda_score_trials(const DpldaModel& m, const std::vector<Trial>& trials, const EmbeddingSet& processed);

/// Trains w (and the thresholds) with the shared minibatch trainer on
/// expanded, preprocessed pairs.
DpldaModel dplda_train(const DpldaModel& init, const std::vector<Trial>& trials,
                       const std::vector<Trial>& val_trials, const EmbeddingSet& processed, const TrainConfig& cfg,
                       TrainHistory* history = nullptr);

// ---------------------------------------------------------------------------
// Pairwise Gaussian back-end over stacked pairs [e; t].

struct PairwiseGaussian {
  Eigen::VectorXd mu_t, mu_nt;        // 2d
  Eigen::MatrixXd sigma_t, sigma_nt;  // 2d x 2d

  int dim() const { return static_cast<int>(mu_t.size() / 2); }
};

/// Class-wise sample mean and (maximum-likelihood) covariance of stacked
/// pairs of processed embeddings. Covariances are ridge-regularized when a
/// class has fewer than 2d trials or is ill-conditioned.
PairwiseGaussian gb_estimate(const std::vector<Trial>& trials, const EmbeddingSet& processed);

/// Gaussian log-likelihood ratio log N(η; μ_t, Σ_t) - log N(η; μ_nt, Σ_nt).
double gb_score(const PairwiseGaussian& g, const Eigen::VectorXd& e, const Eigen::VectorXd& t);

ScoreSet gb_score_trials(const PairwiseGaussian& g, const std::vector<Trial>& trials, const EmbeddingSet& processed);

}  // namespace nplda
