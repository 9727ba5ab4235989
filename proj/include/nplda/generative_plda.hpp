#pragma once

#include "nplda/embeddings_io.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace nplda {

/// Simplified PLDA: x = mu + Phi*w + e with w ~ N(0, I_r), e ~ N(0, Sigma).
struct GenerativePlda {
  Eigen::VectorXd mu;
  Eigen::MatrixXd phi;    // d x r speaker subspace
  Eigen::MatrixXd sigma;  // d x d residual covariance

  int dim() const { return static_cast<int>(mu.size()); }
  int rank() const { return static_cast<int>(phi.cols()); }
  Eigen::MatrixXd sigma_ac() const { return phi * phi.transpose(); }
  Eigen::MatrixXd sigma_tot() const { return sigma_ac() + sigma; }
};

/// Quadratic scoring matrices. Both symmetric.
struct ScoreMatrices {
  Eigen::MatrixXd P;
  Eigen::MatrixXd Q;

  int dim() const { return static_cast<int>(P.rows()); }
};

struct PldaEmOptions {
  int max_iterations = 50;
  double tolerance = 1e-6;  // relative log-likelihood improvement
};

/// EM estimate with a fixed global mean. When `log_likelihood` is given it
/// receives the training log-likelihood at the initial point and after every
/// iteration.
GenerativePlda estimate_plda(const EmbeddingSet& set, int rank, const PldaEmOptions& options = {},
                             std::vector<double>* log_likelihood = nullptr);

/// Marginal log-likelihood of the speaker-grouped data under `m`.
double plda_log_likelihood(const GenerativePlda& m, const EmbeddingSet& set);

ScoreMatrices derive_pq(const GenerativePlda& m);

/// eᵀQe + tᵀQt + eᵀ(P + Pᵀ)t. Bitwise symmetric under swapping e and t.
double score_pair(const ScoreMatrices& pq, const Eigen::VectorXd& e, const Eigen::VectorXd& t);

/// score_pair on mean-removed inputs: the closed-form generative score.
double plda_score(const GenerativePlda& m, const ScoreMatrices& pq, const Eigen::VectorXd& e,
                  const Eigen::VectorXd& t);

/// Exact same-vs-different speaker log-likelihood ratio, via Cholesky
/// factorizations of the 2d x 2d joint covariances.
double llr_oracle(const GenerativePlda& m, const Eigen::VectorXd& e, const Eigen::VectorXd& t);

struct SynthOptions {
  std::string speaker_prefix = "spk";
};

/// Draws n_speakers x n_sessions embeddings from `m`. Genders alternate by
/// speaker (male, female), sources alternate by session (tel, vid).
EmbeddingSet sample_synthetic(const GenerativePlda& m, int n_speakers, int n_sessions, std::uint64_t seed,
                              const SynthOptions& options = {});

/// A random PLDA population model: Gaussian mean and subspace, residual
/// covariance a random SPD matrix with eigenvalues in roughly [0.5, 2].
GenerativePlda random_plda(int dim, int rank, std::uint64_t seed, double subspace_scale = 0.5);

}  // namespace nplda
