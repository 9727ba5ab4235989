#pragma once

#include "nplda/embeddings_io.hpp"
#include "nplda/generative_plda.hpp"
#include "nplda/preprocess.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace nplda {

/// Neural PLDA network parameters.
///
///   f(x)  = W2 * lengthnorm(W1 x + b1) + b2
///   s(e,t) = f(e)ᵀQ f(e) + f(t)ᵀQ f(t) + 2 f(e)ᵀP f(t)
///
/// theta holds the two learnable detection thresholds used by the soft
/// detection-cost objective.
struct NeuralPldaParams {
  Eigen::MatrixXd W1;  // d x D
  Eigen::VectorXd b1;  // d
  Eigen::MatrixXd W2;  // d x d
  Eigen::VectorXd b2;  // d
  Eigen::MatrixXd P;   // d x d, symmetric
  Eigen::MatrixXd Q;   // d x d, symmetric
  Eigen::Vector2d theta = Eigen::Vector2d::Zero();

  int input_dim() const { return static_cast<int>(W1.cols()); }
  int dim() const { return static_cast<int>(W1.rows()); }

  /// Number of scalars when flattened.
  Eigen::Index size() const;
  Eigen::VectorXd flatten() const;
  /// Inverse of flatten(); shapes are taken from *this.
  void unflatten(const Eigen::VectorXd& flat);
  /// P <- (P + Pᵀ)/2, Q likewise.
  void symmetrize();
  /// Throws PreconditionError if shapes do not chain.
  void check_shapes() const;
};

/// Same layout as the parameters.
using ParamGradients = NeuralPldaParams;

/// Zero-valued gradients shaped like `p`.
ParamGradients zeros_like(const NeuralPldaParams& p);

/// Default thresholds: log 99 and log 199.
Eigen::Vector2d default_thresholds();

/// Network equal to center -> `lda` -> lengthnorm -> PLDA scoring with `m`.
NeuralPldaParams init_from_generative(const Eigen::VectorXd& mean, const AffineTransform& lda,
                                      const GenerativePlda& m);

/// Same, from an already composed preprocessor.
NeuralPldaParams init_from_generative(const Preprocessor& pre, const GenerativePlda& m);

NeuralPldaParams init_random(int input_dim, int dim, std::uint64_t seed);

double forward(const NeuralPldaParams& p, const Eigen::VectorXd& e_raw, const Eigen::VectorXd& t_raw);

ScoreSet forward_batch(const NeuralPldaParams& p, const std::vector<Trial>& trials, const EmbeddingSet& set);

/// Forward pass over a batch of raw embedding pairs that keeps the
/// activations needed by backward().
class NeuralPldaBatch {
 public:
  /// Columns of `enroll` and `test` are paired trials.
  Eigen::VectorXd forward(const NeuralPldaParams& p, const Eigen::MatrixXd& enroll, const Eigen::MatrixXd& test);

  /// Gradient of sum_i dscore[i] * s_i with respect to every parameter
  /// except theta, whose entries are left at zero. Uses the parameters and
  /// activations of the last forward() call.
  ParamGradients backward(const NeuralPldaParams& p, const Eigen::VectorXd& dscore) const;

  Eigen::Index size() const { return enroll_.x.cols(); }

 private:
  struct Side {
    Eigen::MatrixXd x;      // raw inputs, D x N
    Eigen::VectorXd norm;   // |W1 x + b1|
    Eigen::MatrixXd u;      // length-normalized activations, d x N
    Eigen::MatrixXd f;      // W2 u + b2
  };
  static void forward_side(const NeuralPldaParams& p, const Eigen::MatrixXd& x, Side& side);

  Side enroll_;
  Side test_;
};

}  // namespace nplda
