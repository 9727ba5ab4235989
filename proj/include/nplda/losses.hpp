#pragma once

#include <Eigen/Dense>

#include <string_view>

namespace nplda {

/// Scores and 0/1 targets share an index. Every loss is a mean over the batch
/// or a ratio of class sums, so it does not depend on trial order.

struct LossResult {
  double loss = 0.0;
  Eigen::VectorXd dscore;                          // dL/ds_i
  Eigen::Vector2d dtheta = Eigen::Vector2d::Zero();  // dL/dθ, zero when unused
};

struct SoftCostConfig {
  double alpha = 20.0;
  double beta1 = 99.0;
  double beta2 = 199.0;
  double lambda_reg = 0.0;
};

enum class LossKind { bce, bce_reg, soft_cprimary, soft_plus_bce };

LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LossKind kind);

double sigmoid(double x);
/// log(1 + exp(x)) without overflow.
double softplus(double x);

/// -(1/N) Σ [t log σ(s) + (1-t) log(1-σ(s))]
LossResult bce_loss(const Eigen::VectorXd& scores, const Eigen::VectorXd& targets);

/// bce_loss + (λ/N) Σ (s_i - l_i)², with l the reference generative scores.
LossResult bce_regularized(const Eigen::VectorXd& scores, const Eigen::VectorXd& targets,
                           const Eigen::VectorXd& plda_scores, double lambda);

double soft_pmiss(const Eigen::VectorXd& scores, const Eigen::VectorXd& targets, double theta, double alpha);
double soft_pfa(const Eigen::VectorXd& scores, const Eigen::VectorXd& targets, double theta, double alpha);
double soft_cnorm(const Eigen::VectorXd& scores, const Eigen::VectorXd& targets, double beta, double theta,
                  double alpha);

/// ½[C_norm^soft(β₁, θ₁) + C_norm^soft(β₂, θ₂)] with gradients for scores and
/// both thresholds.
LossResult soft_cprimary(const Eigen::VectorXd& scores, const Eigen::VectorXd& targets, const Eigen::Vector2d& theta,
                         const SoftCostConfig& cfg);

/// a + weight * b, gradients combined the same way.
LossResult weighted_sum(const LossResult& a, const LossResult& b, double weight);

}  // namespace nplda
