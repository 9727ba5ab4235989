#include "nplda/losses.hpp"

#include "nplda/error.hpp"

#include <cmath>
#include <string>

namespace nplda {

namespace {

void check_batch(const Eigen::VectorXd& scores, const Eigen::VectorXd& targets) {
  if (scores.size() == 0) throw PreconditionError("loss over an empty batch");
  if (scores.size() != targets.size()) throw PreconditionError("scores and targets differ in length");
}

struct ClassCounts {
  double target = 0;
  double nontarget = 0;
};

ClassCounts count_classes(const Eigen::VectorXd& targets) {
  ClassCounts c;
  for (Eigen::Index i = 0; i < targets.size(); ++i) (targets[i] > 0.5 ? c.target : c.nontarget) += 1;
  return c;
}

// Soft C_norm at one operating point, accumulating into dscore and returning
// the threshold derivative through `dtheta`.
double soft_cnorm_grad(const Eigen::VectorXd& s, const Eigen::VectorXd& t, double beta, double theta, double alpha,
                       double weight, Eigen::VectorXd& dscore, double& dtheta) {
  const ClassCounts n = count_classes(t);
  if (n.target == 0) throw PreconditionError("soft detection cost needs at least one target trial");
  if (n.nontarget == 0) throw PreconditionError("soft detection cost needs at least one non-target trial");
  double miss = 0, fa = 0;
  dtheta = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double z = alpha * (s[i] - theta);
    const double slope = alpha * sigmoid(z) * sigmoid(-z);
    double g;
    if (t[i] > 0.5) {
      miss += sigmoid(-z);
      g = -slope / n.target;
    } else {
      fa += sigmoid(z);
      g = beta * slope / n.nontarget;
    }
    dscore[i] += weight * g;
    dtheta -= weight * g;
  }
  return miss / n.target + beta * fa / n.nontarget;
}

}  // namespace

LossKind parse_loss_kind(std::string_view name) {
  if (name == "bce") return LossKind::bce;
  if (name == "bce_reg") return LossKind::bce_reg;
  if (name == "soft_cprimary") return LossKind::soft_cprimary;
  if (name == "soft_plus_bce") return LossKind::soft_plus_bce;
  throw PreconditionError("unknown loss '" + std::string(name) + "'");
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::bce: return "bce";
    case LossKind::bce_reg: return "bce_reg";
    case LossKind::soft_cprimary: return "soft_cprimary";
    case LossKind::soft_plus_bce: return "soft_plus_bce";
  }
  return "bce";
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

LossResult bce_loss(const Eigen::VectorXd& scores, const Eigen::VectorXd& targets) {
  check_batch(scores, targets);
  const double n = static_cast<double>(scores.size());
  LossResult r;
  r.dscore.resize(scores.size());
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const double s = scores[i], t = targets[i];
    // -log σ(s) = softplus(-s), -log(1-σ(s)) = softplus(s)
    r.loss += t * softplus(-s) + (1.0 - t) * softplus(s);
    r.dscore[i] = (sigmoid(s) - t) / n;
  }
  r.loss /= n;
  return r;
}

LossResult bce_regularized(const Eigen::VectorXd& scores, const Eigen::VectorXd& targets,
                           const Eigen::VectorXd& plda_scores, double lambda) {
  check_batch(scores, targets);
  if (plda_scores.size() != scores.size()) throw PreconditionError("reference scores differ in length");
  LossResult r = bce_loss(scores, targets);
  const double n = static_cast<double>(scores.size());
  const Eigen::VectorXd gap = scores - plda_scores;
  r.loss += lambda / n * gap.squaredNorm();
  r.dscore += (2.0 * lambda / n) * gap;
  return r;
}

double soft_pmiss(const Eigen::VectorXd& scores, const Eigen::VectorXd& targets, double theta, double alpha) {
  check_batch(scores, targets);
  double n = 0, miss = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (targets[i] > 0.5) {
      n += 1;
      miss += sigmoid(-alpha * (scores[i] - theta));
    }
  }
  if (n == 0) throw PreconditionError("soft P_miss needs at least one target trial");
  return miss / n;
}

double soft_pfa(const Eigen::VectorXd& scores, const Eigen::VectorXd& targets, double theta, double alpha) {
  check_batch(scores, targets);
  double n = 0, fa = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (targets[i] <= 0.5) {
      n += 1;
      fa += sigmoid(alpha * (scores[i] - theta));
    }
  }
  if (n == 0) throw PreconditionError("soft P_FA needs at least one non-target trial");
  return fa / n;
}

double soft_cnorm(const Eigen::VectorXd& scores, const Eigen::VectorXd& targets, double beta, double theta,
                  double alpha) {
  return soft_pmiss(scores, targets, theta, alpha) + beta * soft_pfa(scores, targets, theta, alpha);
}

LossResult soft_cprimary(const Eigen::VectorXd& scores, const Eigen::VectorXd& targets, const Eigen::Vector2d& theta,
                         const SoftCostConfig& cfg) {
  check_batch(scores, targets);
  if (!(cfg.alpha > 0)) throw PreconditionError("sigmoid sharpness alpha must be positive");
  LossResult r;
  r.dscore = Eigen::VectorXd::Zero(scores.size());
  const double c1 = soft_cnorm_grad(scores, targets, cfg.beta1, theta[0], cfg.alpha, 0.5, r.dscore, r.dtheta[0]);
  const double c2 = soft_cnorm_grad(scores, targets, cfg.beta2, theta[1], cfg.alpha, 0.5, r.dscore, r.dtheta[1]);
  r.loss = 0.5 * (c1 + c2);
  return r;
}

LossResult weighted_sum(const LossResult& a, const LossResult& b, double weight) {
  if (a.dscore.size() != b.dscore.size()) throw PreconditionError("cannot combine losses over different batches");
  LossResult r;
  r.loss = a.loss + weight * b.loss;
  r.dscore = a.dscore + weight * b.dscore;
  r.dtheta = a.dtheta + weight * b.dtheta;
  return r;
}

}  // namespace nplda
