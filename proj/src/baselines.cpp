#include "nplda/baselines.hpp"

#include "nplda/error.hpp"
#include "nplda/trainer.hpp"

#include <cmath>
#include <numbers>

namespace nplda {

Eigen::Index dplda_expansion_size(int d) { return 2 * Eigen::Index(d) * d + d + 1; }

int DpldaModel::dim() const {
  for (int d = 1; dplda_expansion_size(d) <= w.size(); ++d)
    if (dplda_expansion_size(d) == w.size()) return d;
  throw PreconditionError("DPLDA weight length " + std::to_string(w.size()) + " is not 2d^2 + d + 1");
}

Eigen::VectorXd dplda_expand(const Eigen::VectorXd& e, const Eigen::VectorXd& t) {
  if (e.size() != t.size()) throw PreconditionError("dplda_expand: dimension mismatch");
  const int d = static_cast<int>(e.size());
  Eigen::VectorXd phi(dplda_expansion_size(d));
  const Eigen::MatrixXd cross = e * t.transpose() + t * e.transpose();
  const Eigen::MatrixXd self = e * e.transpose() + t * t.transpose();
  const Eigen::Index dd = Eigen::Index(d) * d;
  phi.segment(0, dd) = Eigen::Map<const Eigen::VectorXd>(cross.data(), dd);
  phi.segment(dd, dd) = Eigen::Map<const Eigen::VectorXd>(self.data(), dd);
  phi.segment(2 * dd, d) = e + t;
  phi[2 * dd + d] = 1.0;
  return phi;
}

DpldaModel dplda_init_from_plda(const ScoreMatrices& pq) {
  const int d = pq.dim();
  const Eigen::Index dd = Eigen::Index(d) * d;
  DpldaModel m;
  m.w = Eigen::VectorXd::Zero(dplda_expansion_size(d));
  m.w.segment(0, dd) = Eigen::Map<const Eigen::VectorXd>(pq.P.data(), dd);
  m.w.segment(dd, dd) = Eigen::Map<const Eigen::VectorXd>(pq.Q.data(), dd);
  m.theta = Eigen::Vector2d(std::log(99.0), std::log(199.0));
  return m;
}

DpldaModel dplda_init_from_plda(const GenerativePlda& plda, const ScoreMatrices& pq) {
  if (plda.dim() != pq.dim()) throw PreconditionError("PLDA and score matrices differ in dimension");
  DpldaModel m = dplda_init_from_plda(pq);
  const int d = pq.dim();
  const Eigen::Index dd = Eigen::Index(d) * d;
  // (e-mu)ᵀQ(e-mu) + (t-mu)ᵀQ(t-mu) + 2(e-mu)ᵀP(t-mu)
  //   = [quadratic terms] - 2 muᵀ(P+Q)(e+t) + 2 muᵀ(P+Q)mu
  const Eigen::VectorXd pq_mu = (pq.P + pq.Q) * plda.mu;
  m.w.segment(2 * dd, d) = -2.0 * pq_mu;
  m.w[2 * dd + d] = 2.0 * plda.mu.dot(pq_mu);
  return m;
}

double dplda_score(const DpldaModel& m, const Eigen::VectorXd& phi) {
  if (phi.size() != m.w.size()) throw PreconditionError("dplda_score: expansion length mismatch");
  return m.w.dot(phi);
}

ScoreSet dplda_score_trials(const DpldaModel& m, const std::vector<Trial>& trials, const EmbeddingSet& processed) {
  ScoreSet out;
  out.trials = trials;
  out.scores.reserve(trials.size());
  for (const auto& t : trials)
    out.scores.push_back(dplda_score(m, dplda_expand(processed[processed.index_of(t.enroll_id)].vector,
                                                     processed[processed.index_of(t.test_id)].vector)));
  return out;
}

namespace {

class DpldaBackend final : public TrainableBackend {
 public:
  DpldaBackend(DpldaModel m, const EmbeddingSet& processed) : model_(std::move(m)), data_(processed.as_matrix()) {
    if (dplda_expansion_size(processed.dim()) != model_.w.size())
      throw PreconditionError("DPLDA weight length does not match processed dimension");
  }

  const DpldaModel& model() const { return model_; }

  Eigen::VectorXd parameters() const override {
    Eigen::VectorXd flat(model_.w.size() + 2);
    flat << model_.w, model_.theta;
    return flat;
  }
  void set_parameters(const Eigen::VectorXd& flat) override {
    model_.w = flat.head(model_.w.size());
    model_.theta = flat.tail<2>();
  }
  Eigen::VectorXd forward(const TrialTable& table, std::span<const std::size_t> rows) override {
    expanded_.resize(model_.w.size(), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      expanded_.col(static_cast<Eigen::Index>(i)) =
          dplda_expand(data_.col(static_cast<Eigen::Index>(table.enroll[rows[i]])),
                       data_.col(static_cast<Eigen::Index>(table.test[rows[i]])));
    return expanded_.transpose() * model_.w;
  }
  Eigen::VectorXd backward(const Eigen::VectorXd& dscore) override {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(model_.w.size() + 2);
    g.head(model_.w.size()) = expanded_ * dscore;
    return g;
  }

 private:
  DpldaModel model_;
  Eigen::MatrixXd data_;
  Eigen::MatrixXd expanded_;
};

}  // namespace

DpldaModel dplda_train(const DpldaModel& init, const std::vector<Trial>& trials, const std::vector<Trial>& val_trials,
                       const EmbeddingSet& processed, const TrainConfig& cfg, TrainHistory* history) {
  if (cfg.max_epochs <= 0) {
    if (history) *history = {};
    return init;
  }
  TrialTable train_table = TrialTable::from(trials, processed);
  TrialTable val_table = TrialTable::from(val_trials, processed);
  if (train_table.target.sum() == 0 || train_table.target.sum() == double(train_table.size()))
    throw PreconditionError("DPLDA training needs both target and non-target trials");
  if (cfg.loss == LossKind::bce_reg) {
    DpldaBackend ref(init, processed);
    train_table.reference = score_table(ref, train_table);
    val_table.reference = score_table(ref, val_table);
  }
  DpldaBackend backend(init, processed);
  TrainHistory h = train(backend, train_table, val_table, cfg);
  if (history) *history = std::move(h);
  return backend.model();
}

namespace {

constexpr double kRidgeFactor = 1e-4;
constexpr double kMaxCondition = 1e10;

Eigen::MatrixXd regularize(Eigen::MatrixXd cov, std::size_t samples) {
  cov = 0.5 * (cov + cov.transpose()).eval();
  const auto n = cov.rows();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  const bool ill = !(lo > 0) || hi / lo > kMaxCondition;
  if (samples < static_cast<std::size_t>(n) || ill) {
    const double trace = cov.trace();
    const double ridge = trace > 0 ? kRidgeFactor * trace / static_cast<double>(n) : kRidgeFactor;
    cov.diagonal().array() += ridge;
  }
  return cov;
}

double gaussian_log_pdf(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& mu, const Eigen::VectorXd& x) {
  const Eigen::VectorXd y = llt.matrixL().solve(x - mu);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (y.squaredNorm() + logdet + static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi));
}

Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("pairwise Gaussian covariance is singular");
  return llt;
}

Eigen::VectorXd stack(const Eigen::VectorXd& e, const Eigen::VectorXd& t) {
  Eigen::VectorXd z(e.size() + t.size());
  z << e, t;
  return z;
}

}  // namespace

PairwiseGaussian gb_estimate(const std::vector<Trial>& trials, const EmbeddingSet& processed) {
  const int d2 = 2 * processed.dim();
  Eigen::VectorXd sum[2] = {Eigen::VectorXd::Zero(d2), Eigen::VectorXd::Zero(d2)};
  Eigen::MatrixXd scatter[2] = {Eigen::MatrixXd::Zero(d2, d2), Eigen::MatrixXd::Zero(d2, d2)};
  std::size_t count[2] = {0, 0};
  for (const auto& t : trials) {
    if (!t.label) throw PreconditionError("trial (" + t.enroll_id + ", " + t.test_id + ") has no label");
    const int k = *t.label == TrialLabel::target ? 0 : 1;
    const Eigen::VectorXd z = stack(processed[processed.index_of(t.enroll_id)].vector,
                                    processed[processed.index_of(t.test_id)].vector);
    sum[k] += z;
    scatter[k].noalias() += z * z.transpose();
    ++count[k];
  }
  if (count[0] == 0) throw PreconditionError("pairwise Gaussian back-end needs target trials");
  if (count[1] == 0) throw PreconditionError("pairwise Gaussian back-end needs non-target trials");
  PairwiseGaussian g;
  Eigen::VectorXd* mus[2] = {&g.mu_t, &g.mu_nt};
  Eigen::MatrixXd* covs[2] = {&g.sigma_t, &g.sigma_nt};
  for (int k = 0; k < 2; ++k) {
    const double n = static_cast<double>(count[k]);
    *mus[k] = sum[k] / n;
    *covs[k] = regularize(scatter[k] / n - *mus[k] * mus[k]->transpose(), count[k]);
  }
  return g;
}

double gb_score(const PairwiseGaussian& g, const Eigen::VectorXd& e, const Eigen::VectorXd& t) {
  if (e.size() != g.dim() || t.size() != g.dim()) throw PreconditionError("gb_score: dimension mismatch");
  const Eigen::VectorXd z = stack(e, t);
  return gaussian_log_pdf(factor(g.sigma_t), g.mu_t, z) - gaussian_log_pdf(factor(g.sigma_nt), g.mu_nt, z);
}

ScoreSet gb_score_trials(const PairwiseGaussian& g, const std::vector<Trial>& trials, const EmbeddingSet& processed) {
  if (processed.dim() != g.dim()) throw PreconditionError("gb_score: dimension mismatch");
  const auto lt = factor(g.sigma_t);
  const auto ln = factor(g.sigma_nt);
  ScoreSet out;
  out.trials = trials;
  out.scores.reserve(trials.size());
  for (const auto& t : trials) {
    const Eigen::VectorXd z = stack(processed[processed.index_of(t.enroll_id)].vector,
                                    processed[processed.index_of(t.test_id)].vector);
    out.scores.push_back(gaussian_log_pdf(lt, g.mu_t, z) - gaussian_log_pdf(ln, g.mu_nt, z));
  }
  return out;
}

}  // namespace nplda
