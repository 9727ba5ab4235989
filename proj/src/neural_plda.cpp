#include "nplda/neural_plda.hpp"

#include "nplda/error.hpp"

#include <cmath>
#include <random>

namespace nplda {

namespace {

// Column-wise a_iᵀ M a_i.
Eigen::RowVectorXd quad_cols(const Eigen::MatrixXd& a, const Eigen::MatrixXd& m) {
  return (a.cwiseProduct(m * a)).colwise().sum();
}

Eigen::MatrixXd gaussian(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) a(i, j) = normal(rng);
  return a;
}

// rows x cols matrix with orthonormal rows (rows <= cols).
Eigen::MatrixXd orthonormal_rows(std::mt19937_64& rng, int rows, int cols) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(rng, cols, rows));
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(cols, rows);
  return q.transpose();
}

}  // namespace

Eigen::Index NeuralPldaParams::size() const {
  return W1.size() + b1.size() + W2.size() + b2.size() + P.size() + Q.size() + theta.size();
}

Eigen::VectorXd NeuralPldaParams::flatten() const {
  Eigen::VectorXd flat(size());
  Eigen::Index at = 0;
  auto put = [&](const auto& m) {
    flat.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    at += m.size();
  };
  put(W1);
  put(b1);
  put(W2);
  put(b2);
  put(P);
  put(Q);
  put(theta);
  return flat;
}

void NeuralPldaParams::unflatten(const Eigen::VectorXd& flat) {
  if (flat.size() != size()) throw PreconditionError("flat parameter vector has wrong length");
  Eigen::Index at = 0;
  auto take = [&](auto& m) {
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = flat.segment(at, m.size());
    at += m.size();
  };
  take(W1);
  take(b1);
  take(W2);
  take(b2);
  take(P);
  take(Q);
  take(theta);
}

void NeuralPldaParams::symmetrize() {
  P = 0.5 * (P + P.transpose()).eval();
  Q = 0.5 * (Q + Q.transpose()).eval();
}

void NeuralPldaParams::check_shapes() const {
  const auto d = W1.rows();
  if (d < 1 || W1.cols() < 1) throw PreconditionError("W1 must be non-empty");
  if (b1.size() != d || W2.rows() != d || W2.cols() != d || b2.size() != d || P.rows() != d || P.cols() != d ||
      Q.rows() != d || Q.cols() != d)
    throw PreconditionError("Neural PLDA parameter shapes do not chain (d = " + std::to_string(d) + ")");
}

ParamGradients zeros_like(const NeuralPldaParams& p) {
  ParamGradients g;
  g.W1 = Eigen::MatrixXd::Zero(p.W1.rows(), p.W1.cols());
  g.b1 = Eigen::VectorXd::Zero(p.b1.size());
  g.W2 = Eigen::MatrixXd::Zero(p.W2.rows(), p.W2.cols());
  g.b2 = Eigen::VectorXd::Zero(p.b2.size());
  g.P = Eigen::MatrixXd::Zero(p.P.rows(), p.P.cols());
  g.Q = Eigen::MatrixXd::Zero(p.Q.rows(), p.Q.cols());
  g.theta = Eigen::Vector2d::Zero();
  return g;
}

Eigen::Vector2d default_thresholds() { return {std::log(99.0), std::log(199.0)}; }

NeuralPldaParams init_from_generative(const Eigen::VectorXd& mean, const AffineTransform& lda,
                                      const GenerativePlda& m) {
  if (lda.in_dim() != mean.size())
    throw PreconditionError("LDA input dimension " + std::to_string(lda.in_dim()) + " != mean dimension " +
                            std::to_string(mean.size()));
  if (lda.out_dim() != m.dim())
    throw PreconditionError("LDA output dimension " + std::to_string(lda.out_dim()) + " != PLDA dimension " +
                            std::to_string(m.dim()));
  const ScoreMatrices pq = derive_pq(m);
  NeuralPldaParams p;
  p.W1 = lda.weight;
  p.b1 = lda.bias - lda.weight * mean;
  p.W2 = Eigen::MatrixXd::Identity(m.dim(), m.dim());
  p.b2 = -m.mu;
  p.P = pq.P;
  p.Q = pq.Q;
  p.theta = default_thresholds();
  return p;
}

NeuralPldaParams init_from_generative(const Preprocessor& pre, const GenerativePlda& m) {
  return init_from_generative(Eigen::VectorXd::Zero(pre.in_dim()), pre.projection, m);
}

NeuralPldaParams init_random(int input_dim, int dim, std::uint64_t seed) {
  if (dim < 1 || dim > input_dim) throw PreconditionError("init_random: need 1 <= d <= D");
  std::mt19937_64 rng(seed);
  NeuralPldaParams p;
  p.W1 = orthonormal_rows(rng, dim, input_dim);
  p.b1 = Eigen::VectorXd::Zero(dim);
  p.W2 = orthonormal_rows(rng, dim, dim);
  p.b2 = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd a = gaussian(rng, dim, dim);
  p.P = 0.1 * 0.5 * (a + a.transpose());
  a = gaussian(rng, dim, dim);
  p.Q = 0.1 * 0.5 * (a + a.transpose());
  p.theta = default_thresholds();
  return p;
}

void NeuralPldaBatch::forward_side(const NeuralPldaParams& p, const Eigen::MatrixXd& x, Side& side) {
  side.x = x;
  Eigen::MatrixXd a = (p.W1 * x).colwise() + p.b1;
  side.norm = a.colwise().norm().transpose();
  if (side.norm.size() > 0 && !(side.norm.minCoeff() > kNormEpsilon))
    throw NumericalError("zero-norm activation at the length-normalization layer");
  side.u = a * side.norm.cwiseInverse().asDiagonal();
  side.f = (p.W2 * side.u).colwise() + p.b2;
}

Eigen::VectorXd NeuralPldaBatch::forward(const NeuralPldaParams& p, const Eigen::MatrixXd& enroll,
                                         const Eigen::MatrixXd& test) {
  p.check_shapes();
  if (enroll.rows() != p.input_dim() || test.rows() != p.input_dim() || enroll.cols() != test.cols())
    throw PreconditionError("batch shape does not match the network input");
  forward_side(p, enroll, enroll_);
  forward_side(p, test, test_);
  const Eigen::MatrixXd sum = enroll_.f + test_.f;
  const Eigen::MatrixXd diff = enroll_.f - test_.f;
  const Eigen::RowVectorXd s =
      quad_cols(enroll_.f, p.Q) + quad_cols(test_.f, p.Q) + 0.5 * (quad_cols(sum, p.P) - quad_cols(diff, p.P));
  return s.transpose();
}

ParamGradients NeuralPldaBatch::backward(const NeuralPldaParams& p, const Eigen::VectorXd& dscore) const {
  if (dscore.size() != size()) throw PreconditionError("backward: gradient length does not match batch");
  const Eigen::MatrixXd P2 = p.P + p.P.transpose();
  const Eigen::MatrixXd Q2 = p.Q + p.Q.transpose();
  const auto c = dscore.asDiagonal();

  const Eigen::MatrixXd fe_c = enroll_.f * c;
  const Eigen::MatrixXd ft_c = test_.f * c;

  ParamGradients g = zeros_like(p);
  g.Q.noalias() = fe_c * enroll_.f.transpose();
  g.Q.noalias() += ft_c * test_.f.transpose();
  g.P.noalias() = fe_c * test_.f.transpose();
  g.P.noalias() += ft_c * enroll_.f.transpose();

  const Eigen::MatrixXd g_fe = Q2 * fe_c + P2 * ft_c;
  const Eigen::MatrixXd g_ft = Q2 * ft_c + P2 * fe_c;
  g.b2 = g_fe.rowwise().sum() + g_ft.rowwise().sum();
  g.W2.noalias() = g_fe * enroll_.u.transpose();
  g.W2.noalias() += g_ft * test_.u.transpose();

  auto through_norm = [&](const Side& side, const Eigen::MatrixXd& g_f) {
    Eigen::MatrixXd g_u = p.W2.transpose() * g_f;
    const Eigen::RowVectorXd radial = side.u.cwiseProduct(g_u).colwise().sum();
    g_u -= side.u * radial.asDiagonal();
    return Eigen::MatrixXd(g_u * side.norm.cwiseInverse().asDiagonal());
  };
  const Eigen::MatrixXd g_ae = through_norm(enroll_, g_fe);
  const Eigen::MatrixXd g_at = through_norm(test_, g_ft);
  g.b1 = g_ae.rowwise().sum() + g_at.rowwise().sum();
  g.W1.noalias() = g_ae * enroll_.x.transpose();
  g.W1.noalias() += g_at * test_.x.transpose();
  return g;
}

double forward(const NeuralPldaParams& p, const Eigen::VectorXd& e_raw, const Eigen::VectorXd& t_raw) {
  NeuralPldaBatch batch;
  return batch.forward(p, e_raw, t_raw)[0];
}

ScoreSet forward_batch(const NeuralPldaParams& p, const std::vector<Trial>& trials, const EmbeddingSet& set) {
  ScoreSet out;
  out.trials = trials;
  if (trials.empty()) return out;
  const auto n = static_cast<Eigen::Index>(trials.size());
  Eigen::MatrixXd enroll(set.dim(), n), test(set.dim(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    enroll.col(i) = set[set.index_of(trials[i].enroll_id)].vector;
    test.col(i) = set[set.index_of(trials[i].test_id)].vector;
  }
  NeuralPldaBatch batch;
  const Eigen::VectorXd s = batch.forward(p, enroll, test);
  out.scores.assign(s.data(), s.data() + s.size());
  return out;
}

}  // namespace nplda
