#include "nplda/generative_plda.hpp"

#include "nplda/error.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <random>

namespace nplda {

namespace {

constexpr double kRelativeFloor = 1e-6;
constexpr double kAbsoluteFloor = 1e-10;
constexpr double kMaxCondition = 1e12;

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

// Clamp eigenvalues of a symmetric matrix from below.
Eigen::MatrixXd floor_spectrum(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(m));
  Eigen::VectorXd values = es.eigenvalues();
  const double floor = std::max(kRelativeFloor * values.maxCoeff(), kAbsoluteFloor);
  values = values.cwiseMax(floor);
  return symmetrize(es.eigenvectors() * values.asDiagonal() * es.eigenvectors().transpose());
}

struct SpeakerStats {
  double count = 0;
  Eigen::VectorXd sum;  // of mean-removed vectors
};

struct GroupedData {
  std::vector<SpeakerStats> speakers;
  Eigen::MatrixXd scatter;  // sum of x xᵀ over mean-removed vectors
  double n = 0;
};

GroupedData group_by_speaker(const EmbeddingSet& set, const Eigen::VectorXd& mu) {
  std::map<std::string, std::size_t> slot;
  GroupedData g;
  const int d = set.dim();
  g.scatter = Eigen::MatrixXd::Zero(d, d);
  for (const auto& e : set.entries()) {
    if (!e.speaker_id) throw PreconditionError("PLDA estimation requires speaker labels; '" + e.id + "' has none");
    auto [it, fresh] = slot.emplace(*e.speaker_id, g.speakers.size());
    if (fresh) g.speakers.push_back({0.0, Eigen::VectorXd::Zero(d)});
    Eigen::VectorXd x = e.vector - mu;
    auto& s = g.speakers[it->second];
    s.count += 1;
    s.sum += x;
    g.scatter.noalias() += x * x.transpose();
    g.n += 1;
  }
  return g;
}

double log_likelihood(const GroupedData& g, const Eigen::MatrixXd& phi, const Eigen::MatrixXd& sigma) {
  const int d = static_cast<int>(sigma.rows());
  const int r = static_cast<int>(phi.cols());
  Eigen::LLT<Eigen::MatrixXd> sigma_llt(sigma);
  if (sigma_llt.info() != Eigen::Success) throw NumericalError("residual covariance is not positive definite");
  const double logdet_sigma = 2.0 * sigma_llt.matrixLLT().diagonal().array().log().sum();
  const Eigen::MatrixXd sigma_inv = sigma_llt.solve(Eigen::MatrixXd::Identity(d, d));
  const Eigen::MatrixXd sinv_phi = sigma_inv * phi;
  const Eigen::MatrixXd phit_sinv_phi = phi.transpose() * sinv_phi;

  double ll = -0.5 * g.n * (d * std::log(2.0 * std::numbers::pi) + logdet_sigma);
  ll -= 0.5 * (sigma_inv.cwiseProduct(g.scatter)).sum();
  for (const auto& s : g.speakers) {
    Eigen::MatrixXd L = Eigen::MatrixXd::Identity(r, r) + s.count * phit_sinv_phi;
    Eigen::LLT<Eigen::MatrixXd> llt(L);
    Eigen::VectorXd b = sinv_phi.transpose() * s.sum;
    ll += 0.5 * b.dot(llt.solve(b));
    ll -= llt.matrixLLT().diagonal().array().log().sum();
  }
  return ll;
}

}  // namespace

GenerativePlda estimate_plda(const EmbeddingSet& set, int rank, const PldaEmOptions& options,
                             std::vector<double>* history) {
  if (set.empty()) throw PreconditionError("PLDA estimation needs data");
  const int d = set.dim();
  if (rank < 1 || rank > d)
    throw PreconditionError("PLDA rank " + std::to_string(rank) + " must be in [1, " + std::to_string(d) + "]");

  GenerativePlda m;
  m.mu = Eigen::VectorXd::Zero(d);
  for (const auto& e : set.entries()) m.mu += e.vector;
  m.mu /= static_cast<double>(set.size());

  const GroupedData g = group_by_speaker(set, m.mu);
  if (g.speakers.size() < 2) throw PreconditionError("PLDA estimation requires at least 2 speakers");

  // Moment-matching start.
  Eigen::MatrixXd between = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd mean_scatter = Eigen::MatrixXd::Zero(d, d);
  for (const auto& s : g.speakers) {
    Eigen::VectorXd mean = s.sum / s.count;
    between.noalias() += mean * mean.transpose();
    mean_scatter.noalias() += s.count * mean * mean.transpose();
  }
  between /= static_cast<double>(g.speakers.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(between));
  m.phi.resize(d, rank);
  for (int k = 0; k < rank; ++k) {
    const double lambda = std::max(es.eigenvalues()[d - 1 - k], 0.0);
    m.phi.col(k) = es.eigenvectors().col(d - 1 - k) * std::sqrt(lambda);
  }
  m.sigma = floor_spectrum((g.scatter - mean_scatter) / g.n);

  double ll = log_likelihood(g, m.phi, m.sigma);
  if (history) history->assign(1, ll);

  for (int it = 0; it < options.max_iterations; ++it) {
    Eigen::LLT<Eigen::MatrixXd> sigma_llt(m.sigma);
    const Eigen::MatrixXd sinv_phi = sigma_llt.solve(m.phi);
    const Eigen::MatrixXd phit_sinv_phi = m.phi.transpose() * sinv_phi;

    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(rank, rank);  // sum n_s E[w wᵀ]
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(d, rank);      // sum sum_s E[w]ᵀ
    for (const auto& s : g.speakers) {
      Eigen::MatrixXd L = Eigen::MatrixXd::Identity(rank, rank) + s.count * phit_sinv_phi;
      Eigen::LLT<Eigen::MatrixXd> llt(L);
      const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(rank, rank));
      const Eigen::VectorXd w = cov * (sinv_phi.transpose() * s.sum);
      second.noalias() += s.count * (cov + w * w.transpose());
      cross.noalias() += s.sum * w.transpose();
    }
    m.phi = symmetrize(second).ldlt().solve(cross.transpose()).transpose();
    m.sigma = floor_spectrum((g.scatter - m.phi * cross.transpose()) / g.n);

    const double next = log_likelihood(g, m.phi, m.sigma);
    if (history) history->push_back(next);
    const double gain = next - ll;
    ll = next;
    if (gain <= options.tolerance * std::fabs(ll)) break;
  }
  return m;
}

double plda_log_likelihood(const GenerativePlda& m, const EmbeddingSet& set) {
  return log_likelihood(group_by_speaker(set, m.mu), m.phi, m.sigma);
}

ScoreMatrices derive_pq(const GenerativePlda& m) {
  const int d = m.dim();
  const Eigen::MatrixXd ac = m.sigma_ac();
  const Eigen::MatrixXd tot = ac + m.sigma;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);

  auto checked_inverse = [&](const Eigen::MatrixXd& a, const char* name) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(a));
    const double lo = es.eigenvalues().cwiseAbs().minCoeff();
    const double hi = es.eigenvalues().cwiseAbs().maxCoeff();
    if (!(lo > 0.0) || hi / lo > kMaxCondition)
      throw NumericalError(std::string(name) + " is singular (condition number above 1e12)");
    return Eigen::MatrixXd(symmetrize(a).ldlt().solve(I));
  };

  const Eigen::MatrixXd tot_inv = checked_inverse(tot, "total covariance");
  const Eigen::MatrixXd cond = tot - ac * tot_inv * ac;
  const Eigen::MatrixXd cond_inv = checked_inverse(cond, "conditional covariance");

  ScoreMatrices pq;
  pq.Q = symmetrize(tot_inv - cond_inv);
  pq.P = symmetrize(tot_inv * ac * cond_inv);
  return pq;
}

double score_pair(const ScoreMatrices& pq, const Eigen::VectorXd& e, const Eigen::VectorXd& t) {
  if (e.size() != pq.dim() || t.size() != pq.dim())
    throw PreconditionError("score_pair: dimension mismatch");
  const Eigen::VectorXd sum = e + t;
  const Eigen::VectorXd diff = e - t;
  const double cross = 0.5 * (sum.dot(pq.P * sum) - diff.dot(pq.P * diff));
  return e.dot(pq.Q * e) + t.dot(pq.Q * t) + cross;
}

double plda_score(const GenerativePlda& m, const ScoreMatrices& pq, const Eigen::VectorXd& e,
                  const Eigen::VectorXd& t) {
  if (e.size() != m.dim() || t.size() != m.dim()) throw PreconditionError("plda_score: dimension mismatch");
  return score_pair(pq, e - m.mu, t - m.mu);
}

double llr_oracle(const GenerativePlda& m, const Eigen::VectorXd& e, const Eigen::VectorXd& t) {
  const int d = m.dim();
  if (e.size() != d || t.size() != d) throw PreconditionError("llr_oracle: dimension mismatch");
  const Eigen::MatrixXd ac = m.sigma_ac();
  const Eigen::MatrixXd tot = ac + m.sigma;

  Eigen::MatrixXd same(2 * d, 2 * d);
  same << tot, ac, ac, tot;
  Eigen::MatrixXd diff = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  diff.topLeftCorner(d, d) = tot;
  diff.bottomRightCorner(d, d) = tot;

  Eigen::VectorXd z(2 * d);
  z << e - m.mu, t - m.mu;

  auto log_pdf = [&](const Eigen::MatrixXd& cov) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericalError("joint covariance is not positive definite");
    const Eigen::VectorXd y = llt.matrixL().solve(z);
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return -0.5 * (y.squaredNorm() + logdet + 2 * d * std::log(2.0 * std::numbers::pi));
  };
  return log_pdf(same) - log_pdf(diff);
}

EmbeddingSet sample_synthetic(const GenerativePlda& m, int n_speakers, int n_sessions, std::uint64_t seed,
                              const SynthOptions& options) {
  if (n_speakers < 1 || n_sessions < 1) throw PreconditionError("speaker and session counts must be positive");
  const int d = m.dim();
  const int r = m.rank();
  Eigen::LLT<Eigen::MatrixXd> llt(m.sigma);
  if (llt.info() != Eigen::Success) throw NumericalError("residual covariance is not positive definite");
  const Eigen::MatrixXd chol = llt.matrixL();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal(rng);
    return v;
  };

  EmbeddingSet set(d);
  char buf[64];
  for (int s = 0; s < n_speakers; ++s) {
    std::snprintf(buf, sizeof buf, "%s%04d", options.speaker_prefix.c_str(), s);
    const std::string speaker = buf;
    const Eigen::VectorXd w = draw(r);
    const Eigen::VectorXd centre = m.mu + m.phi * w;
    for (int j = 0; j < n_sessions; ++j) {
      Embedding e;
      std::snprintf(buf, sizeof buf, "-%03d", j);
      e.id = speaker + buf;
      e.vector = centre + chol * draw(d);
      e.speaker_id = speaker;
      e.gender = (s % 2 == 0) ? Gender::male : Gender::female;
      e.source = (j % 2 == 0) ? "tel" : "vid";
      set.add(std::move(e));
    }
  }
  return set;
}

GenerativePlda random_plda(int dim, int rank, std::uint64_t seed, double subspace_scale) {
  if (dim < 1 || rank < 1 || rank > dim) throw PreconditionError("random_plda: need 1 <= rank <= dim");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](int rows, int cols) {
    Eigen::MatrixXd a(rows, cols);
    for (int j = 0; j < cols; ++j)
      for (int i = 0; i < rows; ++i) a(i, j) = normal(rng);
    return a;
  };
  GenerativePlda m;
  m.mu = gaussian(dim, 1);
  m.phi = subspace_scale * gaussian(dim, rank);
  // Random rotation with spectrum spread over [0.5, 2].
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(dim, dim));
  const Eigen::MatrixXd rot = qr.householderQ();
  Eigen::VectorXd spectrum(dim);
  for (int i = 0; i < dim; ++i) spectrum[i] = 0.5 * std::pow(4.0, dim > 1 ? double(i) / (dim - 1) : 0.5);
  m.sigma = symmetrize(rot * spectrum.asDiagonal() * rot.transpose());
  return m;
}

}  // namespace nplda
