#include "nplda/preprocess.hpp"

#include "nplda/error.hpp"

#include <algorithm>
#include <map>

namespace nplda {

Eigen::VectorXd estimate_centering(const EmbeddingSet& set) {
  if (set.empty()) throw PreconditionError("cannot estimate mean of an empty embedding set");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(set.dim());
  for (const auto& e : set.entries()) sum += e.vector;
  return sum / static_cast<double>(set.size());
}

AffineTransform estimate_lda(const EmbeddingSet& set, int out_dim, LdaDiagnostics* diagnostics) {
  if (set.empty()) throw PreconditionError("LDA needs a non-empty embedding set");
  const int dim = set.dim();

  // Ordered map keeps accumulation order independent of hashing.
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& spk = set[i].speaker_id;
    if (!spk) throw PreconditionError("LDA requires speaker labels; '" + set[i].id + "' has none");
    by_speaker[*spk].push_back(i);
  }
  const int n_speakers = static_cast<int>(by_speaker.size());
  if (n_speakers < 2) throw PreconditionError("LDA requires at least 2 speakers");
  if (out_dim < 1 || out_dim > std::min(dim, n_speakers - 1))
    throw PreconditionError("LDA output dimension " + std::to_string(out_dim) + " must be in [1, " +
                            std::to_string(std::min(dim, n_speakers - 1)) + "]");

  const double n = static_cast<double>(set.size());
  const Eigen::VectorXd mean = estimate_centering(set);
  Eigen::MatrixXd within = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::MatrixXd between = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto& [spk, idx] : by_speaker) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim);
    for (auto i : idx) m += set[i].vector;
    m /= static_cast<double>(idx.size());
    for (auto i : idx) {
      Eigen::VectorXd c = set[i].vector - m;
      within.noalias() += c * c.transpose();
    }
    Eigen::VectorXd dm = m - mean;
    between.noalias() += static_cast<double>(idx.size()) * dm * dm.transpose();
  }
  within /= n;
  between /= n;

  const double trace = within.trace();
  bool singular = !(trace > 0.0);
  const double ridge = singular ? 1e-6 : 1e-6 * trace / dim;
  within.diagonal().array() += ridge;
  if (diagnostics) diagnostics->singular_within_scatter = singular;

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(between, within);
  if (solver.info() != Eigen::Success) throw NumericalError("LDA generalized eigensolve failed");

  // Eigenvalues ascend; take the tail in reverse.
  AffineTransform t;
  t.weight.resize(out_dim, dim);
  Eigen::VectorXd values(out_dim);
  for (int k = 0; k < out_dim; ++k) {
    Eigen::VectorXd v = solver.eigenvectors().col(dim - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    t.weight.row(k) = v.transpose();
    values[k] = solver.eigenvalues()[dim - 1 - k];
  }
  t.bias = -t.weight * mean;
  if (diagnostics) diagnostics->eigenvalues = values;
  return t;
}

Eigen::VectorXd length_normalize(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  if (!(norm > kNormEpsilon)) throw NumericalError("cannot length-normalize a near-zero vector");
  return v / norm;
}

Eigen::MatrixXd length_normalize_jacobian(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  if (!(norm > kNormEpsilon)) throw NumericalError("length-norm Jacobian undefined at a near-zero vector");
  const Eigen::VectorXd u = v / norm;
  Eigen::MatrixXd j = Eigen::MatrixXd::Identity(v.size(), v.size()) - u * u.transpose();
  return j / norm;
}

EmbeddingSet Preprocessor::apply(const EmbeddingSet& set) const {
  EmbeddingSet out(out_dim());
  for (const auto& e : set.entries()) {
    Embedding p = e;
    p.vector = apply(e.vector);
    out.add(std::move(p));
  }
  return out;
}

Preprocessor estimate_preprocessor(const EmbeddingSet& set, int lda_dim, LdaDiagnostics* diagnostics) {
  const Eigen::VectorXd mean = estimate_centering(set);
  EmbeddingSet centered(set.dim());
  for (const auto& e : set.entries()) {
    Embedding c = e;
    c.vector = e.vector - mean;
    centered.add(std::move(c));
  }
  AffineTransform lda = estimate_lda(centered, lda_dim, diagnostics);
  Preprocessor p;
  p.projection.weight = lda.weight;
  p.projection.bias = lda.bias - lda.weight * mean;
  return p;
}

}  // namespace nplda
