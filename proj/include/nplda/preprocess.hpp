#pragma once

#include "nplda/embeddings_io.hpp"

#include <Eigen/Dense>

namespace nplda {

/// Zero-vector guard for length normalization.
inline constexpr double kNormEpsilon = 1e-12;

/// y = weight * x + bias
struct AffineTransform {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return weight * x + bias; }
  /// Column-wise application.
  Eigen::MatrixXd apply_columns(const Eigen::MatrixXd& x) const {
    return (weight * x).colwise() + bias;
  }
};

Eigen::VectorXd estimate_centering(const EmbeddingSet& set);

struct LdaDiagnostics {
  /// Within-class scatter had zero trace; an absolute ridge was used instead
  /// of the relative one.
  bool singular_within_scatter = false;
  Eigen::VectorXd eigenvalues;  // selected generalized eigenvalues, descending
};

/// Fisher LDA. Rows are the leading generalized eigenvectors of
/// (between-class, within-class) scatter, each of unit S_w-norm; the bias
/// centers the projected data. Requires speaker labels on every entry.
AffineTransform estimate_lda(const EmbeddingSet& set, int out_dim, LdaDiagnostics* diagnostics = nullptr);

Eigen::VectorXd length_normalize(const Eigen::VectorXd& v);

/// d(v/|v|)/dv = (I - v̂v̂ᵀ)/|v|
Eigen::MatrixXd length_normalize_jacobian(const Eigen::VectorXd& v);

/// Center, project, unit-normalize. The fixed front end shared by the
/// generative and linear back-ends.
struct Preprocessor {
  AffineTransform projection;  // centering folded into the bias

  int in_dim() const { return projection.in_dim(); }
  int out_dim() const { return projection.out_dim(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return length_normalize(projection.apply(x)); }
  EmbeddingSet apply(const EmbeddingSet& set) const;
};

/// Estimates mean, then LDA on the centered data; returns the composed
/// transform.
Preprocessor estimate_preprocessor(const EmbeddingSet& set, int lda_dim, LdaDiagnostics* diagnostics = nullptr);

}  // namespace nplda
