#pragma once

#include "nplda/baselines.hpp"
#include "nplda/generative_plda.hpp"
#include "nplda/neural_plda.hpp"
#include "nplda/preprocess.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nplda {

/// Self-describing text model container:
///
///   NPLDA-MODEL v1 D=<D> d=<d>
///   MATRIX <name> <rows> <cols>
///   <rows lines of cols numbers>
///   ...
///
/// D is the raw embedding dimension, d the processed one.
struct ModelFile {
  static constexpr const char* kMagic = "NPLDA-MODEL";
  static constexpr const char* kVersion = "v1";

  int D = 0;
  int d = 0;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> blocks;

  void add(std::string name, Eigen::MatrixXd m) { blocks.emplace_back(std::move(name), std::move(m)); }
  const Eigen::MatrixXd* find(const std::string& name) const;
  /// Throws ParseError when the block is absent or not rows x cols.
  const Eigen::MatrixXd& require(const std::string& name, Eigen::Index rows, Eigen::Index cols) const;
};

void write_model_file(const std::string& path, const ModelFile& file);
ModelFile read_model_file(const std::string& path);

enum class ModelKind { neural_plda, generative_plda, dplda, pairwise_gaussian };

/// Classifies a container by the blocks it carries.
ModelKind detect_kind(const ModelFile& file);

/// Generative PLDA with the front end it was estimated behind, if any.
struct GenerativeBundle {
  std::optional<Preprocessor> pre;
  GenerativePlda plda;
};

struct DpldaBundle {
  Preprocessor pre;
  DpldaModel model;
};

struct GaussianBundle {
  Preprocessor pre;
  PairwiseGaussian model;
};

ModelFile to_model_file(const NeuralPldaParams& p);
ModelFile to_model_file(const GenerativeBundle& g);
ModelFile to_model_file(const DpldaBundle& m);
ModelFile to_model_file(const GaussianBundle& m);

NeuralPldaParams neural_plda_from(const ModelFile& f);
GenerativeBundle generative_from(const ModelFile& f);
DpldaBundle dplda_from(const ModelFile& f);
GaussianBundle gaussian_from(const ModelFile& f);

template <class Model>
void save_model(const std::string& path, const Model& m) {
  write_model_file(path, to_model_file(m));
}

inline NeuralPldaParams load_neural_plda(const std::string& path) { return neural_plda_from(read_model_file(path)); }
inline GenerativeBundle load_generative(const std::string& path) { return generative_from(read_model_file(path)); }
inline DpldaBundle load_dplda(const std::string& path) { return dplda_from(read_model_file(path)); }
inline GaussianBundle load_gaussian(const std::string& path) { return gaussian_from(read_model_file(path)); }

}  // namespace nplda
