#pragma once

#include "nplda/embeddings_io.hpp"
#include "nplda/losses.hpp"
#include "nplda/neural_plda.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nplda {

struct TrainConfig {
  int batch_size = 4096;
  double lr = 1e-3;
  int max_epochs = 30;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::soft_cprimary;
  double alpha = 20.0;
  double lambda_reg = 0.1;
  double bce_mix_weight = 0.1;
  double momentum = 0.9;
  double min_lr = 1e-6;
  /// Before the first step, move the thresholds to the minimum-cost operating
  /// points of the training trials under the initial model. An infinite
  /// optimum becomes the extreme training score on that side.
  bool fit_thresholds = false;

  SoftCostConfig soft_cost() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;  // mean over the epoch's minibatches
  double val_loss = 0;
  double lr = 0;  // rate used during the epoch
  double val_min_c_primary = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int lr_halvings = 0;
};

void write_history(const std::string& path, const TrainHistory& h);

/// Halves the learning rate after two consecutive epoch-over-epoch increases
/// of the validation loss, then starts counting afresh.
class LrSchedule {
 public:
  explicit LrSchedule(double initial) : lr_(initial) {}

  double lr() const { return lr_; }
  int halvings() const { return halvings_; }
  /// Returns true when this observation halved the rate.
  bool observe(double val_loss);

 private:
  double lr_;
  int halvings_ = 0;
  int rises_ = 0;
  double last_ = 0.0;
  bool has_last_ = false;
};

/// Trials resolved to set positions with 0/1 targets, plus optional
/// reference scores for the regularized objective.
struct TrialTable {
  std::vector<std::size_t> enroll;
  std::vector<std::size_t> test;
  Eigen::VectorXd target;
  Eigen::VectorXd reference;  // empty unless needed

  std::size_t size() const { return enroll.size(); }
  static TrialTable from(const std::vector<Trial>& trials, const EmbeddingSet& set);
};

/// A model the minibatch trainer can optimize. Parameters are exchanged as a
/// flat vector whose last two entries are the detection thresholds.
class TrainableBackend {
 public:
  virtual ~TrainableBackend() = default;
  virtual Eigen::VectorXd parameters() const = 0;
  virtual void set_parameters(const Eigen::VectorXd& flat) = 0;
  /// Scores the given rows of the table and keeps what backward() needs.
  virtual Eigen::VectorXd forward(const TrialTable& table, std::span<const std::size_t> rows) = 0;
  /// Gradient of Σ dscore_i s_i for the last forward batch; threshold slots
  /// are zero.
  virtual Eigen::VectorXd backward(const Eigen::VectorXd& dscore) = 0;
};

class NeuralPldaBackend final : public TrainableBackend {
 public:
  NeuralPldaBackend(NeuralPldaParams params, const EmbeddingSet& set);

  const NeuralPldaParams& params() const { return params_; }
  Eigen::VectorXd parameters() const override { return params_.flatten(); }
  void set_parameters(const Eigen::VectorXd& flat) override;
  Eigen::VectorXd forward(const TrialTable& table, std::span<const std::size_t> rows) override;
  Eigen::VectorXd backward(const Eigen::VectorXd& dscore) override;

 private:
  NeuralPldaParams params_;
  Eigen::MatrixXd data_;
  NeuralPldaBatch batch_;
};

struct Validation {
  double loss = 0;
  double min_c_primary = 0;
};

/// Loss of the configured objective over the whole table and its minimum
/// C_primary. Does not change the model's parameters.
Validation validate(TrainableBackend& model, const TrialTable& val, const TrainConfig& cfg);

/// Scores every row of the table, in chunks of the configured batch size.
Eigen::VectorXd score_table(TrainableBackend& model, const TrialTable& table, std::size_t chunk = 4096);

using EpochCallback = std::function<void(const EpochRecord&, const TrainableBackend&)>;

/// Minibatch gradient descent with momentum on class-stratified batches.
/// Deterministic given cfg.seed.
TrainHistory train(TrainableBackend& model, const TrialTable& train_trials, const TrialTable& val_trials,
                   const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Neural PLDA convenience wrapper. Reference scores for bce_reg come from
/// `reference` (the initial network when absent).
std::pair<NeuralPldaParams, TrainHistory> train(const NeuralPldaParams& init, const std::vector<Trial>& trials,
                                                const EmbeddingSet& set, const std::vector<Trial>& val_trials,
                                                const TrainConfig& cfg,
                                                const std::optional<NeuralPldaParams>& reference = std::nullopt,
                                                const EpochCallback& on_epoch = {});

Validation validate(const NeuralPldaParams& params, const std::vector<Trial>& val_trials, const EmbeddingSet& set,
                    const TrainConfig& cfg);

/// Target pairs within speaker, non-target pairs across speakers with equal
/// gender and source, never an embedding with itself, no repeated pair.
std::vector<Trial> sample_training_trials(const EmbeddingSet& set, std::size_t n_target, std::size_t n_nontarget,
                                          std::uint64_t seed);

}  // namespace nplda
