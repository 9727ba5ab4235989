#include "nplda/trainer.hpp"

#include "nplda/error.hpp"
#include "nplda/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <unordered_set>

namespace nplda {

namespace {

LossResult evaluate_loss(const TrainConfig& cfg, const Eigen::VectorXd& scores, const Eigen::VectorXd& targets,
                         const Eigen::VectorXd& reference, const Eigen::Vector2d& theta) {
  switch (cfg.loss) {
    case LossKind::bce:
      return bce_loss(scores, targets);
    case LossKind::bce_reg:
      if (reference.size() != scores.size())
        throw PreconditionError("bce_reg needs reference generative scores for every trial");
      return bce_regularized(scores, targets, reference, cfg.lambda_reg);
    case LossKind::soft_cprimary:
      return soft_cprimary(scores, targets, theta, cfg.soft_cost());
    case LossKind::soft_plus_bce:
      return weighted_sum(soft_cprimary(scores, targets, theta, cfg.soft_cost()), bce_loss(scores, targets),
                          cfg.bce_mix_weight);
  }
  throw PreconditionError("unhandled loss kind");
}

Eigen::VectorXd gather(const Eigen::VectorXd& v, std::span<const std::size_t> rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[static_cast<Eigen::Index>(rows[i])];
  return out;
}

template <class Rng>
void fisher_yates(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

// Each batch holds a proportional slice of both classes.
std::vector<std::vector<std::size_t>> stratified_batches(const TrialTable& t, int batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> targets, nontargets;
  for (std::size_t i = 0; i < t.size(); ++i) (t.target[static_cast<Eigen::Index>(i)] > 0.5 ? targets : nontargets).push_back(i);
  fisher_yates(targets, rng);
  fisher_yates(nontargets, rng);
  const std::size_t bs = static_cast<std::size_t>(batch_size);
  const std::size_t n_batches = std::max<std::size_t>(1, (t.size() + bs - 1) / bs);
  if (n_batches > targets.size() || n_batches > nontargets.size())
    throw PreconditionError("cannot form " + std::to_string(n_batches) + " minibatches that each contain both classes (" +
                            std::to_string(targets.size()) + " targets, " + std::to_string(nontargets.size()) +
                            " non-targets)");
  std::vector<std::vector<std::size_t>> batches(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    auto slice = [&](const std::vector<std::size_t>& v) {
      const std::size_t lo = b * v.size() / n_batches, hi = (b + 1) * v.size() / n_batches;
      batches[b].insert(batches[b].end(), v.begin() + static_cast<std::ptrdiff_t>(lo),
                        v.begin() + static_cast<std::ptrdiff_t>(hi));
    };
    slice(targets);
    slice(nontargets);
  }
  return batches;
}

ScoreSet labeled_scores(const Eigen::VectorXd& scores, const TrialTable& table) {
  ScoreSet s;
  s.scores.assign(scores.data(), scores.data() + scores.size());
  s.trials.resize(table.size());
  for (std::size_t i = 0; i < table.size(); ++i)
    s.trials[i].label = table.target[static_cast<Eigen::Index>(i)] > 0.5 ? TrialLabel::target : TrialLabel::nontarget;
  return s;
}

std::string pair_key(std::size_t a, std::size_t b) { return std::to_string(std::min(a, b)) + ":" + std::to_string(std::max(a, b)); }

}  // namespace

SoftCostConfig TrainConfig::soft_cost() const {
  SoftCostConfig c;
  c.alpha = alpha;
  c.lambda_reg = lambda_reg;
  return c;
}

void write_history(const std::string& path, const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "epoch\ttrain_loss\tval_loss\tlr\tval_min_c_primary\n";
  char buf[256];
  for (const auto& e : h.epochs) {
    std::snprintf(buf, sizeof buf, "%d\t%.17g\t%.17g\t%.17g\t%.17g\n", e.epoch, e.train_loss, e.val_loss, e.lr,
                  e.val_min_c_primary);
    out << buf;
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

bool LrSchedule::observe(double val_loss) {
  if (has_last_ && val_loss > last_)
    ++rises_;
  else
    rises_ = 0;
  last_ = val_loss;
  has_last_ = true;
  if (rises_ < 2) return false;
  lr_ *= 0.5;
  ++halvings_;
  rises_ = 0;
  return true;
}

TrialTable TrialTable::from(const std::vector<Trial>& trials, const EmbeddingSet& set) {
  TrialTable t;
  t.enroll.reserve(trials.size());
  t.test.reserve(trials.size());
  t.target.resize(static_cast<Eigen::Index>(trials.size()));
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& tr = trials[i];
    if (!tr.label) throw PreconditionError("trial (" + tr.enroll_id + ", " + tr.test_id + ") has no label");
    t.enroll.push_back(set.index_of(tr.enroll_id));
    t.test.push_back(set.index_of(tr.test_id));
    t.target[static_cast<Eigen::Index>(i)] = *tr.label == TrialLabel::target ? 1.0 : 0.0;
  }
  return t;
}

NeuralPldaBackend::NeuralPldaBackend(NeuralPldaParams params, const EmbeddingSet& set)
    : params_(std::move(params)), data_(set.as_matrix()) {
  params_.check_shapes();
  if (params_.input_dim() != set.dim())
    throw PreconditionError("network input dimension " + std::to_string(params_.input_dim()) +
                            " != embedding dimension " + std::to_string(set.dim()));
}

void NeuralPldaBackend::set_parameters(const Eigen::VectorXd& flat) {
  params_.unflatten(flat);
  params_.symmetrize();
}

Eigen::VectorXd NeuralPldaBackend::forward(const TrialTable& table, std::span<const std::size_t> rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd enroll(data_.rows(), n), test(data_.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    enroll.col(i) = data_.col(static_cast<Eigen::Index>(table.enroll[rows[static_cast<std::size_t>(i)]]));
    test.col(i) = data_.col(static_cast<Eigen::Index>(table.test[rows[static_cast<std::size_t>(i)]]));
  }
  return batch_.forward(params_, enroll, test);
}

Eigen::VectorXd NeuralPldaBackend::backward(const Eigen::VectorXd& dscore) {
  return batch_.backward(params_, dscore).flatten();
}

Eigen::VectorXd score_table(TrainableBackend& model, const TrialTable& table, std::size_t chunk) {
  Eigen::VectorXd scores(static_cast<Eigen::Index>(table.size()));
  std::vector<std::size_t> rows;
  for (std::size_t lo = 0; lo < table.size(); lo += chunk) {
    const std::size_t hi = std::min(table.size(), lo + chunk);
    rows.resize(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) rows[i - lo] = i;
    scores.segment(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo)) = model.forward(table, rows);
  }
  return scores;
}

Validation validate(TrainableBackend& model, const TrialTable& val, const TrainConfig& cfg) {
  if (val.size() == 0) throw PreconditionError("validation trial list is empty");
  const Eigen::VectorXd scores = score_table(model, val, static_cast<std::size_t>(std::max(1, cfg.batch_size)));
  const Eigen::VectorXd flat = model.parameters();
  const Eigen::Vector2d theta = flat.tail<2>();
  Validation v;
  v.loss = evaluate_loss(cfg, scores, val.target, val.reference, theta).loss;
  v.min_c_primary = min_c_primary(labeled_scores(scores, val)).value;
  return v;
}

TrainHistory train(TrainableBackend& model, const TrialTable& train_trials, const TrialTable& val_trials,
                   const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (cfg.batch_size < 2) throw PreconditionError("batch size must be at least 2");
  if (!(cfg.lr > 0)) throw PreconditionError("learning rate must be positive");
  TrainHistory history;
  if (cfg.max_epochs <= 0) return history;
  if (train_trials.size() == 0) throw PreconditionError("training trial list is empty");
  if (val_trials.size() == 0) throw PreconditionError("validation trial list is empty");

  std::mt19937_64 rng(cfg.seed);
  LrSchedule schedule(cfg.lr);
  Eigen::VectorXd params = model.parameters();
  if (cfg.fit_thresholds) {
    const Eigen::VectorXd scores = score_table(model, train_trials);
    const MinCPrimary m = min_c_primary(labeled_scores(scores, train_trials));
    // An infinite optimum is replaced by the extreme training score on its side.
    auto finite = [&](double theta) {
      if (theta == std::numeric_limits<double>::infinity()) return scores.maxCoeff();
      if (theta == -std::numeric_limits<double>::infinity()) return scores.minCoeff();
      return theta;
    };
    params[params.size() - 2] = finite(m.theta1);
    params[params.size() - 1] = finite(m.theta2);
    model.set_parameters(params);
  }
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(params.size());

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (schedule.lr() < cfg.min_lr) break;
    const double lr = schedule.lr();
    const auto batches = stratified_batches(train_trials, cfg.batch_size, rng);
    double loss_sum = 0;
    for (const auto& rows : batches) {
      const Eigen::VectorXd scores = model.forward(train_trials, rows);
      const Eigen::VectorXd targets = gather(train_trials.target, rows);
      const Eigen::VectorXd reference =
          train_trials.reference.size() ? gather(train_trials.reference, rows) : Eigen::VectorXd();
      const LossResult l = evaluate_loss(cfg, scores, targets, reference, params.tail<2>());
      if (!std::isfinite(l.loss) || !l.dscore.allFinite())
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch));
      Eigen::VectorXd grad = model.backward(l.dscore);
      grad.tail<2>() += l.dtheta;
      if (!grad.allFinite()) throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch));
      velocity = cfg.momentum * velocity - lr * grad;
      params += velocity;
      model.set_parameters(params);
      params = model.parameters();
      loss_sum += l.loss;
    }
    const Validation v = validate(model, val_trials, cfg);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(batches.size()), v.loss, lr, v.min_c_primary};
    history.epochs.push_back(rec);
    schedule.observe(v.loss);
    if (on_epoch) on_epoch(rec, model);
  }
  history.lr_halvings = schedule.halvings();
  return history;
}

namespace {

void check_disjoint(const std::vector<Trial>& a, const std::vector<Trial>& b) {
  std::unordered_set<std::string> seen;
  for (const auto& t : a) seen.insert(t.enroll_id + '\x1f' + t.test_id);
  for (const auto& t : b)
    if (seen.count(t.enroll_id + '\x1f' + t.test_id) || seen.count(t.test_id + '\x1f' + t.enroll_id))
      throw PreconditionError("validation trial (" + t.enroll_id + ", " + t.test_id + ") also appears in training");
}

}  // namespace

std::pair<NeuralPldaParams, TrainHistory> train(const NeuralPldaParams& init, const std::vector<Trial>& trials,
                                                const EmbeddingSet& set, const std::vector<Trial>& val_trials,
                                                const TrainConfig& cfg,
                                                const std::optional<NeuralPldaParams>& reference,
                                                const EpochCallback& on_epoch) {
  if (cfg.max_epochs <= 0) return {init, {}};
  check_disjoint(trials, val_trials);
  TrialTable train_table = TrialTable::from(trials, set);
  TrialTable val_table = TrialTable::from(val_trials, set);
  if (cfg.loss == LossKind::bce_reg) {
    NeuralPldaBackend ref(reference.value_or(init), set);
    train_table.reference = score_table(ref, train_table);
    val_table.reference = score_table(ref, val_table);
  }
  NeuralPldaBackend model(init, set);
  TrainHistory h = train(model, train_table, val_table, cfg, on_epoch);
  return {model.params(), std::move(h)};
}

Validation validate(const NeuralPldaParams& params, const std::vector<Trial>& val_trials, const EmbeddingSet& set,
                    const TrainConfig& cfg) {
  if (val_trials.empty()) throw PreconditionError("validation trial list is empty");
  TrialTable table = TrialTable::from(val_trials, set);
  NeuralPldaBackend model(params, set);
  if (cfg.loss == LossKind::bce_reg) table.reference = score_table(model, table);
  return validate(model, table, cfg);
}

std::vector<Trial> sample_training_trials(const EmbeddingSet& set, std::size_t n_target, std::size_t n_nontarget,
                                          std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  std::map<std::string, std::vector<std::size_t>> by_condition;  // gender + source
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& e = set[i];
    if (!e.speaker_id) throw PreconditionError("trial sampling requires speaker labels; '" + e.id + "' has none");
    by_speaker[*e.speaker_id].push_back(i);
    const std::string cond =
        std::string(e.gender ? to_string(*e.gender) : "-") + "|" + e.source.value_or("-");
    by_condition[cond].push_back(i);
  }
  if (by_speaker.size() < 2) throw PreconditionError("trial sampling requires at least 2 speakers");

  std::mt19937_64 rng(seed);
  std::vector<Trial> out;
  auto make = [&](std::size_t a, std::size_t b, TrialLabel label) {
    out.push_back({set[a].id, set[b].id, label});
  };

  // Targets: sample without replacement from all within-speaker pairs.
  std::vector<std::pair<std::size_t, std::size_t>> target_pairs;
  for (const auto& [spk, idx] : by_speaker)
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = i + 1; j < idx.size(); ++j) target_pairs.emplace_back(idx[i], idx[j]);
  if (n_target > target_pairs.size())
    throw PreconditionError("requested " + std::to_string(n_target) + " target trials but only " +
                            std::to_string(target_pairs.size()) + " same-speaker pairs exist");
  std::vector<std::size_t> order(target_pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  fisher_yates(order, rng);
  for (std::size_t k = 0; k < n_target; ++k) {
    auto [a, b] = target_pairs[order[k]];
    if (rng() & 1) std::swap(a, b);
    make(a, b, TrialLabel::target);
  }

  // Non-targets: cross-speaker pairs inside one gender/source condition.
  std::size_t eligible = 0;
  std::vector<std::size_t> candidates;  // embeddings with at least one eligible partner
  std::vector<const std::vector<std::size_t>*> group_of(set.size(), nullptr);
  for (const auto& [cond, idx] : by_condition) {
    std::map<std::string, std::size_t> per_speaker;
    for (auto i : idx) ++per_speaker[*set[i].speaker_id];
    std::size_t same = 0;
    for (const auto& [s, c] : per_speaker) same += c * c;
    const std::size_t pairs = (idx.size() * idx.size() - same) / 2;
    eligible += pairs;
    if (pairs == 0) continue;
    for (auto i : idx) {
      group_of[i] = &idx;
      if (per_speaker[*set[i].speaker_id] < idx.size()) candidates.push_back(i);
    }
  }
  if (n_nontarget > eligible)
    throw PreconditionError("requested " + std::to_string(n_nontarget) + " non-target trials but only " +
                            std::to_string(eligible) + " gender/source-matched cross-speaker pairs exist");

  std::unordered_set<std::string> used;
  if (n_nontarget * 2 > eligible) {
    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (const auto& [cond, idx] : by_condition)
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = i + 1; j < idx.size(); ++j)
          if (*set[idx[i]].speaker_id != *set[idx[j]].speaker_id) all.emplace_back(idx[i], idx[j]);
    std::vector<std::size_t> perm(all.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    fisher_yates(perm, rng);
    for (std::size_t k = 0; k < n_nontarget; ++k) make(all[perm[k]].first, all[perm[k]].second, TrialLabel::nontarget);
  } else {
    std::uniform_int_distribution<std::size_t> pick_a(0, candidates.size() - 1);
    std::size_t drawn = 0;
    while (drawn < n_nontarget) {
      const std::size_t a = candidates[pick_a(rng)];
      const auto& group = *group_of[a];
      std::uniform_int_distribution<std::size_t> pick_b(0, group.size() - 1);
      const std::size_t b = group[pick_b(rng)];
      if (*set[a].speaker_id == *set[b].speaker_id) continue;
      if (!used.insert(pair_key(a, b)).second) continue;
      make(a, b, TrialLabel::nontarget);
      ++drawn;
    }
  }

  std::vector<std::size_t> shuffle(out.size());
  for (std::size_t i = 0; i < shuffle.size(); ++i) shuffle[i] = i;
  fisher_yates(shuffle, rng);
  std::vector<Trial> mixed;
  mixed.reserve(out.size());
  for (auto i : shuffle) mixed.push_back(std::move(out[i]));
  return mixed;
}

}  // namespace nplda
