#include "nplda/error.hpp"
#include "nplda/generative_plda.hpp"
#include "nplda/metrics.hpp"
#include "nplda/trainer.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace nplda;

namespace {

struct Task {
  EmbeddingSet set;
  std::vector<Trial> train, val;
};

// Easy synthetic verification task in 8 dimensions.
Task make_task(std::uint64_t seed) {
  const GenerativePlda m = random_plda(8, 3, seed, 1.5);
  Task t{sample_synthetic(m, 40, 6, seed + 1, {"a"}), {}, {}};
  const EmbeddingSet val = sample_synthetic(m, 20, 6, seed + 2, {"b"});
  t.train = sample_training_trials(t.set, 400, 2000, seed + 3);
  t.val = sample_training_trials(val, 200, 1000, seed + 4);
  for (const Embedding& e : val.entries()) t.set.add(e);
  return t;
}

}  // namespace

TEST_CASE("trial sampling respects speaker, gender and source") {
  EmbeddingSet set(2);
  set.add({"a0", Eigen::Vector2d(0, 0), "A", Gender::male, "tel"});
  set.add({"a1", Eigen::Vector2d(0, 1), "A", Gender::male, "vid"});
  set.add({"b0", Eigen::Vector2d(1, 0), "B", Gender::male, "tel"});
  set.add({"b1", Eigen::Vector2d(1, 1), "B", Gender::male, "vid"});
  const auto trials = sample_training_trials(set, 2, 2, 1);
  REQUIRE(trials.size() == 4);
  std::set<std::string> seen;
  for (const Trial& t : trials) {
    const Embedding& e = set[set.index_of(t.enroll_id)];
    const Embedding& x = set[set.index_of(t.test_id)];
    CHECK(t.enroll_id != t.test_id);
    CHECK(seen.insert(std::min(t.enroll_id, t.test_id) + "|" + std::max(t.enroll_id, t.test_id)).second);
    if (*t.label == TrialLabel::target) {
      CHECK(e.speaker_id == x.speaker_id);
    } else {
      CHECK(e.speaker_id != x.speaker_id);
      CHECK(e.gender == x.gender);
      CHECK(e.source == x.source);
    }
  }
  CHECK_THROWS_AS(sample_training_trials(set, 3, 0, 1), PreconditionError);
  CHECK_THROWS_AS(sample_training_trials(set, 0, 3, 1), PreconditionError);
}

TEST_CASE("trial sampling on larger sets") {
  const EmbeddingSet set = sample_synthetic(random_plda(3, 1, 1), 30, 4, 2);
  const auto a = sample_training_trials(set, 100, 500, 7);
  const auto b = sample_training_trials(set, 100, 500, 7);
  const auto c = sample_training_trials(set, 100, 500, 8);
  REQUIRE(a.size() == 600);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same = same && a[i].enroll_id == b[i].enroll_id && a[i].test_id == b[i].test_id && a[i].label == b[i].label;
    differs = differs || a[i].enroll_id != c[i].enroll_id || a[i].test_id != c[i].test_id;
  }
  CHECK(same);
  CHECK(differs);
  std::size_t targets = 0;
  std::set<std::string> pairs;
  for (const Trial& t : a) {
    targets += *t.label == TrialLabel::target;
    const Embedding& e = set[set.index_of(t.enroll_id)];
    const Embedding& x = set[set.index_of(t.test_id)];
    CHECK((*t.label == TrialLabel::target) == (e.speaker_id == x.speaker_id));
    if (*t.label == TrialLabel::nontarget) CHECK((e.gender == x.gender && e.source == x.source));
    pairs.insert(std::min(t.enroll_id, t.test_id) + "|" + std::max(t.enroll_id, t.test_id));
  }
  CHECK(targets == 100);
  CHECK(pairs.size() == a.size());

  const EmbeddingSet single = sample_synthetic(random_plda(3, 1, 1), 10, 1, 2);
  CHECK_THROWS_AS(sample_training_trials(single, 1, 0, 1), PreconditionError);
}

TEST_CASE("learning-rate schedule halves after two consecutive increases") {
  LrSchedule s(1e-3);
  CHECK(!s.observe(1.0));
  CHECK(!s.observe(1.1));
  CHECK(s.observe(1.2));
  CHECK(s.lr() == 5e-4);
  CHECK(s.halvings() == 1);
  // counting restarts after a halving
  CHECK(!s.observe(1.3));
  CHECK(!s.observe(1.0));
  CHECK(!s.observe(1.1));
  CHECK(s.observe(1.2));
  CHECK(s.lr() == 2.5e-4);
  CHECK(!s.observe(1.2));  // equal is not an increase
  CHECK(s.halvings() == 2);
}

TEST_CASE("training") {
  const Task task = make_task(11);
  TrainConfig cfg;
  cfg.batch_size = 512;
  cfg.seed = 4;

  SUBCASE("zero epochs leave the parameters untouched") {
    const NeuralPldaParams init = init_random(8, 4, 1);
    cfg.max_epochs = 0;
    const auto [p, h] = train(init, task.train, task.set, task.val, cfg);
    CHECK(p.flatten() == init.flatten());
    CHECK(h.epochs.empty());
    CHECK(h.lr_halvings == 0);
  }
  SUBCASE("soft cost from random initialization improves validation cost") {
    cfg.max_epochs = 5;
    cfg.lr = 0.2;
    cfg.fit_thresholds = true;
    const auto [p, h] = train(init_random(8, 4, 2), task.train, task.set, task.val, cfg);
    REQUIRE(h.epochs.size() == 5);
    const double before = validate(init_random(8, 4, 2), task.val, task.set, cfg).min_c_primary;
    CHECK(h.epochs[0].val_min_c_primary < before);
    for (std::size_t i = 1; i < h.epochs.size(); ++i)
      CHECK(h.epochs[i].val_min_c_primary < h.epochs[i - 1].val_min_c_primary);
    CHECK(p.P == p.P.transpose());
    CHECK(p.Q == p.Q.transpose());
  }
  SUBCASE("identical configuration gives bitwise identical results") {
    cfg.max_epochs = 3;
    cfg.lr = 0.05;
    cfg.loss = LossKind::soft_plus_bce;
    const auto a = train(init_random(8, 4, 3), task.train, task.set, task.val, cfg);
    const auto b = train(init_random(8, 4, 3), task.train, task.set, task.val, cfg);
    CHECK(a.first.flatten() == b.first.flatten());
    REQUIRE(a.second.epochs.size() == b.second.epochs.size());
    for (std::size_t i = 0; i < a.second.epochs.size(); ++i) {
      CHECK(a.second.epochs[i].train_loss == b.second.epochs[i].train_loss);
      CHECK(a.second.epochs[i].val_loss == b.second.epochs[i].val_loss);
    }
  }
  SUBCASE("two consecutive validation increases halve the rate once") {
    cfg.max_epochs = 12;
    cfg.lr = 0.6;
    cfg.loss = LossKind::bce;
    const auto [p, h] = train(init_random(8, 4, 4), task.train, task.set, task.val, cfg);
    REQUIRE(h.epochs.size() == 12);
    // replay the schedule rule on the recorded validation losses
    double lr = cfg.lr;
    int rises = 0, halvings = 0;
    for (std::size_t i = 0; i < h.epochs.size(); ++i) {
      CHECK(h.epochs[i].lr == lr);
      rises = i > 0 && h.epochs[i].val_loss > h.epochs[i - 1].val_loss ? rises + 1 : 0;
      if (rises == 2) {
        lr *= 0.5;
        rises = 0;
        ++halvings;
      }
    }
    CHECK(h.lr_halvings == halvings);
    CHECK(halvings == 1);
  }
  SUBCASE("saturated soft cost is a fixed point") {
    NeuralPldaParams init = init_random(8, 4, 5);
    init.theta << 1e6, 1e6;
    cfg.max_epochs = 3;
    cfg.lr = 0.1;
    const auto [p, h] = train(init, task.train, task.set, task.val, cfg);
    CHECK(p.flatten() == init.flatten());
    CHECK(h.epochs.size() == 3);
  }
  SUBCASE("validation trials must not overlap training") {
    cfg.max_epochs = 1;
    std::vector<Trial> val = task.val;
    val.push_back({task.train[0].test_id, task.train[0].enroll_id, task.train[0].label});
    CHECK_THROWS_AS(train(init_random(8, 4, 6), task.train, task.set, val, cfg), PreconditionError);
  }
  SUBCASE("bad configuration") {
    cfg.max_epochs = 1;
    cfg.batch_size = 1;
    CHECK_THROWS_AS(train(init_random(8, 4, 6), task.train, task.set, task.val, cfg), PreconditionError);
    cfg.batch_size = 512;
    cfg.lr = 0;
    CHECK_THROWS_AS(train(init_random(8, 4, 6), task.train, task.set, task.val, cfg), PreconditionError);
  }
  SUBCASE("divergence is reported") {
    cfg.max_epochs = 5;
    cfg.lr = 1e6;
    cfg.loss = LossKind::bce;
    CHECK_THROWS_AS(train(init_random(8, 4, 7), task.train, task.set, task.val, cfg), NumericalError);
  }
}

TEST_CASE("validation") {
  const Task task = make_task(21);
  EmbeddingSet train_part(8);
  for (const Embedding& e : task.set.entries())
    if (e.id[0] == 'a') train_part.add(e);
  const Preprocessor pre = estimate_preprocessor(train_part, 6);
  const GenerativePlda plda = estimate_plda(pre.apply(train_part), 3);
  const NeuralPldaParams net = init_from_generative(pre, plda);
  TrainConfig cfg;

  const Validation a = validate(net, task.val, task.set, cfg);
  const Validation b = validate(net, task.val, task.set, cfg);
  CHECK(a.loss == b.loss);
  CHECK(a.min_c_primary == b.min_c_primary);

  // closed-form generative scores through the same objective
  const ScoreMatrices pq = derive_pq(plda);
  ScoreSet closed;
  Eigen::VectorXd targets(static_cast<Eigen::Index>(task.val.size()));
  for (std::size_t i = 0; i < task.val.size(); ++i) {
    const Eigen::VectorXd e = pre.apply(task.set[task.set.index_of(task.val[i].enroll_id)].vector);
    const Eigen::VectorXd t = pre.apply(task.set[task.set.index_of(task.val[i].test_id)].vector);
    closed.trials.push_back(task.val[i]);
    closed.scores.push_back(plda_score(plda, pq, e, t));
    targets[static_cast<Eigen::Index>(i)] = *task.val[i].label == TrialLabel::target;
  }
  const Eigen::VectorXd s = Eigen::Map<const Eigen::VectorXd>(closed.scores.data(), targets.size());
  const double loss = soft_cprimary(s, targets, default_thresholds(), cfg.soft_cost()).loss;
  CHECK(a.loss == doctest::Approx(loss).epsilon(1e-9));
  CHECK(std::abs(a.min_c_primary - min_c_primary(closed).value) < 1e-12);

  CHECK_THROWS_AS(validate(net, {}, task.set, cfg), PreconditionError);
}
