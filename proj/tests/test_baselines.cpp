#include "nplda/baselines.hpp"
#include "nplda/error.hpp"
#include "nplda/trainer.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

using namespace nplda;
using testing::gaussian_vector;

namespace {

double dense_log_pdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov) {
  const Eigen::VectorXd r = x - mu;
  return -0.5 * r.dot(cov.inverse() * r) - 0.5 * std::log((2.0 * std::numbers::pi * cov).determinant());
}

EmbeddingSet unit_set(int d, int n_speakers, int n_sessions, std::mt19937_64& rng, double speaker_scale) {
  EmbeddingSet set(d);
  for (int s = 0; s < n_speakers; ++s) {
    const Eigen::VectorXd c = gaussian_vector(d, rng, speaker_scale);
    for (int j = 0; j < n_sessions; ++j) {
      const Eigen::VectorXd v = c + gaussian_vector(d, rng, 0.3);
      set.add({"s" + std::to_string(s) + "_" + std::to_string(j), v / v.norm(), "s" + std::to_string(s),
               s % 2 ? Gender::female : Gender::male, j % 2 ? "vid" : "tel"});
    }
  }
  return set;
}

}  // namespace

TEST_CASE("dplda_expand") {
  const Eigen::VectorXd phi = dplda_expand(Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Constant(1, 3.0));
  CHECK(phi == Eigen::VectorXd(Eigen::Vector4d(12, 13, 5, 1)));

  const Eigen::VectorXd zero = dplda_expand(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3));
  CHECK(zero.size() == dplda_expansion_size(3));
  CHECK(zero.size() == 22);
  CHECK(zero.head(21).isZero(0));
  CHECK(zero[21] == 1.0);

  std::mt19937_64 rng(1);
  const Eigen::VectorXd e = gaussian_vector(4, rng), t = gaussian_vector(4, rng);
  CHECK(dplda_expand(e, t) == dplda_expand(t, e));
  CHECK_THROWS_AS(dplda_expand(e, Eigen::VectorXd::Zero(3)), PreconditionError);
}

TEST_CASE("DPLDA initialized from PLDA reproduces the quadratic score") {
  std::mt19937_64 rng(2);
  for (int d : {1, 3, 6}) {
    const GenerativePlda m = random_plda(d, std::max(1, d / 2), 10 + d);
    const ScoreMatrices pq = derive_pq(m);
    const DpldaModel w = dplda_init_from_plda(pq);
    const DpldaModel centered = dplda_init_from_plda(m, pq);
    CHECK(w.dim() == d);
    for (int i = 0; i < 100; ++i) {
      const Eigen::VectorXd e = gaussian_vector(d, rng), t = gaussian_vector(d, rng);
      CHECK(std::abs(dplda_score(w, dplda_expand(e, t)) - score_pair(pq, e, t)) < 1e-10);
      CHECK(std::abs(dplda_score(centered, dplda_expand(e, t)) - plda_score(m, pq, e, t)) < 1e-10);
      CHECK(dplda_score(w, dplda_expand(e, t)) == dplda_score(w, dplda_expand(t, e)));
    }
  }
  const ScoreMatrices zero{Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2)};
  const DpldaModel z = dplda_init_from_plda(zero);
  CHECK(z.w.isZero(0));
  CHECK(dplda_score(z, dplda_expand(gaussian_vector(2, rng), gaussian_vector(2, rng))) == 0.0);

  const ScoreMatrices one{Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::MatrixXd::Zero(1, 1)};
  CHECK(dplda_score(dplda_init_from_plda(one), Eigen::Vector4d(12, 13, 5, 1)) == 12.0);
}

TEST_CASE("dplda_score") {
  std::mt19937_64 rng(3);
  const Eigen::VectorXd phi = dplda_expand(gaussian_vector(2, rng), gaussian_vector(2, rng));
  DpldaModel m;
  m.w = Eigen::VectorXd::Zero(phi.size());
  CHECK(dplda_score(m, phi) == 0.0);
  m.w[phi.size() - 1] = 1.0;
  CHECK(dplda_score(m, phi) == 1.0);

  DpldaModel a, b, combo;
  a.w = gaussian_vector(phi.size(), rng);
  b.w = gaussian_vector(phi.size(), rng);
  combo.w = 2.5 * a.w + b.w;
  CHECK(dplda_score(combo, phi) == doctest::Approx(2.5 * dplda_score(a, phi) + dplda_score(b, phi)).epsilon(1e-12));
  CHECK_THROWS_AS(dplda_score(m, Eigen::VectorXd::Zero(3)), PreconditionError);
  m.w = Eigen::VectorXd::Zero(4 + 1);
  CHECK_THROWS_AS(m.dim(), PreconditionError);
}

TEST_CASE("DPLDA training") {
  std::mt19937_64 rng(4);
  const EmbeddingSet set = unit_set(3, 16, 6, rng, 1.0);
  const std::vector<Trial> trials = sample_training_trials(set, 120, 600, 5);
  std::vector<Trial> val = sample_training_trials(set, 200, 1000, 6);
  // keep validation disjoint from training
  std::set<std::pair<std::string, std::string>> used;
  for (const Trial& t : trials) used.insert({t.enroll_id, t.test_id});
  std::erase_if(val, [&](const Trial& t) { return used.count({t.enroll_id, t.test_id}) > 0; });
  REQUIRE(!val.empty());

  const GenerativePlda plda = estimate_plda(set, 2);
  const ScoreMatrices pq = derive_pq(plda);
  const DpldaModel init = dplda_init_from_plda(plda, pq);

  SUBCASE("initial scores equal the generative scores") {
    const ScoreSet s = dplda_score_trials(init, trials, set);
    for (std::size_t i = 0; i < trials.size(); ++i) {
      const double g = plda_score(plda, pq, set[set.index_of(trials[i].enroll_id)].vector,
                                  set[set.index_of(trials[i].test_id)].vector);
      CHECK(std::abs(s.scores[i] - g) < 1e-10);
    }
  }
  SUBCASE("zero epochs return the initial model") {
    TrainConfig cfg;
    cfg.max_epochs = 0;
    TrainHistory h;
    const DpldaModel out = dplda_train(init, trials, val, set, cfg, &h);
    CHECK(out.w == init.w);
    CHECK(out.theta == init.theta);
    CHECK(h.epochs.empty());
  }
  SUBCASE("BCE from zero weights decreases every epoch and is deterministic") {
    DpldaModel zero;
    zero.w = Eigen::VectorXd::Zero(dplda_expansion_size(3));
    TrainConfig cfg;
    cfg.loss = LossKind::bce;
    cfg.max_epochs = 12;
    cfg.batch_size = 128;
    cfg.lr = 0.05;
    cfg.seed = 3;
    TrainHistory h, again;
    const DpldaModel out = dplda_train(zero, trials, val, set, cfg, &h);
    REQUIRE(h.epochs.size() == 12);
    CHECK(h.epochs.front().train_loss < std::log(2.0));
    for (std::size_t i = 1; i < h.epochs.size(); ++i) CHECK(h.epochs[i].train_loss < h.epochs[i - 1].train_loss);
    CHECK(dplda_train(zero, trials, val, set, cfg, &again).w == out.w);
  }
  SUBCASE("single-class training set") {
    std::vector<Trial> targets;
    for (const Trial& t : trials)
      if (*t.label == TrialLabel::target) targets.push_back(t);
    TrainConfig cfg;
    cfg.max_epochs = 1;
    CHECK_THROWS_AS(dplda_train(init, targets, val, set, cfg), PreconditionError);
  }
}

TEST_CASE("pairwise Gaussian estimation") {
  std::mt19937_64 rng(5);

  SUBCASE("labels independent of the data give matching class means") {
    EmbeddingSet set(2);
    for (int i = 0; i < 400; ++i)
      set.add({"x" + std::to_string(i), gaussian_vector(2, rng), "s" + std::to_string(i % 40), Gender::male, "tel"});
    const auto trials = sample_training_trials(set, 1500, 3000, 7);
    const PairwiseGaussian g = gb_estimate(trials, set);
    CHECK((g.mu_t - g.mu_nt).cwiseAbs().maxCoeff() < 0.1);
  }
  SUBCASE("a single target trial is ridge-regularized") {
    const EmbeddingSet set = unit_set(2, 4, 2, rng, 1.0);
    std::vector<Trial> trials = {{set[0].id, set[1].id, TrialLabel::target}};
    for (std::size_t i = 0; i < set.size(); ++i)
      for (std::size_t j = i + 1; j < set.size(); ++j)
        if (*set[i].speaker_id != *set[j].speaker_id) trials.push_back({set[i].id, set[j].id, TrialLabel::nontarget});
    const PairwiseGaussian g = gb_estimate(trials, set);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.sigma_t);
    CHECK(es.eigenvalues().minCoeff() > 0);
    CHECK(std::isfinite(gb_score(g, set[2].vector, set[3].vector)));
  }
  SUBCASE("duplicating the trial list changes nothing") {
    const EmbeddingSet set = unit_set(2, 10, 4, rng, 1.0);
    auto trials = sample_training_trials(set, 40, 100, 8);
    const PairwiseGaussian a = gb_estimate(trials, set);
    const auto copy = trials;
    trials.insert(trials.end(), copy.begin(), copy.end());
    const PairwiseGaussian b = gb_estimate(trials, set);
    CHECK((a.mu_t - b.mu_t).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((a.sigma_t - b.sigma_t).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((a.sigma_nt - b.sigma_nt).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("empty class") {
    const EmbeddingSet set = unit_set(2, 3, 2, rng, 1.0);
    CHECK_THROWS_AS(gb_estimate({{set[0].id, set[1].id, TrialLabel::target}}, set), PreconditionError);
  }
}

TEST_CASE("gb_score") {
  std::mt19937_64 rng(6);
  PairwiseGaussian g;
  g.mu_t = gaussian_vector(4, rng);
  g.mu_nt = g.mu_t;
  g.sigma_t = testing::random_spd(4, rng);
  g.sigma_nt = g.sigma_t;
  CHECK(gb_score(g, gaussian_vector(2, rng), gaussian_vector(2, rng)) == 0.0);

  g.mu_nt = gaussian_vector(4, rng);
  CHECK(gb_score(g, g.mu_t.head(2), g.mu_t.tail(2)) > 0);

  g.sigma_nt = testing::random_spd(4, rng);
  PairwiseGaussian swapped{g.mu_nt, g.mu_t, g.sigma_nt, g.sigma_t};
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd e = gaussian_vector(2, rng), t = gaussian_vector(2, rng);
    Eigen::VectorXd z(4);
    z << e, t;
    const double oracle = dense_log_pdf(z, g.mu_t, g.sigma_t) - dense_log_pdf(z, g.mu_nt, g.sigma_nt);
    CHECK(std::abs(gb_score(g, e, t) - oracle) < 1e-10);
    CHECK(std::abs(gb_score(swapped, e, t) + gb_score(g, e, t)) < 1e-12);
  }

  EmbeddingSet set(2);
  set.add({"a", gaussian_vector(2, rng), {}, {}, {}});
  set.add({"b", gaussian_vector(2, rng), {}, {}, {}});
  const ScoreSet s = gb_score_trials(g, {{"a", "b", {}}}, set);
  CHECK(s.scores[0] == doctest::Approx(gb_score(g, set[0].vector, set[1].vector)).epsilon(1e-14));
  CHECK_THROWS_AS(gb_score(g, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)), PreconditionError);

  g.sigma_t.setZero();
  CHECK_THROWS_AS(gb_score(g, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)), NumericalError);
}
