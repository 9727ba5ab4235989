#include "nplda/error.hpp"
#include "nplda/generative_plda.hpp"
#include "nplda/neural_plda.hpp"
#include "nplda/preprocess.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace nplda;
using testing::gaussian;
using testing::gaussian_vector;

namespace {

NeuralPldaParams random_params(int D, int d, std::mt19937_64& rng) {
  NeuralPldaParams p;
  p.W1 = gaussian(d, D, rng);
  p.b1 = gaussian_vector(d, rng, 0.3);
  p.W2 = gaussian(d, d, rng);
  p.b2 = gaussian_vector(d, rng, 0.3);
  Eigen::MatrixXd a = gaussian(d, d, rng);
  p.P = 0.5 * (a + a.transpose());
  a = gaussian(d, d, rng);
  p.Q = 0.5 * (a + a.transpose());
  p.theta = gaussian_vector(2, rng);
  return p;
}

// Straight-line evaluation of the network for one pair.
double reference_score(const NeuralPldaParams& p, const Eigen::VectorXd& e, const Eigen::VectorXd& t) {
  auto f = [&](const Eigen::VectorXd& x) {
    const Eigen::VectorXd a = p.W1 * x + p.b1;
    return Eigen::VectorXd(p.W2 * (a / a.norm()) + p.b2);
  };
  const Eigen::VectorXd fe = f(e), ft = f(t);
  return fe.dot(p.Q * fe) + ft.dot(p.Q * ft) + 2.0 * fe.dot(p.P * ft);
}

EmbeddingSet random_set(int D, int n, std::mt19937_64& rng) {
  EmbeddingSet set(D);
  for (int i = 0; i < n; ++i) set.add({"u" + std::to_string(i), gaussian_vector(D, rng), {}, {}, {}});
  return set;
}

}  // namespace

TEST_CASE("flatten and unflatten are inverse, thresholds last") {
  std::mt19937_64 rng(1);
  const NeuralPldaParams p = random_params(5, 3, rng);
  const Eigen::VectorXd flat = p.flatten();
  CHECK(flat.size() == p.size());
  CHECK(flat.size() == 3 * 5 + 3 + 9 + 3 + 9 + 9 + 2);
  CHECK(flat[flat.size() - 2] == p.theta[0]);
  CHECK(flat[flat.size() - 1] == p.theta[1]);
  NeuralPldaParams q = zeros_like(p);
  q.unflatten(flat);
  CHECK(q.flatten() == flat);
  CHECK_THROWS_AS(q.unflatten(Eigen::VectorXd::Zero(3)), PreconditionError);
}

TEST_CASE("identity front end and a model without speaker variability score zero") {
  const int d = 4;
  GenerativePlda m;
  m.mu = Eigen::VectorXd::Zero(d);
  m.phi = Eigen::MatrixXd::Zero(d, 1);
  m.sigma = Eigen::MatrixXd::Identity(d, d);
  AffineTransform lda{Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d)};
  const NeuralPldaParams p = init_from_generative(Eigen::VectorXd::Zero(d), lda, m);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10; ++i) CHECK(forward(p, gaussian_vector(d, rng), gaussian_vector(d, rng)) == 0.0);
}

TEST_CASE("generative initialization reproduces the closed-form pipeline score") {
  const int D = 9, d = 4;
  std::mt19937_64 rng(3);
  const GenerativePlda m = random_plda(d, 2, 11);
  const Eigen::VectorXd mean = gaussian_vector(D, rng);
  AffineTransform lda{gaussian(d, D, rng), gaussian_vector(d, rng, 0.1)};
  const NeuralPldaParams p = init_from_generative(mean, lda, m);
  const ScoreMatrices pq = derive_pq(m);

  CHECK(p.theta[0] == doctest::Approx(4.5951).epsilon(1e-4));
  CHECK(p.theta[1] == doctest::Approx(5.2933).epsilon(1e-4));
  CHECK((p.W2 - Eigen::MatrixXd::Identity(d, d)).norm() == 0.0);

  auto pipeline = [&](const Eigen::VectorXd& x) {
    const Eigen::VectorXd y = lda.weight * (x - mean) + lda.bias;
    return Eigen::VectorXd(y / y.norm() - m.mu);
  };
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const Eigen::VectorXd e = gaussian_vector(D, rng), t = gaussian_vector(D, rng);
    const Eigen::VectorXd pe = pipeline(e), pt = pipeline(t);
    const double closed = pe.dot(pq.Q * pe) + pt.dot(pq.Q * pt) + 2.0 * pe.dot(pq.P * pt);
    worst = std::max(worst, std::abs(forward(p, e, t) - closed));
  }
  CHECK(worst < 1e-10);

  CHECK_THROWS_AS(init_from_generative(Eigen::VectorXd::Zero(D + 1), lda, m), PreconditionError);
  CHECK_THROWS_AS(init_from_generative(mean, lda, random_plda(d + 1, 2, 1)), PreconditionError);
}

TEST_CASE("random initialization") {
  const NeuralPldaParams a = init_random(8, 3, 42), b = init_random(8, 3, 42), c = init_random(8, 3, 43);
  CHECK(a.flatten() == b.flatten());
  CHECK(a.flatten() != c.flatten());
  CHECK(a.P == a.P.transpose());
  CHECK(a.Q == a.Q.transpose());
  CHECK((a.W1 * a.W1.transpose() - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-12);
  CHECK((a.W2 * a.W2.transpose() - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-12);
  CHECK(a.b1.isZero(0));
  CHECK(a.b2.isZero(0));
  CHECK(a.theta == default_thresholds());
  CHECK_THROWS_AS(init_random(3, 4, 0), PreconditionError);
}

TEST_CASE("forward is swap-symmetric and matches a direct evaluation") {
  std::mt19937_64 rng(4);
  const NeuralPldaParams p = random_params(6, 3, rng);
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd e = gaussian_vector(6, rng), t = gaussian_vector(6, rng);
    CHECK(forward(p, e, t) == forward(p, t, e));
    CHECK(forward(p, e, t) == doctest::Approx(reference_score(p, e, t)).epsilon(1e-12));
  }
  NeuralPldaParams z = p;
  z.P.setZero();
  z.Q.setZero();
  CHECK(forward(z, gaussian_vector(6, rng), gaussian_vector(6, rng)) == 0.0);
}

TEST_CASE("zero activation at the length-norm layer is an error") {
  std::mt19937_64 rng(5);
  NeuralPldaParams p = random_params(4, 2, rng);
  p.b1.setZero();
  CHECK_THROWS_AS(forward(p, Eigen::VectorXd::Zero(4), gaussian_vector(4, rng)), NumericalError);
}

TEST_CASE("forward_batch agrees with the per-trial loop") {
  std::mt19937_64 rng(6);
  const NeuralPldaParams p = random_params(7, 4, rng);
  const EmbeddingSet set = random_set(7, 60, rng);
  std::uniform_int_distribution<std::size_t> pick(0, set.size() - 1);
  std::vector<Trial> trials;
  for (int i = 0; i < 1000; ++i) trials.push_back({set[pick(rng)].id, set[pick(rng)].id, {}});

  const ScoreSet s = forward_batch(p, trials, set);
  REQUIRE(s.scores.size() == trials.size());
  double worst = 0;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    CHECK(s.trials[i].enroll_id == trials[i].enroll_id);
    const double loop = forward(p, set[set.index_of(trials[i].enroll_id)].vector,
                                set[set.index_of(trials[i].test_id)].vector);
    worst = std::max(worst, std::abs(s.scores[i] - loop));
  }
  CHECK(worst < 1e-12);

  const ScoreSet one = forward_batch(p, {trials[0]}, set);
  CHECK(one.scores[0] ==
        forward(p, set[set.index_of(trials[0].enroll_id)].vector, set[set.index_of(trials[0].test_id)].vector));
  CHECK(forward_batch(p, {}, set).scores.empty());
  CHECK_THROWS_AS(forward_batch(p, {{"u0", "nobody", {}}}, set), PreconditionError);
}

TEST_CASE("backward matches central finite differences for every parameter block") {
  const int D = 6, d = 3, N = 16;
  std::mt19937_64 rng(7);
  const NeuralPldaParams p = random_params(D, d, rng);
  const Eigen::MatrixXd E = gaussian(D, N, rng), T = gaussian(D, N, rng);
  const Eigen::VectorXd c = gaussian_vector(N, rng);

  NeuralPldaBatch batch;
  batch.forward(p, E, T);
  const Eigen::VectorXd analytic = batch.backward(p, c).flatten();

  auto objective = [&](const Eigen::VectorXd& flat) {
    NeuralPldaParams q = p;
    q.unflatten(flat);
    NeuralPldaBatch b;
    return c.dot(b.forward(q, E, T));
  };
  const Eigen::VectorXd numeric = testing::central_difference(objective, p.flatten(), 1e-5);
  const auto cmp = testing::compare_gradients(analytic, numeric);
  INFO("worst relative error " << cmp.worst_relative << ", first failing index " << cmp.first_failure);
  CHECK(cmp.failures == 0);
  CHECK(analytic.tail<2>().isZero(0));

  SUBCASE("gradients of the score matrices are symmetric") {
    const ParamGradients g = batch.backward(p, c);
    CHECK((g.P - g.P.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((g.Q - g.Q.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("zero upstream gradient gives zero gradients") {
    CHECK(batch.backward(p, Eigen::VectorXd::Zero(N)).flatten().isZero(0));
  }
  SUBCASE("doubling the upstream gradient doubles every entry exactly") {
    CHECK(batch.backward(p, 2.0 * c).flatten() == 2.0 * analytic);
  }
  SUBCASE("length mismatch") { CHECK_THROWS_AS(batch.backward(p, Eigen::VectorXd::Zero(N + 1)), PreconditionError); }
}
