#include "nplda/metrics.hpp"

#include "nplda/error.hpp"
#include "nplda/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nplda {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Labeled {
  double score;
  bool target;
};

// Scores in ascending order, ties kept adjacent.
std::vector<Labeled> sorted_scores(const ClassScores& c) {
  std::vector<Labeled> all;
  all.reserve(c.target.size() + c.nontarget.size());
  for (double s : c.target) all.push_back({s, true});
  for (double s : c.nontarget) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Labeled& x, const Labeled& y) {
    return x.score < y.score || (x.score == y.score && x.target < y.target);
  });
  return all;
}

struct OperatingPoint {
  double theta;
  std::size_t misses;
  std::size_t false_alarms;
};

// One operating point per distinct threshold: -inf, every boundary between
// distinct adjacent scores, +inf.
std::vector<OperatingPoint> operating_points(const ClassScores& c) {
  const auto all = sorted_scores(c);
  std::vector<OperatingPoint> pts;
  std::size_t misses = 0;
  std::size_t alarms = c.nontarget.size();
  pts.push_back({-kInf, misses, alarms});
  for (std::size_t k = 0; k < all.size(); ++k) {
    if (all[k].target)
      ++misses;
    else
      --alarms;
    const bool boundary = k + 1 == all.size() || all[k + 1].score != all[k].score;
    if (!boundary) continue;
    double theta = kInf;
    if (k + 1 < all.size()) {
      theta = 0.5 * (all[k].score + all[k + 1].score);
      if (!(theta > all[k].score)) theta = all[k + 1].score;
    }
    pts.push_back({theta, misses, alarms});
  }
  return pts;
}

}  // namespace

ClassScores ClassScores::from(const ScoreSet& s) {
  if (s.scores.size() != s.trials.size()) throw PreconditionError("score/trial count mismatch");
  ClassScores c;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    const auto& label = s.trials[i].label;
    if (!label)
      throw PreconditionError("trial (" + s.trials[i].enroll_id + ", " + s.trials[i].test_id + ") has no label");
    (*label == TrialLabel::target ? c.target : c.nontarget).push_back(s.scores[i]);
  }
  if (c.target.empty()) throw PreconditionError("score set has no target trials");
  if (c.nontarget.empty()) throw PreconditionError("score set has no non-target trials");
  return c;
}

DetectionCounts count_errors(const ClassScores& c, double theta) {
  DetectionCounts d;
  d.n_target = c.target.size();
  d.n_nontarget = c.nontarget.size();
  for (double s : c.target) d.misses += s < theta ? 1 : 0;
  for (double s : c.nontarget) d.false_alarms += s >= theta ? 1 : 0;
  return d;
}

std::pair<double, double> hard_pmiss_pfa(const ScoreSet& s, double theta) {
  const auto d = count_errors(ClassScores::from(s), theta);
  return {static_cast<double>(d.misses) / static_cast<double>(d.n_target),
          static_cast<double>(d.false_alarms) / static_cast<double>(d.n_nontarget)};
}

double c_norm(const ScoreSet& s, double beta, double theta) {
  const auto [pmiss, pfa] = hard_pmiss_pfa(s, theta);
  return pmiss + beta * pfa;
}

MinCostPoint min_c_norm(const ClassScores& c, double beta) {
  const double nt = static_cast<double>(c.target.size());
  const double nn = static_cast<double>(c.nontarget.size());
  MinCostPoint best{kInf, 0.0};
  for (const auto& p : operating_points(c)) {
    const double cost = static_cast<double>(p.misses) / nt + beta * (static_cast<double>(p.false_alarms) / nn);
    if (cost < best.cost) best = {cost, p.theta};
  }
  return best;
}

MinCPrimary min_c_primary(const ScoreSet& s, double beta1, double beta2) {
  const auto c = ClassScores::from(s);
  const auto m1 = min_c_norm(c, beta1);
  const auto m2 = min_c_norm(c, beta2);
  return {0.5 * (m1.cost + m2.cost), m1.theta, m2.theta};
}

double actual_c_primary(const ScoreSet& s, double beta1, double beta2) {
  return 0.5 * (c_norm(s, beta1, std::log(beta1)) + c_norm(s, beta2, std::log(beta2)));
}

double eer(const ScoreSet& s) {
  const auto c = ClassScores::from(s);
  const double nt = static_cast<double>(c.target.size());
  const double nn = static_cast<double>(c.nontarget.size());
  const auto pts = operating_points(c);
  for (std::size_t k = 1; k < pts.size(); ++k) {
    const double pm = static_cast<double>(pts[k].misses) / nt;
    const double pf = static_cast<double>(pts[k].false_alarms) / nn;
    if (pm < pf) continue;
    const double pm0 = static_cast<double>(pts[k - 1].misses) / nt;
    const double pf0 = static_cast<double>(pts[k - 1].false_alarms) / nn;
    const double gap0 = pf0 - pm0;  // > 0
    const double gap1 = pf - pm;    // <= 0
    const double t = gap0 / (gap0 - gap1);
    return pm0 + t * (pm - pm0);
  }
  return 1.0;  // unreachable: the +inf point has P_miss = 1, P_FA = 0
}

ScoreSet AffineCalibration::apply(const ScoreSet& s) const {
  ScoreSet out = s;
  for (auto& v : out.scores) v = apply(v);
  return out;
}

AffineCalibration affine_calibrate(const ScoreSet& dev) {
  const auto c = ClassScores::from(dev);
  if (*std::min_element(c.target.begin(), c.target.end()) > *std::max_element(c.nontarget.begin(), c.nontarget.end()))
    throw NumericalError("classes are perfectly separated; affine calibration has no finite optimum");

  const double wt = 0.5 / static_cast<double>(c.target.size());
  const double wn = 0.5 / static_cast<double>(c.nontarget.size());

  struct Eval {
    double loss = 0;
    Eigen::Vector2d grad = Eigen::Vector2d::Zero();
    Eigen::Matrix2d hess = Eigen::Matrix2d::Zero();
  };
  auto evaluate = [&](double a, double b) {
    Eval e;
    auto add = [&](double s, double t, double w) {
      const double z = a * s + b;
      const double p = sigmoid(z);
      e.loss += w * (t > 0 ? softplus(-z) : softplus(z));
      const double r = w * (p - t);
      e.grad += Eigen::Vector2d(r * s, r);
      const double h = w * p * (1 - p);
      e.hess(0, 0) += h * s * s;
      e.hess(0, 1) += h * s;
      e.hess(1, 1) += h;
    };
    for (double s : c.target) add(s, 1.0, wt);
    for (double s : c.nontarget) add(s, 0.0, wn);
    e.hess(1, 0) = e.hess(0, 1);
    return e;
  };

  AffineCalibration cal{0.0, 0.0, 0};
  Eval cur = evaluate(cal.a, cal.b);
  for (int it = 1; it <= 100; ++it) {
    cal.iterations = it;
    Eigen::Vector2d step = -cur.hess.ldlt().solve(cur.grad);
    if (!step.allFinite()) step = -cur.grad;
    // Keep a >= 0.
    double scale = 1.0;
    if (cal.a + step[0] < 0) {
      if (cal.a > 0)
        scale = cal.a / -step[0];
      else
        step = Eigen::Vector2d(0.0, -cur.grad[1] / cur.hess(1, 1));
    }
    Eval next;
    double a = cal.a, b = cal.b;
    for (int ls = 0; ls < 60; ++ls) {
      a = cal.a + scale * step[0];
      b = cal.b + scale * step[1];
      next = evaluate(a, b);
      if (next.loss <= cur.loss + 1e-4 * scale * cur.grad.dot(step)) break;
      scale *= 0.5;
    }
    const double moved = std::abs(a - cal.a) + std::abs(b - cal.b);
    cal.a = a;
    cal.b = b;
    cur = next;
    if (cur.grad.lpNorm<Eigen::Infinity>() < 1e-12 || moved < 1e-12 * (1 + std::abs(a) + std::abs(b))) return cal;
  }
  throw NumericalError("affine calibration did not converge in 100 iterations");
}

}  // namespace nplda
