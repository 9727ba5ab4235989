#pragma once

#include "nplda/embeddings_io.hpp"

#include <utility>
#include <vector>

namespace nplda {

/// Scores split by class. Built from a labeled ScoreSet.
struct ClassScores {
  std::vector<double> target;
  std::vector<double> nontarget;

  /// Throws PreconditionError on missing labels or an empty class.
  static ClassScores from(const ScoreSet& s);
};

struct DetectionCounts {
  std::size_t n_target = 0;
  std::size_t n_nontarget = 0;
  std::size_t misses = 0;        // target scores < θ
  std::size_t false_alarms = 0;  // non-target scores >= θ
};

DetectionCounts count_errors(const ClassScores& c, double theta);

/// (P_miss, P_FA) at θ. Ties count as alarms.
std::pair<double, double> hard_pmiss_pfa(const ScoreSet& s, double theta);

double c_norm(const ScoreSet& s, double beta, double theta);

struct MinCostPoint {
  double cost = 0;
  double theta = 0;  // may be ±infinity
};

/// Exact min over θ of P_miss + β P_FA, sweeping midpoints between adjacent
/// distinct scores and ±infinity.
MinCostPoint min_c_norm(const ClassScores& c, double beta);

struct MinCPrimary {
  double value = 0;
  double theta1 = 0;
  double theta2 = 0;
};

MinCPrimary min_c_primary(const ScoreSet& s, double beta1 = 99.0, double beta2 = 199.0);

/// C_primary at the Bayes thresholds log β₁, log β₂.
double actual_c_primary(const ScoreSet& s, double beta1 = 99.0, double beta2 = 199.0);

/// Equal error rate in [0, 1], linear interpolation between adjacent
/// operating points.
double eer(const ScoreSet& s);

struct AffineCalibration {
  double a = 1.0;
  double b = 0.0;
  int iterations = 0;

  double apply(double score) const { return a * score + b; }
  ScoreSet apply(const ScoreSet& s) const;
};

/// Class-balanced logistic regression of labels on a*s + b, a >= 0.
/// Throws NumericalError when Newton iterations do not converge in 100 steps.
AffineCalibration affine_calibrate(const ScoreSet& dev);

}  // namespace nplda
