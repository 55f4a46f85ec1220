#pragma once

#include "lapkit/types.hpp"

#include <vector>

namespace lapkit::metrics {

struct MetricsReport {
  Real nll = 0.0;
  Real accuracy = 0.0;
  Real mean_confidence = 0.0;
  Real ece = 0.0;
  Real brier = 0.0;
};

/// Classification metrics over N simplex rows. ECE uses `bins` equal-width
/// confidence bins on (0, 1]; NLL clamps probabilities at 1e-12.
MetricsReport evaluate_classification(const Matrix& probs,
                                      const std::vector<Index>& labels,
                                      Index bins = 10);

/// P(positive score > negative score) + 1/2 P(equal), rank-based.
Real auroc(const std::vector<Real>& negative_scores,
           const std::vector<Real>& positive_scores);

}  // namespace lapkit::metrics
