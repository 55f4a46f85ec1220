#include "lapkit/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace lapkit::metrics {

MetricsReport evaluate_classification(const Matrix& probs,
                                      const std::vector<Index>& labels,
                                      Index bins) {
  const Index n = probs.rows();
  const Index c = probs.cols();
  require(n >= 1, ErrorCode::MissingData, "metrics need at least one sample");
  require(static_cast<Index>(labels.size()) == n, ErrorCode::InvalidInput,
          "label count must match the probability rows");
  require(bins >= 1, ErrorCode::InvalidInput, "bin count must be >= 1");
  for (Index i = 0; i < n; ++i) {
    require(probs.row(i).minCoeff() >= -1e-6 &&
                std::abs(probs.row(i).sum() - 1.0) <= 1e-6,
            ErrorCode::InvalidDistribution, "probability rows must be on the simplex");
    require(labels[static_cast<std::size_t>(i)] >= 0 &&
                labels[static_cast<std::size_t>(i)] < c,
            ErrorCode::InvalidInput, "label out of range");
  }

  MetricsReport report;
  std::vector<Real> bin_conf(static_cast<std::size_t>(bins), 0.0);
  std::vector<Real> bin_acc(static_cast<std::size_t>(bins), 0.0);
  std::vector<Index> bin_count(static_cast<std::size_t>(bins), 0);

  for (Index i = 0; i < n; ++i) {
    const Index y = labels[static_cast<std::size_t>(i)];
    Index arg = 0;
    const Real conf = probs.row(i).maxCoeff(&arg);
    const Real correct = (arg == y) ? 1.0 : 0.0;
    report.nll -= std::log(std::max(probs(i, y), 1e-12));
    report.accuracy += correct;
    report.mean_confidence += conf;

    Vector onehot = Vector::Zero(c);
    onehot[y] = 1.0;
    report.brier += (probs.row(i).transpose() - onehot).squaredNorm();

    // equal-width bins on (0, 1]
    const Index b = std::clamp<Index>(
        static_cast<Index>(std::ceil(conf * static_cast<Real>(bins))) - 1, 0,
        bins - 1);
    bin_conf[static_cast<std::size_t>(b)] += conf;
    bin_acc[static_cast<std::size_t>(b)] += correct;
    bin_count[static_cast<std::size_t>(b)] += 1;
  }

  const Real num = static_cast<Real>(n);
  report.nll /= num;
  report.accuracy /= num;
  report.mean_confidence /= num;
  report.brier /= num;
  for (Index b = 0; b < bins; ++b) {
    const Index count = bin_count[static_cast<std::size_t>(b)];
    if (count == 0) continue;
    const Real cnt = static_cast<Real>(count);
    report.ece += (cnt / num) * std::abs(bin_acc[static_cast<std::size_t>(b)] / cnt -
                                         bin_conf[static_cast<std::size_t>(b)] / cnt);
  }
  return report;
}

Real auroc(const std::vector<Real>& negative_scores,
           const std::vector<Real>& positive_scores) {
  require(!negative_scores.empty() && !positive_scores.empty(),
          ErrorCode::MissingData, "auroc needs both score sets non-empty");

  // Mann-Whitney U via midranks on the pooled sample.
  struct Entry {
    Real score;
    bool positive;
  };
  std::vector<Entry> pooled;
  pooled.reserve(negative_scores.size() + positive_scores.size());
  for (Real s : negative_scores) pooled.push_back({s, false});
  for (Real s : positive_scores) pooled.push_back({s, true});
  std::sort(pooled.begin(), pooled.end(),
            [](const Entry& a, const Entry& b) { return a.score < b.score; });

  Real rank_sum_positive = 0.0;
  std::size_t i = 0;
  while (i < pooled.size()) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].score == pooled[i].score) ++j;
    const Real midrank = 0.5 * (static_cast<Real>(i + 1) + static_cast<Real>(j));
    for (std::size_t k = i; k < j; ++k)
      if (pooled[k].positive) rank_sum_positive += midrank;
    i = j;
  }
  const Real n_pos = static_cast<Real>(positive_scores.size());
  const Real n_neg = static_cast<Real>(negative_scores.size());
  const Real u = rank_sum_positive - n_pos * (n_pos + 1.0) / 2.0;
  return u / (n_pos * n_neg);
}

}  // namespace lapkit::metrics
