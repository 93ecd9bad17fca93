// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace bater {

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Points run from (0,0) at threshold +inf to (1,1); a point at threshold t
/// counts scores >= t as positive.
struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

/// Labels: 1 = positive (adversarial), 0 = negative. Throws ContractError when one class is missing.
RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels);

/// TPR at the largest achievable FPR not above `target_fpr`.
double tpr_at_fpr(const RocCurve& curve, double target_fpr);

/// Score threshold matching tpr_at_fpr's operating point.
double threshold_at_fpr(const RocCurve& curve, double target_fpr);

}  // namespace bater
