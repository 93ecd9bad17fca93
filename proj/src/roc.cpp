// SPDX-License-Identifier: Apache-2.0
#include "bater/roc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bater/errors.hpp"

namespace bater {

RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("roc_auc: scores and labels differ in length");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ContractError("roc_auc labels must be 0 or 1");
    if (std::isnan(scores[i])) throw NumericError("roc_auc: NaN score");
    pos += static_cast<std::size_t>(labels[i]);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw ContractError("roc_auc needs both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  // Trapezoids in integer units keep ties at exactly one half.
  double area = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    std::size_t dtp = 0, dfp = 0;
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? dtp : dfp) += 1;
    area += static_cast<double>(dfp) * (static_cast<double>(tp) + 0.5 * static_cast<double>(dtp));
    tp += dtp;
    fp += dfp;
    curve.points.push_back({s, static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos)});
  }
  curve.auc = area / (static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

namespace {

const RocPoint& operating_point(const RocCurve& curve, double target_fpr) {
  if (!(target_fpr > 0.0 && target_fpr < 1.0)) throw ContractError("target FPR must lie in (0,1)");
  if (curve.points.empty()) throw ContractError("empty ROC curve");
  const RocPoint* best = &curve.points.front();
  for (const auto& p : curve.points)
    if (p.fpr <= target_fpr) best = &p;
  return *best;
}

}  // namespace

double tpr_at_fpr(const RocCurve& curve, double target_fpr) { return operating_point(curve, target_fpr).tpr; }

double threshold_at_fpr(const RocCurve& curve, double target_fpr) {
  return operating_point(curve, target_fpr).threshold;
}

}  // namespace bater
