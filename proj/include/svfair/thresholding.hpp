#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "svfair/core_model.hpp"
#include "svfair/error.hpp"

namespace svfair {

/// Error rates when deciding "same speaker" iff score >= threshold.
struct RocPoint {
  double threshold = 0.0;
  double far = 0.0;  // P(d=1 | Y=0)
  double frr = 0.0;  // P(d=0 | Y=1)
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  // Set when every score is identical and no crossing exists.
  bool flat_scores = false;
};

namespace detail {

struct ScoreCounts {
  double score;
  std::size_t positives;
  std::size_t negatives;
};

// Distinct scores in increasing order with per-score label counts. Depends
// only on the multiset of (score, label), never on input order.
inline std::vector<ScoreCounts> tally_scores(std::span<const ScoredTrial> scored,
                                             std::size_t& total_pos, std::size_t& total_neg) {
  std::vector<std::pair<double, bool>> keyed;
  keyed.reserve(scored.size());
  for (const auto& s : scored) {
    if (!std::isfinite(s.score)) {
      throw Error(ErrorKind::kNonFiniteValue,
                  "score of " + s.trial.enroll_utt + " " + s.trial.test_utt);
    }
    keyed.emplace_back(s.score, s.trial.label == Label::kSame);
  }
  std::sort(keyed.begin(), keyed.end());
  total_pos = total_neg = 0;
  std::vector<ScoreCounts> out;
  for (const auto& [score, same] : keyed) {
    if (out.empty() || out.back().score != score) out.push_back({score, 0, 0});
    if (same) {
      ++out.back().positives;
      ++total_pos;
    } else {
      ++out.back().negatives;
      ++total_neg;
    }
  }
  if (total_pos == 0 || total_neg == 0) {
    throw Error(ErrorKind::kDegenerateTrialSet,
                "need at least one same-speaker and one different-speaker trial");
  }
  return out;
}

}  // namespace detail

/// One point per distinct score in increasing threshold order, bracketed by
/// a sentinel just below the minimum score (far=1, frr=0) and one just above
/// the maximum (far=0, frr=1).
inline std::vector<RocPoint> roc_curve(std::span<const ScoredTrial> scored) {
  std::size_t total_pos = 0, total_neg = 0;
  const auto counts = detail::tally_scores(scored, total_pos, total_neg);
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<RocPoint> roc;
  roc.reserve(counts.size() + 2);
  roc.push_back({std::nextafter(counts.front().score, -inf), 1.0, 0.0});
  // Walking upward: rejected positives accumulate, accepted negatives drain.
  std::size_t pos_below = 0, neg_at_or_above = total_neg;
  for (const auto& c : counts) {
    roc.push_back({c.score, static_cast<double>(neg_at_or_above) / static_cast<double>(total_neg),
                   static_cast<double>(pos_below) / static_cast<double>(total_pos)});
    pos_below += c.positives;
    neg_at_or_above -= c.negatives;
  }
  roc.push_back({std::nextafter(counts.back().score, inf), 0.0, 1.0});
  return roc;
}

/// Equal error rate: the first ROC point where far - frr reaches zero, with
/// linear interpolation of both rates and the threshold when the sign flips
/// between two adjacent points.
inline EerResult compute_eer(std::span<const ScoredTrial> scored) {
  const auto roc = roc_curve(scored);
  if (roc.size() == 3) {
    // Every score identical: report the rates at that score.
    const RocPoint& p = roc[1];
    return {std::max(p.far, p.frr), p.threshold, true};
  }
  for (std::size_t i = 1; i < roc.size(); ++i) {
    const double gap = roc[i].far - roc[i].frr;
    if (gap == 0.0) return {roc[i].far, roc[i].threshold, false};
    if (gap < 0.0) {
      const RocPoint& lo = roc[i - 1];
      const RocPoint& hi = roc[i];
      const double gap_lo = lo.far - lo.frr;
      const double w = gap_lo / (gap_lo - gap);
      const double far = lo.far + w * (hi.far - lo.far);
      const double frr = lo.frr + w * (hi.frr - lo.frr);
      return {0.5 * (far + frr), lo.threshold + w * (hi.threshold - lo.threshold), false};
    }
  }
  // Unreachable: the upper sentinel has far - frr = -1.
  return {roc.back().frr, roc.back().threshold, false};
}

/// Positive iff score >= threshold, in input order.
inline std::vector<Decision> apply_threshold(std::span<const ScoredTrial> scored, double threshold) {
  std::vector<Decision> out;
  out.reserve(scored.size());
  for (const auto& s : scored) {
    out.push_back(s.score >= threshold ? Decision::kPositive : Decision::kNegative);
  }
  return out;
}

}  // namespace svfair
