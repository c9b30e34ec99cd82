#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "svfair/core_model.hpp"
#include "svfair/error.hpp"
#include "svfair/rng.hpp"
#include "svfair/thresholding.hpp"

namespace svfair {

/// Decision counts of one group.
struct ConfusionCell {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  std::uint64_t same() const { return tp + fn; }
  std::uint64_t different() const { return fp + tn; }

  ConfusionCell& operator+=(const ConfusionCell& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCell&, const ConfusionCell&) = default;
};

struct GroupConfusion {
  ConfusionCell protected_group;
  ConfusionCell unprotected_group;
  std::uint64_t excluded_trials = 0;

  GroupConfusion& operator+=(const GroupConfusion& o) {
    protected_group += o.protected_group;
    unprotected_group += o.unprotected_group;
    excluded_trials += o.excluded_trials;
    return *this;
  }
  friend bool operator==(const GroupConfusion&, const GroupConfusion&) = default;
};

namespace detail {

inline void tally(ConfusionCell& cell, Label label, Decision d) {
  const bool positive = d == Decision::kPositive;
  if (label == Label::kSame) (positive ? cell.tp : cell.fn) += 1;
  else (positive ? cell.fp : cell.tn) += 1;
}

}  // namespace detail

/// Counts decisions per group. Excluded trials only bump `excluded_trials`.
/// Partial counts from each thread are summed, so the result does not depend
/// on the thread count.
inline GroupConfusion group_confusion(std::span<const Decision> decisions,
                                      std::span<const Trial> trials,
                                      std::span<const GroupAssignment> assignments,
                                      unsigned threads = 1) {
  if (decisions.size() != trials.size() || trials.size() != assignments.size()) {
    throw Error(ErrorKind::kLengthMismatch,
                std::to_string(decisions.size()) + " decisions, " + std::to_string(trials.size()) +
                    " trials, " + std::to_string(assignments.size()) + " assignments");
  }
  auto count = [&](std::size_t begin, std::size_t end, GroupConfusion& out) {
    for (std::size_t i = begin; i < end; ++i) {
      switch (assignments[i]) {
        case GroupAssignment::kProtected:
          detail::tally(out.protected_group, trials[i].label, decisions[i]);
          break;
        case GroupAssignment::kUnprotected:
          detail::tally(out.unprotected_group, trials[i].label, decisions[i]);
          break;
        case GroupAssignment::kExcluded:
          ++out.excluded_trials;
          break;
      }
    }
  };
  const std::size_t n = trials.size();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    GroupConfusion result;
    count(0, n, result);
    return result;
  }
  std::vector<GroupConfusion> partial(threads);
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = std::min(n, t * chunk);
      pool.emplace_back(count, begin, std::min(n, begin + chunk), std::ref(partial[t]));
    }
  }
  GroupConfusion result;
  for (const auto& p : partial) result += p;
  return result;
}

namespace detail {

inline double rate(std::uint64_t num, std::uint64_t den) {
  return static_cast<double>(num) / static_cast<double>(den);
}

[[noreturn]] inline void insufficient(std::string_view group, std::string_view what) {
  throw Error(ErrorKind::kInsufficientData,
              std::string(what) + " is inestimable: " + std::string(group) + " group has no " +
                  (what.find("Y=1") != std::string_view::npos   ? "Y=1 trials"
                   : what.find("Y=0") != std::string_view::npos ? "Y=0 trials"
                                                                 : "trials"));
}

}  // namespace detail

/// P(d=1|A=1) - P(d=1|A=0).
inline double statistical_parity(const GroupConfusion& c) {
  const auto& p = c.protected_group;
  const auto& u = c.unprotected_group;
  if (p.total() == 0) detail::insufficient("protected", "P(d=1|A=1)");
  if (u.total() == 0) detail::insufficient("unprotected", "P(d=1|A=0)");
  return detail::rate(p.tp + p.fp, p.total()) - detail::rate(u.tp + u.fp, u.total());
}

enum class OddsAggregation { kMean, kMax };

/// Signed true- and false-positive-rate gaps, protected minus unprotected.
struct OddsGaps {
  double tpr_gap = 0.0;
  double fpr_gap = 0.0;

  double aggregate(OddsAggregation how) const {
    const double a = std::abs(tpr_gap), b = std::abs(fpr_gap);
    return how == OddsAggregation::kMean ? 0.5 * (a + b) : std::max(a, b);
  }
};

inline OddsGaps equalized_odds_gaps(const GroupConfusion& c) {
  const auto& p = c.protected_group;
  const auto& u = c.unprotected_group;
  if (p.same() == 0) detail::insufficient("protected", "P(d=1|A=1,Y=1)");
  if (u.same() == 0) detail::insufficient("unprotected", "P(d=1|A=0,Y=1)");
  if (p.different() == 0) detail::insufficient("protected", "P(d=1|A=1,Y=0)");
  if (u.different() == 0) detail::insufficient("unprotected", "P(d=1|A=0,Y=0)");
  return {detail::rate(p.tp, p.same()) - detail::rate(u.tp, u.same()),
          detail::rate(p.fp, p.different()) - detail::rate(u.fp, u.different())};
}

/// Aggregate of the absolute TPR and FPR gaps.
inline double equalized_odds(const GroupConfusion& c, OddsAggregation how = OddsAggregation::kMean) {
  return equalized_odds_gaps(c).aggregate(how);
}

/// P(d=0|A=1,Y=1) - P(d=0|A=0,Y=1), the false-negative-rate gap.
inline double equal_opportunity(const GroupConfusion& c) {
  const auto& p = c.protected_group;
  const auto& u = c.unprotected_group;
  if (p.same() == 0) detail::insufficient("protected", "P(d=0|A=1,Y=1)");
  if (u.same() == 0) detail::insufficient("unprotected", "P(d=0|A=0,Y=1)");
  return detail::rate(p.fn, p.same()) - detail::rate(u.fn, u.same());
}

/// How the audit picks its decision threshold.
struct ThresholdPolicy {
  enum class Kind { kEerOnAllTrials, kFixed };
  Kind kind = Kind::kEerOnAllTrials;
  double value = 0.0;

  static ThresholdPolicy eer_on_all_trials() { return {}; }
  static ThresholdPolicy fixed(double threshold) { return {Kind::kFixed, threshold}; }
};

struct AuditOptions {
  ThresholdPolicy threshold = ThresholdPolicy::eer_on_all_trials();
  OddsAggregation odds_aggregation = OddsAggregation::kMean;
  // When false, any inestimable metric raises InsufficientData. When true it
  // is left empty in the report instead.
  bool allow_inestimable = false;
  // Percentile bootstrap over trials; 0 disables it.
  std::size_t bootstrap_resamples = 0;
  std::uint64_t bootstrap_seed = 0;
  double bootstrap_level = 0.95;
  unsigned threads = 1;
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

/// Headline metrics are absolute values; the signed members keep the
/// direction (protected minus unprotected). Empty optionals mark metrics
/// that could not be estimated.
struct FairnessReport {
  GroupScheme scheme;
  double threshold = 0.0;
  std::optional<EerResult> eer;  // present when the threshold came from the EER
  OddsAggregation odds_aggregation = OddsAggregation::kMean;

  std::optional<double> statistical_parity;
  std::optional<double> equalized_odds;
  std::optional<double> equal_opportunity;

  std::optional<double> statistical_parity_signed;
  std::optional<double> tpr_gap_signed;
  std::optional<double> fpr_gap_signed;
  std::optional<double> equal_opportunity_signed;

  GroupConfusion confusion;
  std::uint64_t excluded_trials = 0;

  std::optional<Interval> statistical_parity_ci;
  std::optional<Interval> equalized_odds_ci;
  std::optional<Interval> equal_opportunity_ci;
};

namespace detail {

struct MetricValues {
  std::optional<double> sp_signed;
  std::optional<OddsGaps> odds;
  std::optional<double> eo_signed;
};

inline MetricValues evaluate_metrics(const GroupConfusion& c, bool allow_inestimable) {
  MetricValues v;
  auto attempt = [&](auto&& fn, auto& slot) {
    try {
      slot = fn(c);
    } catch (const Error& e) {
      if (!allow_inestimable || e.kind() != ErrorKind::kInsufficientData) throw;
    }
  };
  attempt([](const GroupConfusion& g) { return svfair::statistical_parity(g); }, v.sp_signed);
  attempt([](const GroupConfusion& g) { return equalized_odds_gaps(g); }, v.odds);
  attempt([](const GroupConfusion& g) { return svfair::equal_opportunity(g); }, v.eo_signed);
  return v;
}

inline std::optional<double> abs_of(const std::optional<double>& v) {
  return v ? std::optional<double>(std::abs(*v)) : std::nullopt;
}

inline Interval percentile_interval(std::vector<double> values, double level) {
  std::sort(values.begin(), values.end());
  const double alpha = (1.0 - level) / 2.0;
  auto at = [&](double q) {
    // Linear interpolation between order statistics.
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(values.size() - 1, lo + 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  return {at(alpha), at(1.0 - alpha)};
}

// Resamples (decision, label, group) triples with replacement, holding the
// threshold fixed. Resample r draws from its own stream mix_seed(seed, r), so
// results are the same for any thread count.
inline void bootstrap(FairnessReport& report, std::span<const Decision> decisions,
                      std::span<const Trial> trials, std::span<const GroupAssignment> groups,
                      const AuditOptions& opt) {
  const std::size_t n = trials.size();
  const std::size_t resamples = opt.bootstrap_resamples;
  std::vector<MetricValues> results(resamples);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      Rng rng(mix_seed(opt.bootstrap_seed, r));
      GroupConfusion c;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = rng.below(n);
        switch (groups[i]) {
          case GroupAssignment::kProtected: tally(c.protected_group, trials[i].label, decisions[i]); break;
          case GroupAssignment::kUnprotected: tally(c.unprotected_group, trials[i].label, decisions[i]); break;
          case GroupAssignment::kExcluded: ++c.excluded_trials; break;
        }
      }
      results[r] = evaluate_metrics(c, true);
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(resamples)));
  if (threads == 1) {
    work(0, resamples);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (resamples + threads - 1) / threads;
    for (std::size_t b = 0; b < resamples; b += chunk) pool.emplace_back(work, b, std::min(resamples, b + chunk));
  }

  std::vector<double> sp, eq_odds, eo;
  for (const auto& m : results) {
    if (m.sp_signed) sp.push_back(std::abs(*m.sp_signed));
    if (m.odds) eq_odds.push_back(m.odds->aggregate(opt.odds_aggregation));
    if (m.eo_signed) eo.push_back(std::abs(*m.eo_signed));
  }
  if (!sp.empty()) report.statistical_parity_ci = percentile_interval(std::move(sp), opt.bootstrap_level);
  if (!eq_odds.empty()) report.equalized_odds_ci = percentile_interval(std::move(eq_odds), opt.bootstrap_level);
  if (!eo.empty()) report.equal_opportunity_ci = percentile_interval(std::move(eo), opt.bootstrap_level);
}

inline FairnessReport audit_at(std::span<const ScoredTrial> scored, const Cohort& cohort,
                               const GroupScheme& scheme, double threshold,
                               std::optional<EerResult> eer, const AuditOptions& opt,
                               const UtteranceSpeakerRule& rule) {
  std::vector<Trial> trials;
  std::vector<GroupAssignment> groups;
  trials.reserve(scored.size());
  groups.reserve(scored.size());
  for (const auto& s : scored) {
    trials.push_back(s.trial);
    groups.push_back(assign_group(s.trial, scheme, cohort, rule));
  }
  const auto decisions = apply_threshold(scored, threshold);

  FairnessReport report;
  report.scheme = scheme;
  report.threshold = threshold;
  report.eer = eer;
  report.odds_aggregation = opt.odds_aggregation;
  report.confusion = group_confusion(decisions, trials, groups, opt.threads);
  report.excluded_trials = report.confusion.excluded_trials;

  const auto m = evaluate_metrics(report.confusion, opt.allow_inestimable);
  report.statistical_parity_signed = m.sp_signed;
  report.statistical_parity = abs_of(m.sp_signed);
  if (m.odds) {
    report.tpr_gap_signed = m.odds->tpr_gap;
    report.fpr_gap_signed = m.odds->fpr_gap;
    report.equalized_odds = m.odds->aggregate(opt.odds_aggregation);
  }
  report.equal_opportunity_signed = m.eo_signed;
  report.equal_opportunity = abs_of(m.eo_signed);

  if (opt.bootstrap_resamples > 0 && !trials.empty()) bootstrap(report, decisions, trials, groups, opt);
  return report;
}

inline std::pair<double, std::optional<EerResult>> resolve_threshold(
    std::span<const ScoredTrial> scored, const ThresholdPolicy& policy) {
  if (policy.kind == ThresholdPolicy::Kind::kFixed) {
    if (!std::isfinite(policy.value)) throw Error(ErrorKind::kNonFiniteValue, "fixed threshold");
    return {policy.value, std::nullopt};
  }
  const EerResult eer = compute_eer(scored);
  return {eer.threshold, eer};
}

}  // namespace detail

/// Fairness of one system under one grouping. The threshold is computed once
/// over every supplied trial, both groups pooled, and then shared by both
/// groups.
inline FairnessReport audit(std::span<const ScoredTrial> scored, const Cohort& cohort,
                            const GroupScheme& scheme, const AuditOptions& opt = {},
                            const UtteranceSpeakerRule& rule = {}) {
  detail::validate_scheme(scheme);
  const auto [threshold, eer] = detail::resolve_threshold(scored, opt.threshold);
  return detail::audit_at(scored, cohort, scheme, threshold, eer, opt, rule);
}

struct SweepEntry {
  std::string nationality;
  std::uint64_t speaker_count = 0;
  FairnessReport report;
};

/// One-vs-rest audit for every nationality in the cohort, ordered by speaker
/// count (descending) then country code. Inestimable metrics stay empty
/// rather than dropping the nationality.
inline std::vector<SweepEntry> nationality_sweep(
    std::span<const ScoredTrial> scored, const Cohort& cohort, AuditOptions opt = {},
    AssignmentPolicy policy = AssignmentPolicy::kByEnrollmentSpeaker,
    const UtteranceSpeakerRule& rule = {}) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& [id, meta] : cohort) {
    if (!meta.nationality.empty() && meta.nationality != kUnknownNationality) ++counts[meta.nationality];
  }
  if (counts.size() < 2) {
    throw Error(ErrorKind::kSingleNationalityCohort,
                std::to_string(counts.size()) + " known nationalities in the cohort");
  }
  std::vector<std::pair<std::string, std::uint64_t>> order(counts.begin(), counts.end());
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  const auto [threshold, eer] = detail::resolve_threshold(scored, opt.threshold);
  opt.allow_inestimable = true;
  std::vector<SweepEntry> out;
  out.reserve(order.size());
  for (const auto& [code, n] : order) {
    const GroupScheme scheme = GroupScheme::nationality(code, policy);
    out.push_back({code, n, detail::audit_at(scored, cohort, scheme, threshold, eer, opt, rule)});
  }
  return out;
}

}  // namespace svfair
