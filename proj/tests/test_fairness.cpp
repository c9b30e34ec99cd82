#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "svfair/fairness.hpp"
#include "svfair/scoring.hpp"
#include "svfair/synth.hpp"

using namespace svfair;

namespace {

GroupConfusion confusion(ConfusionCell p, ConfusionCell u) { return {p, u, 0}; }

ErrorKind kind_of(auto&& fn, std::string* message = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kIo;
}

struct Built {
  std::vector<Decision> decisions;
  std::vector<Trial> trials;
};

Built build(const oracle::RandomAudit& a) {
  Built b;
  for (std::size_t i = 0; i < a.decision.size(); ++i) {
    b.decisions.push_back(a.decision[i] ? Decision::kPositive : Decision::kNegative);
    b.trials.push_back({"e" + std::to_string(i), "t", a.label[i] ? Label::kSame : Label::kDifferent});
  }
  return b;
}

// Two nationalities of two speakers each; each speaker owns utterances
// "<spk>/uN".
Cohort four_speakers() {
  Cohort c;
  c["a"] = {"a", Gender::kFemale, "US", std::nullopt};
  c["b"] = {"b", Gender::kFemale, "UK", std::nullopt};
  c["c"] = {"c", Gender::kMale, "US", std::nullopt};
  c["d"] = {"d", Gender::kMale, "UK", std::nullopt};
  return c;
}

std::vector<ScoredTrial> random_scored(std::mt19937_64& gen, std::size_t n, const char* speakers = "abcd") {
  std::normal_distribution<double> nd;
  const std::string spk(speakers);
  std::vector<ScoredTrial> out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool same = gen() % 2;
    const std::string e(1, spk[gen() % spk.size()]);
    const std::string t = same ? e : std::string(1, spk[gen() % spk.size()]);
    out.push_back({{e + "/u" + std::to_string(i), t + "/v" + std::to_string(i), same ? Label::kSame : Label::kDifferent},
                   nd(gen) + (same ? 1.5 : 0.0)});
  }
  return out;
}

}  // namespace

TEST(GroupConfusion, SingleProtectedHit) {
  const std::vector<Decision> d{Decision::kPositive};
  const std::vector<Trial> t{{"a", "b", Label::kSame}};
  const std::vector<GroupAssignment> g{GroupAssignment::kProtected};
  const auto c = group_confusion(d, t, g);
  EXPECT_EQ(c.protected_group, (ConfusionCell{1, 0, 0, 0}));
  EXPECT_EQ(c.unprotected_group, ConfusionCell{});
}

TEST(GroupConfusion, AllExcluded) {
  const std::vector<Decision> d(5, Decision::kPositive);
  const std::vector<Trial> t(5, Trial{"a", "b", Label::kSame});
  const std::vector<GroupAssignment> g(5, GroupAssignment::kExcluded);
  const auto c = group_confusion(d, t, g);
  EXPECT_EQ(c.excluded_trials, 5u);
  EXPECT_EQ(c.protected_group.total() + c.unprotected_group.total(), 0u);
}

TEST(GroupConfusion, LengthMismatch) {
  const std::vector<Decision> d(2);
  const std::vector<Trial> t(3);
  const std::vector<GroupAssignment> g(3);
  EXPECT_EQ(kind_of([&] { group_confusion(d, t, g); }), ErrorKind::kLengthMismatch);
}

TEST(GroupConfusion, PermutationAndThreadInvariant) {
  const auto a = oracle::random_audit(3);
  const Built b = build(a);
  const auto base = group_confusion(b.decisions, b.trials, a.group);
  for (unsigned threads : {2u, 5u, 16u}) EXPECT_EQ(group_confusion(b.decisions, b.trials, a.group, threads), base);

  std::vector<std::size_t> order(a.group.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), std::mt19937_64(9));
  std::vector<Decision> d;
  std::vector<Trial> t;
  std::vector<GroupAssignment> g;
  for (auto i : order) {
    d.push_back(b.decisions[i]);
    t.push_back(b.trials[i]);
    g.push_back(a.group[i]);
  }
  EXPECT_EQ(group_confusion(d, t, g), base);
}

TEST(StatisticalParity, Examples) {
  // Protected decisions {1,1,0,0}, unprotected {1,0,0,0}.
  EXPECT_DOUBLE_EQ(statistical_parity(confusion({1, 1, 1, 1}, {1, 0, 2, 1})), 0.25);
  EXPECT_EQ(statistical_parity(confusion({2, 1, 3, 1}, {2, 1, 3, 1})), 0.0);
  std::string msg;
  EXPECT_EQ(kind_of([] { statistical_parity(confusion({}, {1, 0, 0, 0})); }, &msg), ErrorKind::kInsufficientData);
  EXPECT_NE(msg.find("protected"), std::string::npos);
}

TEST(EqualizedOdds, Examples) {
  const auto c = confusion({3, 1, 3, 1}, {2, 2, 2, 2});
  EXPECT_DOUBLE_EQ(equalized_odds(c, OddsAggregation::kMean), 0.25);
  EXPECT_DOUBLE_EQ(equalized_odds(c, OddsAggregation::kMax), 0.25);
  const auto gaps = equalized_odds_gaps(c);
  EXPECT_DOUBLE_EQ(gaps.tpr_gap, 0.25);
  EXPECT_DOUBLE_EQ(gaps.fpr_gap, -0.25);
  EXPECT_EQ(equalized_odds(confusion({3, 1, 3, 1}, {3, 1, 3, 1})), 0.0);

  std::string msg;
  EXPECT_EQ(kind_of([] { equalized_odds(confusion({3, 0, 0, 1}, {2, 2, 2, 2})); }, &msg),
            ErrorKind::kInsufficientData);
  EXPECT_NE(msg.find("P(d=1|A=1,Y=0)"), std::string::npos) << msg;
}

TEST(EqualizedOdds, MeanAndMaxDiffer) {
  const auto c = confusion({4, 1, 3, 0}, {2, 1, 3, 2});
  EXPECT_DOUBLE_EQ(equalized_odds(c, OddsAggregation::kMean), 0.25);
  EXPECT_DOUBLE_EQ(equalized_odds(c, OddsAggregation::kMax), 0.5);
}

TEST(EqualOpportunity, Examples) {
  EXPECT_DOUBLE_EQ(equal_opportunity(confusion({1, 0, 0, 3}, {3, 0, 0, 1})), 0.5);
  EXPECT_EQ(equal_opportunity(confusion({1, 5, 0, 3}, {2, 0, 7, 6})), 0.0);
  std::string msg;
  EXPECT_EQ(kind_of([] { equal_opportunity(confusion({0, 2, 2, 0}, {3, 0, 0, 1})); }, &msg),
            ErrorKind::kInsufficientData);
  EXPECT_NE(msg.find("Y=1"), std::string::npos);
}

TEST(FairnessProperty, MatchesBruteForceRecount) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto a = oracle::random_audit(seed);
    const Built b = build(a);
    const auto c = group_confusion(b.decisions, b.trials, a.group);
    const auto r = oracle::recount(a.decision, a.label, a.group);
    EXPECT_EQ(c.protected_group, (ConfusionCell{std::uint64_t(r.tp[1]), std::uint64_t(r.fp[1]),
                                                std::uint64_t(r.tn[1]), std::uint64_t(r.fn[1])}));
    EXPECT_EQ(c.unprotected_group, (ConfusionCell{std::uint64_t(r.tp[0]), std::uint64_t(r.fp[0]),
                                                  std::uint64_t(r.tn[0]), std::uint64_t(r.fn[0])}));
    EXPECT_EQ(c.excluded_trials, std::uint64_t(r.excluded));
    // Inestimable in the oracle exactly when the library refuses.
    if (const auto sp = oracle::parity(r)) {
      EXPECT_NEAR(statistical_parity(c), *sp, 1e-12);
    } else {
      EXPECT_THROW(statistical_parity(c), Error);
    }
    const auto tpr = oracle::tpr_gap(r), fpr = oracle::fpr_gap(r);
    if (tpr && fpr) {
      EXPECT_NEAR(equalized_odds(c, OddsAggregation::kMean), (std::abs(*tpr) + std::abs(*fpr)) / 2, 1e-12);
      EXPECT_NEAR(equalized_odds(c, OddsAggregation::kMax), std::max(std::abs(*tpr), std::abs(*fpr)), 1e-12);
    } else {
      EXPECT_THROW(equalized_odds(c), Error);
    }
    if (const auto fnr = oracle::fnr_gap(r)) {
      EXPECT_NEAR(equal_opportunity(c), *fnr, 1e-12);
    } else {
      EXPECT_THROW(equal_opportunity(c), Error);
    }
  }
}

TEST(Audit, ThresholdIsThePooledEer) {
  std::mt19937_64 gen(1);
  const auto scored = random_scored(gen, 400);
  const auto r = audit(scored, four_speakers(), GroupScheme::gender(Gender::kFemale));
  const EerResult eer = compute_eer(scored);
  EXPECT_EQ(r.threshold, eer.threshold);
  ASSERT_TRUE(r.eer);
  EXPECT_EQ(r.eer->eer, eer.eer);
  EXPECT_EQ(*r.statistical_parity, std::abs(*r.statistical_parity_signed));
  EXPECT_EQ(*r.equal_opportunity, std::abs(*r.equal_opportunity_signed));
  EXPECT_EQ(*r.equalized_odds, (std::abs(*r.tpr_gap_signed) + std::abs(*r.fpr_gap_signed)) / 2);
  EXPECT_EQ(r.excluded_trials, 0u);
}

TEST(Audit, FixedThresholdBelowEveryScore) {
  std::mt19937_64 gen(2);
  const auto scored = random_scored(gen, 200);
  AuditOptions opt;
  opt.threshold = ThresholdPolicy::fixed(-1e9);
  const auto r = audit(scored, four_speakers(), GroupScheme::gender(Gender::kFemale), opt);
  EXPECT_EQ(*r.statistical_parity, 0.0);
  EXPECT_FALSE(r.eer);
}

TEST(Audit, InestimableMetricsRaiseOrStayEmpty) {
  // Every same-speaker trial is enrolled by a male speaker.
  std::vector<ScoredTrial> scored{{{"c/1", "c/2", Label::kSame}, 0.9},
                                  {{"a/1", "c/3", Label::kDifferent}, 0.2},
                                  {{"c/1", "a/2", Label::kDifferent}, 0.4}};
  EXPECT_EQ(kind_of([&] { audit(scored, four_speakers(), GroupScheme::gender(Gender::kFemale)); }),
            ErrorKind::kInsufficientData);
  AuditOptions opt;
  opt.allow_inestimable = true;
  const auto r = audit(scored, four_speakers(), GroupScheme::gender(Gender::kFemale), opt);
  EXPECT_TRUE(r.statistical_parity);
  EXPECT_FALSE(r.equal_opportunity);
  EXPECT_FALSE(r.equalized_odds);
}

// Swapping the protected value of a binary scheme negates every signed metric.
TEST(FairnessProperty, BinarySwapNegatesSignedMetrics) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 gen(seed);
    const auto scored = random_scored(gen, 50 + gen() % 500);
    for (auto policy : {AssignmentPolicy::kByEnrollmentSpeaker, AssignmentPolicy::kBothSpeakersRequired}) {
      AuditOptions opt;
      opt.allow_inestimable = true;
      const auto f = audit(scored, four_speakers(), GroupScheme::gender(Gender::kFemale, policy), opt);
      const auto m = audit(scored, four_speakers(), GroupScheme::gender(Gender::kMale, policy), opt);
      ASSERT_TRUE(f.statistical_parity_signed && f.tpr_gap_signed && f.equal_opportunity_signed);
      EXPECT_EQ(*f.statistical_parity_signed, -*m.statistical_parity_signed);
      EXPECT_EQ(*f.tpr_gap_signed, -*m.tpr_gap_signed);
      EXPECT_EQ(*f.fpr_gap_signed, -*m.fpr_gap_signed);
      EXPECT_EQ(*f.equal_opportunity_signed, -*m.equal_opportunity_signed);
      EXPECT_EQ(*f.statistical_parity, *m.statistical_parity);
      EXPECT_EQ(*f.equalized_odds, *m.equalized_odds);
      EXPECT_EQ(*f.equal_opportunity, *m.equal_opportunity);
    }
  }
}

TEST(Audit, BootstrapIsSeededAndThreadIndependent) {
  std::mt19937_64 gen(4);
  const auto scored = random_scored(gen, 600);
  AuditOptions opt;
  opt.bootstrap_resamples = 200;
  opt.bootstrap_seed = 77;
  const auto one = audit(scored, four_speakers(), GroupScheme::gender(Gender::kFemale), opt);
  opt.threads = 4;
  const auto four = audit(scored, four_speakers(), GroupScheme::gender(Gender::kFemale), opt);
  ASSERT_TRUE(one.statistical_parity_ci && one.equalized_odds_ci && one.equal_opportunity_ci);
  EXPECT_EQ(one.statistical_parity_ci->lower, four.statistical_parity_ci->lower);
  EXPECT_EQ(one.equalized_odds_ci->upper, four.equalized_odds_ci->upper);
  EXPECT_LE(one.statistical_parity_ci->lower, one.statistical_parity_ci->upper);
  EXPECT_EQ(one.statistical_parity, four.statistical_parity);
}

TEST(NationalitySweep, OrderedByCountThenCode) {
  Cohort c;
  auto add = [&](const std::string& id, const std::string& nat) { c[id] = {id, Gender::kMale, nat, std::nullopt}; };
  for (int i = 0; i < 7; ++i) add("us" + std::to_string(i), "US");
  for (int i = 0; i < 3; ++i) add("uk" + std::to_string(i), "UK");
  add("nz0", "NZ");
  add("ab0", "AB");
  add("aa0", "AA");
  add("x0", "UNK");
  std::mt19937_64 gen(8);
  std::vector<std::string> ids;
  for (const auto& [id, m] : c) ids.push_back(id);
  std::vector<ScoredTrial> scored;
  std::normal_distribution<double> nd;
  for (int i = 0; i < 600; ++i) {
    const std::string e = ids[gen() % ids.size()];
    const bool same = gen() % 2;
    const std::string t = same ? e : ids[gen() % ids.size()];
    scored.push_back({{e + "/a", t + "/b", same ? Label::kSame : Label::kDifferent}, nd(gen) + same});
  }
  const auto sweep = nationality_sweep(scored, c);
  std::vector<std::string> order;
  for (const auto& e : sweep) order.push_back(e.nationality);
  EXPECT_EQ(order, (std::vector<std::string>{"US", "UK", "AA", "AB", "NZ"}));
  EXPECT_EQ(sweep[0].speaker_count, 7u);
  for (const auto& e : sweep) EXPECT_EQ(e.report.threshold, sweep[0].report.threshold);
}

TEST(NationalitySweep, KeepsInestimableEntries) {
  Cohort c = four_speakers();
  c["e"] = {"e", Gender::kMale, "NZ", std::nullopt};
  std::vector<ScoredTrial> scored{{{"a/1", "a/2", Label::kSame}, 0.9}, {{"c/1", "c/2", Label::kSame}, 0.6},
                                  {{"b/1", "d/2", Label::kDifferent}, 0.3}, {{"e/1", "a/2", Label::kDifferent}, 0.7},
                                  {{"d/1", "b/2", Label::kDifferent}, 0.1}, {{"b/1", "b/2", Label::kSame}, 0.5}};
  const auto sweep = nationality_sweep(scored, c);
  ASSERT_EQ(sweep.size(), 3u);
  EXPECT_EQ(sweep[2].nationality, "NZ");
  EXPECT_TRUE(sweep[2].report.statistical_parity);
  EXPECT_FALSE(sweep[2].report.equal_opportunity);
}

TEST(NationalitySweep, NeedsTwoNationalities) {
  Cohort c;
  c["a"] = {"a", Gender::kMale, "US", std::nullopt};
  c["b"] = {"b", Gender::kMale, "UNK", std::nullopt};
  std::vector<ScoredTrial> scored{{{"a/1", "a/2", Label::kSame}, 0.9}, {{"a/1", "b/2", Label::kDifferent}, 0.1}};
  EXPECT_EQ(kind_of([&] { nationality_sweep(scored, c); }), ErrorKind::kSingleNationalityCohort);
}

// Group-blind cosine scores on a cohort with identical group distributions.
TEST(Audit, NullBiasCohortIsNearFair) {
  synth::SynthConfig cfg;
  cfg.n_speakers = 200;
  cfg.noise_sigma = 0.7;
  cfg.seed = 12;
  const auto cohort = synth::gen_cohort(cfg);
  const auto trials = synth::gen_trials(cohort, 50000, 50000, false, 13);
  const auto r = audit(score_trials(trials, cohort.features), cohort.metadata, GroupScheme::gender(Gender::kFemale));
  EXPECT_LT(*r.statistical_parity, 0.02);
  EXPECT_LT(*r.equalized_odds, 0.02);
  EXPECT_LT(*r.equal_opportunity, 0.02);
}
