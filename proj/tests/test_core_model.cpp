#include <gtest/gtest.h>

#include <random>

#include "svfair/core_model.hpp"

using namespace svfair;

namespace {

Cohort small_cohort() {
  Cohort c;
  c["f1"] = {"f1", Gender::kFemale, "US", std::nullopt};
  c["f2"] = {"f2", Gender::kFemale, "NZ", std::nullopt};
  c["m1"] = {"m1", Gender::kMale, "US", std::nullopt};
  c["m2"] = {"m2", Gender::kMale, "UK", std::nullopt};
  c["x1"] = {"x1", Gender::kUnknown, "UNK", std::nullopt};
  return c;
}

Trial trial(const std::string& a, const std::string& b) {
  return {a + "/u1.wav", b + "/u2.wav", Label::kDifferent};
}

}  // namespace

TEST(AssignGroup, EnrollmentSpeakerDecidesByDefault) {
  const Cohort c = small_cohort();
  EXPECT_EQ(assign_group(trial("f1", "m1"), GroupScheme::gender(Gender::kFemale), c), GroupAssignment::kProtected);
  EXPECT_EQ(assign_group(trial("m1", "f1"), GroupScheme::gender(Gender::kFemale), c),
            GroupAssignment::kUnprotected);
}

TEST(AssignGroup, StrictPolicyExcludesMixedPairs) {
  const Cohort c = small_cohort();
  const auto strict = GroupScheme::gender(Gender::kFemale, AssignmentPolicy::kBothSpeakersRequired);
  EXPECT_EQ(assign_group(trial("f1", "m1"), strict, c), GroupAssignment::kExcluded);
  EXPECT_EQ(assign_group(trial("f1", "f2"), strict, c), GroupAssignment::kProtected);
  EXPECT_EQ(assign_group(trial("m1", "m2"), strict, c), GroupAssignment::kUnprotected);
}

TEST(AssignGroup, OneVsRestPutsOtherNationalitiesInTheRest) {
  const Cohort c = small_cohort();
  EXPECT_EQ(assign_group(trial("m1", "f2"), GroupScheme::nationality("NZ"), c), GroupAssignment::kUnprotected);
  EXPECT_EQ(assign_group(trial("f2", "m1"), GroupScheme::nationality("NZ"), c), GroupAssignment::kProtected);
}

TEST(AssignGroup, UnknownAttributeExcludes) {
  const Cohort c = small_cohort();
  EXPECT_EQ(assign_group(trial("x1", "m1"), GroupScheme::gender(Gender::kFemale), c), GroupAssignment::kExcluded);
  EXPECT_EQ(assign_group(trial("x1", "m1"), GroupScheme::nationality("US"), c), GroupAssignment::kExcluded);
  const auto strict = GroupScheme::nationality("US", AssignmentPolicy::kBothSpeakersRequired);
  EXPECT_EQ(assign_group(trial("m1", "x1"), strict, c), GroupAssignment::kExcluded);
}

TEST(AssignGroup, MissingSpeakerIsAnError) {
  const Cohort c = small_cohort();
  try {
    assign_group(trial("f1", "ghost"), GroupScheme::gender(Gender::kFemale), c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUnknownSpeaker);
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST(AssignGroup, IllegalProtectedValues) {
  const Cohort c = small_cohort();
  GroupScheme purple = GroupScheme::gender(Gender::kFemale);
  purple.protected_value = "purple";
  GroupScheme binary_nat = GroupScheme::nationality("US");
  binary_nat.kind = SchemeKind::kBinary;
  for (const auto& s : {purple, GroupScheme::nationality("UNK"), GroupScheme::nationality("us"),
                        GroupScheme::nationality(""), binary_nat}) {
    try {
      assign_group(trial("f1", "m1"), s, c);
      FAIL() << s.protected_value;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kInvalidScheme);
    }
  }
}

TEST(AssignGroup, ExplicitUtteranceMapOverridesPrefix) {
  const Cohort c = small_cohort();
  UtteranceSpeakerRule rule(std::unordered_map<std::string, std::string>{{"clip7.wav", "f2"}});
  const Trial t{"clip7.wav", "m1/x.wav", Label::kDifferent};
  EXPECT_EQ(assign_group(t, GroupScheme::gender(Gender::kFemale), c, rule), GroupAssignment::kProtected);
  EXPECT_EQ(rule.speaker_of("m2/a/b.wav"), "m2");
  EXPECT_EQ(rule.speaker_of("bare"), "bare");
}

// Random complete-metadata cohorts: swapping the protected gender swaps
// every assignment, and the enrollment rule never excludes.
TEST(AssignGroupProperty, BinarySwapAndCompleteness) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 gen(seed);
    Cohort c;
    const int n = 2 + static_cast<int>(gen() % 20);
    for (int i = 0; i < n; ++i) {
      const std::string id = "s" + std::to_string(i);
      c[id] = {id, gen() % 2 ? Gender::kFemale : Gender::kMale, "US", std::nullopt};
    }
    for (int t = 0; t < 50; ++t) {
      const Trial tr = trial("s" + std::to_string(gen() % n), "s" + std::to_string(gen() % n));
      for (auto policy : {AssignmentPolicy::kByEnrollmentSpeaker, AssignmentPolicy::kBothSpeakersRequired}) {
        const auto f = assign_group(tr, GroupScheme::gender(Gender::kFemale, policy), c);
        const auto m = assign_group(tr, GroupScheme::gender(Gender::kMale, policy), c);
        if (policy == AssignmentPolicy::kByEnrollmentSpeaker) { EXPECT_NE(f, GroupAssignment::kExcluded); }
        if (f == GroupAssignment::kExcluded) { EXPECT_EQ(m, GroupAssignment::kExcluded); }
        if (f == GroupAssignment::kProtected) { EXPECT_EQ(m, GroupAssignment::kUnprotected); }
        if (f == GroupAssignment::kUnprotected) { EXPECT_EQ(m, GroupAssignment::kProtected); }
        EXPECT_EQ(f, assign_group(tr, GroupScheme::gender(Gender::kFemale, policy), c));
      }
    }
  }
}

TEST(ErrorMessages, CarryKindAndLine) {
  const Error e(ErrorKind::kMalformedRow, "bad label '2'", 7);
  EXPECT_EQ(e.kind(), ErrorKind::kMalformedRow);
  EXPECT_EQ(e.line().value_or(0), 7u);
  EXPECT_NE(std::string(e.what()).find("line 7"), std::string::npos);
}
