#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "svfair/scoring.hpp"

using namespace svfair;

namespace {

std::vector<double> v(std::initializer_list<double> xs) { return xs; }

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kIo;
}

}  // namespace

TEST(Cosine, Examples) {
  EXPECT_EQ(cosine_similarity(v({3, 4}), v({3, 4})), 1.0);
  EXPECT_EQ(cosine_similarity(v({1, 0}), v({0, 1})), 0.0);
  EXPECT_NEAR(cosine_similarity(v({1, 0}), v({1, 1})), 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(Cosine, Errors) {
  EXPECT_EQ(kind_of([] { cosine_similarity(v({1, 0}), v({1, 0, 0})); }), ErrorKind::kDimensionMismatch);
  EXPECT_EQ(kind_of([] { cosine_similarity(v({0, 0}), v({1, 0})); }), ErrorKind::kZeroNormVector);
  EXPECT_EQ(kind_of([] { cosine_similarity(v({NAN, 0}), v({1, 0})); }), ErrorKind::kNonFiniteValue);
}

TEST(CosineProperty, SymmetryScaleAndRange) {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t d = 1 + gen() % 16;
    std::vector<double> a(d), b(d);
    for (auto& x : a) x = nd(gen);
    for (auto& x : b) x = nd(gen);
    if (trial % 7 == 0) b = a;  // collinear inputs probe the clamp
    const double ab = cosine_similarity(a, b);
    EXPECT_EQ(ab, cosine_similarity(b, a));
    EXPECT_GE(ab, -1.0);
    EXPECT_LE(ab, 1.0);
    for (double lambda : {0.001, 1000.0}) {
      std::vector<double> la(a);
      for (auto& x : la) x *= lambda;
      EXPECT_NEAR(cosine_similarity(la, b), ab, 1e-12);
    }
  }
}

TEST(ScoreTrials, OrderAndMissingEmbedding) {
  EmbeddingTable t;
  t.add("u1", {1, 0});
  t.add("u2", {1, 0});
  t.add("u3", {0, 1});
  const std::vector<Trial> trials{{"u1", "u2", Label::kSame}, {"u1", "u3", Label::kDifferent}, {"u3", "u3", Label::kSame}};
  const auto s = score_trials(trials, t);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].score, 1.0);
  EXPECT_EQ(s[1].score, 0.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(s[i].trial, trials[i]);
  const std::vector<Trial> bad{{"u1", "u9", Label::kSame}};
  EXPECT_EQ(kind_of([&] { score_trials(bad, t); }), ErrorKind::kMissingEmbedding);
}

TEST(ScoreTrials, IdenticalForAnyThreadCount) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  EmbeddingTable t;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x(12);
    for (auto& c : x) c = nd(gen);
    t.add("u" + std::to_string(i), x);
  }
  std::vector<Trial> trials;
  for (int i = 0; i < 5000; ++i) {
    trials.push_back({"u" + std::to_string(gen() % 200), "u" + std::to_string(gen() % 200), Label::kDifferent});
  }
  const auto one = score_trials(trials, t, 1);
  for (unsigned threads : {2u, 3u, 8u}) EXPECT_EQ(score_trials(trials, t, threads), one);
}
