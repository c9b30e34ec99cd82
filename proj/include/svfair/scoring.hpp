#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "svfair/core_model.hpp"
#include "svfair/error.hpp"
#include "svfair/ingest.hpp"

namespace svfair {

/// (a·b) / (|a| |b|), accumulated in double and clamped to [-1, 1].
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kDimensionMismatch,
                std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double dot = 0.0, norm_a = 0.0, norm_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
      throw Error(ErrorKind::kNonFiniteValue, "component " + std::to_string(i));
    }
    dot += a[i] * b[i];
    norm_a += a[i] * a[i];
    norm_b += b[i] * b[i];
  }
  if (!(norm_a > 0.0) || !(norm_b > 0.0)) {
    throw Error(ErrorKind::kZeroNormVector, "cosine similarity is undefined at zero norm");
  }
  return std::clamp(dot / (std::sqrt(norm_a) * std::sqrt(norm_b)), -1.0, 1.0);
}

/// Scores each trial by the cosine similarity of its two embeddings. Output
/// order matches input order. With threads > 1 the list is split into
/// contiguous chunks; each slot is computed independently, so the result is
/// bit-identical for any thread count.
inline std::vector<ScoredTrial> score_trials(std::span<const Trial> trials,
                                             const EmbeddingTable& table,
                                             unsigned threads = 1) {
  std::vector<const std::vector<double>*> enroll(trials.size()), test(trials.size());
  for (std::size_t i = 0; i < trials.size(); ++i) {
    enroll[i] = table.find(trials[i].enroll_utt);
    if (!enroll[i]) throw Error(ErrorKind::kMissingEmbedding, trials[i].enroll_utt);
    test[i] = table.find(trials[i].test_utt);
    if (!test[i]) throw Error(ErrorKind::kMissingEmbedding, trials[i].test_utt);
  }

  std::vector<ScoredTrial> out(trials.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      out[i] = {trials[i], cosine_similarity(*enroll[i], *test[i])};
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(trials.size())));
  if (threads <= 1) {
    work(0, trials.size());
    return out;
  }
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (trials.size() + threads - 1) / threads;
    for (std::size_t begin = 0; begin < trials.size(); begin += chunk) {
      pool.emplace_back(work, begin, std::min(trials.size(), begin + chunk));
    }
  }
  return out;
}

}  // namespace svfair
