#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "svfair/core_model.hpp"
#include "svfair/error.hpp"
#include "svfair/ingest.hpp"
#include "svfair/rng.hpp"

namespace svfair::synth {

struct NationalityWeight {
  std::string code;
  double weight = 1.0;
};

struct SynthConfig {
  int n_speakers = 50;
  int utterances_per_speaker = 20;
  int input_dim = 32;
  double protected_fraction = 0.5;
  double bias = 0.0;  // beta: protected within-speaker noise is noise_sigma * (1 + beta)
  double base_separation = 1.0;
  double noise_sigma = 0.2;
  std::vector<NationalityWeight> nationality_palette;  // empty: every speaker is "UNK"
  std::uint64_t seed = 0;

  int protected_count() const {
    return static_cast<int>(std::lround(protected_fraction * n_speakers));
  }

  void validate() const {
    auto bad = [](const std::string& what) { throw Error(ErrorKind::kInvalidConfig, what); };
    if (n_speakers < 2) bad("n_speakers must be >= 2");
    if (utterances_per_speaker < 2) bad("utterances_per_speaker must be >= 2");
    if (input_dim < 2) bad("input_dim must be >= 2");
    if (!(protected_fraction > 0.0 && protected_fraction < 1.0)) bad("protected_fraction must lie in (0, 1)");
    if (!(bias >= 0.0 && bias <= 1.0)) bad("bias must lie in [0, 1]");
    if (!(base_separation > 0.0)) bad("base_separation must be > 0");
    if (!(noise_sigma > 0.0)) bad("noise_sigma must be > 0");
    const int k = protected_count();
    if (k < 1 || k >= n_speakers) {
      bad("protected_fraction yields " + std::to_string(k) + " protected of " +
          std::to_string(n_speakers) + " speakers");
    }
    for (const auto& p : nationality_palette) {
      if (p.code.empty() || !(p.weight > 0.0) || !std::isfinite(p.weight)) {
        bad("nationality palette entries need a code and a positive weight");
      }
    }
  }
};

/// Speakers are "spkNNNN", utterances "spkNNNN/uttNNNN", so the default
/// prefix rule recovers the speaker. The protected group is gender female.
struct SynthCohort {
  Cohort metadata;
  EmbeddingTable features;
  std::vector<std::string> speaker_ids;              // generation order
  std::vector<std::vector<std::string>> utterances;  // per speaker, generation order
};

inline std::string speaker_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "spk%04d", index + 1);
  return buf;
}

inline std::string utterance_name(const std::string& speaker, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "/utt%04d", index + 1);
  return speaker + buf;
}

/// Draws speaker centroids from N(0, base_separation^2 I) and utterances as
/// centroid + N(0, sigma^2 I), with sigma inflated by (1 + bias) for the
/// protected group. Fully determined by the seed.
inline SynthCohort gen_cohort(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  // Protected speakers: the first k of a seeded permutation.
  std::vector<int> order(static_cast<std::size_t>(cfg.n_speakers));
  for (int i = 0; i < cfg.n_speakers; ++i) order[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<bool> is_protected(order.size(), false);
  for (int i = 0; i < cfg.protected_count(); ++i) is_protected[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

  double palette_total = 0.0;
  for (const auto& p : cfg.nationality_palette) palette_total += p.weight;

  SynthCohort out;
  out.features = EmbeddingTable(static_cast<std::size_t>(cfg.input_dim));
  std::vector<double> centroid(static_cast<std::size_t>(cfg.input_dim));
  std::vector<double> x(centroid.size());
  for (int s = 0; s < cfg.n_speakers; ++s) {
    SpeakerMeta meta;
    meta.speaker_id = speaker_name(s);
    const bool prot = is_protected[static_cast<std::size_t>(s)];
    meta.gender = prot ? Gender::kFemale : Gender::kMale;
    if (!cfg.nationality_palette.empty()) {
      double u = rng.uniform() * palette_total;
      meta.nationality = cfg.nationality_palette.back().code;
      for (const auto& p : cfg.nationality_palette) {
        if (u < p.weight) {
          meta.nationality = p.code;
          break;
        }
        u -= p.weight;
      }
      meta.nationality = text::to_upper(meta.nationality);
    }
    meta.utterance_count = static_cast<std::uint64_t>(cfg.utterances_per_speaker);

    for (double& c : centroid) c = cfg.base_separation * rng.normal();
    const double sigma = cfg.noise_sigma * (prot ? 1.0 + cfg.bias : 1.0);
    std::vector<std::string> utts;
    for (int u = 0; u < cfg.utterances_per_speaker; ++u) {
      for (std::size_t d = 0; d < x.size(); ++d) x[d] = centroid[d] + sigma * rng.normal();
      utts.push_back(utterance_name(meta.speaker_id, u));
      out.features.add(utts.back(), x);
    }
    out.speaker_ids.push_back(meta.speaker_id);
    out.utterances.push_back(std::move(utts));
    std::string key = meta.speaker_id;
    out.metadata.emplace(std::move(key), std::move(meta));
  }
  return out;
}

/// Samples n_target same-speaker and n_nontarget different-speaker pairs,
/// each uniformly over the eligible unordered utterance pairs, targets first.
/// A fair coin picks which side of a pair is enrollment, so no speaker is
/// favored by its position in `utterances`. With same_group_only, nontarget
/// pairs share a gender.
inline std::vector<Trial> gen_trials(const Cohort& cohort, std::span<const std::string> utterances,
                                     std::size_t n_target, std::size_t n_nontarget,
                                     bool same_group_only, std::uint64_t seed,
                                     const UtteranceSpeakerRule& rule = {}) {
  // Dense speaker index per utterance, in first-appearance order.
  std::vector<std::size_t> spk_of(utterances.size());
  std::vector<std::vector<std::size_t>> by_speaker;
  std::vector<Gender> gender_of;
  {
    std::map<std::string, std::size_t, std::less<>> index;
    for (std::size_t i = 0; i < utterances.size(); ++i) {
      const std::string spk = rule.speaker_of(utterances[i]);
      auto [it, inserted] = index.try_emplace(spk, by_speaker.size());
      if (inserted) {
        by_speaker.emplace_back();
        auto meta = cohort.find(spk);
        if (meta == cohort.end()) throw Error(ErrorKind::kUnknownSpeaker, spk);
        gender_of.push_back(meta->second.gender);
      }
      spk_of[i] = it->second;
      by_speaker[it->second].push_back(i);
    }
  }

  // Target pairs: speaker weighted by its ordered pair count, then two
  // distinct utterances.
  std::vector<std::uint64_t> cumulative;
  std::uint64_t total_pairs = 0;
  for (const auto& u : by_speaker) {
    total_pairs += u.size() * (u.size() - (u.empty() ? 0 : 1));
    cumulative.push_back(total_pairs);
  }
  if (n_target > 0 && total_pairs == 0) {
    throw Error(ErrorKind::kInsufficientUtterances, "no speaker has two utterances");
  }
  if (n_nontarget > 0) {
    bool any = false;
    for (std::size_t a = 0; a < by_speaker.size() && !any; ++a) {
      for (std::size_t b = a + 1; b < by_speaker.size() && !any; ++b) {
        any = !same_group_only || gender_of[a] == gender_of[b];
      }
    }
    if (!any) {
      throw Error(ErrorKind::kInsufficientUtterances,
                  same_group_only ? "no two speakers share a gender" : "only one speaker");
    }
  }

  Rng rng(seed);
  std::vector<Trial> trials;
  trials.reserve(n_target + n_nontarget);
  auto emit = [&](std::size_t i, std::size_t j, Label label) {
    if (rng.below(2) == 1) std::swap(i, j);
    trials.push_back({utterances[i], utterances[j], label});
  };
  for (std::size_t t = 0; t < n_target; ++t) {
    const std::uint64_t r = rng.below(total_pairs);
    const auto k = static_cast<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
    const auto& own = by_speaker[k];
    const std::size_t a = rng.below(own.size());
    std::size_t b = rng.below(own.size() - 1);
    if (b >= a) ++b;
    emit(own[a], own[b], Label::kSame);
  }
  for (std::size_t t = 0; t < n_nontarget; ++t) {
    while (true) {
      const std::size_t i = rng.below(utterances.size());
      const std::size_t j = rng.below(utterances.size());
      if (spk_of[i] == spk_of[j]) continue;
      if (same_group_only && gender_of[spk_of[i]] != gender_of[spk_of[j]]) continue;
      emit(i, j, Label::kDifferent);
      break;
    }
  }
  return trials;
}

/// Trials over every utterance of a synthetic cohort.
inline std::vector<Trial> gen_trials(const SynthCohort& cohort, std::size_t n_target,
                                     std::size_t n_nontarget, bool same_group_only,
                                     std::uint64_t seed) {
  return gen_trials(cohort.metadata, cohort.features.ids(), n_target, n_nontarget, same_group_only,
                    seed);
}

}  // namespace svfair::synth
