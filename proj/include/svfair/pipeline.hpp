#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "svfair/core_model.hpp"
#include "svfair/fairness.hpp"
#include "svfair/ingest.hpp"
#include "svfair/loss_lab.hpp"
#include "svfair/report.hpp"
#include "svfair/scoring.hpp"
#include "svfair/synth.hpp"
#include "svfair/thresholding.hpp"

// End-to-end glue: features -> toy encoder -> embeddings -> scores -> audit.
namespace svfair::pipeline {

/// Builds a training set from the given utterances of a feature table.
/// Speakers get dense indices in order of first appearance.
inline lab::ToyDataset make_dataset(const EmbeddingTable& features, std::span<const std::string> utterances,
                                    const Cohort& cohort, const UtteranceSpeakerRule& rule = {}) {
  lab::ToyDataset data;
  data.inputs.resize(static_cast<Eigen::Index>(utterances.size()), static_cast<Eigen::Index>(features.dim()));
  std::map<std::string, int, std::less<>> index;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const auto* vec = features.find(utterances[i]);
    if (!vec) throw Error(ErrorKind::kMissingEmbedding, utterances[i]);
    for (std::size_t d = 0; d < vec->size(); ++d) {
      data.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = (*vec)[d];
    }
    const std::string spk = rule.speaker_of(utterances[i]);
    auto [it, inserted] = index.try_emplace(spk, static_cast<int>(index.size()));
    data.speakers.push_back(it->second);
    const auto meta = cohort.find(spk);
    data.groups.push_back(meta == cohort.end() ? GroupAssignment::kExcluded
                          : meta->second.gender == Gender::kFemale ? GroupAssignment::kProtected
                          : meta->second.gender == Gender::kMale   ? GroupAssignment::kUnprotected
                                                                   : GroupAssignment::kExcluded);
  }
  data.speaker_count = static_cast<int>(index.size());
  return data;
}

/// Same as make_dataset over every entry of the table.
inline lab::ToyDataset make_dataset(const EmbeddingTable& features, const Cohort& cohort,
                                    const UtteranceSpeakerRule& rule = {}) {
  return make_dataset(features, features.ids(), cohort, rule);
}

/// Encodes the listed utterances into an embedding table, preserving order.
inline EmbeddingTable embed(const lab::EncoderParams& params, const EmbeddingTable& features,
                            std::span<const std::string> utterances) {
  EmbeddingTable out(static_cast<std::size_t>(params.weight.rows()));
  lab::Vector x(static_cast<Eigen::Index>(features.dim()));
  for (const auto& id : utterances) {
    const auto* vec = features.find(id);
    if (!vec) throw Error(ErrorKind::kMissingEmbedding, id);
    for (std::size_t d = 0; d < vec->size(); ++d) x(static_cast<Eigen::Index>(d)) = (*vec)[d];
    const lab::Vector e = params.weight * x;
    out.add(id, std::vector<double>(e.data(), e.data() + e.size()));
  }
  return out;
}

/// Loss hyperparameters used by the demo and as CLI defaults. The triplet
/// margin is 0.3 rather than 0, since an unmargined triplet loss is
/// minimized by collapsing every embedding to a point.
inline lab::LossConfig default_loss_config(lab::LossKind kind) {
  lab::LossConfig cfg;
  cfg.kind = kind;
  cfg.margin = 0.2;
  cfg.scale = 30.0;
  cfg.triplet_margin = kind == lab::LossKind::kTriplet ? 0.3 : 0.0;
  cfg.support_size = 3;
  cfg.batch_speakers = 10;
  cfg.batch_size = 32;
  return cfg;
}

inline double default_learning_rate(lab::LossKind kind) {
  switch (kind) {
    case lab::LossKind::kSoftmax: return 0.5;
    case lab::LossKind::kAmSoftmax: return 0.5;
    case lab::LossKind::kAamSoftmax: return 0.5;
    case lab::LossKind::kTriplet: return 0.1;
    case lab::LossKind::kPrototypical: return 0.2;
  }
  return 0.1;
}

struct DemoConfig {
  synth::SynthConfig cohort = [] {
    synth::SynthConfig c;
    c.n_speakers = 50;
    c.utterances_per_speaker = 20;
    c.input_dim = 32;
    c.base_separation = 0.2;
    c.noise_sigma = 0.08;
    c.bias = 0.5;
    c.seed = 7;
    return c;
  }();
  int train_utterances = 14;  // per speaker; the rest are held out for scoring
  std::size_t n_target = 2000;
  std::size_t n_nontarget = 2000;
  int epochs = 30;
  int embedding_dim = 32;
  std::uint64_t seed = 7;
  OddsAggregation odds_aggregation = OddsAggregation::kMean;
  std::string system_name = "LinearToy";
};

struct LossRun {
  lab::LossKind kind;
  std::vector<double> loss_history;
  EerResult eer;
  FairnessReport report;
};

struct DemoResult {
  std::vector<LossRun> runs;
  ExperimentGrid grid;
};

/// Synthesizes a cohort, trains the toy encoder once per loss on the first
/// train_utterances of every speaker, scores held-out trials drawn from the
/// remaining utterances, and audits each system with gender as the group.
inline DemoResult run_demo(const DemoConfig& cfg) {
  const synth::SynthCohort cohort = synth::gen_cohort(cfg.cohort);
  if (cfg.train_utterances < 2 || cfg.train_utterances > cfg.cohort.utterances_per_speaker - 2) {
    throw Error(ErrorKind::kInvalidConfig, "need >= 2 training and >= 2 held-out utterances per speaker");
  }
  std::vector<std::string> train_ids, held_out_ids;
  for (const auto& utts : cohort.utterances) {
    for (std::size_t u = 0; u < utts.size(); ++u) {
      (static_cast<int>(u) < cfg.train_utterances ? train_ids : held_out_ids).push_back(utts[u]);
    }
  }
  const lab::ToyDataset data = make_dataset(cohort.features, train_ids, cohort.metadata);
  const auto trials = synth::gen_trials(cohort.metadata, held_out_ids, cfg.n_target, cfg.n_nontarget,
                                        true, mix_seed(cfg.seed, 1));

  DemoResult result;
  result.grid.rows = {cfg.system_name};
  result.grid.cells.emplace_back();
  AuditOptions audit_opt;
  audit_opt.odds_aggregation = cfg.odds_aggregation;
  for (lab::LossKind kind : lab::kAllLosses) {
    lab::TrainOptions opt;
    opt.epochs = cfg.epochs;
    opt.learning_rate = default_learning_rate(kind);
    opt.seed = mix_seed(cfg.seed, 100 + static_cast<std::uint64_t>(kind));
    opt.embedding_dim = cfg.embedding_dim;
    const lab::TrainResult trained = lab::train_toy(data, default_loss_config(kind), opt);

    const EmbeddingTable emb = embed(trained.params, cohort.features, held_out_ids);
    const auto scored = score_trials(trials, emb);
    LossRun run{kind, trained.loss_history, compute_eer(scored),
                audit(scored, cohort.metadata, GroupScheme::gender(Gender::kFemale), audit_opt)};
    result.grid.columns.emplace_back(lab::to_string(kind));
    result.grid.cells.back().push_back({run.report.statistical_parity.value_or(0.0),
                                        run.report.equalized_odds.value_or(0.0),
                                        run.report.equal_opportunity.value_or(0.0)});
    result.runs.push_back(std::move(run));
  }
  return result;
}

}  // namespace svfair::pipeline
