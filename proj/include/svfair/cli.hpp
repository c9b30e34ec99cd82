#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "svfair/core_model.hpp"
#include "svfair/error.hpp"
#include "svfair/fairness.hpp"
#include "svfair/ingest.hpp"
#include "svfair/loss_lab.hpp"
#include "svfair/pipeline.hpp"
#include "svfair/report.hpp"
#include "svfair/scoring.hpp"
#include "svfair/synth.hpp"
#include "svfair/thresholding.hpp"

namespace svfair::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// A flag value that parsed but makes no sense. Reported with exit code 1.
class UsageError : public std::runtime_error {
 public:
  UsageError(const std::string& flag, const std::string& problem, const std::string& fix)
      : std::runtime_error(flag + ": " + problem), fix_(fix) {}
  const std::string& fix() const { return fix_; }

 private:
  std::string fix_;
};

/// Collects every result in memory; nothing reaches the output stream or the
/// file system until commit(), and files are renamed into place from a
/// sibling temporary.
class StagedOutput {
 public:
  std::ostream& stdout_stream() { return stdout_; }

  std::ostream& file(const std::filesystem::path& path) { return files_[path]; }

  /// Results go to `path` when given, otherwise to standard output.
  std::ostream& target(const std::string& path) {
    return path.empty() ? stdout_stream() : file(path);
  }

  void commit(std::ostream& out) {
    std::vector<std::pair<std::filesystem::path, std::filesystem::path>> staged;
    for (const auto& [path, content] : files_) {
      if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
      std::filesystem::path tmp = path;
      tmp += ".svfair-tmp";
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      const std::string text = content.str();
      f.write(text.data(), static_cast<std::streamsize>(text.size()));
      f.close();
      if (!f) throw Error(ErrorKind::kIo, "cannot write " + tmp.string());
      staged.emplace_back(tmp, path);
    }
    for (const auto& [tmp, path] : staged) std::filesystem::rename(tmp, path);
    out << stdout_.str();
    out.flush();
  }

 private:
  std::ostringstream stdout_;
  std::map<std::filesystem::path, std::ostringstream> files_;
};

namespace detail {

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  return in;
}

inline GroupScheme parse_scheme(const std::string& spec, bool one_vs_rest, AssignmentPolicy policy) {
  const auto colon = spec.find(':');
  const std::string attribute = colon == std::string::npos ? spec : text::to_lower(spec.substr(0, colon));
  const std::string value = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (colon == std::string::npos || value.empty()) {
    throw UsageError("--scheme", "'" + spec + "' is not attribute:value",
                     "use --scheme gender:female or --scheme nationality:US");
  }
  if (attribute == "gender") {
    const std::string g = text::to_lower(value);
    if (g != "female" && g != "male") {
      throw UsageError("--scheme", "'" + value + "' is not a legal gender value",
                       "use --scheme gender:female or --scheme gender:male");
    }
    GroupScheme s = GroupScheme::gender(g == "female" ? Gender::kFemale : Gender::kMale, policy);
    if (one_vs_rest) s.kind = SchemeKind::kOneVsRest;
    return s;
  }
  if (attribute == "nationality") {
    const std::string code = text::to_upper(value);
    if (code == kUnknownNationality) {
      throw UsageError("--scheme", "'UNK' marks missing nationality and cannot be protected",
                       "pick a country code present in the metadata, e.g. --scheme nationality:US");
    }
    return GroupScheme::nationality(code, policy);
  }
  throw UsageError("--scheme", "unknown attribute '" + attribute + "'",
                   "the attribute must be gender or nationality");
}

inline ThresholdPolicy parse_threshold(const std::string& spec) {
  if (spec == "eer") return ThresholdPolicy::eer_on_all_trials();
  if (const auto v = text::parse_real(spec)) return ThresholdPolicy::fixed(*v);
  throw UsageError("--threshold", "'" + spec + "' is neither 'eer' nor a finite number",
                   "use --threshold eer or e.g. --threshold 0.5");
}

inline std::vector<synth::NationalityWeight> parse_palette(const std::string& spec) {
  std::vector<synth::NationalityWeight> out;
  if (spec.empty()) return out;
  for (auto item : text::split_on(spec, ',')) {
    item = text::trim(item);
    const auto colon = item.find(':');
    synth::NationalityWeight w;
    w.code = text::to_upper(item.substr(0, colon));
    if (colon != std::string_view::npos) {
      const auto v = text::parse_real(item.substr(colon + 1));
      if (!v || !(*v > 0.0)) {
        throw UsageError("--nationalities", "bad weight in '" + std::string(item) + "'",
                         "write entries as CODE:WEIGHT, e.g. --nationalities US:5,UK:3,NZ:1");
      }
      w.weight = *v;
    }
    if (w.code.empty()) {
      throw UsageError("--nationalities", "empty country code",
                       "write entries as CODE:WEIGHT, e.g. --nationalities US:5,UK:3,NZ:1");
    }
    out.push_back(std::move(w));
  }
  return out;
}

struct ScoreInputs {
  std::string scores;
  std::string polarity = "similarity";
  std::string trials;
};

inline std::vector<ScoredTrial> load_scores(const ScoreInputs& in) {
  std::optional<std::vector<Trial>> trials;
  if (!in.trials.empty()) {
    auto f = open_input(in.trials);
    trials = parse_trials(f);
  }
  auto f = open_input(in.scores);
  return parse_scores(f, in.polarity == "distance" ? ScorePolarity::kDistance : ScorePolarity::kSimilarity,
                      trials ? &*trials : nullptr);
}

inline UtteranceSpeakerRule load_rule(const std::string& path) {
  if (path.empty()) return {};
  auto f = open_input(path);
  return parse_utterance_map(f);
}

inline void add_score_inputs(CLI::App* cmd, ScoreInputs& in) {
  cmd->add_option("--scores", in.scores, "Score file: <enroll> <test> <score> [<0|1>]")->required();
  cmd->add_option("--polarity", in.polarity, "Whether scores are similarities or distances")
      ->check(CLI::IsMember({"similarity", "distance"}));
  cmd->add_option("--trials", in.trials, "Trial list to join labels from");
}

inline std::string format_fixed(double v, int digits) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

}  // namespace detail

/// Runs one subcommand. `args` excludes the program name. Results go to
/// `out` (or --out files), diagnostics to `err`. Returns 0 on success, 1 on
/// a usage error and 2 on a data error.
inline int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Group-fairness audits for speaker verification, plus a toy loss lab", "svfair"};
  app.require_subcommand(1);
  app.fallthrough();
  unsigned threads = 1;
  app.add_option("--threads", threads, "Worker threads (results are identical for any count)")
      ->check(CLI::Range(1u, 256u));

  // score
  std::string emb_path, trials_path, out_path;
  auto* score = app.add_subcommand("score", "Cosine-score a trial list from an embedding file");
  score->add_option("--embeddings", emb_path, "Embedding file: <utt> <v1> ... <vd>")->required();
  score->add_option("--trials", trials_path, "Trial list: <0|1> <enroll> <test>")->required();
  score->add_option("--out", out_path, "Write scores here instead of standard output");

  // eer
  detail::ScoreInputs score_in;
  auto* eer = app.add_subcommand("eer", "Equal error rate and its threshold");
  detail::add_score_inputs(eer, score_in);
  eer->add_option("--out", out_path, "Write the result here instead of standard output");

  // audit / sweep
  std::string metadata_path, scheme_spec, assign = "enrollment", threshold_spec = "eer",
                                          aggregation = "mean", format, utt2spk;
  bool one_vs_rest = false;
  std::size_t bootstrap = 0;
  std::uint64_t seed = 0;
  auto add_audit_common = [&](CLI::App* cmd) {
    detail::add_score_inputs(cmd, score_in);
    cmd->add_option("--metadata", metadata_path, "Speaker table with id, gender, nationality")->required();
    cmd->add_option("--assign", assign, "Which speakers decide a trial's group")
        ->check(CLI::IsMember({"enrollment", "both"}));
    cmd->add_option("--threshold", threshold_spec, "'eer' (pooled over all trials) or a fixed value");
    cmd->add_option("--eo-aggregation", aggregation, "Combine TPR and FPR gaps by mean or max")
        ->check(CLI::IsMember({"mean", "max"}));
    cmd->add_option("--utt2spk", utt2spk, "Explicit utterance-to-speaker map");
    cmd->add_option("--out", out_path, "Write the report here instead of standard output");
  };
  auto* audit_cmd = app.add_subcommand("audit", "Fairness metrics for one protected group");
  add_audit_common(audit_cmd);
  audit_cmd->add_option("--scheme", scheme_spec, "attribute:protected_value, e.g. gender:female")->required();
  audit_cmd->add_flag("--one-vs-rest", one_vs_rest, "Everyone outside the protected value is unprotected");
  audit_cmd->add_option("--format", format, "json or markdown")->check(CLI::IsMember({"json", "markdown"}));
  audit_cmd->add_option("--bootstrap", bootstrap, "Bootstrap resamples for confidence intervals (0 = off)");
  audit_cmd->add_option("--seed", seed, "Bootstrap seed");
  auto* sweep = app.add_subcommand("sweep", "One-vs-rest audit for every nationality");
  add_audit_common(sweep);
  sweep->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  // synth
  synth::SynthConfig synth_cfg;
  std::string out_dir, palette;
  std::size_t n_target = 1000, n_nontarget = 1000;
  bool same_group_only = false;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic cohort: metadata, trials, features");
  synth_cmd->add_option("--out-dir", out_dir, "Directory for metadata.csv, trials.txt, features.txt")->required();
  synth_cmd->add_option("--speakers", synth_cfg.n_speakers, "Number of speakers");
  synth_cmd->add_option("--utterances", synth_cfg.utterances_per_speaker, "Utterances per speaker");
  synth_cmd->add_option("--dim", synth_cfg.input_dim, "Feature dimension");
  synth_cmd->add_option("--protected-fraction", synth_cfg.protected_fraction, "Share of female speakers");
  synth_cmd->add_option("--bias", synth_cfg.bias, "Protected-group noise inflation in [0, 1]");
  synth_cmd->add_option("--separation", synth_cfg.base_separation, "Speaker centroid scale");
  synth_cmd->add_option("--noise", synth_cfg.noise_sigma, "Within-speaker noise scale");
  synth_cmd->add_option("--nationalities", palette, "CODE:WEIGHT list, e.g. US:5,UK:3,NZ:1");
  synth_cmd->add_option("--targets", n_target, "Same-speaker trials");
  synth_cmd->add_option("--nontargets", n_nontarget, "Different-speaker trials");
  synth_cmd->add_flag("--same-group-only", same_group_only, "Pair different speakers only within a gender");
  synth_cmd->add_option("--seed", synth_cfg.seed, "Generator seed");

  // trainlab
  std::string features_path, loss_name, emb_out, history_path;
  lab::TrainOptions train_opt;
  std::optional<double> lr;
  lab::LossConfig loss_cfg = pipeline::default_loss_config(lab::LossKind::kSoftmax);
  auto* train = app.add_subcommand("trainlab", "Train the toy linear encoder and export embeddings");
  train->add_option("--features", features_path, "Feature file in embedding format")->required();
  train->add_option("--loss", loss_name, "softmax, am_softmax, aam_softmax, triplet or prototypical")
      ->required()
      ->check(CLI::IsMember({"softmax", "am_softmax", "aam_softmax", "triplet", "prototypical"}));
  train->add_option("--out-embeddings", emb_out, "Where to write the trained embeddings")->required();
  train->add_option("--history", history_path, "Write the per-epoch loss here instead of standard output");
  train->add_option("--epochs", train_opt.epochs, "Training epochs");
  train->add_option("--lr", lr, "Initial learning rate (halved every 10 epochs)");
  train->add_option("--seed", train_opt.seed, "Initialization and batching seed");
  train->add_option("--embedding-dim", train_opt.embedding_dim, "Embedding dimension");
  train->add_option("--margin", loss_cfg.margin, "AM/AAM margin");
  train->add_option("--scale", loss_cfg.scale, "AM/AAM scale");
  train->add_option("--triplet-margin", loss_cfg.triplet_margin, "Triplet margin alpha");
  train->add_option("--support-size", loss_cfg.support_size, "Utterances per speaker per prototypical episode");
  train->add_option("--batch-speakers", loss_cfg.batch_speakers, "Speakers per prototypical episode");
  train->add_option("--batch-size", loss_cfg.batch_size, "Examples or triplets per step");
  train->add_option("--utt2spk", utt2spk, "Explicit utterance-to-speaker map");
  bool triplet_margin_set = false;
  train->callback([&] { triplet_margin_set = train->count("--triplet-margin") > 0; });

  // demo
  pipeline::DemoConfig demo_cfg;
  std::string demo_format = "markdown";
  auto* demo = app.add_subcommand("demo", "Synthesize, train all five losses, audit, print a grid");
  demo->add_option("--format", demo_format, "markdown, csv or json")
      ->check(CLI::IsMember({"markdown", "csv", "json"}));
  demo->add_option("--seed", demo_cfg.seed, "Seed for cohort, trials and training");
  demo->add_option("--bias", demo_cfg.cohort.bias, "Protected-group noise inflation in [0, 1]");
  demo->add_option("--epochs", demo_cfg.epochs, "Training epochs per loss");
  demo->add_option("--out-dir", out_dir, "Also write grid, EERs and loss histories here");

  std::vector<std::string> argv_store{"svfair"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    err << "fix: run 'svfair " << (app.get_subcommands().empty() ? std::string()
                                                                 : app.get_subcommands().front()->get_name() + " ")
        << "--help' for the accepted flags\n";
    return kExitUsage;
  }

  StagedOutput staged;
  try {
    if (*score) {
      auto ef = detail::open_input(emb_path);
      const EmbeddingTable table = parse_embeddings(ef);
      auto tf = detail::open_input(trials_path);
      const auto trials = parse_trials(tf);
      write_scores(staged.target(out_path), score_trials(trials, table, threads));
    } else if (*eer) {
      const auto scored = detail::load_scores(score_in);
      const EerResult r = compute_eer(scored);
      if (r.flat_scores) err << "warning: all scores are identical; EER is not meaningful\n";
      staged.target(out_path) << "eer=" << detail::format_fixed(r.eer, 6) << '\n'
                              << "threshold=" << detail::format_fixed(r.threshold, 6) << '\n';
    } else if (*audit_cmd || *sweep) {
      const auto policy = assign == "both" ? AssignmentPolicy::kBothSpeakersRequired
                                           : AssignmentPolicy::kByEnrollmentSpeaker;
      AuditOptions opt;
      opt.threshold = detail::parse_threshold(threshold_spec);
      opt.odds_aggregation = aggregation == "max" ? OddsAggregation::kMax : OddsAggregation::kMean;
      opt.threads = threads;
      std::optional<GroupScheme> scheme;
      if (*audit_cmd) scheme = detail::parse_scheme(scheme_spec, one_vs_rest, policy);

      auto mf = detail::open_input(metadata_path);
      const Cohort cohort = parse_metadata(mf);
      const auto rule = detail::load_rule(utt2spk);
      const auto scored = detail::load_scores(score_in);
      if (*audit_cmd) {
        opt.bootstrap_resamples = bootstrap;
        opt.bootstrap_seed = seed;
        const FairnessReport report = svfair::audit(scored, cohort, *scheme, opt, rule);
        if (format == "markdown") staged.target(out_path) << render_report_markdown(report);
        else staged.target(out_path) << report_to_json(report).dump(2) << '\n';
      } else {
        const auto entries = nationality_sweep(scored, cohort, opt, policy, rule);
        staged.target(out_path) << render_nationality_series(
            entries, format == "json" ? SeriesFormat::kJson : SeriesFormat::kCsv);
      }
    } else if (*synth_cmd) {
      synth_cfg.nationality_palette = detail::parse_palette(palette);
      const auto cohort = synth::gen_cohort(synth_cfg);
      const auto trials = synth::gen_trials(cohort, n_target, n_nontarget, same_group_only,
                                            mix_seed(synth_cfg.seed, 1));
      const std::filesystem::path dir(out_dir);
      write_metadata(staged.file(dir / "metadata.csv"), cohort.metadata);
      write_trials(staged.file(dir / "trials.txt"), trials);
      write_embeddings(staged.file(dir / "features.txt"), cohort.features);
    } else if (*train) {
      loss_cfg.kind = *lab::parse_loss_kind(loss_name);
      if (!triplet_margin_set) loss_cfg.triplet_margin = pipeline::default_loss_config(loss_cfg.kind).triplet_margin;
      train_opt.learning_rate = lr.value_or(pipeline::default_learning_rate(loss_cfg.kind));
      auto ff = detail::open_input(features_path);
      const EmbeddingTable features = parse_embeddings(ff);
      const auto rule = detail::load_rule(utt2spk);
      const auto data = pipeline::make_dataset(features, Cohort{}, rule);
      const auto result = lab::train_toy(data, loss_cfg, train_opt);
      write_embeddings(staged.file(emb_out), pipeline::embed(result.params, features, features.ids()));
      std::ostream& hist = staged.target(history_path);
      for (std::size_t e = 0; e < result.loss_history.size(); ++e) {
        hist << e + 1 << ' ' << text::format_real(result.loss_history[e]) << '\n';
      }
    } else if (*demo) {
      demo_cfg.cohort.seed = demo_cfg.seed;
      const auto result = pipeline::run_demo(demo_cfg);
      const GridFormat fmt = demo_format == "csv"    ? GridFormat::kCsv
                             : demo_format == "json" ? GridFormat::kJson
                                                     : GridFormat::kMarkdown;
      std::ostream& o = staged.stdout_stream();
      o << render_grid(result.grid, fmt);
      if (fmt == GridFormat::kMarkdown) {
        o << "\n| Loss | Held-out EER | First-epoch loss | Final-epoch loss |\n|---|---:|---:|---:|\n";
        for (const auto& run : result.runs) {
          o << "| " << lab::to_string(run.kind) << " | " << detail::format_fixed(run.eer.eer, 4) << " | "
            << detail::format_fixed(run.loss_history.front(), 6) << " | "
            << detail::format_fixed(run.loss_history.back(), 6) << " |\n";
        }
      }
      if (!out_dir.empty()) {
        const std::filesystem::path dir(out_dir);
        staged.file(dir / "grid.json") << render_grid(result.grid, GridFormat::kJson);
        std::ostream& eers = staged.file(dir / "eer.csv");
        eers << "loss,eer,threshold\n";
        for (const auto& run : result.runs) {
          eers << lab::to_string(run.kind) << ',' << text::format_real(run.eer.eer) << ','
               << text::format_real(run.eer.threshold) << '\n';
          std::ostream& h = staged.file(dir / ("history_" + std::string(lab::to_string(run.kind)) + ".txt"));
          for (std::size_t e = 0; e < run.loss_history.size(); ++e) {
            h << e + 1 << ' ' << text::format_real(run.loss_history[e]) << '\n';
          }
        }
      }
    }
    staged.commit(out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\nfix: " << e.fix() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace svfair::cli
