#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "svfair/core_model.hpp"
#include "svfair/error.hpp"

namespace svfair {

/// Utterance embeddings. Insertion order is kept so writing a table back out
/// reproduces the input order.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }

  /// Adds an entry. Throws DimensionMismatch, NonFiniteValue, ZeroNormVector
  /// or DuplicateUtterance when the table invariants would break.
  void add(std::string utterance_id, std::vector<double> vec) {
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_ || dim_ == 0) {
      throw Error(ErrorKind::kDimensionMismatch, "expected " + std::to_string(dim_) +
                                                     " components, found " +
                                                     std::to_string(vec.size()));
    }
    double norm_sq = 0.0;
    for (double v : vec) {
      if (!std::isfinite(v)) throw Error(ErrorKind::kNonFiniteValue, utterance_id);
      norm_sq += v * v;
    }
    if (!(norm_sq > 0.0)) throw Error(ErrorKind::kZeroNormVector, utterance_id);
    if (index_.contains(utterance_id)) throw Error(ErrorKind::kDuplicateUtterance, utterance_id);
    index_.emplace(utterance_id, ids_.size());
    ids_.push_back(std::move(utterance_id));
    vectors_.push_back(std::move(vec));
  }

  /// nullptr when the utterance is absent.
  const std::vector<double>* find(std::string_view utterance_id) const {
    auto it = index_.find(std::string(utterance_id));
    return it == index_.end() ? nullptr : &vectors_[it->second];
  }

  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<double>& vector_at(std::size_t i) const { return vectors_[i]; }

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.vectors_ == b.vectors_;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<std::vector<double>> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class ScorePolarity { kSimilarity, kDistance };

namespace text {

inline std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    if (i >= s.size()) break;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string_view> split_on(std::string_view s, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string to_upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

/// Finite real in plain or scientific notation; nullopt otherwise.
inline std::optional<double> parse_real(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

/// Shortest representation that parses back to the same double.
inline std::string format_real(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "1") return Label::kSame;
  if (s == "0") return Label::kDifferent;
  return std::nullopt;
}

[[noreturn]] inline void malformed(std::size_t line_no, std::string_view line,
                                   std::string_view why) {
  throw Error(ErrorKind::kMalformedRow, std::string(why) + " in '" + std::string(line) + "'",
              line_no);
}

}  // namespace text

/// Reads a comma- or tab-separated speaker table. The header must name the
/// columns id, gender and nationality (case-insensitive, any order); extra
/// columns are ignored. The delimiter is a tab if the header contains one,
/// otherwise a comma.
inline Cohort parse_metadata(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::string_view header;
  while (std::getline(in, line)) {
    ++line_no;
    header = text::trim(line);
    if (!header.empty()) break;
  }
  if (header.empty()) throw Error(ErrorKind::kMalformedRow, "missing header row", line_no);

  const char delim = header.find('\t') != std::string_view::npos ? '\t' : ',';
  int col_id = -1, col_gender = -1, col_nat = -1, col_count = -1;
  const auto columns = text::split_on(header, delim);
  for (std::size_t i = 0; i < columns.size(); ++i) {
    const std::string name = text::to_lower(text::trim(columns[i]));
    if (name == "id" || name == "speaker_id" || name == "voxceleb1 id") col_id = static_cast<int>(i);
    else if (name == "gender") col_gender = static_cast<int>(i);
    else if (name == "nationality") col_nat = static_cast<int>(i);
    else if (name == "utterance_count") col_count = static_cast<int>(i);
  }
  if (col_id < 0 || col_gender < 0 || col_nat < 0) {
    text::malformed(line_no, header, "header must name id, gender and nationality columns");
  }
  const std::size_t needed =
      static_cast<std::size_t>(std::max({col_id, col_gender, col_nat, col_count})) + 1;

  Cohort cohort;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = text::strip_cr(line);
    if (text::trim(row).empty()) continue;
    const auto fields = text::split_on(row, delim);
    if (fields.size() < needed) text::malformed(line_no, row, "too few fields");

    SpeakerMeta meta;
    meta.speaker_id = std::string(text::trim(fields[col_id]));
    if (meta.speaker_id.empty()) text::malformed(line_no, row, "empty speaker id");

    const std::string gender = text::to_lower(text::trim(fields[col_gender]));
    if (gender == "f" || gender == "female") meta.gender = Gender::kFemale;
    else if (gender == "m" || gender == "male") meta.gender = Gender::kMale;
    else meta.gender = Gender::kUnknown;

    const std::string_view nat = text::trim(fields[col_nat]);
    meta.nationality = nat.empty() ? std::string(kUnknownNationality) : text::to_upper(nat);

    if (col_count >= 0) {
      const std::string_view count = text::trim(fields[col_count]);
      if (!count.empty()) {
        std::uint64_t n = 0;
        const auto [ptr, ec] = std::from_chars(count.data(), count.data() + count.size(), n);
        if (ec != std::errc{} || ptr != count.data() + count.size()) {
          text::malformed(line_no, row, "utterance_count is not a nonnegative integer");
        }
        meta.utterance_count = n;
      }
    }
    if (cohort.contains(meta.speaker_id)) {
      throw Error(ErrorKind::kDuplicateSpeaker, meta.speaker_id, line_no);
    }
    std::string key = meta.speaker_id;
    cohort.emplace(std::move(key), std::move(meta));
  }
  return cohort;
}

/// Reads `<0|1> <enroll_utt> <test_utt>` lines in file order.
inline std::vector<Trial> parse_trials(std::istream& in) {
  std::vector<Trial> trials;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = text::split_ws(line);
    if (fields.empty()) continue;
    if (fields.size() != 3) text::malformed(line_no, text::strip_cr(line), "expected 3 fields");
    const auto label = text::parse_label(fields[0]);
    if (!label) text::malformed(line_no, text::strip_cr(line), "label must be 0 or 1");
    trials.push_back({std::string(fields[1]), std::string(fields[2]), *label});
  }
  if (trials.empty()) throw Error(ErrorKind::kEmptyTrialList, "no trials in input");
  return trials;
}

/// Reads `<utterance_id> <speaker_id>` lines into an explicit mapping.
inline UtteranceSpeakerRule parse_utterance_map(std::istream& in) {
  std::unordered_map<std::string, std::string> map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = text::split_ws(line);
    if (fields.empty()) continue;
    if (fields.size() != 2) text::malformed(line_no, text::strip_cr(line), "expected 2 fields");
    map.insert_or_assign(std::string(fields[0]), std::string(fields[1]));
  }
  return UtteranceSpeakerRule(std::move(map));
}

/// Reads `<enroll_utt> <test_utt> <score> [<0|1>]` lines. Distance scores are
/// negated so that higher always means more likely the same speaker. When
/// `trials` is given, every pair must appear in it and the label comes from
/// the trial list; otherwise every line must carry its own label.
inline std::vector<ScoredTrial> parse_scores(std::istream& in, ScorePolarity polarity,
                                             const std::vector<Trial>* trials = nullptr) {
  std::unordered_map<std::string, Label> by_pair;
  if (trials) {
    for (const auto& t : *trials) by_pair.insert_or_assign(t.enroll_utt + '\n' + t.test_utt, t.label);
  }
  std::vector<ScoredTrial> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = text::split_ws(line);
    if (fields.empty()) continue;
    const std::string_view row = text::strip_cr(line);
    if (fields.size() != 3 && fields.size() != 4) text::malformed(line_no, row, "expected 3 or 4 fields");
    const auto score = text::parse_real(fields[2]);
    if (!score) text::malformed(line_no, row, "score is not a finite real");

    ScoredTrial st;
    st.trial.enroll_utt = std::string(fields[0]);
    st.trial.test_utt = std::string(fields[1]);
    st.score = polarity == ScorePolarity::kDistance ? -*score : *score;

    std::optional<Label> label;
    if (fields.size() == 4) {
      label = text::parse_label(fields[3]);
      if (!label) text::malformed(line_no, row, "label must be 0 or 1");
    }
    if (trials) {
      auto it = by_pair.find(st.trial.enroll_utt + '\n' + st.trial.test_utt);
      if (it == by_pair.end()) {
        throw Error(ErrorKind::kUnmatchedTrial,
                    st.trial.enroll_utt + " " + st.trial.test_utt + " is not in the trial list",
                    line_no);
      }
      if (label && *label != it->second) {
        text::malformed(line_no, row, "label disagrees with the trial list");
      }
      label = it->second;
    }
    if (!label) text::malformed(line_no, row, "missing label and no trial list to join");
    st.trial.label = *label;
    out.push_back(std::move(st));
  }
  return out;
}

/// Reads `<utterance_id> <v1> ... <vd>` lines; every line must share d.
inline EmbeddingTable parse_embeddings(std::istream& in) {
  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> vec;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = text::split_ws(line);
    if (fields.empty()) continue;
    const std::string_view row = text::strip_cr(line);
    if (fields.size() < 2) text::malformed(line_no, row, "expected an id and at least one component");
    const std::size_t found = fields.size() - 1;
    if (!table.empty() && found != table.dim()) {
      throw Error(ErrorKind::kDimensionMismatch,
                  "expected " + std::to_string(table.dim()) + ", found " + std::to_string(found),
                  line_no);
    }
    vec.assign(found, 0.0);
    for (std::size_t i = 0; i < found; ++i) {
      const auto v = text::parse_real(fields[i + 1]);
      if (!v) text::malformed(line_no, row, "component " + std::to_string(i + 1) + " is not a finite real");
      vec[i] = *v;
    }
    try {
      table.add(std::string(fields[0]), vec);
    } catch (const Error& e) {
      throw Error(e.kind(), std::string(fields[0]), line_no);
    }
  }
  return table;
}

inline void write_metadata(std::ostream& out, const Cohort& cohort) {
  const bool with_count = std::any_of(cohort.begin(), cohort.end(), [](const auto& kv) {
    return kv.second.utterance_count.has_value();
  });
  out << "id,gender,nationality" << (with_count ? ",utterance_count" : "") << '\n';
  for (const auto& [id, meta] : cohort) {
    out << id << ',' << to_string(meta.gender) << ',' << meta.nationality;
    if (with_count) {
      out << ',';
      if (meta.utterance_count) out << *meta.utterance_count;
    }
    out << '\n';
  }
}

inline void write_trials(std::ostream& out, std::span<const Trial> trials) {
  for (const auto& t : trials) {
    out << static_cast<int>(t.label) << ' ' << t.enroll_utt << ' ' << t.test_utt << '\n';
  }
}

/// Writes similarity scores with their labels, shortest round-trip format.
inline void write_scores(std::ostream& out, std::span<const ScoredTrial> scored) {
  for (const auto& s : scored) {
    out << s.trial.enroll_utt << ' ' << s.trial.test_utt << ' ' << text::format_real(s.score)
        << ' ' << static_cast<int>(s.trial.label) << '\n';
  }
}

inline void write_embeddings(std::ostream& out, const EmbeddingTable& table) {
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.ids()[i];
    for (double v : table.vector_at(i)) out << ' ' << text::format_real(v);
    out << '\n';
  }
}

}  // namespace svfair
