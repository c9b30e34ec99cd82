#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>

#include "svfair/error.hpp"

namespace svfair {

enum class Gender { kFemale, kMale, kUnknown };

inline std::string_view to_string(Gender g) {
  switch (g) {
    case Gender::kFemale: return "female";
    case Gender::kMale: return "male";
    case Gender::kUnknown: return "unknown";
  }
  return "unknown";
}

/// Nationality sentinel for speakers whose country is not recorded.
inline constexpr std::string_view kUnknownNationality = "UNK";

struct SpeakerMeta {
  std::string speaker_id;
  Gender gender = Gender::kUnknown;
  std::string nationality{kUnknownNationality};
  std::optional<std::uint64_t> utterance_count;

  friend bool operator==(const SpeakerMeta&, const SpeakerMeta&) = default;
};

/// Speaker metadata keyed by speaker id. Ordered so iteration (and anything
/// serialized from it) is deterministic.
using Cohort = std::map<std::string, SpeakerMeta, std::less<>>;

/// Ground truth Y of a trial.
enum class Label : int { kDifferent = 0, kSame = 1 };

struct Trial {
  std::string enroll_utt;
  std::string test_utt;
  Label label = Label::kDifferent;

  friend bool operator==(const Trial&, const Trial&) = default;
};

struct ScoredTrial {
  Trial trial;
  double score = 0.0;  // similarity: higher means more likely the same speaker

  friend bool operator==(const ScoredTrial&, const ScoredTrial&) = default;
};

enum class Decision : int { kNegative = 0, kPositive = 1 };

enum class SchemeKind { kBinary, kOneVsRest };
enum class Attribute { kGender, kNationality };
enum class AssignmentPolicy { kByEnrollmentSpeaker, kBothSpeakersRequired };

struct GroupScheme {
  SchemeKind kind = SchemeKind::kBinary;
  Attribute attribute = Attribute::kGender;
  std::string protected_value = "female";
  AssignmentPolicy policy = AssignmentPolicy::kByEnrollmentSpeaker;

  static GroupScheme gender(Gender protected_gender,
                            AssignmentPolicy policy = AssignmentPolicy::kByEnrollmentSpeaker) {
    return {SchemeKind::kBinary, Attribute::kGender, std::string(to_string(protected_gender)),
            policy};
  }

  static GroupScheme nationality(std::string code,
                                 AssignmentPolicy policy = AssignmentPolicy::kByEnrollmentSpeaker) {
    return {SchemeKind::kOneVsRest, Attribute::kNationality, std::move(code), policy};
  }

  friend bool operator==(const GroupScheme&, const GroupScheme&) = default;
};

enum class GroupAssignment { kProtected, kUnprotected, kExcluded };

/// Maps an utterance id to its speaker id. Without an explicit map the
/// speaker is the path segment before the first '/', or the whole id when it
/// contains no '/'. An explicit map takes precedence; utterances absent from
/// it fall back to the prefix rule.
class UtteranceSpeakerRule {
 public:
  UtteranceSpeakerRule() = default;
  explicit UtteranceSpeakerRule(std::unordered_map<std::string, std::string> explicit_map)
      : map_(std::move(explicit_map)) {}

  std::string speaker_of(std::string_view utterance_id) const {
    if (!map_.empty()) {
      if (auto it = map_.find(std::string(utterance_id)); it != map_.end()) return it->second;
    }
    const auto slash = utterance_id.find('/');
    return std::string(slash == std::string_view::npos ? utterance_id
                                                       : utterance_id.substr(0, slash));
  }

  bool has_explicit_map() const { return !map_.empty(); }

 private:
  std::unordered_map<std::string, std::string> map_;
};

namespace detail {

inline void validate_scheme(const GroupScheme& scheme) {
  const std::string& v = scheme.protected_value;
  if (scheme.attribute == Attribute::kGender) {
    if (v != "female" && v != "male") {
      throw Error(ErrorKind::kInvalidScheme,
                  "'" + v + "' is not a legal gender value (expected female or male)");
    }
    return;
  }
  if (scheme.kind == SchemeKind::kBinary) {
    throw Error(ErrorKind::kInvalidScheme,
                "nationality has more than two values; use a one-vs-rest scheme");
  }
  if (v.empty() || v == kUnknownNationality) {
    throw Error(ErrorKind::kInvalidScheme,
                "'" + v + "' is not a legal nationality value");
  }
  for (char c : v) {
    if (c >= 'a' && c <= 'z') {
      throw Error(ErrorKind::kInvalidScheme,
                  "nationality '" + v + "' must be an uppercase country code");
    }
  }
}

// nullopt when the attribute is unknown for this speaker.
inline std::optional<bool> matches_protected(const SpeakerMeta& meta, const GroupScheme& scheme) {
  if (scheme.attribute == Attribute::kGender) {
    if (meta.gender == Gender::kUnknown) return std::nullopt;
    return to_string(meta.gender) == scheme.protected_value;
  }
  if (meta.nationality.empty() || meta.nationality == kUnknownNationality) return std::nullopt;
  return meta.nationality == scheme.protected_value;
}

inline const SpeakerMeta& lookup_speaker(const Cohort& cohort, const std::string& speaker_id) {
  auto it = cohort.find(speaker_id);
  if (it == cohort.end()) throw Error(ErrorKind::kUnknownSpeaker, speaker_id);
  return it->second;
}

}  // namespace detail

/// Decides whether a trial belongs to the protected group, the unprotected
/// group, or neither. Under kByEnrollmentSpeaker only the enrollment speaker
/// counts; under kBothSpeakersRequired the two speakers must agree. Speakers
/// whose attribute is unknown put the trial in kExcluded.
inline GroupAssignment assign_group(const Trial& trial, const GroupScheme& scheme,
                                    const Cohort& cohort,
                                    const UtteranceSpeakerRule& rule = {}) {
  detail::validate_scheme(scheme);
  const SpeakerMeta& enroll = detail::lookup_speaker(cohort, rule.speaker_of(trial.enroll_utt));
  const SpeakerMeta& test = detail::lookup_speaker(cohort, rule.speaker_of(trial.test_utt));

  const auto enroll_match = detail::matches_protected(enroll, scheme);
  if (scheme.policy == AssignmentPolicy::kByEnrollmentSpeaker) {
    if (!enroll_match) return GroupAssignment::kExcluded;
    return *enroll_match ? GroupAssignment::kProtected : GroupAssignment::kUnprotected;
  }
  const auto test_match = detail::matches_protected(test, scheme);
  if (!enroll_match || !test_match) return GroupAssignment::kExcluded;
  if (*enroll_match && *test_match) return GroupAssignment::kProtected;
  if (!*enroll_match && !*test_match) return GroupAssignment::kUnprotected;
  return GroupAssignment::kExcluded;
}

}  // namespace svfair
