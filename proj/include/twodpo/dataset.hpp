#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace twodpo {

// Aspect order is fixed: weights, matrix columns and prompts all index by it.
enum class Aspect : std::size_t {
  Helpfulness = 0,
  Correctness = 1,
  Safety = 2,
  Completeness = 3,
  Clarity = 4,
};

inline constexpr std::size_t kNumAspects = 5;
inline constexpr std::array<Aspect, kNumAspects> kAllAspects = {
    Aspect::Helpfulness, Aspect::Correctness, Aspect::Safety,
    Aspect::Completeness, Aspect::Clarity};
inline constexpr int kMaxLikert = 4;

constexpr std::size_t index_of(Aspect a) noexcept { return static_cast<std::size_t>(a); }
std::string_view aspect_name(Aspect a) noexcept;
std::optional<Aspect> aspect_from_name(std::string_view name) noexcept;

// Likert points per aspect, 0..4; Safety is binary {0, 4}.
using AspectVector = std::array<int, kNumAspects>;

bool is_valid_score(Aspect a, int score) noexcept;

// Half-open token range [start, start + length).
struct TokenSpan {
  std::size_t start = 0;
  std::size_t length = 0;

  std::size_t end() const noexcept { return start + length; }
  bool operator==(const TokenSpan&) const = default;
};

// `sep` holds the bytes between this segment and the next one, so that
// concatenating text + sep over all segments reproduces the response exactly.
struct Segment {
  std::string text;
  std::string sep;
  std::optional<TokenSpan> token_span;

  bool operator==(const Segment&) const = default;
};

struct ScoreMatrix {
  std::vector<AspectVector> rows;

  std::size_t segments() const noexcept { return rows.size(); }
  std::vector<int> column(Aspect a) const;
  bool operator==(const ScoreMatrix&) const = default;
};

struct AnnotatedResponse {
  std::vector<Segment> segments;
  ScoreMatrix scores;
  nlohmann::json extra = nlohmann::json::object();

  std::string text() const;
  bool operator==(const AnnotatedResponse&) const = default;
};

struct Utterance {
  std::string role;  // "user" | "assistant"
  std::string content;

  bool operator==(const Utterance&) const = default;
};

struct PreferencePair {
  std::string id;
  std::vector<Utterance> history;
  AnnotatedResponse chosen;
  AnnotatedResponse rejected;
  // Annotation provenance (annotator, repairs); absent for hand-made records.
  std::optional<nlohmann::json> provenance;
  // Unknown top-level fields, carried through serialization untouched.
  nlohmann::json extra = nlohmann::json::object();

  bool operator==(const PreferencePair&) const = default;
};

// Violation codes reported by validate_pair.
namespace violation {
inline constexpr std::string_view kEmptyId = "EMPTY_ID";
inline constexpr std::string_view kDuplicateId = "DUPLICATE_ID";
inline constexpr std::string_view kBadRole = "BAD_ROLE";
inline constexpr std::string_view kEmptyResponse = "EMPTY_RESPONSE";
inline constexpr std::string_view kSegmentCountMismatch = "SEGMENT_COUNT_MISMATCH";
inline constexpr std::string_view kEmptySegment = "EMPTY_SEGMENT";
inline constexpr std::string_view kScoreRange = "SCORE_RANGE";
inline constexpr std::string_view kSafetyBinary = "SAFETY_BINARY";
inline constexpr std::string_view kCompletenessDecreasing = "COMPLETENESS_DECREASING";
}  // namespace violation

struct Violation {
  std::string code;
  std::string message;
  std::string location;  // e.g. "chosen.scores[1][4]"

  bool operator==(const Violation&) const = default;
};

struct ValidationReport {
  std::string record_id;
  std::vector<Violation> violations;

  bool accepted() const noexcept { return violations.empty(); }
};

/// Structural parse of one dataset line. Throws Error(MalformedRecord) on bad
/// syntax and Error(SchemaViolation) on missing or mistyped fields. Value
/// invariants are not checked. Unknown fields are kept in `extra`; a note for
/// each is appended to `warnings` when given.
PreferencePair parse_record_unchecked(std::string_view line,
                                      std::vector<std::string>* warnings = nullptr);

/// parse_record_unchecked followed by validate_pair; any violation raises
/// Error(InvariantViolation) carrying the first violation.
PreferencePair parse_record(std::string_view line,
                            std::vector<std::string>* warnings = nullptr);

nlohmann::json to_json(const PreferencePair& pair);
/// Single line, no trailing newline.
std::string serialize_record(const PreferencePair& pair);

/// Every violated invariant, in a fixed order: record-level, then chosen, then
/// rejected; inside a response, structure before per-cell checks.
ValidationReport validate_pair(const PreferencePair& pair);

/// Per-record reports plus DUPLICATE_ID for repeated ids (reported on the
/// later occurrence).
std::vector<ValidationReport> validate_dataset(const std::vector<PreferencePair>& pairs);

std::vector<PreferencePair> read_dataset(std::istream& in, bool checked = true,
                                         std::vector<std::string>* warnings = nullptr);
std::vector<PreferencePair> load_dataset(const std::string& path, bool checked = true,
                                         std::vector<std::string>* warnings = nullptr);
void write_dataset(std::ostream& out, const std::vector<PreferencePair>& pairs);
void save_dataset(const std::string& path, const std::vector<PreferencePair>& pairs);

enum class Side : std::size_t { Chosen = 0, Rejected = 1 };
std::string_view side_name(Side s) noexcept;

// Histogram[side][aspect][score].
using ScoreHistogram = std::array<std::array<std::array<std::size_t, kMaxLikert + 1>, kNumAspects>, 2>;

struct DistributionStats {
  ScoreHistogram segment_scores{};
  ScoreHistogram response_min{};
  ScoreHistogram response_max{};
  std::array<std::size_t, 2> segments{};
  std::array<std::size_t, 2> responses{};
  std::size_t pairs = 0;

  void add(const PreferencePair& pair);
  // Associative and commutative.
  void merge(const DistributionStats& other);
  bool operator==(const DistributionStats&) const = default;
};

/// Throws Error(EmptyDataset) for an empty input.
DistributionStats dataset_stats(const std::vector<PreferencePair>& pairs);

/// CSV with header kind,side,aspect,score,count; kind is segment|min|max.
std::string stats_to_csv(const DistributionStats& stats);
nlohmann::json stats_to_json(const DistributionStats& stats);

}  // namespace twodpo
