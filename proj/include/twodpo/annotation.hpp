#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "twodpo/dataset.hpp"

namespace twodpo {

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

/// One template per aspect. Each template must contain {history},
/// {response1} and {response2} exactly once.
class PromptTemplates {
 public:
  /// The five built-in annotation prompts (also shipped under prompts/).
  static PromptTemplates defaults();
  /// Reads <dir>/{helpfulness,correctness,safety,completeness,clarity}.txt.
  /// Missing files are left unset.
  static PromptTemplates load_directory(const std::string& dir);

  /// Throws Error(InvalidArgument) if the placeholders are wrong.
  void set(Aspect aspect, std::string text);
  bool has(Aspect aspect) const noexcept { return templates_[index_of(aspect)].has_value(); }
  /// Throws Error(MissingTemplate).
  const std::string& get(Aspect aspect) const;

 private:
  std::array<std::optional<std::string>, kNumAspects> templates_;
};

std::string_view template_file_stem(Aspect aspect) noexcept;

/// Ratings the scale of `aspect` allows: {0,4} for Safety, 0..4 otherwise.
std::vector<int> allowed_ratings(Aspect aspect);

/// "<1>first</1>\n<2>second</2>" with 1-based ids.
std::string render_segments(const std::vector<Segment>& segments);
/// One "role: content" line per utterance; empty history renders empty.
std::string render_history(const std::vector<Utterance>& history);

std::string render_prompt(const PromptTemplates& templates, Aspect aspect,
                          const std::vector<Utterance>& history,
                          const std::vector<Segment>& response1,
                          const std::vector<Segment>& response2);

// ---------------------------------------------------------------------------
// Reply parsing
// ---------------------------------------------------------------------------

struct AnnotationColumns {
  std::vector<int> response1;
  std::vector<int> response2;
};

/// Extracts one rating per segment id from the "Response 1 Evaluation" and
/// "Response 2 Evaluation" sections. Within a `<k>` block the last
/// "Rating: n" wins. Errors: ParseFailure (missing section, block without a
/// rating, ids not 1..S), CountMismatch (wrong number of blocks),
/// ScaleViolation (rating outside the aspect's scale).
AnnotationColumns parse_annotation(std::string_view reply, std::size_t expected1,
                                   std::size_t expected2, Aspect aspect);

// ---------------------------------------------------------------------------
// Judge clients
// ---------------------------------------------------------------------------

struct JudgeConfig {
  std::string endpoint;  // e.g. http://localhost:8000/v1/chat/completions
  std::string model;
  std::chrono::milliseconds timeout{60000};
  std::size_t max_in_flight = 5;
  std::size_t retry_budget = 2;
  // Name of the environment variable holding the API key.
  std::string api_key_env = "TWODPO_JUDGE_API_KEY";
};

/// Transport-agnostic judge. complete() returns the reply text or throws
/// Error(JudgeUnavailable). Implementations must tolerate concurrent calls.
class JudgeClient {
 public:
  explicit JudgeClient(JudgeConfig config) : config_(std::move(config)) {}
  virtual ~JudgeClient() = default;

  virtual std::string complete(const std::string& prompt) = 0;
  const JudgeConfig& config() const noexcept { return config_; }

 private:
  JudgeConfig config_;
};

/// Deterministic offline judge. The reply is a pure function of the prompt
/// text and the seed: it recognizes the aspect from the template, counts the
/// tagged segments of both responses and asks `script` for ratings. Without a
/// script, ratings are hashed from (prompt, seed) and kept on the aspect's
/// scale, with Completeness non-decreasing.
class MockJudge : public JudgeClient {
 public:
  // (aspect, response number 1|2, segment count) -> ratings
  using Script = std::function<std::vector<int>(Aspect, int, std::size_t)>;

  explicit MockJudge(std::uint64_t seed = 0, Script script = {},
                     PromptTemplates templates = PromptTemplates::defaults(),
                     JudgeConfig config = {{}, "mock", std::chrono::milliseconds(0), 5, 2, ""});

  std::string complete(const std::string& prompt) override;

  static std::string format_reply(Aspect aspect, const std::vector<int>& ratings1,
                                  const std::vector<int>& ratings2);

 private:
  std::uint64_t seed_;
  Script script_;
  PromptTemplates templates_;
};

/// OpenAI-compatible chat-completions client over HTTP(S). The API key is
/// read from the environment variable named in the config, never from files.
class HttpJudge : public JudgeClient {
 public:
  explicit HttpJudge(JudgeConfig config);
  std::string complete(const std::string& prompt) override;
};

// ---------------------------------------------------------------------------
// Annotation
// ---------------------------------------------------------------------------

struct AnnotationOptions {
  PromptTemplates templates = PromptTemplates::defaults();
  // Running-maximum repair of a decreasing Completeness column (flagged in
  // provenance); when false such replies are rejected.
  bool repair_completeness = true;
};

struct AnnotationTranscript {
  std::string pair_id;
  // Every reply received, per aspect, in attempt order.
  std::array<std::vector<std::string>, kNumAspects> replies;
  std::array<AnnotationColumns, kNumAspects> columns;
  std::size_t dispatches = 0;

  nlohmann::json to_json() const;
};

struct AnnotationResult {
  PreferencePair pair;
  AnnotationTranscript transcript;
};

/// Five prompts (one per aspect), each re-asked up to retry_budget times when
/// the reply is unparseable; transport failures are retried on the same
/// budget. Errors: JudgeUnavailable, ExhaustedRetries, InvariantViolation.
AnnotationResult annotate_pair(const std::string& id, const std::vector<Utterance>& history,
                               const std::vector<Segment>& chosen,
                               const std::vector<Segment>& rejected, JudgeClient& client,
                               const AnnotationOptions& options = {});

/// Un-scored input record: responses carry either raw "text" or "segments".
struct UnscoredPair {
  std::string id;
  std::vector<Utterance> history;
  std::vector<Segment> chosen;
  std::vector<Segment> rejected;
  nlohmann::json extra = nlohmann::json::object();
};

/// Segments raw-text responses with the default segmenter.
UnscoredPair parse_unscored_record(std::string_view line);

// ---------------------------------------------------------------------------
// Human consistency audit
// ---------------------------------------------------------------------------

enum class Vote { Correct, Incorrect };

inline constexpr std::size_t kVotersPerItem = 5;

/// An item is incorrect when at least three of its five voters say so.
bool item_incorrect(const std::vector<Vote>& votes);
/// Fraction of items judged correct. Errors: WrongVoterCount, EmptyDataset.
double majority_vote_accuracy(const std::vector<std::vector<Vote>>& items);

}  // namespace twodpo
