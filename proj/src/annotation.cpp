#include "twodpo/annotation.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <exception>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "twodpo/error.hpp"
#include "twodpo/segmenter.hpp"

namespace twodpo {

using nlohmann::json;

namespace {

constexpr std::array<const char*, kNumAspects> kDefaultTemplates = {
#include "twodpo_prompts.inc"
};

constexpr std::array<std::string_view, kNumAspects> kFileStems = {
    "helpfulness", "correctness", "safety", "completeness", "clarity"};

constexpr std::array<std::string_view, kNumAspects> kRatingLabels = {
    "Helpfulness", "Correctness", "Safety", "Completeness", "Clarity"};

constexpr std::string_view kHistory = "{history}";
constexpr std::string_view kResponse1 = "{response1}";
constexpr std::string_view kResponse2 = "{response2}";

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t p = hay.find(needle); p != std::string_view::npos;
       p = hay.find(needle, p + needle.size()))
    ++n;
  return n;
}

void replace_once(std::string& s, std::string_view key, const std::string& value) {
  const std::size_t p = s.find(key);
  if (p != std::string::npos) s.replace(p, key.size(), value);
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Number of distinct closing tags </k> in a rendered response.
std::size_t count_segment_tags(std::string_view s) {
  std::set<long> ids;
  for (std::size_t p = s.find("</"); p != std::string_view::npos; p = s.find("</", p + 2)) {
    std::size_t q = p + 2;
    long v = 0;
    bool digits = false;
    while (q < s.size() && std::isdigit(static_cast<unsigned char>(s[q]))) {
      v = v * 10 + (s[q] - '0');
      digits = true;
      ++q;
    }
    if (digits && q < s.size() && s[q] == '>') ids.insert(v);
  }
  return ids.size();
}

bool is_reply_error(ErrorCode c) {
  return c == ErrorCode::ParseFailure || c == ErrorCode::CountMismatch ||
         c == ErrorCode::ScaleViolation;
}

std::vector<int> parse_section(std::string_view section, std::size_t expected, Aspect aspect,
                               int response) {
  const std::string who = "Response " + std::to_string(response);
  struct Block {
    long id;
    std::size_t begin;
  };
  std::vector<Block> blocks;
  for (std::size_t p = section.find('<'); p != std::string_view::npos; p = section.find('<', p + 1)) {
    std::size_t q = p + 1;
    long v = 0;
    bool digits = false;
    while (q < section.size() && std::isdigit(static_cast<unsigned char>(section[q]))) {
      v = v * 10 + (section[q] - '0');
      digits = true;
      ++q;
    }
    if (digits && q < section.size() && section[q] == '>') blocks.push_back({v, q + 1});
  }
  if (blocks.size() != expected) {
    fail(ErrorCode::CountMismatch, who + ": expected " + std::to_string(expected) +
                                       " rated segments, found " + std::to_string(blocks.size()));
  }
  std::vector<int> ratings(expected, -1);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::size_t end = b + 1 < blocks.size() ? blocks[b + 1].begin : section.size();
    std::string_view body = section.substr(blocks[b].begin, end - blocks[b].begin);
    const long id = blocks[b].id;
    if (id < 1 || static_cast<std::size_t>(id) > expected || ratings[id - 1] != -1) {
      fail(ErrorCode::ParseFailure, who + ": unexpected segment id <" + std::to_string(id) + ">");
    }
    const std::size_t r = body.rfind("Rating:");
    if (r == std::string_view::npos) {
      fail(ErrorCode::ParseFailure, who + ": segment <" + std::to_string(id) + "> has no rating");
    }
    std::size_t q = r + 7;
    while (q < body.size() && (body[q] == ' ' || body[q] == '\t')) ++q;
    bool neg = false;
    if (q < body.size() && body[q] == '-') {
      neg = true;
      ++q;
    }
    if (q >= body.size() || !std::isdigit(static_cast<unsigned char>(body[q]))) {
      fail(ErrorCode::ParseFailure,
           who + ": segment <" + std::to_string(id) + "> rating is not an integer");
    }
    long v = 0;
    while (q < body.size() && std::isdigit(static_cast<unsigned char>(body[q])) && v < 1000)
      v = v * 10 + (body[q++] - '0');
    if (neg) v = -v;
    if (!is_valid_score(aspect, static_cast<int>(v))) {
      fail(ErrorCode::ScaleViolation, who + ": " + std::string(aspect_name(aspect)) + " rating " +
                                          std::to_string(v) + " is not on the scale");
    }
    ratings[id - 1] = static_cast<int>(v);
  }
  return ratings;
}

std::vector<int> running_max(std::vector<int> v) {
  for (std::size_t i = 1; i < v.size(); ++i) v[i] = std::max(v[i], v[i - 1]);
  return v;
}

std::vector<Segment> parse_unscored_response(const json& j, const std::string& where) {
  if (!j.is_object()) fail(ErrorCode::SchemaViolation, where + ": expected object");
  if (auto it = j.find("segments"); it != j.end()) {
    if (!it->is_array()) fail(ErrorCode::SchemaViolation, where + ".segments: expected array");
    std::vector<Segment> segs;
    for (const auto& s : *it) {
      if (!s.is_object() || !s.contains("text") || !s["text"].is_string())
        fail(ErrorCode::SchemaViolation, where + ".segments: expected {text, sep}");
      segs.push_back({s["text"].get<std::string>(), s.value("sep", std::string()), std::nullopt});
    }
    return segs;
  }
  if (auto it = j.find("text"); it != j.end() && it->is_string())
    return segment_response(it->get<std::string>());
  fail(ErrorCode::SchemaViolation, where + ": needs 'text' or 'segments'");
}

}  // namespace

// ---------------------------------------------------------------------------

PromptTemplates PromptTemplates::defaults() {
  PromptTemplates t;
  for (Aspect a : kAllAspects) t.set(a, kDefaultTemplates[index_of(a)]);
  return t;
}

PromptTemplates PromptTemplates::load_directory(const std::string& dir) {
  PromptTemplates t;
  for (Aspect a : kAllAspects) {
    std::ifstream in(dir + "/" + std::string(kFileStems[index_of(a)]) + ".txt");
    if (!in) continue;
    std::stringstream ss;
    ss << in.rdbuf();
    t.set(a, ss.str());
  }
  return t;
}

void PromptTemplates::set(Aspect aspect, std::string text) {
  for (auto key : {kHistory, kResponse1, kResponse2}) {
    if (count_occurrences(text, key) != 1) {
      fail(ErrorCode::InvalidArgument, std::string(aspect_name(aspect)) + " template must contain " +
                                           std::string(key) + " exactly once");
    }
  }
  if (!(text.find(kHistory) < text.find(kResponse1) && text.find(kResponse1) < text.find(kResponse2)))
    fail(ErrorCode::InvalidArgument, "placeholders must appear as {history}, {response1}, {response2}");
  templates_[index_of(aspect)] = std::move(text);
}

const std::string& PromptTemplates::get(Aspect aspect) const {
  const auto& t = templates_[index_of(aspect)];
  if (!t) fail(ErrorCode::MissingTemplate, "no template for " + std::string(aspect_name(aspect)));
  return *t;
}

std::string_view template_file_stem(Aspect aspect) noexcept { return kFileStems[index_of(aspect)]; }

std::vector<int> allowed_ratings(Aspect aspect) {
  if (aspect == Aspect::Safety) return {0, kMaxLikert};
  return {0, 1, 2, 3, 4};
}

std::string render_segments(const std::vector<Segment>& segments) {
  std::string out;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const std::string id = std::to_string(k + 1);
    if (k) out += '\n';
    out += "<" + id + ">" + segments[k].text + "</" + id + ">";
  }
  return out;
}

std::string render_history(const std::vector<Utterance>& history) {
  std::string out;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i) out += '\n';
    out += history[i].role + ": " + history[i].content;
  }
  return out;
}

std::string render_prompt(const PromptTemplates& templates, Aspect aspect,
                          const std::vector<Utterance>& history,
                          const std::vector<Segment>& response1,
                          const std::vector<Segment>& response2) {
  std::string out = templates.get(aspect);
  // Later placeholders first so substituted text is never rescanned.
  replace_once(out, kResponse2, render_segments(response2));
  replace_once(out, kResponse1, render_segments(response1));
  replace_once(out, kHistory, render_history(history));
  return out;
}

AnnotationColumns parse_annotation(std::string_view reply, std::size_t expected1,
                                   std::size_t expected2, Aspect aspect) {
  constexpr std::string_view kHead1 = "Response 1 Evaluation";
  constexpr std::string_view kHead2 = "Response 2 Evaluation";
  const std::size_t p1 = reply.find(kHead1);
  if (p1 == std::string_view::npos) fail(ErrorCode::ParseFailure, "missing 'Response 1 Evaluation'");
  const std::size_t p2 = reply.find(kHead2, p1 + kHead1.size());
  if (p2 == std::string_view::npos) fail(ErrorCode::ParseFailure, "missing 'Response 2 Evaluation'");
  AnnotationColumns cols;
  cols.response1 = parse_section(reply.substr(p1 + kHead1.size(), p2 - p1 - kHead1.size()),
                                 expected1, aspect, 1);
  cols.response2 = parse_section(reply.substr(p2 + kHead2.size()), expected2, aspect, 2);
  return cols;
}

// ---------------------------------------------------------------------------

MockJudge::MockJudge(std::uint64_t seed, Script script, PromptTemplates templates, JudgeConfig config)
    : JudgeClient(std::move(config)),
      seed_(seed),
      script_(std::move(script)),
      templates_(std::move(templates)) {}

std::string MockJudge::format_reply(Aspect aspect, const std::vector<int>& ratings1,
                                    const std::vector<int>& ratings2) {
  std::ostringstream os;
  const std::string_view label = kRatingLabels[index_of(aspect)];
  for (int r = 1; r <= 2; ++r) {
    const auto& ratings = r == 1 ? ratings1 : ratings2;
    os << "Response " << r << " Evaluation:\n";
    for (std::size_t k = 0; k < ratings.size(); ++k) {
      os << '<' << k + 1 << "> Evaluation: Scripted judgement.\n    " << label
         << " Rating: " << ratings[k] << '\n';
    }
  }
  return os.str();
}

std::string MockJudge::complete(const std::string& prompt) {
  std::optional<Aspect> aspect;
  std::string_view tmpl;
  for (Aspect a : kAllAspects) {
    if (!templates_.has(a)) continue;
    std::string_view t = templates_.get(a);
    if (prompt.compare(0, t.find(kHistory), t.substr(0, t.find(kHistory))) == 0) {
      aspect = a;
      tmpl = t;
      break;
    }
  }
  if (!aspect) fail(ErrorCode::JudgeUnavailable, "mock judge: prompt matches no template");

  // Locate the two rendered responses using the literal text around them.
  const std::size_t h = tmpl.find(kHistory), r1 = tmpl.find(kResponse1), r2 = tmpl.find(kResponse2);
  const std::string_view lead1 = tmpl.substr(h + kHistory.size(), r1 - h - kHistory.size());
  const std::string_view lead2 = tmpl.substr(r1 + kResponse1.size(), r2 - r1 - kResponse1.size());
  const std::string_view tail = tmpl.substr(r2 + kResponse2.size());
  std::string_view p(prompt);
  const std::size_t b1 = p.find(lead1, h);
  const std::size_t e1 = b1 == std::string_view::npos ? b1 : p.find(lead2, b1 + lead1.size());
  const std::size_t e2 = e1 == std::string_view::npos ? e1 : p.rfind(tail);
  if (e2 == std::string_view::npos || e2 < e1)
    fail(ErrorCode::JudgeUnavailable, "mock judge: cannot locate responses in prompt");
  const std::size_t n1 = count_segment_tags(p.substr(b1, e1 - b1));
  const std::size_t n2 = count_segment_tags(p.substr(e1, e2 - e1));

  auto ratings_for = [&](int response, std::size_t n) {
    if (script_) return script_(*aspect, response, n);
    std::vector<int> out(n);
    const std::uint64_t base = fnv1a(prompt) ^ splitmix(seed_ + static_cast<std::uint64_t>(response));
    for (std::size_t k = 0; k < n; ++k) {
      const std::uint64_t x = splitmix(base + k);
      out[k] = *aspect == Aspect::Safety ? ((x & 7u) == 0 ? 0 : kMaxLikert)
                                         : static_cast<int>(x % (kMaxLikert + 1));
    }
    if (*aspect == Aspect::Completeness) out = running_max(std::move(out));
    return out;
  };
  return format_reply(*aspect, ratings_for(1, n1), ratings_for(2, n2));
}

// ---------------------------------------------------------------------------

json AnnotationTranscript::to_json() const {
  json j;
  j["id"] = pair_id;
  j["dispatches"] = dispatches;
  json aspects = json::object();
  for (Aspect a : kAllAspects) {
    const std::size_t i = index_of(a);
    aspects[std::string(aspect_name(a))] = {{"replies", replies[i]},
                                            {"response1", columns[i].response1},
                                            {"response2", columns[i].response2}};
  }
  j["aspects"] = std::move(aspects);
  return j;
}

AnnotationResult annotate_pair(const std::string& id, const std::vector<Utterance>& history,
                               const std::vector<Segment>& chosen,
                               const std::vector<Segment>& rejected, JudgeClient& client,
                               const AnnotationOptions& options) {
  if (chosen.empty() || rejected.empty())
    fail(ErrorCode::InvalidArgument, id + ": both responses must be segmented");

  AnnotationResult result;
  result.transcript.pair_id = id;
  std::array<std::exception_ptr, kNumAspects> errors;
  std::atomic<std::size_t> dispatches{0};
  const JudgeConfig& cfg = client.config();

  // Prompts are rendered up front so template errors surface before dispatch.
  std::array<std::string, kNumAspects> prompts;
  for (Aspect a : kAllAspects)
    prompts[index_of(a)] = render_prompt(options.templates, a, history, chosen, rejected);

  auto run_aspect = [&](std::size_t i) {
    const Aspect aspect = kAllAspects[i];
    std::exception_ptr last_transport, last_reply;
    for (std::size_t attempt = 0; attempt <= cfg.retry_budget; ++attempt) {
      std::string reply;
      try {
        ++dispatches;
        reply = client.complete(prompts[i]);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::JudgeUnavailable) throw;
        last_transport = std::current_exception();
        continue;
      }
      result.transcript.replies[i].push_back(reply);
      try {
        result.transcript.columns[i] =
            parse_annotation(reply, chosen.size(), rejected.size(), aspect);
        return;
      } catch (const Error& e) {
        if (!is_reply_error(e.code())) throw;
        last_reply = std::current_exception();
      }
    }
    if (!last_reply) {
      try {
        std::rethrow_exception(last_transport);
      } catch (const Error& e) {
        fail(ErrorCode::JudgeUnavailable, id + ": " + std::string(aspect_name(aspect)) +
                                              " judge unavailable after " +
                                              std::to_string(cfg.retry_budget + 1) +
                                              " attempts: " + e.what());
      }
    }
    try {
      std::rethrow_exception(last_reply);
    } catch (const Error& e) {
      fail(ErrorCode::ExhaustedRetries, id + ": " + std::string(aspect_name(aspect)) +
                                            " reply unusable after " +
                                            std::to_string(cfg.retry_budget + 1) +
                                            " attempts: " + e.what());
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(cfg.max_in_flight, 1, kNumAspects);
  if (workers == 1) {
    for (std::size_t i = 0; i < kNumAspects; ++i) {
      try {
        run_aspect(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < kNumAspects; i = next++) {
          try {
            run_aspect(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  result.transcript.dispatches = dispatches.load();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  PreferencePair& pair = result.pair;
  pair.id = id;
  pair.history = history;
  pair.chosen.segments = chosen;
  pair.rejected.segments = rejected;
  pair.chosen.scores.rows.assign(chosen.size(), AspectVector{});
  pair.rejected.scores.rows.assign(rejected.size(), AspectVector{});
  json repairs = json::array();
  for (Aspect a : kAllAspects) {
    const std::size_t i = index_of(a);
    for (int side = 0; side < 2; ++side) {
      std::vector<int> col =
          side == 0 ? result.transcript.columns[i].response1 : result.transcript.columns[i].response2;
      if (a == Aspect::Completeness && options.repair_completeness) {
        std::vector<int> fixed = running_max(col);
        if (fixed != col) {
          repairs.push_back({{"response", side == 0 ? "chosen" : "rejected"},
                             {"aspect", aspect_name(a)},
                             {"original", col},
                             {"repaired", fixed}});
          col = std::move(fixed);
        }
      }
      auto& rows = side == 0 ? pair.chosen.scores.rows : pair.rejected.scores.rows;
      for (std::size_t k = 0; k < col.size(); ++k) rows[k][i] = col[k];
    }
  }
  pair.provenance = json{{"annotator", cfg.model},
                         {"prompting", "joint"},
                         {"repaired", !repairs.empty()},
                         {"repairs", repairs}};

  ValidationReport report = validate_pair(pair);
  if (!report.accepted()) {
    const Violation& v = report.violations.front();
    fail(ErrorCode::InvariantViolation, id + ": " + v.code + " at " + v.location + ": " + v.message);
  }
  return result;
}

UnscoredPair parse_unscored_record(std::string_view line) {
  json j;
  try {
    j = json::parse(line.begin(), line.end());
  } catch (const json::parse_error& e) {
    fail(ErrorCode::MalformedRecord, e.what());
  }
  if (!j.is_object()) fail(ErrorCode::MalformedRecord, "record is not a JSON object");
  UnscoredPair p;
  if (!j.contains("id") || !j["id"].is_string()) fail(ErrorCode::SchemaViolation, "record: missing 'id'");
  p.id = j["id"].get<std::string>();
  if (auto it = j.find("history"); it != j.end()) {
    if (!it->is_array()) fail(ErrorCode::SchemaViolation, p.id + ".history: expected array");
    for (const auto& u : *it) {
      if (!u.is_object() || !u.contains("role") || !u.contains("content"))
        fail(ErrorCode::SchemaViolation, p.id + ".history: expected {role, content}");
      p.history.push_back({u["role"].get<std::string>(), u["content"].get<std::string>()});
    }
  }
  if (!j.contains("chosen") || !j.contains("rejected"))
    fail(ErrorCode::SchemaViolation, p.id + ": missing chosen/rejected");
  p.chosen = parse_unscored_response(j["chosen"], p.id + ".chosen");
  p.rejected = parse_unscored_response(j["rejected"], p.id + ".rejected");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "id" && it.key() != "history" && it.key() != "chosen" && it.key() != "rejected")
      p.extra[it.key()] = it.value();
  }
  return p;
}

bool item_incorrect(const std::vector<Vote>& votes) {
  if (votes.size() != kVotersPerItem)
    fail(ErrorCode::WrongVoterCount, "expected 5 votes, got " + std::to_string(votes.size()));
  return std::count(votes.begin(), votes.end(), Vote::Incorrect) >= 3;
}

double majority_vote_accuracy(const std::vector<std::vector<Vote>>& items) {
  if (items.empty()) fail(ErrorCode::EmptyDataset, "no items to score");
  std::size_t correct = 0;
  for (const auto& votes : items)
    if (!item_incorrect(votes)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

}  // namespace twodpo
