#include "twodpo/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "twodpo/error.hpp"

namespace twodpo {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kNumAspects> kAspectNames = {
    "Helpfulness", "Correctness", "Safety", "Completeness", "Clarity"};

const std::set<std::string, std::less<>> kTopLevelKeys = {"id", "history", "chosen", "rejected",
                                                          "provenance"};
const std::set<std::string, std::less<>> kResponseKeys = {"segments", "scores"};
const std::set<std::string, std::less<>> kSegmentKeys = {"text", "sep", "span"};

[[noreturn]] void schema(const std::string& where, const std::string& what) {
  fail(ErrorCode::SchemaViolation, where + ": " + what);
}

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) schema(where, std::string("missing field '") + key + "'");
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) schema(where + "." + key, "expected string");
  return v.get<std::string>();
}

void note_unknown(const json& obj, const std::set<std::string, std::less<>>& known,
                  const std::string& where, json& extra, std::vector<std::string>* warnings) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (known.count(it.key())) continue;
    extra[it.key()] = it.value();
    if (warnings) warnings->push_back(where + ": unknown field '" + it.key() + "' preserved");
  }
}

AnnotatedResponse parse_response(const json& j, const std::string& where,
                                 std::vector<std::string>* warnings) {
  if (!j.is_object()) schema(where, "expected object");
  AnnotatedResponse r;
  const json& segs = require(j, "segments", where);
  if (!segs.is_array()) schema(where + ".segments", "expected array");
  for (std::size_t k = 0; k < segs.size(); ++k) {
    const std::string sw = where + ".segments[" + std::to_string(k) + "]";
    const json& s = segs[k];
    if (!s.is_object()) schema(sw, "expected object");
    Segment seg;
    seg.text = require_string(s, "text", sw);
    if (auto it = s.find("sep"); it != s.end()) {
      if (!it->is_string()) schema(sw + ".sep", "expected string");
      seg.sep = it->get<std::string>();
    }
    if (auto it = s.find("span"); it != s.end() && !it->is_null()) {
      if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number_unsigned() ||
          !(*it)[1].is_number_unsigned())
        schema(sw + ".span", "expected [start, length]");
      seg.token_span = TokenSpan{(*it)[0].get<std::size_t>(), (*it)[1].get<std::size_t>()};
    }
    json ignored = json::object();
    note_unknown(s, kSegmentKeys, sw, ignored, warnings);
    r.segments.push_back(std::move(seg));
  }
  const json& scores = require(j, "scores", where);
  if (!scores.is_array()) schema(where + ".scores", "expected array");
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const std::string rw = where + ".scores[" + std::to_string(k) + "]";
    const json& row = scores[k];
    if (!row.is_array() || row.size() != kNumAspects)
      schema(rw, "expected array of " + std::to_string(kNumAspects) + " integers");
    AspectVector v{};
    for (std::size_t a = 0; a < kNumAspects; ++a) {
      if (!row[a].is_number_integer()) schema(rw, "expected integer scores");
      v[a] = row[a].get<int>();
    }
    r.scores.rows.push_back(v);
  }
  note_unknown(j, kResponseKeys, where, r.extra, warnings);
  return r;
}

json response_to_json(const AnnotatedResponse& r) {
  json j = r.extra.is_object() ? r.extra : json::object();
  json segs = json::array();
  for (const auto& s : r.segments) {
    json sj = {{"text", s.text}, {"sep", s.sep}};
    if (s.token_span) sj["span"] = {s.token_span->start, s.token_span->length};
    segs.push_back(std::move(sj));
  }
  j["segments"] = std::move(segs);
  json rows = json::array();
  for (const auto& row : r.scores.rows) rows.push_back(row);
  j["scores"] = std::move(rows);
  return j;
}

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

void validate_response(const AnnotatedResponse& r, const std::string& side,
                       std::vector<Violation>& out) {
  if (r.segments.empty()) {
    out.push_back({std::string(violation::kEmptyResponse), "response has no segments", side});
  }
  if (r.segments.size() != r.scores.rows.size()) {
    out.push_back({std::string(violation::kSegmentCountMismatch),
                   std::to_string(r.segments.size()) + " segments but " +
                       std::to_string(r.scores.rows.size()) + " score rows",
                   side});
  }
  for (std::size_t k = 0; k < r.segments.size(); ++k) {
    if (blank(r.segments[k].text)) {
      out.push_back({std::string(violation::kEmptySegment), "segment text is blank",
                     side + ".segments[" + std::to_string(k) + "]"});
    }
  }
  for (std::size_t k = 0; k < r.scores.rows.size(); ++k) {
    for (Aspect a : kAllAspects) {
      const int v = r.scores.rows[k][index_of(a)];
      const std::string loc =
          side + ".scores[" + std::to_string(k) + "][" + std::to_string(index_of(a)) + "]";
      if (v < 0 || v > kMaxLikert) {
        out.push_back({std::string(violation::kScoreRange),
                       std::string(aspect_name(a)) + " score " + std::to_string(v) +
                           " outside 0..4",
                       loc});
      } else if (a == Aspect::Safety && v != 0 && v != kMaxLikert) {
        out.push_back({std::string(violation::kSafetyBinary),
                       "Safety score " + std::to_string(v) + " must be 0 or 4", loc});
      }
    }
  }
  const std::size_t c = index_of(Aspect::Completeness);
  for (std::size_t k = 1; k < r.scores.rows.size(); ++k) {
    if (r.scores.rows[k][c] < r.scores.rows[k - 1][c]) {
      out.push_back({std::string(violation::kCompletenessDecreasing),
                     "Completeness drops from " + std::to_string(r.scores.rows[k - 1][c]) +
                         " to " + std::to_string(r.scores.rows[k][c]),
                     side + ".scores[" + std::to_string(k) + "][" + std::to_string(c) + "]"});
    }
  }
}

}  // namespace

std::string_view aspect_name(Aspect a) noexcept { return kAspectNames[index_of(a)]; }

std::optional<Aspect> aspect_from_name(std::string_view name) noexcept {
  for (Aspect a : kAllAspects) {
    std::string_view n = kAspectNames[index_of(a)];
    if (n.size() == name.size() &&
        std::equal(n.begin(), n.end(), name.begin(), [](char x, char y) {
          return std::tolower(static_cast<unsigned char>(x)) ==
                 std::tolower(static_cast<unsigned char>(y));
        }))
      return a;
  }
  return std::nullopt;
}

bool is_valid_score(Aspect a, int score) noexcept {
  if (a == Aspect::Safety) return score == 0 || score == kMaxLikert;
  return score >= 0 && score <= kMaxLikert;
}

std::vector<int> ScoreMatrix::column(Aspect a) const {
  std::vector<int> col;
  col.reserve(rows.size());
  for (const auto& r : rows) col.push_back(r[index_of(a)]);
  return col;
}

std::string AnnotatedResponse::text() const {
  std::string out;
  for (const auto& s : segments) {
    out += s.text;
    out += s.sep;
  }
  return out;
}

PreferencePair parse_record_unchecked(std::string_view line, std::vector<std::string>* warnings) {
  json j;
  try {
    j = json::parse(line.begin(), line.end());
  } catch (const json::parse_error& e) {
    fail(ErrorCode::MalformedRecord, e.what());
  }
  if (!j.is_object()) fail(ErrorCode::MalformedRecord, "record is not a JSON object");

  PreferencePair p;
  const std::string rid = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>()
                                                                  : std::string("<no id>");
  p.id = require_string(j, "id", "record");
  const json& hist = require(j, "history", rid);
  if (!hist.is_array()) schema(rid + ".history", "expected array");
  for (std::size_t i = 0; i < hist.size(); ++i) {
    const std::string hw = rid + ".history[" + std::to_string(i) + "]";
    if (!hist[i].is_object()) schema(hw, "expected {role, content}");
    p.history.push_back({require_string(hist[i], "role", hw), require_string(hist[i], "content", hw)});
  }
  p.chosen = parse_response(require(j, "chosen", rid), rid + ".chosen", warnings);
  p.rejected = parse_response(require(j, "rejected", rid), rid + ".rejected", warnings);
  if (auto it = j.find("provenance"); it != j.end() && !it->is_null()) p.provenance = *it;
  note_unknown(j, kTopLevelKeys, rid, p.extra, warnings);
  return p;
}

PreferencePair parse_record(std::string_view line, std::vector<std::string>* warnings) {
  PreferencePair p = parse_record_unchecked(line, warnings);
  ValidationReport report = validate_pair(p);
  if (!report.accepted()) {
    const Violation& v = report.violations.front();
    fail(ErrorCode::InvariantViolation,
         p.id + ": " + v.code + " at " + v.location + ": " + v.message);
  }
  return p;
}

json to_json(const PreferencePair& pair) {
  json j = pair.extra.is_object() ? pair.extra : json::object();
  j["id"] = pair.id;
  json hist = json::array();
  for (const auto& u : pair.history) hist.push_back({{"role", u.role}, {"content", u.content}});
  j["history"] = std::move(hist);
  j["chosen"] = response_to_json(pair.chosen);
  j["rejected"] = response_to_json(pair.rejected);
  if (pair.provenance) j["provenance"] = *pair.provenance;
  return j;
}

std::string serialize_record(const PreferencePair& pair) { return to_json(pair).dump(); }

ValidationReport validate_pair(const PreferencePair& pair) {
  ValidationReport report;
  report.record_id = pair.id;
  auto& out = report.violations;
  if (pair.id.empty()) out.push_back({std::string(violation::kEmptyId), "record id is empty", "id"});
  for (std::size_t i = 0; i < pair.history.size(); ++i) {
    const auto& role = pair.history[i].role;
    if (role != "user" && role != "assistant") {
      out.push_back({std::string(violation::kBadRole), "role '" + role + "' is not user/assistant",
                     "history[" + std::to_string(i) + "]"});
    }
  }
  validate_response(pair.chosen, "chosen", out);
  validate_response(pair.rejected, "rejected", out);
  return report;
}

std::vector<ValidationReport> validate_dataset(const std::vector<PreferencePair>& pairs) {
  std::vector<ValidationReport> reports;
  reports.reserve(pairs.size());
  std::set<std::string, std::less<>> seen;
  for (const auto& p : pairs) {
    ValidationReport r = validate_pair(p);
    if (!seen.insert(p.id).second) {
      r.violations.insert(r.violations.begin(),
                          {std::string(violation::kDuplicateId), "id '" + p.id + "' repeats", "id"});
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

std::vector<PreferencePair> read_dataset(std::istream& in, bool checked,
                                         std::vector<std::string>* warnings) {
  std::vector<PreferencePair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    try {
      out.push_back(checked ? parse_record(line, warnings) : parse_record_unchecked(line, warnings));
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<PreferencePair> load_dataset(const std::string& path, bool checked,
                                         std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open dataset '" + path + "'");
  return read_dataset(in, checked, warnings);
}

void write_dataset(std::ostream& out, const std::vector<PreferencePair>& pairs) {
  for (const auto& p : pairs) out << serialize_record(p) << '\n';
}

void save_dataset(const std::string& path, const std::vector<PreferencePair>& pairs) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write dataset '" + path + "'");
  write_dataset(out, pairs);
}

std::string_view side_name(Side s) noexcept { return s == Side::Chosen ? "chosen" : "rejected"; }

void DistributionStats::add(const PreferencePair& pair) {
  ++pairs;
  for (Side side : {Side::Chosen, Side::Rejected}) {
    const auto& resp = side == Side::Chosen ? pair.chosen : pair.rejected;
    const std::size_t s = static_cast<std::size_t>(side);
    if (resp.scores.rows.empty()) continue;
    ++responses[s];
    segments[s] += resp.scores.rows.size();
    for (std::size_t a = 0; a < kNumAspects; ++a) {
      int lo = kMaxLikert, hi = 0;
      for (const auto& row : resp.scores.rows) {
        const int v = std::clamp(row[a], 0, kMaxLikert);
        ++segment_scores[s][a][v];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      ++response_min[s][a][lo];
      ++response_max[s][a][hi];
    }
  }
}

void DistributionStats::merge(const DistributionStats& other) {
  auto add_hist = [](ScoreHistogram& dst, const ScoreHistogram& src) {
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t a = 0; a < kNumAspects; ++a)
        for (std::size_t v = 0; v <= kMaxLikert; ++v) dst[s][a][v] += src[s][a][v];
  };
  add_hist(segment_scores, other.segment_scores);
  add_hist(response_min, other.response_min);
  add_hist(response_max, other.response_max);
  for (std::size_t s = 0; s < 2; ++s) {
    segments[s] += other.segments[s];
    responses[s] += other.responses[s];
  }
  pairs += other.pairs;
}

DistributionStats dataset_stats(const std::vector<PreferencePair>& pairs) {
  if (pairs.empty()) fail(ErrorCode::EmptyDataset, "dataset has no records");
  DistributionStats stats;
  for (const auto& p : pairs) stats.add(p);
  return stats;
}

namespace {

template <class Fn>
void for_each_cell(const DistributionStats& st, Fn&& fn) {
  const std::array<std::pair<std::string_view, const ScoreHistogram*>, 3> kinds = {
      std::pair{std::string_view("segment"), &st.segment_scores},
      std::pair{std::string_view("min"), &st.response_min},
      std::pair{std::string_view("max"), &st.response_max}};
  for (const auto& [kind, hist] : kinds)
    for (Side side : {Side::Chosen, Side::Rejected})
      for (Aspect a : kAllAspects)
        for (int v = 0; v <= kMaxLikert; ++v)
          fn(kind, side, a, v, (*hist)[static_cast<std::size_t>(side)][index_of(a)][v]);
}

}  // namespace

std::string stats_to_csv(const DistributionStats& stats) {
  std::ostringstream os;
  os << "kind,side,aspect,score,count\n";
  for_each_cell(stats, [&](std::string_view kind, Side side, Aspect a, int v, std::size_t n) {
    os << kind << ',' << side_name(side) << ',' << aspect_name(a) << ',' << v << ',' << n << '\n';
  });
  return os.str();
}

json stats_to_json(const DistributionStats& stats) {
  json j;
  j["pairs"] = stats.pairs;
  j["responses"] = {{"chosen", stats.responses[0]}, {"rejected", stats.responses[1]}};
  j["segments"] = {{"chosen", stats.segments[0]}, {"rejected", stats.segments[1]}};
  json rows = json::array();
  for_each_cell(stats, [&](std::string_view kind, Side side, Aspect a, int v, std::size_t n) {
    rows.push_back({{"kind", kind},
                    {"side", side_name(side)},
                    {"aspect", aspect_name(a)},
                    {"score", v},
                    {"count", n}});
  });
  j["rows"] = std::move(rows);
  return j;
}

}  // namespace twodpo
