#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "support.hpp"
#include "twodpo/dataset.hpp"
#include "twodpo/error.hpp"

using namespace twodpo;
using twodpo::testing::Gen;

namespace {

std::string record(const std::string& chosen_scores, const std::string& chosen_segments = R"([{"text":"A.","sep":" "},{"text":"B.","sep":""}])") {
  return R"({"id":"p1","history":[{"role":"user","content":"hi"}],"chosen":{"segments":)" + chosen_segments +
         R"(,"scores":)" + chosen_scores +
         R"(},"rejected":{"segments":[{"text":"C.","sep":""}],"scores":[[0,0,0,0,0]]}})";
}

ErrorCode code_of(const std::string& line) {
  try {
    parse_record(line);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::InvalidArgument;
}

PreferencePair random_pair(Gen& g, std::size_t i) {
  PreferencePair p;
  p.id = "pair-" + std::to_string(i);
  const std::size_t turns = g.index(0, 3);
  for (std::size_t t = 0; t < turns; ++t)
    p.history.push_back({t % 2 ? "assistant" : "user", "turn " + std::to_string(g.index(0, 99)) + "\n\"q\""});
  for (AnnotatedResponse* r : {&p.chosen, &p.rejected}) {
    const std::size_t s = g.index(1, 5);
    for (std::size_t k = 0; k < s; ++k)
      r->segments.push_back({"Sentence " + std::to_string(g.index(0, 999)) + (g.coin() ? "." : " \xc3\xa9!"),
                             k + 1 < s ? (g.coin() ? " " : "\n\n") : "", std::nullopt});
    r->scores = g.matrix(s);
  }
  if (g.coin(0.3)) p.provenance = nlohmann::json{{"annotator", "mock"}, {"round", g.index(0, 3)}};
  if (g.coin(0.3)) p.extra["source"] = "gen";
  return p;
}

}  // namespace

TEST_CASE("parse_record accepts a well-formed record") {
  const auto p = parse_record(record("[[4,4,4,1,4],[4,3,4,4,3]]"));
  CHECK(p.id == "p1");
  CHECK(p.chosen.segments.size() == 2);
  CHECK(p.chosen.scores.segments() == 2);
  CHECK(p.chosen.scores.rows[1] == AspectVector{4, 3, 4, 4, 3});
  CHECK(p.chosen.text() == "A. B.");
  CHECK(p.history == std::vector<Utterance>{{"user", "hi"}});
}

TEST_CASE("parse_record rejects broken records") {
  CHECK(code_of(record("[[4,4,2,1,4],[4,3,4,4,3]]")) == ErrorCode::InvariantViolation);
  CHECK(code_of(record("[[4,4,4,3,4],[4,3,4,2,3]]")) == ErrorCode::InvariantViolation);
  CHECK(code_of("{\"id\": ") == ErrorCode::MalformedRecord);
  CHECK(code_of("[1,2]") == ErrorCode::MalformedRecord);
  CHECK(code_of(R"({"id":"x","history":[],"chosen":{"segments":[]}})") == ErrorCode::SchemaViolation);
  CHECK(code_of(record("[[4,4,4,\"1\",4],[4,3,4,4,3]]")) == ErrorCode::SchemaViolation);
  CHECK(code_of(record("[[4,4,4,1],[4,3,4,4,3]]")) == ErrorCode::SchemaViolation);
}

TEST_CASE("unknown fields are kept and reported") {
  std::string line = record("[[4,4,4,1,4],[4,3,4,4,3]]");
  line.insert(line.size() - 1, R"(,"source":{"k":1})");
  std::vector<std::string> warnings;
  const auto p = parse_record(line, &warnings);
  CHECK(warnings.size() == 1);
  CHECK(p.extra.at("source").at("k") == 1);
  CHECK(parse_record(serialize_record(p)) == p);
  CHECK(serialize_record(p).find("\"source\"") != std::string::npos);
}

TEST_CASE("validate_pair reports each violation with a code") {
  auto p = parse_record(record("[[4,4,4,1,4],[4,3,4,4,3]]"));
  CHECK(validate_pair(p).accepted());

  auto extra_segment = p;
  extra_segment.chosen.segments.push_back({"C.", "", std::nullopt});
  auto r = validate_pair(extra_segment);
  REQUIRE(r.violations.size() == 1);
  CHECK(r.violations[0].code == violation::kSegmentCountMismatch);

  auto five = p;
  five.chosen.scores.rows[0][0] = 5;
  r = validate_pair(five);
  REQUIRE(r.violations.size() == 1);
  CHECK(r.violations[0].code == violation::kScoreRange);
  CHECK(r.violations[0].location == "chosen.scores[0][0]");

  auto safety = p;
  safety.rejected.scores.rows[0][index_of(Aspect::Safety)] = 3;
  r = validate_pair(safety);
  REQUIRE(r.violations.size() == 1);
  CHECK(r.violations[0].code == violation::kSafetyBinary);

  auto drop = p;
  drop.chosen.scores.rows[1][index_of(Aspect::Completeness)] = 0;
  r = validate_pair(drop);
  REQUIRE(r.violations.size() == 1);
  CHECK(r.violations[0].code == violation::kCompletenessDecreasing);

  auto many = p;
  many.id.clear();
  many.history[0].role = "system";
  many.rejected.segments[0].text = "  ";
  r = validate_pair(many);
  REQUIRE(r.violations.size() == 3);
  CHECK(r.violations[0].code == violation::kEmptyId);
  CHECK(r.violations[1].code == violation::kBadRole);
  CHECK(r.violations[2].code == violation::kEmptySegment);
}

TEST_CASE("duplicate ids are flagged on the later record") {
  const auto p = parse_record(record("[[4,4,4,1,4],[4,3,4,4,3]]"));
  const auto reports = validate_dataset({p, p});
  CHECK(reports[0].accepted());
  REQUIRE(reports[1].violations.size() == 1);
  CHECK(reports[1].violations[0].code == violation::kDuplicateId);
}

TEST_CASE("serialize then parse is the identity on random valid pairs") {
  Gen g(11);
  std::vector<PreferencePair> pairs;
  for (std::size_t i = 0; i < 200; ++i) {
    auto p = random_pair(g, i);
    REQUIRE(validate_pair(p).accepted());
    CHECK(parse_record(serialize_record(p)) == p);
    pairs.push_back(std::move(p));
  }
  std::stringstream ss;
  write_dataset(ss, pairs);
  CHECK(read_dataset(ss) == pairs);
}

TEST_CASE("dataset_stats counts") {
  PreferencePair p;
  p.id = "a";
  p.chosen.segments = {{"x", "", std::nullopt}};
  p.chosen.scores.rows = {{4, 4, 4, 4, 4}};
  p.rejected.segments = {{"y", "", std::nullopt}};
  p.rejected.scores.rows = {{0, 0, 4, 0, 0}};
  const auto s = dataset_stats({p});
  const auto c = static_cast<std::size_t>(Side::Chosen), r = static_cast<std::size_t>(Side::Rejected);
  for (Aspect a : kAllAspects) CHECK(s.segment_scores[c][index_of(a)][4] == 1);
  CHECK(s.segment_scores[r][index_of(Aspect::Helpfulness)][0] == 1);
  CHECK(s.segment_scores[r][index_of(Aspect::Safety)][4] == 1);

  auto q = p;
  q.id = "b";
  q.chosen.segments = {{"x", " ", std::nullopt}, {"z", "", std::nullopt}};
  q.chosen.scores.rows = {{3, 4, 4, 4, 4}, {4, 4, 4, 4, 4}};
  const auto two = dataset_stats({p, q});
  const auto& help = two.segment_scores[c][index_of(Aspect::Helpfulness)];
  CHECK(help[3] == 1);
  CHECK(help[4] == 2);
  CHECK(help[0] + help[1] + help[2] == 0);
  CHECK(two.response_min[c][index_of(Aspect::Helpfulness)][3] == 1);
  CHECK(two.response_max[c][index_of(Aspect::Helpfulness)][4] == 2);

  CHECK_THROWS_AS(dataset_stats({}), Error);
  try {
    dataset_stats({});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyDataset);
  }
}

TEST_CASE("histogram totals equal segment counts and merge is order independent") {
  Gen g(5);
  std::vector<PreferencePair> pairs;
  for (std::size_t i = 0; i < 60; ++i) pairs.push_back(random_pair(g, i));
  const auto all = dataset_stats(pairs);
  for (std::size_t side = 0; side < 2; ++side) {
    std::size_t segments = 0;
    for (const auto& p : pairs) segments += (side == 0 ? p.chosen : p.rejected).segments.size();
    CHECK(all.segments[side] == segments);
    for (Aspect a : kAllAspects) {
      std::size_t total = 0;
      for (std::size_t v : all.segment_scores[side][index_of(a)]) total += v;
      CHECK(total == segments);
    }
  }

  DistributionStats a, b, c;
  for (std::size_t i = 0; i < pairs.size(); ++i) (i % 3 == 0 ? a : i % 3 == 1 ? b : c).add(pairs[i]);
  DistributionStats ab = a, bc = b;
  ab.merge(b);
  ab.merge(c);
  bc.merge(c);
  DistributionStats a_bc = a;
  a_bc.merge(bc);
  DistributionStats cba = c;
  cba.merge(b);
  cba.merge(a);
  CHECK(ab == all);
  CHECK(a_bc == all);
  CHECK(cba == all);
}

TEST_CASE("stats render as csv and json") {
  const auto s = dataset_stats(load_dataset(twodpo::testing::fixture("synthetic_heldout.jsonl")));
  const std::string csv = stats_to_csv(s);
  CHECK(csv.rfind("kind,side,aspect,score,count\n", 0) == 0);
  CHECK(csv.find("segment,chosen,Helpfulness,4,") != std::string::npos);
  const auto j = stats_to_json(s);
  CHECK(j.is_object());
}
