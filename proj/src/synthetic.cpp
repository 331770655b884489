#include "twodpo/synthetic.hpp"

#include <array>
#include <random>

#include "twodpo/segmenter.hpp"

namespace twodpo {

namespace {

constexpr std::array<std::string_view, 5> kTopics = {"cats", "rain", "bread", "stars", "tea"};
constexpr std::array<std::string_view, 5> kSubjects = {"Cats", "Rain", "Bread", "Stars", "Tea"};
constexpr std::array<std::string_view, 2> kVerbs = {"is", "seems"};
constexpr std::array<std::string_view, 4> kGood = {"accurate", "helpful", "precise", "thorough"};
constexpr std::array<std::string_view, 4> kNeutral = {"fine", "okay", "plain", "average"};
constexpr std::array<std::string_view, 4> kBad = {"wrong", "harmful", "rude", "false"};

std::string_view last_word(std::string_view text) {
  while (!text.empty() && (text.back() == '.' || text.back() == ' ')) text.remove_suffix(1);
  const auto sp = text.rfind(' ');
  return sp == std::string_view::npos ? text : text.substr(sp + 1);
}

template <std::size_t N>
bool contains(const std::array<std::string_view, N>& set, std::string_view w) {
  for (auto s : set)
    if (s == w) return true;
  return false;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

int level(SegmentClass c) {
  switch (c) {
    case SegmentClass::Good: return 4;
    case SegmentClass::Neutral: return 2;
    case SegmentClass::Bad: return 1;
    case SegmentClass::Unknown: return 1;
  }
  return 0;
}

template <class Rng, std::size_t N>
std::string_view pick(Rng& rng, const std::array<std::string_view, N>& set) {
  return set[rng() % N];
}

}  // namespace

SegmentClass classify_segment(std::string_view text) {
  const auto w = last_word(text);
  if (contains(kGood, w)) return SegmentClass::Good;
  if (contains(kNeutral, w)) return SegmentClass::Neutral;
  if (contains(kBad, w)) return SegmentClass::Bad;
  return SegmentClass::Unknown;
}

ScoreMatrix SyntheticScorer::score(const std::vector<Utterance>&, const std::vector<Segment>& segments) {
  ScoreMatrix m;
  int completeness = 0;
  for (const auto& seg : segments) {
    const auto cls = classify_segment(seg.text);
    const std::uint64_t h = fnv1a(seg.text);
    completeness = std::max(completeness, level(cls));
    AspectVector row{};
    switch (cls) {
      case SegmentClass::Good:
        row = {4, 4, 4, 4, 4};
        break;
      case SegmentClass::Neutral:
        row = {2 + static_cast<int>(h & 1), 2 + static_cast<int>((h >> 1) & 1), 4, 0,
               2 + static_cast<int>((h >> 2) & 1)};
        break;
      case SegmentClass::Bad:
        row = {static_cast<int>(h & 1), static_cast<int>((h >> 1) & 1), 0, 0, static_cast<int>((h >> 2) & 1)};
        break;
      case SegmentClass::Unknown:
        row = {1, 1, 4, 0, 1};
        break;
    }
    row[index_of(Aspect::Completeness)] = completeness;
    m.rows.push_back(row);
  }
  return m;
}

std::vector<PreferencePair> synthetic_dataset(std::size_t pairs, std::uint64_t seed, std::string_view id_prefix) {
  std::mt19937_64 rng(seed);
  SyntheticScorer scorer;
  std::vector<PreferencePair> out;
  out.reserve(pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    const std::size_t topic = rng() % kTopics.size();
    auto sentence = [&](std::string_view adj) {
      return std::string(kSubjects[topic]) + " " + std::string(pick(rng, kVerbs)) + " " + std::string(adj) + ".";
    };
    auto response = [&](std::vector<std::string> sentences) {
      std::string text;
      for (std::size_t k = 0; k < sentences.size(); ++k) text += (k ? " " : "") + sentences[k];
      AnnotatedResponse r;
      r.segments = segment_response(text);
      r.scores = scorer.score({}, r.segments);
      return r;
    };

    std::vector<std::string> chosen;
    const std::size_t n_good = 1 + rng() % 3, n_bad_w = rng() % 3 == 0 ? 1 : 0;
    for (std::size_t k = 0; k < n_good; ++k) chosen.push_back(sentence(pick(rng, kGood)));
    for (std::size_t k = 0; k < n_bad_w; ++k) chosen.push_back(sentence(pick(rng, kBad)));
    for (std::size_t k = chosen.size(); k > 1; --k) std::swap(chosen[k - 1], chosen[rng() % k]);

    std::vector<std::string> rejected;
    const std::size_t n_bad = 1 + rng() % 2, n_neutral_l = rng() % 2, n_good_l = rng() % 3 == 0 ? 1 : 0;
    for (std::size_t k = 0; k < n_bad; ++k) rejected.push_back(sentence(pick(rng, kBad)));
    std::vector<std::string> tail;
    for (std::size_t k = 0; k < n_neutral_l; ++k) tail.push_back(sentence(pick(rng, kNeutral)));
    for (std::size_t k = 0; k < n_good_l; ++k) tail.push_back(sentence(pick(rng, kGood)));
    for (std::size_t k = tail.size(); k > 1; --k) std::swap(tail[k - 1], tail[rng() % k]);
    rejected.insert(rejected.end(), tail.begin(), tail.end());

    PreferencePair p;
    p.id = std::string(id_prefix) + std::to_string(i);
    p.history = {{"user", "explain " + std::string(kTopics[topic])}};
    p.chosen = response(std::move(chosen));
    p.rejected = response(std::move(rejected));
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::vector<Utterance>> synthetic_instructions() {
  std::vector<std::vector<Utterance>> out;
  for (auto t : kTopics) out.push_back({{"user", "explain " + std::string(t)}});
  return out;
}

}  // namespace twodpo
