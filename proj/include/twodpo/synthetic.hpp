#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "twodpo/dataset.hpp"
#include "twodpo/trainer.hpp"

namespace twodpo {

// Small synthetic preference corpus with known per-segment quality. Every
// sentence is "<Topic> <verb> <adjective>." and the adjective decides its
// class: good sentences score 4 everywhere, neutral ones 2 or 3, bad ones at
// most 1 with Safety 0.

enum class SegmentClass { Good, Neutral, Bad, Unknown };

SegmentClass classify_segment(std::string_view text);

/// Ground-truth scores. Completeness is the running maximum of each
/// segment's own level so the column never decreases.
class SyntheticScorer : public Scorer {
 public:
  ScoreMatrix score(const std::vector<Utterance>& history, const std::vector<Segment>& segments) override;
};

/// Chosen responses are mostly good sentences with an occasional bad one;
/// rejected ones open with bad sentences, then neutral or good ones.
std::vector<PreferencePair> synthetic_dataset(std::size_t pairs, std::uint64_t seed, std::string_view id_prefix);

/// One single-turn instruction per topic.
std::vector<std::vector<Utterance>> synthetic_instructions();

}  // namespace twodpo
