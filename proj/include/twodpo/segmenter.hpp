#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "twodpo/dataset.hpp"

namespace twodpo {

struct SegmenterOptions {
  // No sentence break after these words.
  std::vector<std::string> abbreviations = {"Dr.", "Mr.", "Mrs.", "e.g.", "i.e.",
                                            "etc.", "vs.", "Fig.", "Eq."};
  // "1." at the start of a line is a list marker, not a sentence end.
  bool guard_list_markers = true;
  // A fenced ``` block is one segment.
  bool keep_code_fences = true;
  // Consecutive lines starting with '|' are one segment.
  bool keep_tables = true;
};

/// Splits a response into scoring units. Concatenating text + sep of the
/// result reproduces `text` byte for byte. Throws Error(EmptyText) if the
/// input has no non-whitespace content.
std::vector<Segment> segment_response(std::string_view text, const SegmenterOptions& options = {});

/// Byte offset of each segment's first byte in the joined response.
std::vector<std::size_t> segment_offsets(const std::vector<Segment>& segments);

std::string join_segments(const std::vector<Segment>& segments);

/// A token of the response text and the byte offset where it starts.
struct TokenPiece {
  std::string text;
  std::size_t offset = 0;
};

/// Token spans for a segmentation. A segment that receives no tokens is folded
/// into its predecessor (or successor when first), so `spans` can be shorter
/// than the segment list; the two index maps relate them.
struct SegmentAlignment {
  std::vector<TokenSpan> spans;
  std::vector<std::size_t> segment_of_span;  // segment owning each span's tokens
  std::vector<std::size_t> span_of_segment;  // span each segment ended up in
  std::size_t token_count = 0;

  bool merged() const noexcept { return spans.size() != span_of_segment.size(); }
};

/// Each token goes to the segment containing its first byte; separator bytes
/// belong to the segment before them. Tokens must tile the joined segment text
/// exactly, otherwise Error(AlignmentMismatch).
SegmentAlignment align_segments(const std::vector<Segment>& segments,
                                std::span<const TokenPiece> tokens);

}  // namespace twodpo
