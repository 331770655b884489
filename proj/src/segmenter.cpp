#include "twodpo/segmenter.hpp"

#include <algorithm>
#include <cctype>

#include "twodpo/error.hpp"

namespace twodpo {

namespace {

struct Range {
  std::size_t begin;
  std::size_t end;
};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Fullwidth sentence enders (。！？) end a sentence even without a following space.
std::size_t fullwidth_terminal_len(std::string_view s, std::size_t i) {
  static constexpr std::string_view kEnders[] = {"\xE3\x80\x82", "\xEF\xBC\x81", "\xEF\xBC\x9F"};
  for (auto e : kEnders)
    if (s.substr(i, e.size()) == e) return e.size();
  return 0;
}

bool is_ascii_terminal(char c) { return c == '.' || c == '!' || c == '?' || c == ';'; }

std::size_t closer_len(std::string_view s, std::size_t i) {
  if (i >= s.size()) return 0;
  const char c = s[i];
  if (c == '"' || c == '\'' || c == ')' || c == ']') return 1;
  static constexpr std::string_view kCurly[] = {"\xE2\x80\x9D", "\xE2\x80\x99"};
  for (auto e : kCurly)
    if (s.substr(i, e.size()) == e) return e.size();
  return 0;
}

// Content of a line, without leading/trailing whitespace; empty if blank.
Range trim(std::string_view s, Range r) {
  while (r.begin < r.end && is_space(s[r.begin])) ++r.begin;
  while (r.end > r.begin && is_space(s[r.end - 1])) --r.end;
  return r;
}

bool starts_with_at(std::string_view s, std::size_t i, std::string_view prefix) {
  return s.substr(i, prefix.size()) == prefix;
}

class Splitter {
 public:
  Splitter(std::string_view text, const SegmenterOptions& opts) : s_(text), opts_(opts) {}

  std::vector<Range> run() {
    std::vector<Range> lines;
    for (std::size_t b = 0; b < s_.size();) {
      std::size_t e = s_.find('\n', b);
      e = e == std::string_view::npos ? s_.size() : e;
      lines.push_back({b, e});
      b = e + 1;
    }

    Range prose{0, 0};
    bool in_prose = false;
    auto flush_prose = [&] {
      if (in_prose) split_sentences(prose);
      in_prose = false;
    };

    for (std::size_t li = 0; li < lines.size(); ++li) {
      const Range content = trim(s_, lines[li]);
      if (content.begin == content.end) {
        flush_prose();
        continue;
      }
      if (opts_.keep_code_fences && starts_with_at(s_, content.begin, "```")) {
        flush_prose();
        std::size_t close = li + 1;
        while (close < lines.size()) {
          const Range c = trim(s_, lines[close]);
          if (c.begin < c.end && starts_with_at(s_, c.begin, "```")) break;
          ++close;
        }
        const std::size_t last = std::min(close, lines.size() - 1);
        out_.push_back({content.begin, trim(s_, {content.begin, lines[last].end}).end});
        li = last;
        continue;
      }
      if (opts_.keep_tables && s_[content.begin] == '|') {
        flush_prose();
        std::size_t last = li;
        while (last + 1 < lines.size()) {
          const Range c = trim(s_, lines[last + 1]);
          if (c.begin == c.end || s_[c.begin] != '|') break;
          ++last;
        }
        out_.push_back({content.begin, trim(s_, lines[last]).end});
        li = last;
        continue;
      }
      if (!in_prose) {
        prose = content;
        in_prose = true;
      } else {
        prose.end = content.end;
      }
    }
    flush_prose();
    return std::move(out_);
  }

 private:
  bool guarded(std::size_t period, std::size_t block_begin) const {
    std::size_t w = period;
    while (w > block_begin && !is_space(s_[w - 1])) --w;
    std::string_view word = s_.substr(w, period + 1 - w);
    while (!word.empty() && (word.front() == '(' || word.front() == '"' || word.front() == '\'' ||
                             word.front() == '['))
      word.remove_prefix(1);
    for (const auto& abbr : opts_.abbreviations) {
      if (word.size() == abbr.size() &&
          std::equal(word.begin(), word.end(), abbr.begin(), [](char a, char b) {
            return std::tolower(static_cast<unsigned char>(a)) ==
                   std::tolower(static_cast<unsigned char>(b));
          }))
        return true;
    }
    if (opts_.guard_list_markers && word.size() >= 2 &&
        std::all_of(word.begin(), word.end() - 1,
                    [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      std::size_t ls = w;
      while (ls > 0 && s_[ls - 1] != '\n' && is_space(s_[ls - 1])) --ls;
      if (ls == 0 || s_[ls - 1] == '\n' || ls == block_begin) return true;
    }
    return false;
  }

  void split_sentences(Range block) {
    std::size_t start = block.begin;
    std::size_t i = block.begin;
    while (i < block.end) {
      std::size_t j = i;
      bool fullwidth = false;
      if (std::size_t fw = fullwidth_terminal_len(s_, i)) {
        fullwidth = true;
        j = i + fw;
      } else if (is_ascii_terminal(s_[i])) {
        j = i + 1;
      } else {
        ++i;
        continue;
      }
      // Absorb runs like "?!" or "..." and trailing closing quotes/brackets.
      for (;;) {
        if (j < block.end && is_ascii_terminal(s_[j])) {
          ++j;
        } else if (std::size_t fw = fullwidth_terminal_len(s_, j); fw && j < block.end) {
          j += fw;
          fullwidth = true;
        } else {
          break;
        }
      }
      while (std::size_t c = closer_len(s_, j)) {
        if (j + c > block.end) break;
        j += c;
      }
      const bool at_break = fullwidth || j >= block.end || is_space(s_[j]);
      const bool guard = !fullwidth && s_[i] == '.' && j == i + 1 && guarded(i, block.begin);
      if (at_break && !guard) {
        out_.push_back({start, j});
        while (j < block.end && is_space(s_[j])) ++j;
        start = j;
      }
      i = j;
    }
    if (start < block.end) out_.push_back({start, block.end});
  }

  std::string_view s_;
  const SegmenterOptions& opts_;
  std::vector<Range> out_;
};

bool degenerate(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char ch) {
    const auto c = static_cast<unsigned char>(ch);
    return c < 0x80 && (std::ispunct(c) || std::isspace(c));
  });
}

}  // namespace

std::vector<Segment> segment_response(std::string_view text, const SegmenterOptions& options) {
  std::vector<Range> ranges = Splitter(text, options).run();
  if (ranges.empty()) fail(ErrorCode::EmptyText, "response text is empty");

  // Punctuation-only pieces fold forward into the next segment (or back into
  // the previous one when last).
  std::vector<Range> merged;
  for (std::size_t k = 0; k < ranges.size(); ++k) {
    Range r = ranges[k];
    while (degenerate(text.substr(r.begin, r.end - r.begin)) && k + 1 < ranges.size()) {
      r.end = ranges[++k].end;
    }
    if (degenerate(text.substr(r.begin, r.end - r.begin)) && !merged.empty()) {
      merged.back().end = r.end;
    } else {
      merged.push_back(r);
    }
  }

  std::vector<Segment> out;
  out.reserve(merged.size());
  for (std::size_t k = 0; k < merged.size(); ++k) {
    const std::size_t begin = k == 0 ? 0 : merged[k].begin;
    const std::size_t next = k + 1 < merged.size() ? merged[k + 1].begin : text.size();
    Segment seg;
    seg.text = std::string(text.substr(begin, merged[k].end - begin));
    seg.sep = std::string(text.substr(merged[k].end, next - merged[k].end));
    out.push_back(std::move(seg));
  }
  return out;
}

std::vector<std::size_t> segment_offsets(const std::vector<Segment>& segments) {
  std::vector<std::size_t> off;
  off.reserve(segments.size());
  std::size_t pos = 0;
  for (const auto& s : segments) {
    off.push_back(pos);
    pos += s.text.size() + s.sep.size();
  }
  return off;
}

std::string join_segments(const std::vector<Segment>& segments) {
  std::string out;
  for (const auto& s : segments) {
    out += s.text;
    out += s.sep;
  }
  return out;
}

SegmentAlignment align_segments(const std::vector<Segment>& segments,
                                std::span<const TokenPiece> tokens) {
  if (segments.empty()) fail(ErrorCode::AlignmentMismatch, "no segments to align");
  const std::string joined = join_segments(segments);
  const std::vector<std::size_t> offsets = segment_offsets(segments);

  std::size_t pos = 0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto& tok = tokens[t];
    if (tok.offset != pos || tok.text.empty() ||
        joined.compare(tok.offset, tok.text.size(), tok.text) != 0 ||
        tok.offset + tok.text.size() > joined.size()) {
      fail(ErrorCode::AlignmentMismatch,
           "token " + std::to_string(t) + " does not match response bytes at offset " +
               std::to_string(tok.offset));
    }
    pos += tok.text.size();
  }
  if (pos != joined.size())
    fail(ErrorCode::AlignmentMismatch, "tokens cover " + std::to_string(pos) + " of " +
                                           std::to_string(joined.size()) + " response bytes");

  std::vector<std::size_t> counts(segments.size(), 0);
  std::size_t k = 0;
  for (const auto& tok : tokens) {
    while (k + 1 < segments.size() && tok.offset >= offsets[k + 1]) ++k;
    ++counts[k];
  }

  SegmentAlignment al;
  al.token_count = tokens.size();
  al.span_of_segment.assign(segments.size(), 0);
  std::size_t start = 0;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (counts[s] == 0) {
      // Leading empties are patched to the first real span below.
      al.span_of_segment[s] = al.spans.empty() ? 0 : al.spans.size() - 1;
      continue;
    }
    al.span_of_segment[s] = al.spans.size();
    al.spans.push_back({start, counts[s]});
    al.segment_of_span.push_back(s);
    start += counts[s];
  }
  if (al.spans.empty()) fail(ErrorCode::AlignmentMismatch, "response has no tokens");
  return al;
}

}  // namespace twodpo
