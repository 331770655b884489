#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "twodpo/segmenter.hpp"

namespace twodpo {

using TokenId = int;

// Id 0 is reserved for end-of-sequence; it also pads the context window.
inline constexpr TokenId kEosId = 0;
inline constexpr std::string_view kEosToken = "<eos>";

/// Word-level pieces: a word (alphanumeric run) or a single punctuation mark,
/// each carrying the whitespace that follows it. Concatenating the pieces
/// gives back the input.
std::vector<TokenPiece> split_pieces(std::string_view text);

class Vocab {
 public:
  Vocab();

  /// Every piece of the corpus in first-seen order, then every character seen
  /// (used as fallback for unseen words).
  static Vocab build(std::span<const std::string> corpus);

  /// Newline-delimited tokens; backslash, newline, tab and CR are escaped.
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  std::size_t size() const noexcept { return tokens_.size(); }
  std::optional<TokenId> find(std::string_view token) const;
  TokenId add(const std::string& token);
  const std::string& token(TokenId id) const;

  /// Pieces mapped to vocabulary entries; a piece not in the vocabulary falls
  /// back to its UTF-8 characters. Throws Error(UnknownToken) if a character
  /// is missing too.
  std::vector<TokenPiece> tokenize(std::string_view text) const;
  std::vector<TokenId> encode(std::string_view text) const;
  /// Concatenated token strings; the end-of-sequence id renders as nothing.
  std::string decode(std::span<const TokenId> ids) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace twodpo
