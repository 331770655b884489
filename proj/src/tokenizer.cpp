#include "twodpo/tokenizer.hpp"

#include <cctype>
#include <fstream>

#include "twodpo/error.hpp"

namespace twodpo {

namespace {

bool word_byte(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }
bool space_byte(unsigned char c) { return std::isspace(c) != 0; }

std::size_t utf8_len(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      out += s[i];
      continue;
    }
    switch (s[++i]) {
      case 'n': out += '\n'; break;
      case 't': out += '\t'; break;
      case 'r': out += '\r'; break;
      default: out += s[i];
    }
  }
  return out;
}

}  // namespace

std::vector<TokenPiece> split_pieces(std::string_view text) {
  std::vector<TokenPiece> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    const auto c = static_cast<unsigned char>(text[i]);
    if (space_byte(c)) {
      // Only reachable for leading whitespace.
      while (i < text.size() && space_byte(static_cast<unsigned char>(text[i]))) ++i;
    } else if (word_byte(c)) {
      while (i < text.size() && word_byte(static_cast<unsigned char>(text[i]))) ++i;
    } else {
      ++i;
    }
    while (i < text.size() && space_byte(static_cast<unsigned char>(text[i]))) ++i;
    out.push_back({std::string(text.substr(start, i - start)), start});
  }
  return out;
}

Vocab::Vocab() { add(std::string(kEosToken)); }

Vocab Vocab::build(std::span<const std::string> corpus) {
  Vocab v;
  for (const auto& text : corpus)
    for (auto& p : split_pieces(text)) v.add(p.text);
  for (const auto& text : corpus) {
    for (std::size_t i = 0; i < text.size();) {
      const std::size_t n = std::min(utf8_len(static_cast<unsigned char>(text[i])), text.size() - i);
      v.add(text.substr(i, n));
      i += n;
    }
  }
  return v;
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open vocabulary '" + path + "'");
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(unescape(line));
  if (tokens.empty() || tokens.front() != kEosToken)
    fail(ErrorCode::DataError, "vocabulary must start with " + std::string(kEosToken));
  Vocab v;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    if (v.find(tokens[i])) fail(ErrorCode::DataError, "duplicate vocabulary entry on line " + std::to_string(i + 1));
    v.add(tokens[i]);
  }
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write vocabulary '" + path + "'");
  for (const auto& t : tokens_) out << escape(t) << '\n';
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::add(const std::string& token) {
  if (auto id = find(token)) return *id;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    fail(ErrorCode::UnknownToken, "token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenPiece> Vocab::tokenize(std::string_view text) const {
  std::vector<TokenPiece> out;
  for (auto& piece : split_pieces(text)) {
    if (find(piece.text)) {
      out.push_back(std::move(piece));
      continue;
    }
    for (std::size_t i = 0; i < piece.text.size();) {
      const std::size_t n =
          std::min(utf8_len(static_cast<unsigned char>(piece.text[i])), piece.text.size() - i);
      std::string ch = piece.text.substr(i, n);
      if (!find(ch)) fail(ErrorCode::UnknownToken, "character '" + ch + "' is not in the vocabulary");
      out.push_back({std::move(ch), piece.offset + i});
      i += n;
    }
  }
  return out;
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& p : tokenize(text)) ids.push_back(*find(p.text));
  return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids)
    if (id != kEosId) out += token(id);
  return out;
}

}  // namespace twodpo
