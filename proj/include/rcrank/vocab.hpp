#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rcrank {

// Closed SQL vocabulary: specials, keywords, punctuation, single letters, and
// the identifier pieces used by the synthetic schema. Identifiers split on
// underscores; numbers collapse to the NUM class token.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kMask = 2;
  static constexpr int kNum = 3;

  static const Vocabulary& builtin();

  int id(std::string_view piece) const;
  const std::string& piece(int id) const { return pieces_[static_cast<size_t>(id)]; }
  int size() const { return static_cast<int>(pieces_.size()); }
  bool contains(std::string_view piece) const;

 private:
  explicit Vocabulary(std::vector<std::string> pieces);
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> index_;
};

struct Token {
  int id = Vocabulary::kUnk;
  std::string text;
  bool operator==(const Token&) const = default;
};

struct TokenSeq {
  std::vector<Token> tokens;
  bool truncated = false;
  size_t length() const { return tokens.size(); }
};

TokenSeq tokenize_sql(std::string_view text, const Vocabulary& vocab, int max_len = 128);
std::string detokenize(const TokenSeq& seq);

}  // namespace rcrank
