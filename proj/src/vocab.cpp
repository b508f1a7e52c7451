#include "rcrank/vocab.hpp"

#include <cctype>

#include "rcrank/error.hpp"

namespace rcrank {

namespace {

std::vector<std::string> builtin_pieces() {
  std::vector<std::string> v = {"<pad>", "<unk>", "<mask>", "<num>"};
  const char* keywords[] = {
      "select", "from",   "where", "and",   "or",     "not",    "join",  "inner", "left",  "right",  "outer",
      "on",     "group",  "by",    "order", "limit",  "insert", "into",  "values", "update", "set",   "distinct",
      "as",     "asc",    "desc",  "count", "sum",    "avg",    "min",   "max",   "having", "union",  "all",
      "exists", "in",     "is",    "null",  "between", "like",  "case",  "when",  "then",   "else",   "end"};
  const char* punct[] = {"(", ")", ",", ".", ";", "=", "<", ">", "<=", ">=", "!=", "<>", "*", "+", "-", "/", "%"};
  const char* pieces[] = {"users",    "orders",  "lineitem", "products", "customers", "events",   "sessions",
                          "payments", "inventory", "shipments", "id",      "user",     "order",    "product",
                          "name",     "region",  "status",   "created",  "qty",       "price",    "discount",
                          "category", "stock",   "segment",  "kind",     "ts",        "duration", "device",
                          "amount",   "method",  "warehouse", "weight",  "sub"};
  for (const char* k : keywords) v.push_back(k);
  for (const char* p : punct) v.push_back(p);
  for (char c = 'a'; c <= 'z'; ++c) v.push_back(std::string(1, c));
  for (const char* p : pieces) v.push_back(p);
  return v;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> pieces) : pieces_(std::move(pieces)) {
  for (size_t i = 0; i < pieces_.size(); ++i) index_.emplace(pieces_[i], static_cast<int>(i));
}

const Vocabulary& Vocabulary::builtin() {
  static const Vocabulary v(builtin_pieces());
  return v;
}

int Vocabulary::id(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view piece) const { return index_.count(std::string(piece)) > 0; }

TokenSeq tokenize_sql(std::string_view text, const Vocabulary& vocab, int max_len) {
  if (text.empty()) raise(ErrorCode::InvalidInput, "empty SQL text");
  TokenSeq out;
  size_t i = 0;
  auto push = [&](int id, std::string raw) {
    if (static_cast<int>(out.tokens.size()) >= max_len) {
      out.truncated = true;
      return false;
    }
    out.tokens.push_back({id, std::move(raw)});
    return true;
  };
  while (i < text.size()) {
    char c = static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      size_t j = i;
      while (j < text.size() &&
             (std::isdigit(static_cast<unsigned char>(text[j])) || text[j] == '.')) ++j;
      if (!push(Vocabulary::kNum, std::string(text.substr(i, j - i)))) break;
      i = j;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t j = i;
      std::string word;
      while (j < text.size() && is_word_char(text[j])) {
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[j]))));
        ++j;
      }
      // split identifier on underscores into pieces
      size_t start = 0;
      bool full = false;
      while (start <= word.size() && !full) {
        size_t us = word.find('_', start);
        std::string piece = word.substr(start, us == std::string::npos ? std::string::npos : us - start);
        if (!piece.empty()) {
          int id = vocab.id(piece);
          if (std::isdigit(static_cast<unsigned char>(piece[0]))) id = Vocabulary::kNum;
          full = !push(id, piece);
        }
        if (us == std::string::npos) break;
        start = us + 1;
      }
      if (full) break;
      i = j;
      continue;
    }
    // punctuation / operators, longest match first
    std::string two;
    if (i + 1 < text.size()) {
      two.push_back(c);
      two.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i + 1]))));
    }
    if (!two.empty() && vocab.contains(two) && (two == "<=" || two == ">=" || two == "!=" || two == "<>")) {
      if (!push(vocab.id(two), two)) break;
      i += 2;
      continue;
    }
    std::string one(1, c);
    if (!push(vocab.id(one), one)) break;
    ++i;
  }
  if (out.tokens.empty()) raise(ErrorCode::InvalidInput, "SQL text yields no tokens");
  return out;
}

std::string detokenize(const TokenSeq& seq) {
  std::string out;
  for (size_t i = 0; i < seq.tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += seq.tokens[i].text;
  }
  return out;
}

}  // namespace rcrank
