#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace dfusion {

// Token <-> string mapping over the templated edit language. Id 0 is padding.
class Vocabulary {
 public:
  // The standard vocabulary: pad, connectives, verbs, shapes, colors and
  // row/column tokens for grids up to kMaxGridSize.
  static Vocabulary standard();
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  std::vector<int> encode(const std::vector<std::string>& words) const;
  std::string decode(const std::vector<int>& ids) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

inline constexpr int kMaxVocabulary = 64;

}  // namespace dfusion
