#include "detailfusion/data/vocabulary.hpp"

#include "detailfusion/common/errors.hpp"
#include "detailfusion/data/scene.hpp"

namespace dfusion {

Vocabulary Vocabulary::standard() {
  std::vector<std::string> t = {"<pad>", "and", "to", "add", "remove", "recolor", "move"};
  for (int s = 0; s < kNumShapes; ++s) t.emplace_back(to_string(static_cast<Shape>(s)));
  for (int c = 0; c < kNumColors; ++c) t.emplace_back(to_string(static_cast<Color>(c)));
  for (int r = 0; r < kMaxGridSize; ++r) t.push_back("r" + std::to_string(r));
  for (int c = 0; c < kMaxGridSize; ++c) t.push_back("c" + std::to_string(c));
  return from_tokens(std::move(t));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.empty() || tokens.size() > static_cast<std::size_t>(kMaxVocabulary))
    throw ValidationError("vocabulary size must be in [1, 64]");
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second)
      throw ValidationError("duplicate vocabulary token '" + v.tokens_[i] + "'");
  }
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw ValidationError("token '" + token + "' not in vocabulary");
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw ValidationError("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

}  // namespace dfusion
