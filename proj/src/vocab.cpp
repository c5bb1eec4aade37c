#include "lingo/vocab.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lingo {

const std::vector<std::string>& Vocabulary::function_words() {
  static const std::vector<std::string> words = {
      "what", "is", "it", "this", "there", "do",
      "you",  "see", "can", "observe", "tell", "i"};
  return words;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& class_names,
                             int embed_dim) {
  Vocabulary v;
  v.embed_dim_ = embed_dim;
  auto push = [&v](const std::string& tok, bool is_class) {
    if (v.index_.count(tok)) {
      if (is_class)
        throw std::runtime_error("class name collides with vocabulary token: " +
                                 tok);
      return;
    }
    v.index_[tok] = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back(tok);
    v.class_mask_.push_back(is_class);
    if (is_class) v.class_ids_.push_back(v.index_[tok]);
  };
  push("<pad>", false);
  push("<eos>", false);
  for (const auto& w : function_words()) push(w, false);
  for (const auto& c : class_names) push(c, true);
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end())
    throw std::runtime_error("token not in vocabulary: " + token);
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw std::runtime_error("token id out of range: " + std::to_string(id));
  return tokens_[id];
}

bool Vocabulary::contains(const std::string& token) const {
  return index_.count(token) > 0;
}

bool Vocabulary::is_class_name(int id) const {
  return id >= 0 && id < size() && class_mask_[id];
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) out.push_back(id(tok));
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    if (i == eos() || i == pad()) continue;
    if (!out.empty()) out += ' ';
    out += token(i);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write vocabulary file: " + path);
  for (const auto& t : tokens_) f << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path, int embed_dim,
                            const std::vector<std::string>& class_names) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read vocabulary file: " + path);
  Vocabulary fresh = build(class_names, embed_dim);
  std::string line;
  int id = 0;
  while (std::getline(f, line)) {
    if (id >= fresh.size() || fresh.tokens_[id] != line)
      throw std::runtime_error("vocabulary file disagrees at line " +
                               std::to_string(id) + ": " + line);
    ++id;
  }
  if (id != fresh.size())
    throw std::runtime_error("vocabulary file truncated: " + path);
  return fresh;
}

}  // namespace lingo
