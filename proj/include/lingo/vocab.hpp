#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace lingo {

// Token table: dense ids, <pad>=0 and <eos>=1 reserved, then the grammar's
// function words, then class names. Serialized one token per line, line
// number = id.
class Vocabulary {
 public:
  static const std::vector<std::string>& function_words();
  static Vocabulary build(const std::vector<std::string>& class_names,
                          int embed_dim);

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  bool contains(const std::string& token) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  int eos() const { return 1; }
  int pad() const { return 0; }
  int embed_dim() const { return embed_dim_; }
  bool is_class_name(int id) const;
  const std::vector<int>& class_ids() const { return class_ids_; }

  // whitespace tokenization over the fixed terminal set
  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path, int embed_dim,
                         const std::vector<std::string>& class_names);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<bool> class_mask_;
  std::vector<int> class_ids_;
  int embed_dim_ = 0;
};

}  // namespace lingo
