#pragma once
#include <string>
#include <vector>

namespace arcslot {

// Fixed small vocabulary: content ids, then end-of-sequence, then the
// reserved slot placeholder, then a short instruction lexicon used by the
// prompt templates. No tokenizer is trained.
class Vocab {
 public:
  explicit Vocab(int content_size = 64);

  int content_size() const { return content_size_; }
  int eos() const { return content_size_; }
  int slot() const { return content_size_ + 1; }
  int size() const;

  bool has_word(const std::string& w) const;
  int word(const std::string& w) const;  // VocabError on unknown word
  std::string name(int id) const;

  static const std::vector<std::string>& lexicon();

 private:
  int content_size_;
};

}  // namespace arcslot
