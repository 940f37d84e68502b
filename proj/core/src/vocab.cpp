#include "arcslot/vocab.hpp"

#include <cstdio>

#include "arcslot/error.hpp"

namespace arcslot {

const std::vector<std::string>& Vocab::lexicon() {
  static const std::vector<std::string> words = {
      "background", ":",   "equivalent", "rewrite",  "the",      "->",
      "restate",    "return", "is",      "a",        "paraphrase", "of",
      "what",       "?",   "answer",     "refer",    "to",       "document",
      "question",
  };
  return words;
}

Vocab::Vocab(int content_size) : content_size_(content_size) {
  if (content_size < 2) throw VocabError("content vocabulary too small");
}

int Vocab::size() const { return content_size_ + 2 + static_cast<int>(lexicon().size()); }

bool Vocab::has_word(const std::string& w) const {
  for (const auto& x : lexicon())
    if (x == w) return true;
  return false;
}

int Vocab::word(const std::string& w) const {
  const auto& lex = lexicon();
  for (std::size_t i = 0; i < lex.size(); ++i)
    if (lex[i] == w) return content_size_ + 2 + static_cast<int>(i);
  throw VocabError("unknown word '" + w + "'");
}

std::string Vocab::name(int id) const {
  if (id < 0 || id >= size()) throw VocabError("id " + std::to_string(id) + " outside vocabulary");
  if (id < content_size_) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "w%02d", id);
    return buf;
  }
  if (id == eos()) return "</s>";
  if (id == slot()) return "[B]";
  return lexicon()[static_cast<std::size_t>(id - content_size_ - 2)];
}

}  // namespace arcslot
