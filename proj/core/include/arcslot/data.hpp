#pragma once
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "arcslot/config.hpp"
#include "arcslot/slots.hpp"
#include "arcslot/vocab.hpp"

namespace arcslot {

struct SyntheticExample {
  enum class Kind { reconstruction, qa };
  Kind kind = Kind::reconstruction;
  std::vector<std::vector<int>> segments;
  std::vector<int> question;  // empty for reconstruction
  std::vector<int> target;
  int hops = 1;
  int template_index = 0;
};

inline constexpr int kNumReconTemplates = 4;
const std::vector<std::string>& builtin_recon_template_texts();
const std::string& builtin_qa_template_text();
const std::string& builtin_no_context_template_text();

// Random content segments; the target is their concatenation in order.
std::vector<SyntheticExample> gen_reconstruction_corpus(const DataConfig& cfg, const Vocab& vocab,
                                                        int count, std::uint64_t seed);
// Key-value lookup with distractor segments: each segment holds one (key,
// value) pair, the question names a key, the target is its value. A fraction
// of examples chain two segments (the first value keys the second segment).
std::vector<SyntheticExample> gen_qa_corpus(const DataConfig& cfg, const Vocab& vocab,
                                            int count, std::uint64_t seed);

void write_corpus(const std::string& path, std::span<const SyntheticExample> examples);
std::vector<SyntheticExample> read_corpus(const std::string& path);

struct TrainItem {
  AssembledInput input;
  std::vector<std::uint8_t> is_target;
};

// Turns synthetic examples into model-ready sequences under the builtin
// templates: compressed-slot items for training, recitation items (context
// inlined as plain tokens) for base pretraining, question-only items for the
// no-context baseline.
struct ItemBuilder {
  const Vocab* vocab = nullptr;
  const ContextEncoder* encoder = nullptr;
  std::vector<PromptTemplate> recon_templates;
  PromptTemplate qa_template;
  PromptTemplate no_context_template;

  static ItemBuilder make(const Vocab& vocab, const ContextEncoder& encoder);

  AssembledInput prompt_only(const SyntheticExample& ex) const;
  AssembledInput recitation_prompt(const SyntheticExample& ex) const;
  AssembledInput no_context_prompt(const SyntheticExample& ex) const;

  TrainItem build(const SyntheticExample& ex) const;
  TrainItem build_recitation(const SyntheticExample& ex) const;
  TrainItem build_no_context(const SyntheticExample& ex) const;
};

}  // namespace arcslot
