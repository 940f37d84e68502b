#pragma once
#include <span>
#include <string>
#include <vector>

#include "arcslot/transformer.hpp"
#include "arcslot/vocab.hpp"

namespace arcslot {

// One row per compressed segment, plus the token count it replaced.
struct CompressedContext {
  Tensor e;                    // [m x d_r]
  int m = 0;
  int source_token_count = 0;
  double compression_ratio() const { return m > 0 ? static_cast<double>(source_token_count) / m : 0.0; }
};

struct SlotLayout {
  std::vector<int> positions;  // strictly increasing indices into the sequence
  int sequence_length = 0;
  int m() const { return static_cast<int>(positions.size()); }
  void validate() const;
};

// Frozen random codebook with bag-of-tokens mean pooling per segment. Token
// order within a segment does not affect the embedding: pooling sums
// per-token counts in id order.
struct ContextEncoder {
  Tensor codebook;  // [vocab x d_r]
  static ContextEncoder init(int vocab, int d_r, Rng& rng);
  CompressedContext encode(std::span<const std::vector<int>> segments) const;
};

// Two affine maps d_r -> d_proj -> d with a sigmoid-weighted linear unit
// between. The final map starts at zero so untrained slots are silent.
struct Projector {
  Affine fc1;
  Affine fc2;
  static Projector init(int d_r, int d, Rng& rng);
  Node project(Tape& t, Node e);
  void set_trainable(bool on);
  void visit_params(const ParamVisitor& fn);
};

struct TemplateTok {
  enum class Kind { word, slot, question } kind = Kind::word;
  int token = -1;
};

struct PromptTemplate {
  std::vector<TemplateTok> items;
  int slot_marks() const;
  bool has_question() const;
};

// Whitespace-separated words; "[B]" marks a slot, "[Q]" the question. Any
// other bracketed marker is rejected; plain words must be in the lexicon.
PromptTemplate parse_template(const std::string& text, const Vocab& vocab);
PromptTemplate load_template_file(const std::string& path, const Vocab& vocab);
// A template with a single slot mark expands to m consecutive marks.
PromptTemplate instantiate(const PromptTemplate& tmpl, int m);

struct AssembledInput {
  std::vector<int> token_ids;
  SlotLayout layout;
  CompressedContext ctx;
};

// Fills the template: slot marks become reserved placeholder ids at the
// recorded positions, the question mark is replaced by question_ids. The
// template must declare exactly ctx.m slot marks.
AssembledInput assemble(std::span<const int> question_ids, const CompressedContext& ctx,
                        const PromptTemplate& tmpl, const Vocab& vocab);
AssembledInput assemble_plain(std::vector<int> token_ids);

}  // namespace arcslot
