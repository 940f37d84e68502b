#pragma once
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "arcslot/config.hpp"
#include "arcslot/tape.hpp"

namespace arcslot {

struct LoraLayer;

// Low-rank branch dropout, active only while training. The rate comes from
// the adapter configuration; this just carries the seeded stream.
struct DropoutCtx {
  Rng* rng = nullptr;
  bool active() const { return rng != nullptr; }
};

struct Affine {
  Tensor w;  // [out x in]
  Tensor b;  // [1 x out]; empty means no bias

  static Affine gaussian(int out, int in, float std, Rng& rng, bool bias = true);
  static Affine zeros(int out, int in, bool bias = true);
  Node apply(Tape& t, Node x);
  void set_trainable(bool on);
};

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

struct LayerWeights {
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  Affine wq, wk, wv, wo, ffn1, ffn2;
};

// Minimal decoder-only transformer: token + learned absolute position
// embeddings, pre-norm causal blocks, final norm, untied unbiased output
// projection. Frozen for the entire slot-training pipeline; trainable only
// during the short base pretraining run that produces its weights.
struct Backbone {
  int vocab_size = 0, d = 0, n_layers = 0, n_heads = 0, ffn_mult = 0, max_seq_len = 0;
  Tensor tok_emb;  // [vocab x d]
  Tensor pos_emb;  // [max_seq_len x d]
  std::vector<LayerWeights> layers;
  Tensor final_ln_g, final_ln_b;
  Tensor lm_w;  // [vocab x d]

  static Backbone init(const ModelConfig& cfg, Rng& rng);
  void set_trainable(bool on);
  void visit_params(const ParamVisitor& fn);

  // Row i is the embedding of ids[i] plus the position-i encoding.
  Node embed_tokens(Tape& t, std::span<const int> ids);
  // Pre-norm causal block; lora == nullptr gives the frozen path.
  Node block_forward(Tape& t, int layer, Node h, const LoraLayer* lora, const DropoutCtx* drop,
                     float lora_scaling = 0.f, float lora_dropout = 0.f);
  Node layer_forward(Tape& t, int layer, Node h);
  // Final norm + output projection; row i scores the token after position i.
  Node logits(Tape& t, Node h);
};

}  // namespace arcslot
