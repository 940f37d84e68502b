#pragma once
#include <span>

#include "arcslot/transformer.hpp"

namespace arcslot {

// Low-rank residual for one adapted weight W [out x in]: down map A [rank x in]
// and up map B [out x rank]. B starts at zero, so a fresh adapter is an exact
// no-op on the adapted path.
struct LoraPair {
  Tensor a;
  Tensor b;
  static LoraPair init(int out, int in, int rank, float std, Rng& rng);
};

// One adapter per block: attention query/value projections plus both
// feed-forward maps.
struct LoraLayer {
  LoraPair q, v, f1, f2;
};

struct LoraParams {
  std::vector<LoraLayer> layers;
  int rank = 0;
  float alpha = 0.f;
  float dropout = 0.f;

  float scaling() const { return alpha / static_cast<float>(rank); }
  static LoraParams init(const ModelConfig& cfg, Rng& rng);
  void set_trainable(bool on);
  void visit_params(const ParamVisitor& fn);
};

// x.W^T (+ bias) + scaling * drop(x).A^T.B^T
Node lora_linear(Tape& t, Node x, Affine& w, LoraPair& pair, float scaling,
                 float dropout_rate, const DropoutCtx* drop);

// {0,1} column selecting the rows that leave the frozen path.
struct BroadcastMask {
  Tensor m;  // [n x 1]
  static BroadcastMask from_positions(std::span<const int> positions, int n);
  bool any() const;
  int length() const { return m.rows(); }
};

// Frozen block output plus the mask-selected low-rank residual: rows with
// mask 0 are bitwise the frozen path, rows with mask 1 bitwise the adapted
// path. Skips the adapted evaluation entirely when the mask is all zero.
Node adapted_block(Tape& t, Backbone& base, LoraParams& lora, int layer, Node h,
                   const BroadcastMask& mask, const DropoutCtx* drop);

}  // namespace arcslot
