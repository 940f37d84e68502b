#include "arcslot/lora.hpp"

#include "arcslot/error.hpp"

namespace arcslot {

LoraPair LoraPair::init(int out, int in, int rank, float std, Rng& rng) {
  LoraPair p;
  p.a = Tensor::gaussian(rank, in, std, rng);
  p.b = Tensor::zeros(out, rank);
  return p;
}

LoraParams LoraParams::init(const ModelConfig& cfg, Rng& rng) {
  LoraParams lp;
  lp.rank = cfg.lora_rank;
  lp.alpha = cfg.lora_alpha;
  lp.dropout = cfg.lora_dropout;
  const float std = 0.02f;
  lp.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& l : lp.layers) {
    l.q = LoraPair::init(cfg.d, cfg.d, cfg.lora_rank, std, rng);
    l.v = LoraPair::init(cfg.d, cfg.d, cfg.lora_rank, std, rng);
    l.f1 = LoraPair::init(cfg.ffn_mult * cfg.d, cfg.d, cfg.lora_rank, std, rng);
    l.f2 = LoraPair::init(cfg.d, cfg.ffn_mult * cfg.d, cfg.lora_rank, std, rng);
  }
  return lp;
}

void LoraParams::set_trainable(bool on) {
  visit_params([on](const std::string&, Tensor& t) { t.requires_grad = on; });
}

void LoraParams::visit_params(const ParamVisitor& fn) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "lora.layer" + std::to_string(l) + ".";
    fn(p + "q.A", layers[l].q.a);
    fn(p + "q.B", layers[l].q.b);
    fn(p + "v.A", layers[l].v.a);
    fn(p + "v.B", layers[l].v.b);
    fn(p + "f1.A", layers[l].f1.a);
    fn(p + "f1.B", layers[l].f1.b);
    fn(p + "f2.A", layers[l].f2.a);
    fn(p + "f2.B", layers[l].f2.b);
  }
}

Node lora_linear(Tape& t, Node x, Affine& w, LoraPair& pair, float scaling,
                 float dropout_rate, const DropoutCtx* drop) {
  Node base = w.apply(t, x);
  Node lx = x;
  if (drop != nullptr && drop->active() && dropout_rate > 0.f)
    lx = t.dropout(lx, dropout_rate, *drop->rng);
  Node down = t.matmul_nt(lx, t.leaf(&pair.a));
  Node up = t.matmul_nt(down, t.leaf(&pair.b));
  return t.add(base, t.scale(up, scaling));
}

BroadcastMask BroadcastMask::from_positions(std::span<const int> positions, int n) {
  BroadcastMask mk;
  mk.m = Tensor::zeros(n, 1);
  for (int p : positions) {
    if (p < 0 || p >= n)
      throw DimError("mask position " + std::to_string(p) + " outside sequence of " + std::to_string(n));
    mk.m.data[static_cast<std::size_t>(p)] = 1.f;
  }
  return mk;
}

bool BroadcastMask::any() const {
  for (float v : m.data)
    if (v != 0.f) return true;
  return false;
}

Node adapted_block(Tape& t, Backbone& base, LoraParams& lora, int layer, Node h,
                   const BroadcastMask& mask, const DropoutCtx* drop) {
  if (mask.length() != t.val(h).rows())
    throw DimError("mask of " + std::to_string(mask.length()) + " rows for states " + t.val(h).shape_str());
  Node frozen = base.block_forward(t, layer, h, nullptr, nullptr);
  if (!mask.any()) return frozen;
  Node adapted = base.block_forward(t, layer, h, &lora.layers[static_cast<std::size_t>(layer)], drop,
                                    lora.scaling(), lora.dropout);
  return t.row_update(frozen, adapted, t.constant(mask.m));
}

}  // namespace arcslot
