#include "arcslot/transformer.hpp"

#include <cmath>

#include "arcslot/error.hpp"
#include "arcslot/lora.hpp"

namespace arcslot {

Affine Affine::gaussian(int out, int in, float std, Rng& rng, bool bias) {
  Affine a;
  a.w = Tensor::gaussian(out, in, std, rng);
  if (bias) a.b = Tensor::zeros(1, out);
  return a;
}

Affine Affine::zeros(int out, int in, bool bias) {
  Affine a;
  a.w = Tensor::zeros(out, in);
  if (bias) a.b = Tensor::zeros(1, out);
  return a;
}

Node Affine::apply(Tape& t, Node x) {
  Node y = t.matmul_nt(x, t.leaf(&w));
  if (b.numel() > 0) y = t.add_bias(y, t.leaf(&b));
  return y;
}

void Affine::set_trainable(bool on) {
  w.requires_grad = on;
  if (b.numel() > 0) b.requires_grad = on;
}

Backbone Backbone::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Backbone m;
  m.vocab_size = cfg.vocab_size;
  m.d = cfg.d;
  m.n_layers = cfg.n_layers;
  m.n_heads = cfg.n_heads;
  m.ffn_mult = cfg.ffn_mult;
  m.max_seq_len = cfg.max_seq_len;
  const float std = 0.02f;
  m.tok_emb = Tensor::gaussian(cfg.vocab_size, cfg.d, std, rng);
  m.pos_emb = Tensor::gaussian(cfg.max_seq_len, cfg.d, std, rng);
  m.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& lw : m.layers) {
    lw.ln1_g = Tensor::full(1, cfg.d, 1.f);
    lw.ln1_b = Tensor::zeros(1, cfg.d);
    lw.ln2_g = Tensor::full(1, cfg.d, 1.f);
    lw.ln2_b = Tensor::zeros(1, cfg.d);
    lw.wq = Affine::gaussian(cfg.d, cfg.d, std, rng);
    lw.wk = Affine::gaussian(cfg.d, cfg.d, std, rng);
    lw.wv = Affine::gaussian(cfg.d, cfg.d, std, rng);
    lw.wo = Affine::gaussian(cfg.d, cfg.d, std, rng);
    lw.ffn1 = Affine::gaussian(cfg.ffn_mult * cfg.d, cfg.d, std, rng);
    lw.ffn2 = Affine::gaussian(cfg.d, cfg.ffn_mult * cfg.d, std, rng);
  }
  m.final_ln_g = Tensor::full(1, cfg.d, 1.f);
  m.final_ln_b = Tensor::zeros(1, cfg.d);
  m.lm_w = Tensor::gaussian(cfg.vocab_size, cfg.d, std, rng);
  return m;
}

void Backbone::set_trainable(bool on) {
  visit_params([on](const std::string&, Tensor& t) { t.requires_grad = on; });
}

void Backbone::visit_params(const ParamVisitor& fn) {
  fn("base.tok_emb", tok_emb);
  fn("base.pos_emb", pos_emb);
  for (int l = 0; l < n_layers; ++l) {
    auto& lw = layers[static_cast<std::size_t>(l)];
    const std::string p = "base.layer" + std::to_string(l) + ".";
    fn(p + "ln1.g", lw.ln1_g);
    fn(p + "ln1.b", lw.ln1_b);
    fn(p + "ln2.g", lw.ln2_g);
    fn(p + "ln2.b", lw.ln2_b);
    fn(p + "attn.wq.w", lw.wq.w);
    fn(p + "attn.wq.b", lw.wq.b);
    fn(p + "attn.wk.w", lw.wk.w);
    fn(p + "attn.wk.b", lw.wk.b);
    fn(p + "attn.wv.w", lw.wv.w);
    fn(p + "attn.wv.b", lw.wv.b);
    fn(p + "attn.wo.w", lw.wo.w);
    fn(p + "attn.wo.b", lw.wo.b);
    fn(p + "ffn1.w", lw.ffn1.w);
    fn(p + "ffn1.b", lw.ffn1.b);
    fn(p + "ffn2.w", lw.ffn2.w);
    fn(p + "ffn2.b", lw.ffn2.b);
  }
  fn("base.final_ln.g", final_ln_g);
  fn("base.final_ln.b", final_ln_b);
  fn("base.lm_head.w", lm_w);
}

Node Backbone::embed_tokens(Tape& t, std::span<const int> ids) {
  if (static_cast<int>(ids.size()) > max_seq_len)
    throw CapacityError("sequence of " + std::to_string(ids.size()) + " tokens exceeds max_seq_len=" +
                        std::to_string(max_seq_len));
  for (int id : ids)
    if (id < 0 || id >= vocab_size)
      throw VocabError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab_size));
  Node tok = t.gather_embedding(t.leaf(&tok_emb), ids);
  std::vector<int> positions(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
  Node pos = t.gather_embedding(t.leaf(&pos_emb), positions);
  return t.add(tok, pos);
}

Node Backbone::block_forward(Tape& t, int layer, Node h, const LoraLayer* lora,
                             const DropoutCtx* drop, float lora_scaling, float lora_dropout) {
  if (layer < 0 || layer >= n_layers)
    throw ContractError("layer " + std::to_string(layer) + " outside [0," + std::to_string(n_layers) + ")");
  auto& lw = layers[static_cast<std::size_t>(layer)];
  const int head_dim = d / n_heads;

  auto linear = [&](Node x, Affine& aff, LoraPair* pair) {
    if (pair == nullptr) return aff.apply(t, x);
    return lora_linear(t, x, aff, *pair, lora_scaling, lora_dropout, drop);
  };

  LoraPair* lq = lora ? const_cast<LoraPair*>(&lora->q) : nullptr;
  LoraPair* lv = lora ? const_cast<LoraPair*>(&lora->v) : nullptr;
  LoraPair* lf1 = lora ? const_cast<LoraPair*>(&lora->f1) : nullptr;
  LoraPair* lf2 = lora ? const_cast<LoraPair*>(&lora->f2) : nullptr;

  Node x1 = t.layer_norm(h, t.leaf(&lw.ln1_g), t.leaf(&lw.ln1_b));
  Node q = linear(x1, lw.wq, lq);
  Node k = lw.wk.apply(t, x1);
  Node v = linear(x1, lw.wv, lv);

  std::vector<Node> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  const float inv_sqrt = 1.f / std::sqrt(static_cast<float>(head_dim));
  for (int hidx = 0; hidx < n_heads; ++hidx) {
    const int c0 = hidx * head_dim, c1 = (hidx + 1) * head_dim;
    Node qh = t.slice_cols(q, c0, c1);
    Node kh = t.slice_cols(k, c0, c1);
    Node vh = t.slice_cols(v, c0, c1);
    heads.push_back(t.causal_attention(qh, kh, vh, inv_sqrt));
  }
  Node merged = t.concat_cols(heads);
  Node attn_out = lw.wo.apply(t, merged);
  Node h2 = t.add(h, attn_out);

  Node x2 = t.layer_norm(h2, t.leaf(&lw.ln2_g), t.leaf(&lw.ln2_b));
  Node f1 = t.silu(linear(x2, lw.ffn1, lf1));
  Node f2 = linear(f1, lw.ffn2, lf2);
  return t.add(h2, f2);
}

Node Backbone::layer_forward(Tape& t, int layer, Node h) {
  return block_forward(t, layer, h, nullptr, nullptr);
}

Node Backbone::logits(Tape& t, Node h) {
  Node x = t.layer_norm(h, t.leaf(&final_ln_g), t.leaf(&final_ln_b));
  return t.matmul_nt(x, t.leaf(&lm_w));
}

}  // namespace arcslot
