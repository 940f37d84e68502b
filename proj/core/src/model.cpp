#include "arcslot/model.hpp"

#include "arcslot/error.hpp"

namespace arcslot {

ArcModel ArcModel::init(const ModelConfig& cfg) {
  cfg.validate();
  ArcModel m;
  m.cfg = cfg;
  Rng base_rng(mix_seed(cfg.seed, 1));
  Rng lora_rng(mix_seed(cfg.seed, 2));
  Rng proj_rng(mix_seed(cfg.seed, 3));
  Rng gate_rng(mix_seed(cfg.seed, 4));
  Rng code_rng(mix_seed(cfg.seed, 5));
  m.base = Backbone::init(cfg, base_rng);
  m.base.set_trainable(false);
  m.lora = LoraParams::init(cfg, lora_rng);
  m.proj = Projector::init(cfg.d_r, cfg.d, proj_rng);
  m.encoder = ContextEncoder::init(cfg.vocab_size, cfg.d_r, code_rng);
  m.gates = GateParams::init(cfg, gate_rng);
  return m;
}

void ArcModel::visit_params(const ParamVisitor& fn) {
  fn("enc.codebook", encoder.codebook);
  base.visit_params(fn);
  proj.visit_params(fn);
  lora.visit_params(fn);
  gates.visit_params(fn);
}

std::vector<std::pair<std::string, Tensor*>> ArcModel::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  visit_params([&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
  return out;
}

Node build_h0(Tape& t, ArcModel& m, const AssembledInput& in) {
  in.layout.validate();
  if (in.ctx.m != in.layout.m())
    throw ContractError("context has " + std::to_string(in.ctx.m) + " slots but layout reserves " +
                        std::to_string(in.layout.m()));
  Node emb = m.base.embed_tokens(t, in.token_ids);
  if (in.ctx.m == 0) return emb;
  Node projected = m.proj.project(t, t.constant(in.ctx.e));
  Node scattered = t.scatter_rows(projected, in.layout.positions, in.layout.sequence_length);
  BroadcastMask mask = BroadcastMask::from_positions(in.layout.positions, in.layout.sequence_length);
  return t.row_update(emb, scattered, t.constant(mask.m));
}

Node recursive_refine(Tape& t, ArcModel& m, int layer, Node h, const BroadcastMask& mask,
                      std::span<const int> positions, ForwardMode mode, const DropoutCtx* drop,
                      GateTrace& trace, bool record_probs, int* extra_evals) {
  const int n = t.val(h).rows();
  const int n_slots = static_cast<int>(positions.size());
  for (int step = 1; step < m.cfg.max_loops; ++step) {
    Node h_slots = t.gather_rows(h, positions);
    Node g = gate_probability(t, m.gates, layer, h_slots);
    if (record_probs) {
      GateTrace::StepProbs sp;
      sp.layer = layer;
      sp.step = step;
      sp.probs = t.val(g).data;
      trace.recorded.push_back(std::move(sp));
    }

    Node coeff;
    std::vector<float> fired(static_cast<std::size_t>(n_slots), 0.f);
    if (mode == ForwardMode::infer) {
      coeff = t.hard_threshold(g, 0.5f);
      fired = t.val(coeff).data;
      bool any = false;
      for (float f : fired) any = any || f != 0.f;
      if (!any) return h;  // exact conditional update: nothing left to refine
    } else if (mode == ForwardMode::train) {
      coeff = ste_gate(t, g);
      fired = t.val(coeff).data;
    } else {
      coeff = g;
      for (int j = 0; j < n_slots; ++j)
        fired[static_cast<std::size_t>(j)] = t.val(g).data[static_cast<std::size_t>(j)] >= 0.5f ? 1.f : 0.f;
    }

    Node cand = adapted_block(t, m.base, m.lora, layer, h, mask, drop);
    if (extra_evals) ++*extra_evals;
    Node coeff_full = t.scatter_rows(coeff, positions, n);
    h = t.row_update(h, cand, coeff_full);

    for (int j = 0; j < n_slots; ++j)
      if (fired[static_cast<std::size_t>(j)] != 0.f) ++trace.loop(layer, j);
  }
  return h;
}

ForwardOut model_forward(Tape& t, ArcModel& m, const AssembledInput& in, ForwardMode mode,
                         const DropoutCtx* drop, bool record_probs) {
  const int n = static_cast<int>(in.token_ids.size());
  if (n > m.cfg.max_seq_len)
    throw CapacityError("sequence of " + std::to_string(n) + " tokens exceeds max_seq_len=" +
                        std::to_string(m.cfg.max_seq_len));
  ForwardOut out;
  out.trace = GateTrace::fresh(m.cfg.n_layers, in.ctx.m, m.cfg.max_loops);
  BroadcastMask mask = BroadcastMask::from_positions(in.layout.positions, n);
  Node h = build_h0(t, m, in);
  const bool refinable = m.gating_enabled && m.cfg.max_loops > 1 && mask.any();
  for (int layer = 0; layer < m.cfg.n_layers; ++layer) {
    h = adapted_block(t, m.base, m.lora, layer, h, mask, drop);
    if (refinable && m.gates.is_gated(layer))
      h = recursive_refine(t, m, layer, h, mask, in.layout.positions, mode, drop, out.trace,
                           record_probs, &out.extra_refinements);
  }
  out.h_final = h;
  out.logits = m.base.logits(t, h);
  return out;
}

}  // namespace arcslot
