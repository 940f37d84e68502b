#pragma once
#include "arcslot/config.hpp"
#include "arcslot/gate.hpp"
#include "arcslot/lora.hpp"
#include "arcslot/slots.hpp"

namespace arcslot {

// train: STE gates — hard {0,1} forward, continuous-path gradients; every
//        refinement step executes so the gradient path through closed gates
//        stays live.
// infer: strictly binary gates; the step loop exits once every gate is shut,
//        so untouched slots keep their post-mandatory states bitwise.
// soft:  continuous gate coefficients everywhere; the differentiable
//        surrogate used for finite-difference verification.
enum class ForwardMode { train, infer, soft };

struct ArcModel {
  ModelConfig cfg;
  Backbone base;
  LoraParams lora;
  Projector proj;
  ContextEncoder encoder;
  GateParams gates;
  bool gating_enabled = true;

  static ArcModel init(const ModelConfig& cfg);
  void visit_params(const ParamVisitor& fn);
  std::vector<std::pair<std::string, Tensor*>> named_params();
};

struct ForwardOut {
  Node logits;
  Node h_final;
  GateTrace trace;
  int extra_refinements = 0;  // candidate computations beyond the mandatory passes
};

// Initial hidden states: projected slot embeddings at the reserved positions
// (bitwise), token + position embeddings everywhere else (bitwise).
Node build_h0(Tape& t, ArcModel& m, const AssembledInput& in);

// Gate-controlled refinement at one layer, entered with the post-mandatory
// states. Non-slot rows are never touched.
Node recursive_refine(Tape& t, ArcModel& m, int layer, Node h, const BroadcastMask& mask,
                      std::span<const int> positions, ForwardMode mode, const DropoutCtx* drop,
                      GateTrace& trace, bool record_probs, int* extra_evals);

ForwardOut model_forward(Tape& t, ArcModel& m, const AssembledInput& in, ForwardMode mode,
                         const DropoutCtx* drop = nullptr, bool record_probs = false);

}  // namespace arcslot
