#pragma once
#include <span>
#include <string>
#include <vector>

#include "arcslot/transformer.hpp"

namespace arcslot {

// Per gated layer: a two-affine-map network d -> gate_hidden -> 1, sigmoid
// applied at the use site. One net per layer, shared across recursion steps
// and slots. The final map starts at zero with bias -1, so training begins
// with every gate closed (fire probability ~0.27).
struct GateNet {
  Affine fc1, fc2;
};

struct GateParams {
  std::vector<int> gated_layers;  // sorted
  std::vector<GateNet> nets;      // parallel to gated_layers

  static GateParams init(const ModelConfig& cfg, Rng& rng);
  bool is_gated(int layer) const;
  int net_index(int layer) const;  // ContractError when not gated
  void set_trainable(bool on);
  void visit_params(const ParamVisitor& fn);
  // Test hook: shifts every final bias so probabilities saturate or stay shut.
  void set_all_biases(float b);
};

// sigmoid(fc2(silu(fc1(h)))) per slot row, in (0,1).
Node gate_probability(Tape& t, GateParams& gates, int layer, Node h_slots);

// Hard {0,1} forward with identity gradient to the continuous probability:
// g + stopgrad(indicator(g >= 0.5) - g). The forward value is exactly 0.0 or
// 1.0 in float32 (1 - g is exact for g in [0.5, 1]).
Node ste_gate(Tape& t, Node g);

// Per-layer, per-slot total pass counts (mandatory pass included), plus
// per-step probabilities when recording is on.
struct GateTrace {
  int n_layers = 0;
  int n_slots = 0;
  int max_loops = 1;
  std::vector<int> loops;  // [n_layers * n_slots], all 1 at start

  struct StepProbs {
    int layer = 0;
    int step = 0;
    std::vector<float> probs;
  };
  std::vector<StepProbs> recorded;

  static GateTrace fresh(int n_layers, int n_slots, int max_loops);
  int loop(int layer, int slot) const;
  int& loop(int layer, int slot);
  bool counts_equal(const GateTrace& other) const;
};

// One line per gated layer: layer=<l> traj=[<cell>, ...] where a cell is 'L'
// repeated loop-count times, padded with '0' to width max_loops-1 when
// shorter, then '.' appended while below max_loops. max_loops=3 renders
// counts 1,2,3 as "L0.", "LL.", "LLL".
std::string format_trace_cell(int count, int max_loops);
std::string format_trace(const GateTrace& trace, std::span<const int> gated_layers);
// Inverse of format_trace; lines starting with '#' and blank lines are
// skipped. Layers absent from the text keep count 1.
GateTrace parse_trace(const std::string& text, int n_layers_hint = -1);

}  // namespace arcslot
