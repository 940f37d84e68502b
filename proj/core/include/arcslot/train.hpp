#pragma once
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "arcslot/data.hpp"
#include "arcslot/gradcheck.hpp"
#include "arcslot/model.hpp"

namespace arcslot {

// One stage of the pipeline. Stage numbers fix the trainable sets and the
// gating switch: stages 1 and 2 update projector and adapters with gating
// off (stage 1 on reconstruction, stage 2 on lookup QA); stage 3 also trains
// the gates with gating on. Stage 0 is the base pretraining run that
// produces the frozen backbone.
struct StageSpec {
  int stage = 1;
  bool train_projector = true;
  bool train_lora = true;
  bool train_gate = false;
  bool gating_enabled = false;
  enum class Dataset { reconstruction, qa };
  Dataset dataset = Dataset::reconstruction;
  int steps = 2000;
  float learning_rate = 2e-4f;
  float warmup_ratio = 0.03f;
  std::string schedule = "linear";
  int batch_size = 8;
  int grad_accum = 1;
  float weight_decay = 0.f;
  float clip_norm = 1.f;
  int log_every = 50;
  int corpus_size = 4096;

  static StageSpec defaults(int stage);
  void validate() const;
};

struct AdamW {
  std::vector<Tensor*> params;
  std::vector<std::vector<float>> m1, m2;
  int t = 0;
  float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f, weight_decay = 0.f;

  AdamW(std::vector<Tensor*> ps, float wd);
  void step(float lr);
  void zero_grads();
};

float lr_at(const StageSpec& spec, int step);
float global_grad_norm(std::span<Tensor* const> params);
void clip_gradients(std::span<Tensor* const> params, float max_norm);

// Mean NLL over flagged target positions; prompt and slot positions
// contribute nothing.
Node nll_loss(Tape& t, Node logits, std::span<const int> ids,
              std::span<const std::uint8_t> is_target);

struct StepLog {
  int step = 0;
  double loss = 0;
  float lr = 0;
};

struct StageResult {
  std::vector<StepLog> history;
  double mean_loss_first_frac(double frac) const;
  double mean_loss_last_frac(double frac) const;
};

void apply_trainability(ArcModel& model, const StageSpec& spec);
std::vector<Tensor*> trainable_set(ArcModel& model, const StageSpec& spec);

// Runs one stage over compressed-slot items. Logs
// "step=<n> stage=<s> loss=<f> lr=<f>" every log_every steps.
StageResult run_stage(const StageSpec& spec, ArcModel& model,
                      std::span<const SyntheticExample> data, const ItemBuilder& builder,
                      std::ostream* log = nullptr);

// Stage 0: next-token training of the backbone on recitation items.
StageResult pretrain_base(const StageSpec& spec, ArcModel& model,
                          std::span<const SyntheticExample> data, const ItemBuilder& builder,
                          std::ostream* log = nullptr);

// Finite-difference verification of the end-to-end NLL gradient w.r.t.
// sampled projector, adapter, and gate coordinates on a 2-layer model. Runs
// the forward in soft-gate mode (the differentiable surrogate); gate
// probabilities are nudged away from the 0.5 threshold.
SampledGradCheckReport end_to_end_fd_check(int samples, float h, float tol, std::uint64_t seed);

// Per-stage seeds for corpus generation and evaluation splits.
std::uint64_t stage_data_seed(std::uint64_t run_seed, int stage);
std::uint64_t eval_data_seed(std::uint64_t run_seed, StageSpec::Dataset kind);

}  // namespace arcslot
