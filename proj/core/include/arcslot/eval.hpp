#pragma once
#include <span>
#include <string>
#include <vector>

#include "arcslot/data.hpp"
#include "arcslot/metrics.hpp"
#include "arcslot/model.hpp"
#include "arcslot/train.hpp"

namespace arcslot {

// Internal fan-out across examples; 1 unless ARCSLOT_THREADS says otherwise.
int eval_threads();

enum class PplInput { slots, recitation };

// exp of the pooled mean per-token NLL over every target token in the set.
// Teacher-forced; infer-mode forwards.
double perplexity(ArcModel& model, std::span<const SyntheticExample> examples,
                  const ItemBuilder& builder, PplInput input);

// Greedy continuation of an assembled prompt. The reserved slot placeholder
// is never emitted. Stops at end-of-sequence or after max_new tokens.
std::vector<int> greedy_decode(ArcModel& model, const AssembledInput& prompt, int max_new,
                               int eos_id, int slot_id);

enum class QaPrompt { slots, no_context };

struct QaOutcome {
  double accuracy = 0;  // exact answer match on the synthetic gold
  double em = 0;        // non-strict EM over rendered token names
  double f1 = 0;
  std::vector<JudgedExample> judged;
  std::vector<GateTrace> traces;  // from the prompt forward, slots mode only
};

QaOutcome eval_qa(ArcModel& model, std::span<const SyntheticExample> examples,
                  const ItemBuilder& builder, QaPrompt prompt_kind);

struct EvalReport {
  double ppl = 0;
  double em = 0;
  double f1 = 0;
  double accuracy = 0;
  std::vector<double> mean_loops;
  double compression_ratio = 0;
  int n_examples = 0;
  int max_loops = 1;

  std::string flat() const;
  std::string table() const;
};

void write_report_files(const std::string& out_dir, const EvalReport& report);

}  // namespace arcslot
