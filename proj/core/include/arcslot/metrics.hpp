#pragma once
#include <span>
#include <string>
#include <vector>

#include "arcslot/gate.hpp"

namespace arcslot {

// Open-domain QA normalization: lowercase, punctuation to spaces, whitespace
// collapsed. Every surviving token counts, articles included; containment is
// token-boundary so substring false positives cannot occur.
std::vector<std::string> normalize_answer(const std::string& text);

// 1 iff the normalized gold appears as a contiguous token run inside the
// normalized prediction. Token-boundary matching: "canadian" does not
// contain "canada".
int non_strict_em(const std::string& prediction, const std::string& gold);

// Harmonic mean of precision/recall over multiset token overlap. Both empty
// -> 1, exactly one empty -> 0.
double token_f1(const std::string& prediction, const std::string& gold);

// Mean total pass count per layer over all slots and traces. All traces must
// agree on layer count and max_loops.
std::vector<double> gate_stats(std::span<const GateTrace> traces);

struct JudgedExample {
  int id = 0;
  bool correct = false;
};

struct Bucket {
  int n = 0;
  int system_correct = 0;
  double accuracy() const { return n > 0 ? static_cast<double>(system_correct) / n : 0.0; }
};

struct FourWayReport {
  Bucket tt, tf, ft, ff;
  int total() const { return tt.n + tf.n + ft.n + ff.n; }
  std::string summary() const;  // one line per bucket, e.g. "TT (n=41) acc=0.732"
};

// Buckets by (naive correct?, rag correct?) and scores the system inside
// each bucket. The three result lists must be id-aligned.
FourWayReport four_way_buckets(std::span<const JudgedExample> naive,
                               std::span<const JudgedExample> rag,
                               std::span<const JudgedExample> system);

}  // namespace arcslot
