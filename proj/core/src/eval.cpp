#include "arcslot/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "arcslot/error.hpp"

namespace arcslot {

int eval_threads() {
  const char* env = std::getenv("ARCSLOT_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

namespace {

// Index-sharded fan-out; results land in caller-preallocated slots.
void parallel_over(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const int threads = std::min<int>(eval_threads(), static_cast<int>(count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = static_cast<std::size_t>(w); i < count; i += static_cast<std::size_t>(threads)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

double perplexity(ArcModel& model, std::span<const SyntheticExample> examples,
                  const ItemBuilder& builder, PplInput input) {
  if (examples.empty()) throw ContractError("perplexity: empty example set");
  for (const auto& ex : examples)
    if (ex.kind != SyntheticExample::Kind::reconstruction)
      throw ContractError("perplexity: examples must be reconstruction kind");
  std::vector<double> totals(examples.size(), 0.0);
  std::vector<int> counts(examples.size(), 0);
  parallel_over(examples.size(), [&](std::size_t i) {
    TrainItem item = input == PplInput::slots ? builder.build(examples[i])
                                              : builder.build_recitation(examples[i]);
    Tape t;
    ForwardOut out = model_forward(t, model, item.input, ForwardMode::infer);
    Node loss = t.masked_nll(out.logits, item.input.token_ids, item.is_target);
    totals[i] = t.nll_total(loss);
    counts[i] = t.nll_count(loss);
  });
  double total = 0.0;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    total += totals[i];
    count += counts[i];
  }
  return std::exp(total / static_cast<double>(count));
}

std::vector<int> greedy_decode(ArcModel& model, const AssembledInput& prompt, int max_new,
                               int eos_id, int slot_id) {
  AssembledInput seq = prompt;
  std::vector<int> generated;
  for (int i = 0; i < max_new; ++i) {
    Tape t;
    ForwardOut out = model_forward(t, model, seq, ForwardMode::infer);
    const Tensor& logits = t.val(out.logits);
    const int last = logits.rows() - 1;
    int best = -1;
    float best_v = 0.f;
    for (int j = 0; j < logits.cols(); ++j) {
      if (j == slot_id) continue;  // reserved placeholder, never generated
      const float v = logits.at(last, j);
      if (best < 0 || v > best_v) {
        best = j;
        best_v = v;
      }
    }
    generated.push_back(best);
    if (best == eos_id) break;
    seq.token_ids.push_back(best);
    seq.layout.sequence_length = static_cast<int>(seq.token_ids.size());
  }
  return generated;
}

namespace {

std::string render_ids(const Vocab& vocab, std::span<const int> ids) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? " " : "") << vocab.name(ids[i]);
  return os.str();
}

}  // namespace

QaOutcome eval_qa(ArcModel& model, std::span<const SyntheticExample> examples,
                  const ItemBuilder& builder, QaPrompt prompt_kind) {
  if (examples.empty()) throw ContractError("eval_qa: empty example set");
  const Vocab& vocab = *builder.vocab;
  QaOutcome out;
  out.judged.resize(examples.size());
  std::vector<GateTrace> traces(examples.size());
  std::vector<double> ems(examples.size(), 0.0), f1s(examples.size(), 0.0);
  parallel_over(examples.size(), [&](std::size_t i) {
    const SyntheticExample& ex = examples[i];
    AssembledInput prompt = prompt_kind == QaPrompt::slots ? builder.prompt_only(ex)
                                                           : builder.no_context_prompt(ex);
    if (prompt_kind == QaPrompt::slots) {
      Tape t;
      ForwardOut fwd = model_forward(t, model, prompt, ForwardMode::infer);
      traces[i] = fwd.trace;
    }
    std::vector<int> pred = greedy_decode(model, prompt, static_cast<int>(ex.target.size()) + 1,
                                          vocab.eos(), vocab.slot());
    if (!pred.empty() && pred.back() == vocab.eos()) pred.pop_back();
    const bool correct = pred == ex.target;
    out.judged[i] = {static_cast<int>(i), correct};
    const std::string pred_text = render_ids(vocab, pred);
    const std::string gold_text = render_ids(vocab, ex.target);
    ems[i] = non_strict_em(pred_text, gold_text);
    f1s[i] = token_f1(pred_text, gold_text);
  });
  double acc = 0, em = 0, f1 = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    acc += out.judged[i].correct ? 1.0 : 0.0;
    em += ems[i];
    f1 += f1s[i];
  }
  const double n = static_cast<double>(examples.size());
  out.accuracy = acc / n;
  out.em = em / n;
  out.f1 = f1 / n;
  if (prompt_kind == QaPrompt::slots) out.traces = std::move(traces);
  return out;
}

std::string EvalReport::flat() const {
  std::ostringstream os;
  os << "n_examples=" << n_examples << "\n";
  os << "ppl=" << ppl << "\n";
  os << "em=" << em << "\n";
  os << "f1=" << f1 << "\n";
  os << "accuracy=" << accuracy << "\n";
  os << "compression_ratio=" << compression_ratio << "\n";
  os << "max_loops=" << max_loops << "\n";
  for (std::size_t l = 0; l < mean_loops.size(); ++l)
    os << "mean_loops.layer" << l << "=" << mean_loops[l] << "\n";
  return os.str();
}

std::string EvalReport::table() const {
  std::ostringstream os;
  os << "metric              value\n";
  os << "------              -----\n";
  auto row = [&](const std::string& k, double v) { os << k << std::string(k.size() < 20 ? 20 - k.size() : 1, ' ') << v << "\n"; };
  row("examples", n_examples);
  row("ppl", ppl);
  row("em", em);
  row("f1", f1);
  row("accuracy", accuracy);
  row("compression_ratio", compression_ratio);
  for (std::size_t l = 0; l < mean_loops.size(); ++l)
    row("mean_loops[" + std::to_string(l) + "]", mean_loops[l]);
  return os.str();
}

void write_report_files(const std::string& out_dir, const EvalReport& report) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir + "/report.txt");
    f << report.flat();
  }
  {
    std::ofstream f(out_dir + "/report_table.txt");
    f << report.table();
  }
  {
    std::ofstream f(out_dir + "/loop_counts.dat");
    f << "# layer mean_loops\n";
    for (std::size_t l = 0; l < report.mean_loops.size(); ++l) f << l << " " << report.mean_loops[l] << "\n";
  }
}

}  // namespace arcslot
