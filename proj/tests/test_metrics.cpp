#include <cmath>

#include "arcslot/checkpoint.hpp"
#include "arcslot/error.hpp"
#include "arcslot/eval.hpp"
#include "doctest.h"

using namespace arcslot;

TEST_CASE("non-strict EM") {
  CHECK(non_strict_em("the answer is canada", "Canada") == 1);
  CHECK(non_strict_em("", "x") == 0);
  CHECK(non_strict_em("canadian", "canada") == 0);  // token-boundary containment
  CHECK(non_strict_em("it is in Canada, I think.", "canada") == 1);
  CHECK(non_strict_em("new york city", "york city") == 1);
  CHECK(non_strict_em("new york city", "city york") == 0);
  CHECK(non_strict_em("w03 w15", "w15") == 1);
  for (const char* s : {"canada", "New York", "w07"}) CHECK(non_strict_em(s, s) == 1);
}

TEST_CASE("token F1") {
  CHECK(token_f1("exact phrase", "exact phrase") == doctest::Approx(1.0));
  CHECK(token_f1("alpha beta", "gamma delta") == doctest::Approx(0.0));
  CHECK(token_f1("a b c", "b c d") == doctest::Approx(2.0 / 3.0));
  CHECK(token_f1("", "") == doctest::Approx(1.0));
  CHECK(token_f1("", "x") == doctest::Approx(0.0));
  CHECK(token_f1("x", "") == doctest::Approx(0.0));
  // symmetric in its arguments
  CHECK(token_f1("b c d", "a b c") == doctest::Approx(token_f1("a b c", "b c d")));
  CHECK(token_f1("one two two", "two") == doctest::Approx(token_f1("two", "one two two")));
}

TEST_CASE("gate statistics") {
  GateTrace a = GateTrace::fresh(3, 2, 3);
  SUBCASE("gating-disabled traces give exactly 1.0 per layer") {
    const GateTrace traces[] = {a, a};
    for (double mean : gate_stats(traces)) CHECK(mean == 1.0);
  }
  SUBCASE("saturated traces give exactly max_loops") {
    GateTrace s = a;
    for (auto& c : s.loops) c = 3;
    const GateTrace traces[] = {s};
    for (double mean : gate_stats(traces)) CHECK(mean == 3.0);
  }
  SUBCASE("a single trace reports its own counts") {
    GateTrace s = a;
    s.loop(1, 0) = 3;
    const GateTrace traces[] = {s};
    auto means = gate_stats(traces);
    CHECK(means[0] == 1.0);
    CHECK(means[1] == 2.0);
    CHECK(means[2] == 1.0);
  }
  SUBCASE("mixed max_loops is a contract error") {
    GateTrace other = GateTrace::fresh(3, 2, 4);
    const GateTrace traces[] = {a, other};
    CHECK_THROWS_AS(gate_stats(traces), ContractError);
  }
}

TEST_CASE("four-way bucketing") {
  std::vector<JudgedExample> naive, rag, system;
  // 6 examples: TT, TT, TF, FT, FF, FF
  const bool nv[] = {true, true, true, false, false, false};
  const bool rg[] = {true, true, false, true, false, false};
  for (int i = 0; i < 6; ++i) {
    naive.push_back({i, nv[i]});
    rag.push_back({i, rg[i]});
    system.push_back({i, rg[i]});  // system identical to rag
  }
  FourWayReport rep = four_way_buckets(naive, rag, system);
  CHECK(rep.tt.n == 2);
  CHECK(rep.tf.n == 1);
  CHECK(rep.ft.n == 1);
  CHECK(rep.ff.n == 2);
  CHECK(rep.total() == 6);
  CHECK(rep.tt.accuracy() == 1.0);
  CHECK(rep.ft.accuracy() == 1.0);
  CHECK(rep.tf.accuracy() == 0.0);
  CHECK(rep.ff.accuracy() == 0.0);

  FourWayReport fixed;
  fixed.tt.n = 41;
  CHECK(fixed.summary().find("TT (n=41)") != std::string::npos);

  std::vector<JudgedExample> misaligned = rag;
  misaligned[2].id = 99;
  CHECK_THROWS_AS(four_way_buckets(naive, misaligned, system), ContractError);
  misaligned.pop_back();
  CHECK_THROWS_AS(four_way_buckets(naive, misaligned, system), ContractError);
}

namespace {

// 11 content tokens + eos + slot + 19 lexicon words = 32 ids total
ModelConfig tiny32() {
  ModelConfig cfg = ModelConfig::tiny(2, 16);
  cfg.vocab_size = 32;
  return cfg;
}

}  // namespace

TEST_CASE("perplexity of a uniform-logit model equals the vocabulary size") {
  ModelConfig cfg = tiny32();
  ArcModel m = ArcModel::init(cfg);
  for (auto& v : m.base.lm_w.data) v = 0.f;  // logits identically zero
  Vocab vocab(11);
  DataConfig dcfg;
  dcfg.content_vocab = 11;
  dcfg.recon_seg_count_min = dcfg.recon_seg_count_max = 2;
  dcfg.recon_seg_len_min = dcfg.recon_seg_len_max = 5;
  ItemBuilder builder = ItemBuilder::make(vocab, m.encoder);
  auto data = gen_reconstruction_corpus(dcfg, vocab, 10, 3);
  const double ppl = perplexity(m, data, builder, PplInput::slots);
  CHECK(std::fabs(ppl - 32.0) < 1e-3);
}

TEST_CASE("perplexity is exp of the pooled nll") {
  ModelConfig cfg = tiny32();
  cfg.seed = 5;
  ArcModel m = ArcModel::init(cfg);
  Vocab vocab(11);
  DataConfig dcfg;
  dcfg.content_vocab = 11;
  dcfg.recon_seg_count_min = dcfg.recon_seg_count_max = 2;
  dcfg.recon_seg_len_min = dcfg.recon_seg_len_max = 4;
  ItemBuilder builder = ItemBuilder::make(vocab, m.encoder);
  auto data = gen_reconstruction_corpus(dcfg, vocab, 1, 9);
  TrainItem item = builder.build(data[0]);
  Tape t;
  ForwardOut out = model_forward(t, m, item.input, ForwardMode::infer);
  Node loss = nll_loss(t, out.logits, item.input.token_ids, item.is_target);
  const double via_loss = std::exp(static_cast<double>(t.val(loss).data[0]));
  const double via_eval = perplexity(m, {data.data(), 1}, builder, PplInput::slots);
  CHECK(via_eval == doctest::Approx(via_loss).epsilon(1e-6));
  CHECK_THROWS_AS(perplexity(m, {data.data(), 0}, builder, PplInput::slots), ContractError);
}

TEST_CASE("a memorized example reaches ppl < 1.01 and greedy decode reproduces it") {
  ModelConfig cfg = tiny32();
  cfg.seed = 31;
  cfg.max_seq_len = 64;
  ArcModel m = ArcModel::init(cfg);
  Vocab vocab(11);
  DataConfig dcfg;
  dcfg.content_vocab = 11;
  dcfg.recon_seg_count_min = dcfg.recon_seg_count_max = 1;
  dcfg.recon_seg_len_min = dcfg.recon_seg_len_max = 6;
  ItemBuilder builder = ItemBuilder::make(vocab, m.encoder);
  auto data = gen_reconstruction_corpus(dcfg, vocab, 1, 13);

  StageSpec spec = StageSpec::defaults(0);
  spec.steps = 500;
  spec.batch_size = 1;
  spec.learning_rate = 3e-3f;
  spec.log_every = 1000;
  pretrain_base(spec, m, data, builder);

  const double ppl = perplexity(m, data, builder, PplInput::recitation);
  INFO("memorized ppl " << ppl);
  CHECK(ppl < 1.01);

  AssembledInput prompt = builder.recitation_prompt(data[0]);
  std::vector<int> decoded = greedy_decode(m, prompt, 10, vocab.eos(), vocab.slot());
  REQUIRE(decoded.size() >= data[0].target.size());
  for (std::size_t i = 0; i < data[0].target.size(); ++i) CHECK(decoded[i] == data[0].target[i]);
  CHECK(decoded[data[0].target.size()] == vocab.eos());
}

TEST_CASE("eval report renders flat and tabular forms") {
  EvalReport rep;
  rep.n_examples = 10;
  rep.ppl = 12.5;
  rep.em = 0.9;
  rep.f1 = 0.85;
  rep.accuracy = 0.88;
  rep.mean_loops = {1.0, 2.5};
  rep.compression_ratio = 24.0;
  const std::string flat = rep.flat();
  CHECK(flat.find("ppl=12.5") != std::string::npos);
  CHECK(flat.find("mean_loops.layer1=2.5") != std::string::npos);
  CHECK(rep.table().find("accuracy") != std::string::npos);
}
