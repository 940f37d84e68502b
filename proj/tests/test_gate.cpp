#include <cmath>

#include "arcslot/error.hpp"
#include "arcslot/metrics.hpp"
#include "arcslot/model.hpp"
#include "doctest.h"
#include "reference_forward.hpp"

using namespace arcslot;

namespace {

ArcModel gated_model(std::uint64_t seed = 41, int max_loops = 3) {
  ModelConfig cfg = ModelConfig::tiny(2, 16);
  cfg.seed = seed;
  cfg.max_loops = max_loops;
  ArcModel m = ArcModel::init(cfg);
  Rng rng(mix_seed(seed, 73));
  for (auto& layer : m.lora.layers) {
    for (LoraPair* p : {&layer.q, &layer.v, &layer.f1, &layer.f2})
      p->b = Tensor::gaussian(p->b.rows(), p->b.cols(), 0.1f, rng);
  }
  Rng r2(mix_seed(seed, 74));
  m.proj.fc2.w = Tensor::gaussian(m.cfg.d, 2 * m.cfg.d, 0.1f, r2);
  return m;
}

AssembledInput slotted_input(ArcModel& m, std::uint64_t seed = 91) {
  Vocab vocab(64);
  Rng rng(seed);
  std::vector<std::vector<int>> segs(3);
  for (auto& s : segs) {
    s.resize(4);
    for (auto& tok : s) tok = rng.uniform_int(0, 63);
  }
  CompressedContext ctx = m.encoder.encode(segs);
  PromptTemplate tmpl = instantiate(parse_template("background : [B] ->", vocab), ctx.m);
  AssembledInput in = assemble({}, ctx, tmpl, vocab);
  for (int i = 0; i < 5; ++i) {
    in.token_ids.push_back(rng.uniform_int(0, 63));
  }
  in.layout.sequence_length = static_cast<int>(in.token_ids.size());
  return in;
}

}  // namespace

TEST_CASE("gate probability: zero-initialized final affine gives sigmoid(bias) everywhere") {
  ArcModel m = gated_model();
  Rng rng(50);
  Tensor h_slots = Tensor::gaussian(5, m.cfg.d, 1.f, rng);
  Tape t;
  Node g = gate_probability(t, m.gates, 0, t.constant(h_slots));
  const float expect = 1.f / (1.f + std::exp(1.f));  // bias starts at -1
  for (float v : t.val(g).data) CHECK(v == expect);
  CHECK(t.val(g).rows() == 5);
  CHECK(t.val(g).cols() == 1);
}

TEST_CASE("gate probabilities stay strictly inside (0,1)") {
  ArcModel m = gated_model();
  Rng rng(51);
  m.gates.nets[0].fc2.w = Tensor::gaussian(1, m.cfg.gate_hidden, 3.f, rng);
  Tensor h_slots = Tensor::gaussian(64, m.cfg.d, 4.f, rng);
  Tape t;
  Node g = gate_probability(t, m.gates, 0, t.constant(h_slots));
  for (float v : t.val(g).data) {
    CHECK(v > 0.f);
    CHECK(v < 1.f);
  }
}

TEST_CASE("gate probability is slot-permutation equivariant") {
  ArcModel m = gated_model();
  Rng rng(52);
  m.gates.nets[1].fc2.w = Tensor::gaussian(1, m.cfg.gate_hidden, 1.f, rng);
  Tensor h = Tensor::gaussian(4, m.cfg.d, 1.f, rng);
  Tensor perm = Tensor::zeros(4, m.cfg.d);
  const int order[4] = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < m.cfg.d; ++c) perm.at(i, c) = h.at(order[i], c);
  Tape t;
  Node ga = gate_probability(t, m.gates, 1, t.constant(h));
  Node gb = gate_probability(t, m.gates, 1, t.constant(perm));
  for (int i = 0; i < 4; ++i)
    CHECK(t.val(gb).data[static_cast<std::size_t>(i)] == t.val(ga).data[static_cast<std::size_t>(order[i])]);
  CHECK(refimpl::gate_probs(m.gates, 1, refimpl::from_tensor(h)).size() == 4);
}

TEST_CASE("gate on a non-gated layer is a contract error") {
  ModelConfig cfg = ModelConfig::tiny(2, 16);
  cfg.gated_layers = {0};
  ArcModel m = ArcModel::init(cfg);
  Tape t;
  CHECK_THROWS_AS(gate_probability(t, m.gates, 1, t.constant(Tensor::zeros(2, 16))), ContractError);
}

TEST_CASE("all gates closed in infer mode: output and trace untouched") {
  ArcModel m = gated_model();
  m.gates.set_all_biases(-10.f);
  AssembledInput in = slotted_input(m);
  Tape t;
  ForwardOut gated = model_forward(t, m, in, ForwardMode::infer);
  m.gating_enabled = false;
  Tape t2;
  ForwardOut plain = model_forward(t2, m, in, ForwardMode::infer);
  m.gating_enabled = true;
  CHECK(bitwise_equal(t.val(gated.logits), t2.val(plain.logits)));
  CHECK(gated.extra_refinements == 0);
  for (int c : gated.trace.loops) CHECK(c == 1);
}

TEST_CASE("saturated gates refine every slot to max_loops") {
  ArcModel m = gated_model();
  m.gates.set_all_biases(10.f);
  AssembledInput in = slotted_input(m);
  Tape t;
  ForwardOut out = model_forward(t, m, in, ForwardMode::infer);
  for (int layer = 0; layer < m.cfg.n_layers; ++layer)
    for (int s = 0; s < out.trace.n_slots; ++s) CHECK(out.trace.loop(layer, s) == m.cfg.max_loops);
  CHECK(format_trace_cell(out.trace.loop(0, 0), 3) == "LLL");
  CHECK(out.extra_refinements == m.cfg.n_layers * (m.cfg.max_loops - 1));
}

TEST_CASE("non-slot rows are fixed across recursion") {
  ArcModel m = gated_model();
  m.gates.set_all_biases(10.f);  // saturate everything
  AssembledInput in = slotted_input(m);
  const int layer = 0;
  Tape t;
  Node h0 = build_h0(t, m, in);
  BroadcastMask mask = BroadcastMask::from_positions(in.layout.positions, in.layout.sequence_length);
  Node mandatory = adapted_block(t, m.base, m.lora, layer, h0, mask, nullptr);
  GateTrace trace = GateTrace::fresh(m.cfg.n_layers, in.ctx.m, m.cfg.max_loops);
  Node refined = recursive_refine(t, m, layer, mandatory, mask, in.layout.positions,
                                  ForwardMode::infer, nullptr, trace, false, nullptr);
  std::size_t cursor = 0;
  for (int i = 0; i < in.layout.sequence_length; ++i) {
    const bool slot = cursor < in.layout.positions.size() && in.layout.positions[cursor] == i;
    if (slot) {
      ++cursor;
      continue;
    }
    for (int c = 0; c < m.cfg.d; ++c) CHECK(t.val(refined).at(i, c) == t.val(mandatory).at(i, c));
  }
}

TEST_CASE("single saturated step: slot rows take the candidate exactly") {
  ArcModel m = gated_model(43, /*max_loops=*/2);
  m.gates.set_all_biases(10.f);
  AssembledInput in = slotted_input(m, 97);
  const int layer = 1;
  Tape t;
  Node h0 = build_h0(t, m, in);
  BroadcastMask mask = BroadcastMask::from_positions(in.layout.positions, in.layout.sequence_length);
  Node mandatory = adapted_block(t, m.base, m.lora, layer, h0, mask, nullptr);
  GateTrace trace = GateTrace::fresh(m.cfg.n_layers, in.ctx.m, m.cfg.max_loops);
  Node refined = recursive_refine(t, m, layer, mandatory, mask, in.layout.positions,
                                  ForwardMode::infer, nullptr, trace, false, nullptr);
  // the implementation's own candidate, recomputed on the same states
  Node cand = adapted_block(t, m.base, m.lora, layer, mandatory, mask, nullptr);
  for (std::size_t j = 0; j < in.layout.positions.size(); ++j) {
    const int row = in.layout.positions[j];
    for (int c = 0; c < m.cfg.d; ++c) CHECK(t.val(refined).at(row, c) == t.val(cand).at(row, c));
  }
  // straight-line oracle for the same step: slot rows take the adapted
  // candidate, everything else keeps the post-mandatory state
  refimpl::Mat href = refimpl::from_tensor(t.val(mandatory));
  refimpl::Mat cand_ref = refimpl::block(m.base, layer, href, &m.lora.layers[layer], m.lora.scaling());
  std::size_t cursor = 0;
  refimpl::Mat expect = href;
  for (std::size_t i = 0; i < href.size(); ++i) {
    if (cursor < in.layout.positions.size() && in.layout.positions[cursor] == static_cast<int>(i)) {
      expect[i] = cand_ref[i];
      ++cursor;
    }
  }
  CHECK(refimpl::max_abs_diff(expect, t.val(refined)) < 1e-3);
}

TEST_CASE("algorithm equivalences: no gated layers, gating disabled, max_loops one") {
  ModelConfig cfg = ModelConfig::tiny(2, 16);
  cfg.seed = 61;

  ModelConfig cfg_empty = cfg;
  cfg_empty.gated_layers = {};
  ArcModel m_empty = ArcModel::init(cfg_empty);

  ModelConfig cfg_one = cfg;
  cfg_one.max_loops = 1;
  ArcModel m_one = ArcModel::init(cfg_one);

  ArcModel m_disabled = ArcModel::init(cfg);
  m_disabled.gating_enabled = false;

  ArcModel m_open = ArcModel::init(cfg);
  m_open.gates.set_all_biases(-10.f);  // infer mode, everything shut

  for (int rep = 0; rep < 5; ++rep) {
    AssembledInput in = slotted_input(m_empty, 300 + static_cast<std::uint64_t>(rep));
    Tape t1, t2, t3, t4;
    Tensor l_empty = t1.val(model_forward(t1, m_empty, in, ForwardMode::infer).logits);
    Tensor l_one = t2.val(model_forward(t2, m_one, in, ForwardMode::infer).logits);
    Tensor l_dis = t3.val(model_forward(t3, m_disabled, in, ForwardMode::infer).logits);
    Tensor l_shut = t4.val(model_forward(t4, m_open, in, ForwardMode::infer).logits);
    CHECK(bitwise_equal(l_empty, l_one));
    CHECK(bitwise_equal(l_empty, l_dis));
    CHECK(bitwise_equal(l_empty, l_shut));
  }
}

TEST_CASE("train and infer agree when probabilities sit away from the threshold") {
  for (float bias : {-4.f, 4.f}) {
    ArcModel m = gated_model(71);
    m.cfg.lora_dropout = 0.f;
    m.gates.set_all_biases(bias);
    AssembledInput in = slotted_input(m, 113);
    Tape t1, t2;
    ForwardOut train_out = model_forward(t1, m, in, ForwardMode::train);
    ForwardOut infer_out = model_forward(t2, m, in, ForwardMode::infer);
    CHECK(bitwise_equal(t1.val(train_out.logits), t2.val(infer_out.logits)));
    CHECK(train_out.trace.counts_equal(infer_out.trace));
  }
}

TEST_CASE("trace bounds and monotone refinement cost") {
  ArcModel m = gated_model(81);
  Rng rng(82);
  for (auto& net : m.gates.nets) {
    net.fc2.w = Tensor::gaussian(1, m.cfg.gate_hidden, 2.f, rng);
    net.fc2.b.data[0] = rng.uniform(-1.f, 1.f);
  }
  for (int rep = 0; rep < 10; ++rep) {
    AssembledInput in = slotted_input(m, 500 + static_cast<std::uint64_t>(rep));
    Tape t;
    ForwardOut out = model_forward(t, m, in, ForwardMode::infer);
    int expected_evals = 0;
    for (int layer = 0; layer < m.cfg.n_layers; ++layer) {
      int mx = 1;
      for (int s = 0; s < out.trace.n_slots; ++s) {
        const int c = out.trace.loop(layer, s);
        CHECK(c >= 1);
        CHECK(c <= m.cfg.max_loops);
        mx = std::max(mx, c);
      }
      if (m.gates.is_gated(layer)) expected_evals += mx - 1;
    }
    CHECK(out.extra_refinements == expected_evals);
    CHECK(out.extra_refinements <= static_cast<int>(m.gates.gated_layers.size()) * (m.cfg.max_loops - 1));
  }
}

TEST_CASE("per-step gate probabilities can be recorded") {
  ArcModel m = gated_model(83);
  m.gates.set_all_biases(10.f);
  AssembledInput in = slotted_input(m, 777);
  Tape t;
  ForwardOut out = model_forward(t, m, in, ForwardMode::infer, nullptr, /*record_probs=*/true);
  CHECK(!out.trace.recorded.empty());
  for (const auto& sp : out.trace.recorded) {
    CHECK(sp.probs.size() == static_cast<std::size_t>(in.ctx.m));
    for (float p : sp.probs) {
      CHECK(p > 0.f);
      CHECK(p < 1.f);
    }
  }
}

TEST_CASE("over-long sequences are a capacity error") {
  ModelConfig cfg = ModelConfig::tiny(2, 16);
  cfg.max_seq_len = 8;
  ArcModel m = ArcModel::init(cfg);
  AssembledInput in = assemble_plain(std::vector<int>(9, 1));
  Tape t;
  CHECK_THROWS_AS(model_forward(t, m, in, ForwardMode::infer), CapacityError);
}

TEST_CASE("trace text format round-trips") {
  CHECK(format_trace_cell(1, 3) == "L0.");
  CHECK(format_trace_cell(2, 3) == "LL.");
  CHECK(format_trace_cell(3, 3) == "LLL");
  CHECK(format_trace_cell(1, 1) == "L");
  CHECK_THROWS_AS(format_trace_cell(4, 3), ContractError);

  GateTrace tr = GateTrace::fresh(32, 5, 3);
  tr.loop(31, 1) = 3;
  const int layer31[] = {31};
  CHECK(format_trace(tr, layer31) == "layer=31 traj=[L0., LLL, L0., L0., L0.]\n");

  GateTrace parsed = parse_trace("layer=31 traj=[L0., LLL, L0., L0., L0.]\n", 32);
  CHECK(parsed.counts_equal(tr));

  GateTrace multi = GateTrace::fresh(4, 3, 3);
  multi.loop(0, 0) = 2;
  multi.loop(2, 2) = 3;
  const int all_layers[] = {0, 1, 2, 3};
  GateTrace rt = parse_trace(format_trace(multi, all_layers), 4);
  CHECK(rt.counts_equal(multi));

  CHECK_THROWS_AS(parse_trace("garbage", 1), ContractError);
}
