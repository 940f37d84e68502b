#include <benchmark/benchmark.h>

#include "arcslot/train.hpp"

using namespace arcslot;

namespace {

struct Fixture {
  ModelConfig cfg;
  ArcModel model;
  Vocab vocab{64};
  DataConfig dcfg;
  ItemBuilder builder;
  std::vector<SyntheticExample> recon;
  std::vector<SyntheticExample> qa;

  Fixture() : model(ArcModel::init(cfg)), builder(ItemBuilder::make(vocab, model.encoder)) {
    recon = gen_reconstruction_corpus(dcfg, vocab, 16, 1);
    qa = gen_qa_corpus(dcfg, vocab, 16, 2);
    Rng rng(3);
    for (auto& layer : model.lora.layers)
      for (LoraPair* p : {&layer.q, &layer.v, &layer.f1, &layer.f2})
        p->b = Tensor::gaussian(p->b.rows(), p->b.cols(), 0.05f, rng);
    model.proj.fc2.w = Tensor::gaussian(cfg.d, 2 * cfg.d, 0.05f, rng);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

static void BM_MatmulNT(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(7);
  Tensor a = Tensor::gaussian(n, n, 1.f, rng);
  Tensor b = Tensor::gaussian(n, n, 1.f, rng);
  for (auto _ : state) {
    Tape t;
    Node out = t.matmul_nt(t.constant(a), t.constant(b));
    benchmark::DoNotOptimize(t.val(out).data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n) * n * n);
}
BENCHMARK(BM_MatmulNT)->Arg(64)->Arg(128)->Arg(256);

static void BM_FrozenBlock(benchmark::State& state) {
  Fixture& f = fixture();
  Rng rng(9);
  Tensor h = Tensor::gaussian(static_cast<int>(state.range(0)), f.cfg.d, 1.f, rng);
  for (auto _ : state) {
    Tape t;
    Node out = f.model.base.layer_forward(t, 0, t.constant(h));
    benchmark::DoNotOptimize(t.val(out).data.data());
  }
}
BENCHMARK(BM_FrozenBlock)->Arg(32)->Arg(96);

static void BM_AdaptedBlock(benchmark::State& state) {
  Fixture& f = fixture();
  Rng rng(9);
  const int n = static_cast<int>(state.range(0));
  Tensor h = Tensor::gaussian(n, f.cfg.d, 1.f, rng);
  std::vector<int> positions = {1, 2, 3};
  BroadcastMask mask = BroadcastMask::from_positions(positions, n);
  for (auto _ : state) {
    Tape t;
    Node out = adapted_block(t, f.model.base, f.model.lora, 0, t.constant(h), mask, nullptr);
    benchmark::DoNotOptimize(t.val(out).data.data());
  }
}
BENCHMARK(BM_AdaptedBlock)->Arg(32)->Arg(96);

static void BM_ForwardInfer(benchmark::State& state) {
  Fixture& f = fixture();
  const bool saturated = state.range(0) != 0;
  f.model.gates.set_all_biases(saturated ? 10.f : -10.f);
  f.model.gating_enabled = true;
  AssembledInput in = f.builder.build(f.recon[0]).input;
  for (auto _ : state) {
    Tape t;
    ForwardOut out = model_forward(t, f.model, in, ForwardMode::infer);
    benchmark::DoNotOptimize(t.val(out.logits).data.data());
  }
}
BENCHMARK(BM_ForwardInfer)->Arg(0)->Arg(1);

static void BM_TrainStepStage1(benchmark::State& state) {
  Fixture& f = fixture();
  StageSpec spec = StageSpec::defaults(1);
  spec.batch_size = 2;
  spec.log_every = 1 << 20;
  for (auto _ : state) {
    spec.steps = 1;
    StageResult r = run_stage(spec, f.model, f.recon, f.builder);
    benchmark::DoNotOptimize(r.history.data());
  }
}
BENCHMARK(BM_TrainStepStage1);

BENCHMARK_MAIN();
