#include "arcslot/train.hpp"

#include <cmath>
#include <ostream>

#include "arcslot/error.hpp"

namespace arcslot {

StageSpec StageSpec::defaults(int stage) {
  StageSpec s;
  s.stage = stage;
  switch (stage) {
    case 0:
      s.train_projector = s.train_lora = s.train_gate = false;
      s.gating_enabled = false;
      s.dataset = Dataset::reconstruction;
      s.steps = 3000;
      s.learning_rate = 1e-3f;
      break;
    case 1:
      s.train_projector = s.train_lora = true;
      s.train_gate = false;
      s.gating_enabled = false;
      s.dataset = Dataset::reconstruction;
      s.steps = 2500;
      s.learning_rate = 2e-4f;
      break;
    case 2:
      s.train_projector = s.train_lora = true;
      s.train_gate = false;
      s.gating_enabled = false;
      s.dataset = Dataset::qa;
      s.steps = 2500;
      s.learning_rate = 2e-5f;
      break;
    case 3:
      s.train_projector = s.train_lora = s.train_gate = true;
      s.gating_enabled = true;
      s.dataset = Dataset::qa;
      s.steps = 1500;
      s.learning_rate = 2e-5f;
      break;
    default:
      throw PipelineError("no defaults for stage " + std::to_string(stage));
  }
  return s;
}

void StageSpec::validate() const {
  if (steps < 1 || batch_size < 1 || grad_accum < 1 || corpus_size < 1)
    throw PipelineError("steps, batch_size, grad_accum and corpus_size must be positive");
  if (warmup_ratio < 0.f || warmup_ratio >= 1.f) throw PipelineError("warmup_ratio outside [0,1)");
  if (schedule != "linear") throw PipelineError("unknown schedule '" + schedule + "'");
  switch (stage) {
    case 0:
      break;
    case 1:
    case 2:
      if (!train_projector || !train_lora || train_gate || gating_enabled)
        throw PipelineError("stages 1 and 2 train projector+adapters with gating disabled");
      break;
    case 3:
      if (!train_projector || !train_lora || !train_gate || !gating_enabled)
        throw PipelineError("stage 3 trains projector+adapters+gates with gating enabled");
      break;
    default:
      throw PipelineError("stage must be 0..3");
  }
}

AdamW::AdamW(std::vector<Tensor*> ps, float wd) : params(std::move(ps)), weight_decay(wd) {
  m1.reserve(params.size());
  m2.reserve(params.size());
  for (Tensor* p : params) {
    m1.emplace_back(p->data.size(), 0.f);
    m2.emplace_back(p->data.size(), 0.f);
    p->ensure_grad();
  }
}

void AdamW::step(float lr) {
  ++t;
  const float bc1 = 1.f - std::pow(beta1, static_cast<float>(t));
  const float bc2 = 1.f - std::pow(beta2, static_cast<float>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    p.ensure_grad();
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      const float g = p.grad[k];
      m1[i][k] = beta1 * m1[i][k] + (1.f - beta1) * g;
      m2[i][k] = beta2 * m2[i][k] + (1.f - beta2) * g * g;
      const float mhat = m1[i][k] / bc1;
      const float vhat = m2[i][k] / bc2;
      p.data[k] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.data[k]);
    }
  }
}

void AdamW::zero_grads() {
  for (Tensor* p : params) p->zero_grad();
}

float lr_at(const StageSpec& spec, int step) {
  const int warmup = std::max(1, static_cast<int>(spec.warmup_ratio * static_cast<float>(spec.steps)));
  if (step < warmup)
    return spec.learning_rate * static_cast<float>(step + 1) / static_cast<float>(warmup);
  const float rest = static_cast<float>(spec.steps - step) / static_cast<float>(std::max(1, spec.steps - warmup));
  return spec.learning_rate * std::max(0.f, rest);
}

float global_grad_norm(std::span<Tensor* const> params) {
  double acc = 0.0;
  for (Tensor* p : params)
    for (float g : p->grad) acc += static_cast<double>(g) * g;
  return static_cast<float>(std::sqrt(acc));
}

void clip_gradients(std::span<Tensor* const> params, float max_norm) {
  if (max_norm <= 0.f) return;
  const float norm = global_grad_norm(params);
  if (norm <= max_norm) return;
  const float scale = max_norm / norm;
  for (Tensor* p : params)
    for (float& g : p->grad) g *= scale;
}

Node nll_loss(Tape& t, Node logits, std::span<const int> ids,
              std::span<const std::uint8_t> is_target) {
  return t.masked_nll(logits, ids, is_target);
}

double StageResult::mean_loss_first_frac(double frac) const {
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(frac * static_cast<double>(history.size())));
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += history[i].loss;
  return acc / static_cast<double>(n);
}

double StageResult::mean_loss_last_frac(double frac) const {
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(frac * static_cast<double>(history.size())));
  double acc = 0.0;
  for (std::size_t i = history.size() - n; i < history.size(); ++i) acc += history[i].loss;
  return acc / static_cast<double>(n);
}

void apply_trainability(ArcModel& model, const StageSpec& spec) {
  model.base.set_trainable(spec.stage == 0);
  model.encoder.codebook.requires_grad = false;
  model.proj.set_trainable(spec.train_projector);
  model.lora.set_trainable(spec.train_lora);
  model.gates.set_trainable(spec.train_gate);
  model.gating_enabled = spec.gating_enabled;
}

std::vector<Tensor*> trainable_set(ArcModel& model, const StageSpec& spec) {
  std::vector<Tensor*> out;
  auto collect = [&](const std::string&, Tensor& t) {
    if (t.requires_grad) out.push_back(&t);
  };
  apply_trainability(model, spec);
  model.visit_params(collect);
  return out;
}

namespace {

StageResult run_loop(const StageSpec& spec, ArcModel& model,
                     std::span<const SyntheticExample> data, const ItemBuilder& builder,
                     bool recitation_items, std::ostream* log) {
  spec.validate();
  if (data.empty()) throw PipelineError("no training data");
  std::vector<Tensor*> params = trainable_set(model, spec);
  if (params.empty()) throw PipelineError("stage has nothing to train");
  AdamW opt(params, spec.weight_decay);
  opt.zero_grads();

  StageResult result;
  const int per_step = spec.batch_size * spec.grad_accum;
  const float inv_batch = 1.f / static_cast<float>(per_step);
  std::size_t cursor = 0;
  for (int step = 0; step < spec.steps; ++step) {
    Rng drop_rng(mix_seed(mix_seed(model.cfg.seed, 900 + static_cast<std::uint64_t>(spec.stage)),
                          static_cast<std::uint64_t>(step)));
    DropoutCtx drop{&drop_rng};
    double batch_loss = 0.0;
    for (int b = 0; b < per_step; ++b) {
      const SyntheticExample& ex = data[cursor % data.size()];
      ++cursor;
      TrainItem item = recitation_items ? builder.build_recitation(ex) : builder.build(ex);
      Tape tape;
      ForwardOut out = model_forward(tape, model, item.input, ForwardMode::train, &drop);
      Node loss = nll_loss(tape, out.logits, item.input.token_ids, item.is_target);
      batch_loss += static_cast<double>(tape.val(loss).data[0]);
      tape.backward(tape.scale(loss, inv_batch));
    }
    clip_gradients(params, spec.clip_norm);
    const float lr = lr_at(spec, step);
    opt.step(lr);
    opt.zero_grads();

    const double mean_loss = batch_loss / per_step;
    result.history.push_back({step, mean_loss, lr});
    if (log && (step % spec.log_every == 0 || step + 1 == spec.steps)) {
      (*log) << "step=" << step << " stage=" << spec.stage << " loss=" << mean_loss << " lr=" << lr
             << "\n";
      log->flush();
    }
  }
  return result;
}

}  // namespace

StageResult run_stage(const StageSpec& spec, ArcModel& model,
                      std::span<const SyntheticExample> data, const ItemBuilder& builder,
                      std::ostream* log) {
  if (spec.stage < 1 || spec.stage > 3) throw PipelineError("run_stage handles stages 1..3");
  return run_loop(spec, model, data, builder, /*recitation_items=*/false, log);
}

StageResult pretrain_base(const StageSpec& spec, ArcModel& model,
                          std::span<const SyntheticExample> data, const ItemBuilder& builder,
                          std::ostream* log) {
  if (spec.stage != 0) throw PipelineError("pretrain_base requires stage 0");
  StageResult r = run_loop(spec, model, data, builder, /*recitation_items=*/true, log);
  model.base.set_trainable(false);
  return r;
}

SampledGradCheckReport end_to_end_fd_check(int samples, float h, float tol, std::uint64_t seed) {
  ModelConfig cfg = ModelConfig::tiny(2, 32);
  cfg.seed = seed;
  cfg.max_loops = 3;
  ArcModel model = ArcModel::init(cfg);
  model.gating_enabled = true;

  // put every trainable tensor on a live gradient path and push the gate
  // probabilities away from the threshold
  Rng rng(mix_seed(seed, 771));
  for (auto& layer : model.lora.layers)
    for (LoraPair* p : {&layer.q, &layer.v, &layer.f1, &layer.f2})
      p->b = Tensor::gaussian(p->b.rows(), p->b.cols(), 0.1f, rng);
  model.proj.fc2.w = Tensor::gaussian(cfg.d, 2 * cfg.d, 0.1f, rng);
  for (std::size_t i = 0; i < model.gates.nets.size(); ++i) {
    model.gates.nets[i].fc2.w = Tensor::gaussian(1, cfg.gate_hidden, 0.05f, rng);
    model.gates.nets[i].fc2.b.data[0] = (i % 2 == 0) ? -1.f : 1.f;
  }

  Vocab vocab(64);
  DataConfig dcfg;
  dcfg.qa_segments = 2;
  dcfg.qa_two_hop_fraction = 0.f;
  ItemBuilder builder = ItemBuilder::make(vocab, model.encoder);
  auto data = gen_qa_corpus(dcfg, vocab, 1, mix_seed(seed, 772));
  TrainItem item = builder.build(data[0]);

  model.proj.set_trainable(true);
  model.lora.set_trainable(true);
  model.gates.set_trainable(true);

  std::vector<std::pair<std::string, Tensor*>> params;
  auto collect = [&](const std::string& name, Tensor& t) { params.emplace_back(name, &t); };
  model.proj.visit_params(collect);
  model.lora.visit_params(collect);
  model.gates.visit_params(collect);

  auto build_loss = [&](Tape& t) {
    ForwardOut out = model_forward(t, model, item.input, ForwardMode::soft);
    return nll_loss(t, out.logits, item.input.token_ids, item.is_target);
  };
  return check_gradients_sampled(build_loss, params, samples, h, tol, mix_seed(seed, 773));
}

std::uint64_t stage_data_seed(std::uint64_t run_seed, int stage) {
  return mix_seed(run_seed, 100 + static_cast<std::uint64_t>(stage));
}

std::uint64_t eval_data_seed(std::uint64_t run_seed, StageSpec::Dataset kind) {
  return mix_seed(run_seed, kind == StageSpec::Dataset::reconstruction ? 200 : 201);
}

}  // namespace arcslot
