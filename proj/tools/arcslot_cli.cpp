// Operator entry point: data generation, base pretraining, staged training,
// evaluation, gate tracing, reconstruction demos, and gradient verification.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "arcslot/cfg_file.hpp"
#include "arcslot/error.hpp"
#include "arcslot/checkpoint.hpp"
#include "arcslot/eval.hpp"
#include "arcslot/gradcheck.hpp"
#include "arcslot/metrics.hpp"
#include "arcslot/train.hpp"

namespace fs = std::filesystem;
using namespace arcslot;

namespace {

constexpr const char* kVersion = "arcslot-v0.1.0";

struct CommonOpts {
  std::string config;
  std::string ckpt;
  std::string out = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int examples = 200;
  int stage = 1;
};

struct Loaded {
  ModelConfig model;
  DataConfig data;
  std::map<std::string, std::string> kv;  // leftover keys for the stage spec
};

Loaded load_config(const CommonOpts& opts) {
  Loaded l;
  if (!opts.config.empty()) l.kv = read_kv_file(opts.config);
  apply_model_keys(l.model, l.kv);
  apply_data_keys(l.data, l.kv);
  if (opts.seed_set) l.model.seed = opts.seed;  // flags win over the file
  l.model.validate();
  l.data.validate();
  return l;
}

StageSpec stage_spec_from(const Loaded& l, int stage) {
  StageSpec spec = StageSpec::defaults(stage);
  std::map<std::string, std::string> kv = l.kv;
  apply_stage_keys(spec, kv);
  reject_leftover_keys(kv);
  spec.validate();
  return spec;
}

void write_manifest(const std::string& out_dir, const std::string& verb, const Loaded& l,
                    const StageSpec* spec) {
  fs::create_directories(out_dir);
  std::ofstream f(out_dir + "/manifest.txt");
  f << "version=" << kVersion << "\n";
  f << "command=" << verb << "\n";
  f << render_model_keys(l.model);
  f << render_data_keys(l.data);
  if (spec) f << render_stage_keys(*spec);
}

ItemBuilder make_builder(const ArcModel& model, const DataConfig& data, Vocab& vocab_out) {
  vocab_out = Vocab(data.content_vocab);
  if (vocab_out.size() > model.cfg.vocab_size)
    throw PipelineError("vocab_size " + std::to_string(model.cfg.vocab_size) + " cannot hold " +
                        std::to_string(vocab_out.size()) + " ids");
  return ItemBuilder::make(vocab_out, model.encoder);
}

int cmd_gen_data(const CommonOpts& opts) {
  Loaded l = load_config(opts);
  Vocab vocab(l.data.content_vocab);
  fs::create_directories(opts.out);
  auto recon = gen_reconstruction_corpus(l.data, vocab, opts.examples, stage_data_seed(l.model.seed, 1));
  auto qa = gen_qa_corpus(l.data, vocab, opts.examples, stage_data_seed(l.model.seed, 2));
  write_corpus(opts.out + "/reconstruction.txt", recon);
  write_corpus(opts.out + "/qa.txt", qa);
  write_manifest(opts.out, "gen-data", l, nullptr);
  std::cout << "wrote " << recon.size() << " reconstruction and " << qa.size() << " qa examples to "
            << opts.out << "\n";
  return 0;
}

int cmd_pretrain_base(const CommonOpts& opts) {
  Loaded l = load_config(opts);
  StageSpec spec = stage_spec_from(l, 0);
  ArcModel model = ArcModel::init(l.model);
  Vocab vocab(64);
  ItemBuilder builder = make_builder(model, l.data, vocab);
  auto data = gen_reconstruction_corpus(l.data, vocab, spec.corpus_size, stage_data_seed(l.model.seed, 0));
  fs::create_directories(opts.out);
  std::ofstream log(opts.out + "/metrics.log");
  StageResult res = pretrain_base(spec, model, data, builder, &log);
  save_model(opts.out + "/base.ckpt", model, 0);
  write_manifest(opts.out, "pretrain-base", l, &spec);
  std::cout << "base pretraining: " << res.history.size() << " steps, final loss "
            << res.history.back().loss << "\n";
  std::cout << "checkpoint: " << opts.out << "/base.ckpt\n";
  return 0;
}

int cmd_train(const CommonOpts& opts) {
  Loaded l = load_config(opts);
  StageSpec spec = stage_spec_from(l, opts.stage);
  if (opts.ckpt.empty()) throw PipelineError("train requires --ckpt with the previous stage's checkpoint");
  const int prev_stage = peek_stage(opts.ckpt);
  if (prev_stage != opts.stage - 1)
    throw PipelineError("stage " + std::to_string(opts.stage) + " needs a stage " +
                        std::to_string(opts.stage - 1) + " checkpoint, got stage " +
                        std::to_string(prev_stage) + " from " + opts.ckpt);
  ArcModel model = ArcModel::init(l.model);
  load_model(opts.ckpt, model);
  Vocab vocab(64);
  ItemBuilder builder = make_builder(model, l.data, vocab);
  auto data = spec.dataset == StageSpec::Dataset::reconstruction
                  ? gen_reconstruction_corpus(l.data, vocab, spec.corpus_size,
                                              stage_data_seed(l.model.seed, opts.stage))
                  : gen_qa_corpus(l.data, vocab, spec.corpus_size, stage_data_seed(l.model.seed, opts.stage));
  fs::create_directories(opts.out);
  std::ofstream log(opts.out + "/metrics.log");
  StageResult res = run_stage(spec, model, data, builder, &log);
  const std::string out_ckpt = opts.out + "/stage" + std::to_string(opts.stage) + ".ckpt";
  save_model(out_ckpt, model, opts.stage);
  write_manifest(opts.out, "train", l, &spec);
  std::cout << "stage " << opts.stage << ": " << res.history.size() << " steps, first-loss "
            << res.history.front().loss << ", final-loss " << res.history.back().loss << "\n";
  std::cout << "checkpoint: " << out_ckpt << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts) {
  Loaded l = load_config(opts);
  if (opts.ckpt.empty()) throw PipelineError("eval requires --ckpt");
  ArcModel model = ArcModel::init(l.model);
  const int stage = load_model(opts.ckpt, model);
  model.gating_enabled = stage == 3;
  Vocab vocab(64);
  ItemBuilder builder = make_builder(model, l.data, vocab);

  auto recon = gen_reconstruction_corpus(l.data, vocab, opts.examples,
                                         eval_data_seed(l.model.seed, StageSpec::Dataset::reconstruction));
  auto qa = gen_qa_corpus(l.data, vocab, opts.examples, eval_data_seed(l.model.seed, StageSpec::Dataset::qa));

  EvalReport rep;
  rep.n_examples = opts.examples;
  rep.max_loops = model.cfg.max_loops;
  rep.ppl = perplexity(model, recon, builder, PplInput::slots);
  const double ppl_recitation = perplexity(model, recon, builder, PplInput::recitation);

  // frozen random projector baseline: same model, untrained nonzero projector
  ArcModel rand_proj = model;
  Rng rng(mix_seed(l.model.seed, 300));
  rand_proj.proj.fc1 = Affine::gaussian(2 * l.model.d, l.model.d_r, 0.02f, rng);
  rand_proj.proj.fc2 = Affine::gaussian(l.model.d, 2 * l.model.d, 0.02f, rng);
  const double ppl_random = perplexity(rand_proj, recon, builder, PplInput::slots);

  QaOutcome slots = eval_qa(model, qa, builder, QaPrompt::slots);
  rep.em = slots.em;
  rep.f1 = slots.f1;
  rep.accuracy = slots.accuracy;
  rep.mean_loops = gate_stats(slots.traces);
  double ratio = 0;
  for (const auto& ex : qa) {
    CompressedContext ctx = model.encoder.encode(ex.segments);
    ratio += ctx.compression_ratio();
  }
  rep.compression_ratio = ratio / static_cast<double>(qa.size());

  write_report_files(opts.out, rep);
  {
    std::ofstream f(opts.out + "/ppl_bars.dat");
    f << "# variant ppl\n";
    f << "recitation " << ppl_recitation << "\n";
    f << "slots " << rep.ppl << "\n";
    f << "random_projector " << ppl_random << "\n";
  }
  write_manifest(opts.out, "eval", l, nullptr);
  std::cout << rep.table();
  std::cout << "ppl_recitation      " << ppl_recitation << "\n";
  std::cout << "ppl_random_proj     " << ppl_random << "\n";
  std::cout << "reports in " << opts.out << "\n";
  return 0;
}

int cmd_trace_gates(const CommonOpts& opts) {
  Loaded l = load_config(opts);
  if (opts.ckpt.empty()) throw PipelineError("trace-gates requires --ckpt");
  ArcModel model = ArcModel::init(l.model);
  const int stage = load_model(opts.ckpt, model);
  model.gating_enabled = stage == 3;
  Vocab vocab(64);
  ItemBuilder builder = make_builder(model, l.data, vocab);
  auto qa = gen_qa_corpus(l.data, vocab, opts.examples, eval_data_seed(l.model.seed, StageSpec::Dataset::qa));
  for (std::size_t i = 0; i < qa.size(); ++i) {
    Tape t;
    ForwardOut out = model_forward(t, model, builder.prompt_only(qa[i]), ForwardMode::infer);
    std::cout << "# example " << i << "\n";
    std::cout << format_trace(out.trace, model.gates.gated_layers);
  }
  return 0;
}

int cmd_reconstruct(const CommonOpts& opts) {
  Loaded l = load_config(opts);
  if (opts.ckpt.empty()) throw PipelineError("reconstruct requires --ckpt");
  ArcModel model = ArcModel::init(l.model);
  const int stage = load_model(opts.ckpt, model);
  model.gating_enabled = stage == 3;
  Vocab vocab(64);
  ItemBuilder builder = make_builder(model, l.data, vocab);
  auto recon = gen_reconstruction_corpus(l.data, vocab, opts.examples,
                                         eval_data_seed(l.model.seed, StageSpec::Dataset::reconstruction));
  for (std::size_t i = 0; i < recon.size(); ++i) {
    AssembledInput prompt = builder.prompt_only(recon[i]);
    std::vector<int> decoded = greedy_decode(model, prompt,
                                             static_cast<int>(recon[i].target.size()) + 1,
                                             vocab.eos(), vocab.slot());
    if (!decoded.empty() && decoded.back() == vocab.eos()) decoded.pop_back();
    auto render = [&](const std::vector<int>& ids) {
      std::ostringstream os;
      for (std::size_t k = 0; k < ids.size(); ++k) os << (k ? " " : "") << vocab.name(ids[k]);
      return os.str();
    };
    int hits = 0;
    for (std::size_t k = 0; k < decoded.size() && k < recon[i].target.size(); ++k)
      hits += decoded[k] == recon[i].target[k];
    std::cout << "example " << i << " (token match " << hits << "/" << recon[i].target.size() << ")\n";
    std::cout << "  original: " << render(recon[i].target) << "\n";
    std::cout << "  decoded:  " << render(decoded) << "\n";
  }
  return 0;
}

int cmd_gradcheck(const CommonOpts& opts) {
  Loaded l = load_config(opts);
  const std::uint64_t seed = l.model.seed;
  bool all_pass = true;

  struct Row {
    const char* name;
    GradCheckReport rep;
  };
  std::vector<Row> rows;
  {
    Rng rng(mix_seed(seed, 1));
    Tensor x = Tensor::gaussian(4, 4, 1.f, rng);
    Tensor w = Tensor::gaussian(4, 4, 1.f, rng);
    rows.push_back({"matmul", check_gradients(
        [&](Tape& t, Node xn) { return t.sum_all(t.mul(t.matmul(xn, t.constant(w)), t.constant(w))); },
        x, 1e-3f, 1e-3f)});
    rows.push_back({"sigmoid", check_gradients(
        [&](Tape& t, Node xn) { return t.sum_all(t.mul(t.sigmoid(xn), t.constant(w))); }, x, 1e-3f, 1e-3f)});
    rows.push_back({"silu", check_gradients(
        [&](Tape& t, Node xn) { return t.sum_all(t.mul(t.silu(xn), t.constant(w))); }, x, 1e-3f, 1e-3f)});
    rows.push_back({"softmax_rows", check_gradients(
        [&](Tape& t, Node xn) { return t.sum_all(t.mul(t.softmax_rows(xn), t.constant(w))); }, x, 1e-3f, 1e-3f)});
    rows.push_back({"layer_norm", check_gradients(
        [&](Tape& t, Node xn) {
          return t.sum_all(t.mul(
              t.layer_norm(xn, t.constant(Tensor::full(1, 4, 1.f)), t.constant(Tensor::zeros(1, 4))),
              t.constant(w)));
        },
        x, 1e-3f, 1e-3f)});
  }
  for (const auto& row : rows) {
    std::cout << "gradcheck " << row.name << ": max_rel_err=" << row.rep.max_rel_err
              << (row.rep.pass ? " pass" : " FAIL") << "\n";
    all_pass = all_pass && row.rep.pass;
  }

  SampledGradCheckReport e2e = end_to_end_fd_check(64, 1e-3f, 1e-2f, seed);
  std::cout << "gradcheck end-to-end nll: max_rel_err=" << e2e.max_rel_err << " (worst "
            << e2e.worst_param << ") over " << e2e.checked << " coordinates"
            << (e2e.pass ? " pass" : " FAIL") << "\n";
  all_pass = all_pass && e2e.pass;
  if (!all_pass) throw PipelineError("gradient check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"context-slot injection with selective adapters and gated recursive refinement"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  CommonOpts opts;
  auto add_common = [&](CLI::App* sub, bool with_stage = false) {
    sub->add_option("--config", opts.config, "flat key=value config file");
    sub->add_option("--seed", opts.seed, "run seed (overrides the config file)")
        ->each([&](const std::string&) { opts.seed_set = true; });
    sub->add_option("--ckpt", opts.ckpt, "input checkpoint path");
    sub->add_option("--out", opts.out, "output directory");
    sub->add_option("--examples", opts.examples, "example count for generation/evaluation");
    if (with_stage) sub->add_option("--stage", opts.stage, "pipeline stage")->check(CLI::Range(1, 3));
  };

  auto* gen = app.add_subcommand("gen-data", "write synthetic reconstruction and qa corpora");
  add_common(gen);
  auto* pre = app.add_subcommand("pretrain-base", "train the backbone on recitation data");
  add_common(pre);
  auto* train = app.add_subcommand("train", "run one training stage from the previous checkpoint");
  add_common(train, /*with_stage=*/true);
  auto* ev = app.add_subcommand("eval", "perplexity, qa metrics, gate statistics");
  add_common(ev);
  auto* trace = app.add_subcommand("trace-gates", "print per-layer slot refinement trajectories");
  add_common(trace);
  auto* rec = app.add_subcommand("reconstruct", "greedy-decode contexts from slots");
  add_common(rec);
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  add_common(gc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage error
  }

  try {
    if (gen->parsed()) return cmd_gen_data(opts);
    if (pre->parsed()) return cmd_pretrain_base(opts);
    if (train->parsed()) return cmd_train(opts);
    if (ev->parsed()) return cmd_eval(opts);
    if (trace->parsed()) return cmd_trace_gates(opts);
    if (rec->parsed()) return cmd_reconstruct(opts);
    if (gc->parsed()) return cmd_gradcheck(opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
