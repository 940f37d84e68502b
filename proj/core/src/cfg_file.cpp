#include "arcslot/cfg_file.hpp"

#include <fstream>
#include <sstream>

#include "arcslot/error.hpp"

namespace arcslot {

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t')) line.pop_back();
    std::size_t start = 0;
    while (start < line.size() && (line[start] == ' ' || line[start] == '\t')) ++start;
    line = line.substr(start);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw PipelineError("config line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_kv_text(buf.str());
}

namespace {

template <typename T, typename Parse>
void take(std::map<std::string, std::string>& kv, const std::string& key, T& out, Parse parse) {
  const auto it = kv.find(key);
  if (it == kv.end()) return;
  try {
    out = parse(it->second);
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception&) {
    throw PipelineError("cannot parse config value " + key + "=" + it->second);
  }
  kv.erase(it);
}

int to_int(const std::string& s) { return std::stoi(s); }
float to_float(const std::string& s) { return std::stof(s); }
std::uint64_t to_u64(const std::string& s) { return std::stoull(s); }

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw PipelineError("cannot parse boolean '" + s + "'");
}

}  // namespace

void apply_model_keys(ModelConfig& cfg, std::map<std::string, std::string>& kv) {
  take(kv, "vocab_size", cfg.vocab_size, to_int);
  take(kv, "d", cfg.d, to_int);
  take(kv, "n_layers", cfg.n_layers, to_int);
  take(kv, "n_heads", cfg.n_heads, to_int);
  take(kv, "ffn_mult", cfg.ffn_mult, to_int);
  take(kv, "max_seq_len", cfg.max_seq_len, to_int);
  take(kv, "d_r", cfg.d_r, to_int);
  take(kv, "lora_rank", cfg.lora_rank, to_int);
  take(kv, "lora_alpha", cfg.lora_alpha, to_float);
  take(kv, "lora_dropout", cfg.lora_dropout, to_float);
  take(kv, "max_loops", cfg.max_loops, to_int);
  take(kv, "gate_hidden", cfg.gate_hidden, to_int);
  take(kv, "seed", cfg.seed, to_u64);
  const auto it = kv.find("gated_layers");
  if (it != kv.end()) {
    cfg.gated_layers = parse_gated_layers(it->second, cfg.n_layers);
    kv.erase(it);
  } else {
    // default is every layer of the configured depth
    cfg.gated_layers = parse_gated_layers("all", cfg.n_layers);
  }
}

void apply_data_keys(DataConfig& cfg, std::map<std::string, std::string>& kv) {
  take(kv, "content_vocab", cfg.content_vocab, to_int);
  take(kv, "recon_seg_count_min", cfg.recon_seg_count_min, to_int);
  take(kv, "recon_seg_count_max", cfg.recon_seg_count_max, to_int);
  take(kv, "recon_seg_len_min", cfg.recon_seg_len_min, to_int);
  take(kv, "recon_seg_len_max", cfg.recon_seg_len_max, to_int);
  take(kv, "qa_segments", cfg.qa_segments, to_int);
  take(kv, "qa_two_hop_fraction", cfg.qa_two_hop_fraction, to_float);
}

void apply_stage_keys(StageSpec& spec, std::map<std::string, std::string>& kv) {
  take(kv, "steps", spec.steps, to_int);
  take(kv, "learning_rate", spec.learning_rate, to_float);
  take(kv, "warmup_ratio", spec.warmup_ratio, to_float);
  take(kv, "schedule", spec.schedule, [](const std::string& s) { return s; });
  take(kv, "batch_size", spec.batch_size, to_int);
  take(kv, "grad_accum", spec.grad_accum, to_int);
  take(kv, "weight_decay", spec.weight_decay, to_float);
  take(kv, "clip_norm", spec.clip_norm, to_float);
  take(kv, "log_every", spec.log_every, to_int);
  take(kv, "corpus_size", spec.corpus_size, to_int);
  take(kv, "gating_enabled", spec.gating_enabled, to_bool);
  const auto it = kv.find("trainable");
  if (it != kv.end()) {
    spec.train_projector = it->second.find("projector") != std::string::npos;
    spec.train_lora = it->second.find("lora") != std::string::npos;
    spec.train_gate = it->second.find("gate") != std::string::npos;
    kv.erase(it);
  }
  const auto ds = kv.find("dataset");
  if (ds != kv.end()) {
    if (ds->second == "reconstruction")
      spec.dataset = StageSpec::Dataset::reconstruction;
    else if (ds->second == "qa")
      spec.dataset = StageSpec::Dataset::qa;
    else
      throw PipelineError("unknown dataset '" + ds->second + "'");
    kv.erase(ds);
  }
}

void reject_leftover_keys(const std::map<std::string, std::string>& kv) {
  if (kv.empty()) return;
  std::string names;
  for (const auto& [k, v] : kv) names += (names.empty() ? "" : ", ") + k;
  throw PipelineError("unknown config keys: " + names);
}

std::string render_model_keys(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "vocab_size=" << cfg.vocab_size << "\n";
  os << "d=" << cfg.d << "\n";
  os << "n_layers=" << cfg.n_layers << "\n";
  os << "n_heads=" << cfg.n_heads << "\n";
  os << "ffn_mult=" << cfg.ffn_mult << "\n";
  os << "max_seq_len=" << cfg.max_seq_len << "\n";
  os << "d_r=" << cfg.d_r << "\n";
  os << "lora_rank=" << cfg.lora_rank << "\n";
  os << "lora_alpha=" << cfg.lora_alpha << "\n";
  os << "lora_dropout=" << cfg.lora_dropout << "\n";
  os << "max_loops=" << cfg.max_loops << "\n";
  os << "gated_layers=" << gated_layers_to_string(cfg.gated_layers, cfg.n_layers) << "\n";
  os << "gate_hidden=" << cfg.gate_hidden << "\n";
  os << "seed=" << cfg.seed << "\n";
  return os.str();
}

std::string render_data_keys(const DataConfig& cfg) {
  std::ostringstream os;
  os << "content_vocab=" << cfg.content_vocab << "\n";
  os << "recon_seg_count_min=" << cfg.recon_seg_count_min << "\n";
  os << "recon_seg_count_max=" << cfg.recon_seg_count_max << "\n";
  os << "recon_seg_len_min=" << cfg.recon_seg_len_min << "\n";
  os << "recon_seg_len_max=" << cfg.recon_seg_len_max << "\n";
  os << "qa_segments=" << cfg.qa_segments << "\n";
  os << "qa_two_hop_fraction=" << cfg.qa_two_hop_fraction << "\n";
  return os.str();
}

std::string render_stage_keys(const StageSpec& spec) {
  std::ostringstream os;
  os << "stage=" << spec.stage << "\n";
  std::string tr;
  if (spec.train_projector) tr += "projector";
  if (spec.train_lora) tr += std::string(tr.empty() ? "" : ",") + "lora";
  if (spec.train_gate) tr += std::string(tr.empty() ? "" : ",") + "gate";
  os << "trainable=" << tr << "\n";
  os << "gating_enabled=" << (spec.gating_enabled ? "true" : "false") << "\n";
  os << "dataset=" << (spec.dataset == StageSpec::Dataset::reconstruction ? "reconstruction" : "qa") << "\n";
  os << "steps=" << spec.steps << "\n";
  os << "learning_rate=" << spec.learning_rate << "\n";
  os << "warmup_ratio=" << spec.warmup_ratio << "\n";
  os << "schedule=" << spec.schedule << "\n";
  os << "batch_size=" << spec.batch_size << "\n";
  os << "grad_accum=" << spec.grad_accum << "\n";
  os << "weight_decay=" << spec.weight_decay << "\n";
  os << "clip_norm=" << spec.clip_norm << "\n";
  os << "log_every=" << spec.log_every << "\n";
  os << "corpus_size=" << spec.corpus_size << "\n";
  return os.str();
}

}  // namespace arcslot
