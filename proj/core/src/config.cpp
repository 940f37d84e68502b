#include "arcslot/config.hpp"

#include <algorithm>
#include <sstream>

#include "arcslot/error.hpp"

namespace arcslot {

void ModelConfig::validate() const {
  if (vocab_size <= 0) throw ContractError("vocab_size must be positive");
  if (d <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_mult <= 0 || max_seq_len <= 0 ||
      d_r <= 0 || lora_rank <= 0 || gate_hidden <= 0)
    throw ContractError("all size hyperparameters must be positive");
  if (d % n_heads != 0)
    throw ContractError("d=" + std::to_string(d) + " not divisible by n_heads=" + std::to_string(n_heads));
  if (lora_alpha <= 0.f) throw ContractError("lora_alpha must be positive");
  if (lora_dropout < 0.f || lora_dropout >= 1.f) throw ContractError("lora_dropout outside [0,1)");
  if (max_loops < 1) throw ContractError("max_loops must be >= 1");
  for (int g : gated_layers)
    if (g < 0 || g >= n_layers)
      throw ContractError("gated layer " + std::to_string(g) + " outside [0," + std::to_string(n_layers) + ")");
  for (std::size_t i = 1; i < gated_layers.size(); ++i)
    if (gated_layers[i] <= gated_layers[i - 1])
      throw ContractError("gated_layers must be strictly increasing");
}

bool ModelConfig::is_gated(int layer) const {
  return std::find(gated_layers.begin(), gated_layers.end(), layer) != gated_layers.end();
}

ModelConfig ModelConfig::toy_default() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny(int n_layers_, int d_) {
  ModelConfig c;
  c.d = d_;
  c.n_layers = n_layers_;
  c.n_heads = 2;
  c.d_r = 16;
  c.gate_hidden = 16;
  c.lora_rank = 4;
  c.lora_alpha = 16.f;
  c.lora_dropout = 0.f;
  c.gated_layers.clear();
  for (int i = 0; i < n_layers_; ++i) c.gated_layers.push_back(i);
  return c;
}

void DataConfig::validate() const {
  if (content_vocab <= 1) throw ContractError("content_vocab must exceed 1");
  if (recon_seg_count_min < 1 || recon_seg_count_max < recon_seg_count_min)
    throw ContractError("bad reconstruction segment count range");
  if (recon_seg_len_min < 1 || recon_seg_len_max < recon_seg_len_min)
    throw ContractError("bad reconstruction segment length range");
  if (qa_segments < 1) throw ContractError("qa_segments must be >= 1");
  if (qa_two_hop_fraction < 0.f || qa_two_hop_fraction > 1.f)
    throw ContractError("qa_two_hop_fraction outside [0,1]");
}

std::string gated_layers_to_string(const std::vector<int>& layers, int n_layers) {
  if (static_cast<int>(layers.size()) == n_layers) {
    bool all = true;
    for (int i = 0; i < n_layers; ++i) all = all && layers[static_cast<std::size_t>(i)] == i;
    if (all) return "all";
  }
  if (layers.empty()) return "none";
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) os << (i ? "," : "") << layers[i];
  return os.str();
}

std::vector<int> parse_gated_layers(const std::string& text, int n_layers) {
  if (text == "all") {
    std::vector<int> v(static_cast<std::size_t>(n_layers));
    for (int i = 0; i < n_layers; ++i) v[static_cast<std::size_t>(i)] = i;
    return v;
  }
  if (text == "none" || text.empty()) return {};
  std::vector<int> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      v.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw ContractError("cannot parse gated_layers entry '" + part + "'");
    }
  }
  return v;
}

}  // namespace arcslot
