#pragma once
#include <cstdint>
#include <string>
#include <vector>

namespace arcslot {

// All architecture, gating, and adaptation hyperparameters. Defaults are the
// desk-scale configuration every trend check is calibrated on.
struct ModelConfig {
  int vocab_size = 85;
  int d = 64;
  int n_layers = 4;
  int n_heads = 4;
  int ffn_mult = 4;
  int max_seq_len = 256;
  int d_r = 32;
  int lora_rank = 8;
  float lora_alpha = 32.f;
  float lora_dropout = 0.05f;
  int max_loops = 3;                     // total passes per slot, mandatory included
  std::vector<int> gated_layers = {0, 1, 2, 3};
  int gate_hidden = 32;
  std::uint64_t seed = 17;

  void validate() const;
  bool is_gated(int layer) const;
  static ModelConfig toy_default();
  // 2-layer configuration used by gradient checks; gates are biased away
  // from the 0.5 threshold by the check itself.
  static ModelConfig tiny(int n_layers = 2, int d = 32);
};

// Synthetic corpus knobs.
struct DataConfig {
  int content_vocab = 64;
  int recon_seg_count_min = 3;
  int recon_seg_count_max = 3;
  int recon_seg_len_min = 24;
  int recon_seg_len_max = 24;
  int qa_segments = 3;
  float qa_two_hop_fraction = 0.25f;

  void validate() const;
};

std::string gated_layers_to_string(const std::vector<int>& layers, int n_layers);
std::vector<int> parse_gated_layers(const std::string& text, int n_layers);

}  // namespace arcslot
