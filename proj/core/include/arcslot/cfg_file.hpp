#pragma once
#include <map>
#include <string>

#include "arcslot/config.hpp"
#include "arcslot/train.hpp"

namespace arcslot {

// Flat key-value text: one "key=value" per line, '#' comments. Keys are the
// ModelConfig / DataConfig / StageSpec field names. apply_* consume the keys
// they recognize; reject_leftover flags anything nobody claimed.
std::map<std::string, std::string> read_kv_file(const std::string& path);
std::map<std::string, std::string> parse_kv_text(const std::string& text);

void apply_model_keys(ModelConfig& cfg, std::map<std::string, std::string>& kv);
void apply_data_keys(DataConfig& cfg, std::map<std::string, std::string>& kv);
void apply_stage_keys(StageSpec& spec, std::map<std::string, std::string>& kv);
void reject_leftover_keys(const std::map<std::string, std::string>& kv);

std::string render_model_keys(const ModelConfig& cfg);
std::string render_data_keys(const DataConfig& cfg);
std::string render_stage_keys(const StageSpec& spec);

}  // namespace arcslot
