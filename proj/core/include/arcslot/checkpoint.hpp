#pragma once
#include <map>
#include <span>
#include <string>
#include <utility>

#include "arcslot/model.hpp"

namespace arcslot {

// Manifest-plus-blob container: a text manifest headed by the version string,
// one line per tensor (name, dtype, shape, byte offset into the blob), an
// "end" line, then raw row-major little-endian float32 data.
inline constexpr const char* kContainerVersion = "arcslot-v1";

void save_tensors(const std::string& path,
                  std::span<const std::pair<std::string, const Tensor*>> tensors);
std::map<std::string, Tensor> load_tensors(const std::string& path);

// Whole-model checkpoints additionally carry a meta.stage scalar:
// 0 = base pretraining, 1..3 = pipeline stages.
void save_model(const std::string& path, ArcModel& model, int stage);
int load_model(const std::string& path, ArcModel& model);
int peek_stage(const std::string& path);

// Loads only the backbone tensors (plus codebook when present) from a base
// checkpoint into a freshly initialized model.
void load_backbone(const std::string& path, ArcModel& model);

}  // namespace arcslot
