#pragma once
#include <stdexcept>
#include <string>

namespace arcslot {

struct DimError : std::runtime_error {
  explicit DimError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

struct VocabError : std::runtime_error {
  explicit VocabError(const std::string& msg) : std::runtime_error("vocabulary error: " + msg) {}
};

struct TemplateError : std::runtime_error {
  explicit TemplateError(const std::string& msg) : std::runtime_error("template error: " + msg) {}
};

struct SegmentationError : std::runtime_error {
  explicit SegmentationError(const std::string& msg) : std::runtime_error("segmentation error: " + msg) {}
};

struct CapacityError : std::runtime_error {
  explicit CapacityError(const std::string& msg) : std::runtime_error("capacity error: " + msg) {}
};

struct PipelineError : std::runtime_error {
  explicit PipelineError(const std::string& msg) : std::runtime_error("pipeline error: " + msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

}  // namespace arcslot
