#include "arcslot/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "arcslot/error.hpp"

namespace arcslot {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

void save_tensors(const std::string& path,
                  std::span<const std::pair<std::string, const Tensor*>> tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path);
  std::ostringstream manifest;
  manifest << kContainerVersion << "\n";
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    if (name.find(' ') != std::string::npos)
      throw IoError("tensor name '" + name + "' contains a space");
    manifest << "tensor " << name << " f32 " << t->ndim();
    for (int d : t->shape) manifest << " " << d;
    manifest << " " << offset << "\n";
    offset += t->data.size() * sizeof(float);
  }
  manifest << "end\n";
  const std::string header = manifest.str();
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : tensors)
    f.write(reinterpret_cast<const char*>(t->data.data()),
            static_cast<std::streamsize>(t->data.size() * sizeof(float)));
  if (!f) throw IoError("short write to checkpoint " + path);
}

std::map<std::string, Tensor> load_tensors(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path);
  std::string line;
  if (!std::getline(f, line) || line != kContainerVersion)
    throw IoError("checkpoint " + path + " has version '" + line + "', expected '" + kContainerVersion + "'");

  struct Rec {
    std::string name;
    std::vector<int> shape;
    std::size_t offset;
  };
  std::vector<Rec> records;
  while (std::getline(f, line)) {
    if (line == "end") break;
    std::istringstream is(line);
    std::string tag, name, dtype;
    int ndim = 0;
    is >> tag >> name >> dtype >> ndim;
    if (tag != "tensor" || !is) throw IoError("bad manifest line '" + line + "'");
    if (dtype != "f32") throw IoError("unsupported dtype '" + dtype + "'");
    Rec r;
    r.name = name;
    r.shape.resize(static_cast<std::size_t>(ndim));
    for (auto& d : r.shape) is >> d;
    is >> r.offset;
    if (!is) throw IoError("bad manifest line '" + line + "'");
    records.push_back(std::move(r));
  }
  if (line != "end") throw IoError("manifest of " + path + " is not terminated");

  const std::streampos blob_start = f.tellg();
  std::map<std::string, Tensor> out;
  for (const auto& r : records) {
    Tensor t(r.shape);
    f.seekg(blob_start + static_cast<std::streamoff>(r.offset));
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!f) throw IoError("blob of " + path + " truncated at tensor " + r.name);
    out.emplace(r.name, std::move(t));
  }
  return out;
}

void save_model(const std::string& path, ArcModel& model, int stage) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  Tensor stage_t = Tensor::scalar(static_cast<float>(stage));
  tensors.emplace_back("meta.stage", &stage_t);
  model.visit_params([&](const std::string& name, Tensor& t) { tensors.emplace_back(name, &t); });
  save_tensors(path, tensors);
}

namespace {

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
  if (dst.shape != src.shape)
    throw DimError("checkpoint tensor " + name + " has shape " + src.shape_str() + ", model expects " +
                   dst.shape_str());
  dst.data = src.data;
}

}  // namespace

int load_model(const std::string& path, ArcModel& model) {
  auto tensors = load_tensors(path);
  const auto meta = tensors.find("meta.stage");
  if (meta == tensors.end()) throw PipelineError("checkpoint " + path + " carries no stage marker");
  model.visit_params([&](const std::string& name, Tensor& t) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw PipelineError("checkpoint " + path + " is missing tensor " + name);
    copy_into(t, it->second, name);
  });
  return static_cast<int>(meta->second.data[0]);
}

int peek_stage(const std::string& path) {
  auto tensors = load_tensors(path);
  const auto meta = tensors.find("meta.stage");
  if (meta == tensors.end()) throw PipelineError("checkpoint " + path + " carries no stage marker");
  return static_cast<int>(meta->second.data[0]);
}

void load_backbone(const std::string& path, ArcModel& model) {
  auto tensors = load_tensors(path);
  model.base.visit_params([&](const std::string& name, Tensor& t) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw PipelineError("checkpoint " + path + " is missing tensor " + name);
    copy_into(t, it->second, name);
  });
  const auto code = tensors.find("enc.codebook");
  if (code != tensors.end()) copy_into(model.encoder.codebook, code->second, "enc.codebook");
}

}  // namespace arcslot
