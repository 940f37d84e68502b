#include "arcslot/slots.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "arcslot/error.hpp"

namespace arcslot {

void SlotLayout::validate() const {
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] < 0 || positions[i] >= sequence_length)
      throw DimError("slot position " + std::to_string(positions[i]) + " outside sequence of " +
                     std::to_string(sequence_length));
    if (i > 0 && positions[i] <= positions[i - 1])
      throw DimError("slot positions must be strictly increasing");
  }
}

ContextEncoder ContextEncoder::init(int vocab, int d_r, Rng& rng) {
  ContextEncoder enc;
  enc.codebook = Tensor::gaussian(vocab, d_r, 1.f, rng);
  return enc;
}

CompressedContext ContextEncoder::encode(std::span<const std::vector<int>> segments) const {
  if (segments.empty()) throw SegmentationError("no segments to encode");
  const int d_r = codebook.cols();
  CompressedContext ctx;
  ctx.m = static_cast<int>(segments.size());
  ctx.e = Tensor::zeros(ctx.m, d_r);
  for (int s = 0; s < ctx.m; ++s) {
    const auto& seg = segments[static_cast<std::size_t>(s)];
    if (seg.empty()) throw SegmentationError("segment " + std::to_string(s) + " is empty");
    std::map<int, int> counts;
    for (int id : seg) {
      if (id < 0 || id >= codebook.rows())
        throw VocabError("token id " + std::to_string(id) + " outside codebook");
      counts[id] += 1;
    }
    float* out = ctx.e.row_ptr(s);
    const float inv = 1.f / static_cast<float>(seg.size());
    for (const auto& [id, c] : counts) {
      const float* row = codebook.row_ptr(id);
      const float w = static_cast<float>(c) * inv;
      for (int j = 0; j < d_r; ++j) out[j] += w * row[j];
    }
    ctx.source_token_count += static_cast<int>(seg.size());
  }
  return ctx;
}

Projector Projector::init(int d_r, int d, Rng& rng) {
  Projector p;
  const int d_proj = 2 * d;
  p.fc1 = Affine::gaussian(d_proj, d_r, 0.02f, rng);
  p.fc2 = Affine::zeros(d, d_proj);
  return p;
}

Node Projector::project(Tape& t, Node e) {
  if (t.val(e).cols() != fc1.w.cols())
    throw DimError("embeddings " + t.val(e).shape_str() + " do not match projector input width " +
                   std::to_string(fc1.w.cols()));
  Node h = t.silu(fc1.apply(t, e));
  return fc2.apply(t, h);
}

void Projector::set_trainable(bool on) {
  fc1.set_trainable(on);
  fc2.set_trainable(on);
}

void Projector::visit_params(const ParamVisitor& fn) {
  fn("proj.fc1.w", fc1.w);
  fn("proj.fc1.b", fc1.b);
  fn("proj.fc2.w", fc2.w);
  fn("proj.fc2.b", fc2.b);
}

int PromptTemplate::slot_marks() const {
  int n = 0;
  for (const auto& it : items) n += it.kind == TemplateTok::Kind::slot;
  return n;
}

bool PromptTemplate::has_question() const {
  for (const auto& it : items)
    if (it.kind == TemplateTok::Kind::question) return true;
  return false;
}

PromptTemplate parse_template(const std::string& text, const Vocab& vocab) {
  PromptTemplate tmpl;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    if (tok == "[B]") {
      tmpl.items.push_back({TemplateTok::Kind::slot, vocab.slot()});
    } else if (tok == "[Q]") {
      tmpl.items.push_back({TemplateTok::Kind::question, -1});
    } else if (tok.size() >= 2 && tok.front() == '[' && tok.back() == ']') {
      throw TemplateError("unknown marker '" + tok + "'");
    } else {
      tmpl.items.push_back({TemplateTok::Kind::word, vocab.word(tok)});
    }
  }
  if (tmpl.items.empty()) throw TemplateError("empty template");
  return tmpl;
}

PromptTemplate load_template_file(const std::string& path, const Vocab& vocab) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open template file " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_template(buf.str(), vocab);
}

PromptTemplate instantiate(const PromptTemplate& tmpl, int m) {
  if (m < 1) throw TemplateError("cannot instantiate a template for " + std::to_string(m) + " slots");
  const int marks = tmpl.slot_marks();
  if (marks == m) return tmpl;
  if (marks != 1)
    throw TemplateError("template declares " + std::to_string(marks) + " slots, cannot instantiate for " +
                        std::to_string(m));
  PromptTemplate out;
  for (const auto& it : tmpl.items) {
    if (it.kind == TemplateTok::Kind::slot) {
      for (int i = 0; i < m; ++i) out.items.push_back(it);
    } else {
      out.items.push_back(it);
    }
  }
  return out;
}

AssembledInput assemble(std::span<const int> question_ids, const CompressedContext& ctx,
                        const PromptTemplate& tmpl, const Vocab& vocab) {
  if (tmpl.slot_marks() != ctx.m)
    throw TemplateError("template declares " + std::to_string(tmpl.slot_marks()) + " slots but context has " +
                        std::to_string(ctx.m));
  if (!question_ids.empty() && !tmpl.has_question())
    throw TemplateError("question given but template has no question marker");
  AssembledInput in;
  in.ctx = ctx;
  for (const auto& it : tmpl.items) {
    switch (it.kind) {
      case TemplateTok::Kind::word:
        in.token_ids.push_back(it.token);
        break;
      case TemplateTok::Kind::slot:
        in.layout.positions.push_back(static_cast<int>(in.token_ids.size()));
        in.token_ids.push_back(vocab.slot());
        break;
      case TemplateTok::Kind::question:
        for (int q : question_ids) in.token_ids.push_back(q);
        break;
    }
  }
  in.layout.sequence_length = static_cast<int>(in.token_ids.size());
  in.layout.validate();
  return in;
}

AssembledInput assemble_plain(std::vector<int> token_ids) {
  AssembledInput in;
  in.token_ids = std::move(token_ids);
  in.layout.sequence_length = static_cast<int>(in.token_ids.size());
  return in;
}

}  // namespace arcslot
