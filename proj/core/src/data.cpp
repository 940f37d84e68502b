#include "arcslot/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "arcslot/error.hpp"

namespace arcslot {

const std::vector<std::string>& builtin_recon_template_texts() {
  static const std::vector<std::string> texts = {
      "background : [B] equivalent :",
      "rewrite the background : [B] ->",
      "restate the background : [B] return :",
      "[B] is a paraphrase of what ? answer :",
  };
  return texts;
}

const std::string& builtin_qa_template_text() {
  static const std::string text = "refer to the background document : [B] question : [Q] answer :";
  return text;
}

const std::string& builtin_no_context_template_text() {
  static const std::string text = "question : [Q] answer :";
  return text;
}

std::vector<SyntheticExample> gen_reconstruction_corpus(const DataConfig& cfg, const Vocab& vocab,
                                                        int count, std::uint64_t seed) {
  cfg.validate();
  if (count < 1) throw ContractError("corpus count must be >= 1");
  if (cfg.content_vocab > vocab.content_size())
    throw VocabError("content_vocab exceeds the vocabulary's content range");
  Rng rng(mix_seed(seed, 11));
  std::vector<SyntheticExample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    SyntheticExample ex;
    ex.kind = SyntheticExample::Kind::reconstruction;
    ex.template_index = rng.uniform_int(0, kNumReconTemplates - 1);
    const int n_seg = rng.uniform_int(cfg.recon_seg_count_min, cfg.recon_seg_count_max);
    for (int s = 0; s < n_seg; ++s) {
      const int len = rng.uniform_int(cfg.recon_seg_len_min, cfg.recon_seg_len_max);
      std::vector<int> seg(static_cast<std::size_t>(len));
      for (auto& tok : seg) tok = rng.uniform_int(0, cfg.content_vocab - 1);
      ex.target.insert(ex.target.end(), seg.begin(), seg.end());
      ex.segments.push_back(std::move(seg));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<SyntheticExample> gen_qa_corpus(const DataConfig& cfg, const Vocab& vocab,
                                            int count, std::uint64_t seed) {
  cfg.validate();
  if (count < 1) throw ContractError("corpus count must be >= 1");
  if (cfg.content_vocab > vocab.content_size())
    throw VocabError("content_vocab exceeds the vocabulary's content range");
  if (cfg.qa_segments >= cfg.content_vocab / 2)
    throw ContractError("qa_segments too large for the content vocabulary");
  Rng rng(mix_seed(seed, 13));
  std::vector<SyntheticExample> out;
  out.reserve(static_cast<std::size_t>(count));
  const int m = cfg.qa_segments;
  for (int i = 0; i < count; ++i) {
    SyntheticExample ex;
    ex.kind = SyntheticExample::Kind::qa;

    std::vector<int> keys;
    while (static_cast<int>(keys.size()) < m) {
      const int k = rng.uniform_int(0, cfg.content_vocab - 1);
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
    auto fresh_value = [&]() {
      for (;;) {
        const int v = rng.uniform_int(0, cfg.content_vocab - 1);
        if (std::find(keys.begin(), keys.end(), v) == keys.end()) return v;
      }
    };

    std::vector<int> values(static_cast<std::size_t>(m));
    for (auto& v : values) v = fresh_value();

    const bool two_hop = m >= 2 && rng.uniform() < cfg.qa_two_hop_fraction;
    int q_seg = rng.uniform_int(0, m - 1);
    if (two_hop) {
      int b = rng.uniform_int(0, m - 2);
      if (b >= q_seg) ++b;  // b != q_seg
      values[static_cast<std::size_t>(q_seg)] = keys[static_cast<std::size_t>(b)];
      ex.hops = 2;
      ex.target = {values[static_cast<std::size_t>(b)]};
    } else {
      ex.hops = 1;
      ex.target = {values[static_cast<std::size_t>(q_seg)]};
    }
    ex.question = {keys[static_cast<std::size_t>(q_seg)]};
    for (int s = 0; s < m; ++s)
      ex.segments.push_back({keys[static_cast<std::size_t>(s)], values[static_cast<std::size_t>(s)]});
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

std::string join_ids(std::span<const int> ids) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? "," : "") << ids[i];
  return os.str();
}

std::vector<int> split_ids(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(std::stoi(part));
  return out;
}

}  // namespace

void write_corpus(const std::string& path, std::span<const SyntheticExample> examples) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write corpus file " + path);
  for (const auto& ex : examples) {
    f << "kind=" << (ex.kind == SyntheticExample::Kind::reconstruction ? "recon" : "qa");
    f << " hops=" << ex.hops << " tmpl=" << ex.template_index;
    f << " q=" << join_ids(ex.question);
    f << " segs=";
    for (std::size_t s = 0; s < ex.segments.size(); ++s) f << (s ? "|" : "") << join_ids(ex.segments[s]);
    f << " target=" << join_ids(ex.target) << "\n";
  }
}

std::vector<SyntheticExample> read_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read corpus file " + path);
  std::vector<SyntheticExample> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    SyntheticExample ex;
    std::istringstream is(line);
    std::string field;
    while (is >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) throw IoError("bad corpus field '" + field + "'");
      const std::string key = field.substr(0, eq);
      const std::string value = field.substr(eq + 1);
      if (key == "kind") {
        ex.kind = value == "recon" ? SyntheticExample::Kind::reconstruction : SyntheticExample::Kind::qa;
      } else if (key == "hops") {
        ex.hops = std::stoi(value);
      } else if (key == "tmpl") {
        ex.template_index = std::stoi(value);
      } else if (key == "q") {
        ex.question = split_ids(value);
      } else if (key == "segs") {
        std::stringstream ss(value);
        std::string seg;
        while (std::getline(ss, seg, '|')) ex.segments.push_back(split_ids(seg));
      } else if (key == "target") {
        ex.target = split_ids(value);
      } else {
        throw IoError("unknown corpus field '" + key + "'");
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

ItemBuilder ItemBuilder::make(const Vocab& vocab, const ContextEncoder& encoder) {
  ItemBuilder b;
  b.vocab = &vocab;
  b.encoder = &encoder;
  for (const auto& text : builtin_recon_template_texts())
    b.recon_templates.push_back(parse_template(text, vocab));
  b.qa_template = parse_template(builtin_qa_template_text(), vocab);
  b.no_context_template = parse_template(builtin_no_context_template_text(), vocab);
  return b;
}

namespace {

TrainItem with_target(AssembledInput input, std::span<const int> target, int eos) {
  TrainItem item;
  item.input = std::move(input);
  item.is_target.assign(item.input.token_ids.size(), 0);
  for (int tok : target) {
    item.input.token_ids.push_back(tok);
    item.is_target.push_back(1);
  }
  item.input.token_ids.push_back(eos);
  item.is_target.push_back(1);
  item.input.layout.sequence_length = static_cast<int>(item.input.token_ids.size());
  return item;
}

}  // namespace

AssembledInput ItemBuilder::prompt_only(const SyntheticExample& ex) const {
  CompressedContext ctx = encoder->encode(ex.segments);
  const PromptTemplate& base = ex.kind == SyntheticExample::Kind::reconstruction
                                   ? recon_templates[static_cast<std::size_t>(ex.template_index) % recon_templates.size()]
                                   : qa_template;
  PromptTemplate tmpl = instantiate(base, ctx.m);
  return assemble(ex.question, ctx, tmpl, *vocab);
}

AssembledInput ItemBuilder::recitation_prompt(const SyntheticExample& ex) const {
  const PromptTemplate& base = ex.kind == SyntheticExample::Kind::reconstruction
                                   ? recon_templates[static_cast<std::size_t>(ex.template_index) % recon_templates.size()]
                                   : qa_template;
  PromptTemplate tmpl = instantiate(base, static_cast<int>(ex.segments.size()));
  std::vector<int> ids;
  int seg = 0;
  for (const auto& it : tmpl.items) {
    switch (it.kind) {
      case TemplateTok::Kind::word:
        ids.push_back(it.token);
        break;
      case TemplateTok::Kind::slot:
        for (int tok : ex.segments[static_cast<std::size_t>(seg)]) ids.push_back(tok);
        ++seg;
        break;
      case TemplateTok::Kind::question:
        for (int q : ex.question) ids.push_back(q);
        break;
    }
  }
  return assemble_plain(std::move(ids));
}

AssembledInput ItemBuilder::no_context_prompt(const SyntheticExample& ex) const {
  std::vector<int> ids;
  for (const auto& it : no_context_template.items) {
    if (it.kind == TemplateTok::Kind::question) {
      for (int q : ex.question) ids.push_back(q);
    } else {
      ids.push_back(it.token);
    }
  }
  return assemble_plain(std::move(ids));
}

TrainItem ItemBuilder::build(const SyntheticExample& ex) const {
  return with_target(prompt_only(ex), ex.target, vocab->eos());
}

TrainItem ItemBuilder::build_recitation(const SyntheticExample& ex) const {
  return with_target(recitation_prompt(ex), ex.target, vocab->eos());
}

TrainItem ItemBuilder::build_no_context(const SyntheticExample& ex) const {
  return with_target(no_context_prompt(ex), ex.target, vocab->eos());
}

}  // namespace arcslot
