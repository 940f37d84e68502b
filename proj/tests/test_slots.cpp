#include <algorithm>
#include <fstream>

#include "arcslot/data.hpp"
#include "arcslot/error.hpp"
#include "arcslot/gradcheck.hpp"
#include "arcslot/model.hpp"
#include "doctest.h"

using namespace arcslot;

namespace {

ArcModel tiny_model(std::uint64_t seed = 3) {
  ModelConfig cfg = ModelConfig::tiny(2, 16);
  cfg.seed = seed;
  return ArcModel::init(cfg);
}

}  // namespace

TEST_CASE("encode_context basics") {
  Rng rng(1);
  ContextEncoder enc = ContextEncoder::init(32, 8, rng);

  SUBCASE("one segment gives m=1") {
    std::vector<std::vector<int>> segs = {{1, 2, 3}};
    CompressedContext ctx = enc.encode(segs);
    CHECK(ctx.m == 1);
    CHECK(ctx.source_token_count == 3);
  }
  SUBCASE("permuting tokens within a segment leaves the embedding unchanged") {
    std::vector<std::vector<int>> a = {{5, 9, 2, 9, 7, 1}};
    std::vector<std::vector<int>> b = {{9, 1, 7, 2, 9, 5}};
    CHECK(bitwise_equal(enc.encode(a).e, enc.encode(b).e));
  }
  SUBCASE("three segments of 24 tokens compress 24x") {
    std::vector<std::vector<int>> segs(3, std::vector<int>(24, 0));
    for (auto& s : segs)
      for (auto& tok : s) tok = rng.uniform_int(0, 31);
    CompressedContext ctx = enc.encode(segs);
    CHECK(ctx.m == 3);
    CHECK(ctx.source_token_count == 72);
    CHECK(ctx.compression_ratio() == 24.0);
  }
  SUBCASE("empty segment is a segmentation error") {
    std::vector<std::vector<int>> segs = {{1}, {}};
    CHECK_THROWS_AS(enc.encode(segs), SegmentationError);
    CHECK_THROWS_AS(enc.encode(std::span<const std::vector<int>>{}), SegmentationError);
  }
}

TEST_CASE("projector") {
  Rng rng(2);
  Projector proj = Projector::init(8, 16, rng);

  SUBCASE("zero-initialized final affine silences slots") {
    Tape t;
    Tensor e = Tensor::gaussian(3, 8, 1.f, rng);
    Node out = proj.project(t, t.constant(e));
    CHECK(t.val(out).rows() == 3);
    CHECK(t.val(out).cols() == 16);
    for (float v : t.val(out).data) CHECK(v == 0.f);
  }
  SUBCASE("width mismatch is a dimension error") {
    Tape t;
    CHECK_THROWS_AS(proj.project(t, t.constant(Tensor::zeros(3, 9))), DimError);
  }
  SUBCASE("gradient of sum(project(E)) w.r.t. the projector passes finite differences") {
    // give the final affine real weights so gradients flow
    Rng r2(4);
    proj.fc2.w = Tensor::gaussian(16, 32, 0.1f, r2);
    Tensor e = Tensor::gaussian(2, 8, 1.f, r2);
    auto f_fc1 = [&](Tape& t, Node xn) {
      Projector p = proj;
      Node hidden = t.silu(t.add_bias(t.matmul_nt(t.constant(e), xn), t.leaf(&p.fc1.b)));
      return t.sum_all(t.add_bias(t.matmul_nt(hidden, t.leaf(&p.fc2.w)), t.leaf(&p.fc2.b)));
    };
    CHECK(check_gradients(f_fc1, proj.fc1.w, 1e-3f, 1e-3f).pass);
    auto f_fc2 = [&](Tape& t, Node xn) {
      Projector p = proj;
      Node hidden = t.silu(t.add_bias(t.matmul_nt(t.constant(e), t.leaf(&p.fc1.w)), t.leaf(&p.fc1.b)));
      return t.sum_all(t.add_bias(t.matmul_nt(hidden, xn), t.leaf(&p.fc2.b)));
    };
    CHECK(check_gradients(f_fc2, proj.fc2.w, 1e-3f, 1e-3f).pass);
  }
}

TEST_CASE("templates") {
  Vocab vocab(64);

  SUBCASE("unknown markers are rejected") {
    CHECK_THROWS_AS(parse_template("background : [X]", vocab), TemplateError);
    CHECK_THROWS_AS(parse_template("", vocab), TemplateError);
    CHECK_THROWS_AS(parse_template("nonsenseword [B]", vocab), VocabError);
  }
  SUBCASE("instantiation repeats the single slot mark") {
    PromptTemplate tmpl = parse_template("background : [B] ->", vocab);
    CHECK(tmpl.slot_marks() == 1);
    PromptTemplate t3 = instantiate(tmpl, 3);
    CHECK(t3.slot_marks() == 3);
    CHECK_THROWS_AS(instantiate(t3, 2), TemplateError);
  }
  SUBCASE("stage-two template carries 3 placeholders before the question") {
    PromptTemplate tmpl = instantiate(parse_template(builtin_qa_template_text(), vocab), 3);
    int slots_seen = 0;
    bool question_seen = false;
    for (const auto& it : tmpl.items) {
      if (it.kind == TemplateTok::Kind::slot) {
        CHECK(!question_seen);
        ++slots_seen;
      }
      if (it.kind == TemplateTok::Kind::question) question_seen = true;
    }
    CHECK(slots_seen == 3);
    CHECK(question_seen);
  }
  SUBCASE("file loader matches in-memory parsing") {
    const std::string path = "test_template_tmp.txt";
    {
      std::ofstream f(path);
      f << "refer to the background document : [B] question : [Q] answer :\n";
    }
    PromptTemplate a = load_template_file(path, vocab);
    PromptTemplate b = parse_template(builtin_qa_template_text(), vocab);
    REQUIRE(a.items.size() == b.items.size());
    for (std::size_t i = 0; i < a.items.size(); ++i) {
      CHECK(a.items[i].kind == b.items[i].kind);
      CHECK(a.items[i].token == b.items[i].token);
    }
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_template_file("no_such_template.txt", vocab), IoError);
  }
}

TEST_CASE("assemble builds the mixed initial state") {
  ArcModel m = tiny_model();
  Vocab vocab(64);
  Rng rng(7);
  std::vector<std::vector<int>> segs = {{1, 2, 3, 4}, {5, 6}, {7, 8, 9}};
  CompressedContext ctx = m.encoder.encode(segs);
  PromptTemplate tmpl = instantiate(parse_template("background : [B] ->", vocab), ctx.m);
  AssembledInput in = assemble({}, ctx, tmpl, vocab);

  SUBCASE("slot count law") {
    CHECK(in.layout.m() == 3);
    CHECK(static_cast<int>(segs.size()) == in.layout.m());
    for (int p : in.layout.positions) CHECK(in.token_ids[static_cast<std::size_t>(p)] == vocab.slot());
  }
  SUBCASE("placeholder-count mismatch is a template error") {
    PromptTemplate wrong = instantiate(parse_template("background : [B] ->", vocab), 2);
    CHECK_THROWS_AS(assemble({}, ctx, wrong, vocab), TemplateError);
  }
  SUBCASE("round-trip: slot rows recover the projection, other rows the embeddings, bitwise") {
    // give the projector real weights so slot rows are nonzero
    Rng r2(8);
    m.proj.fc2.w = Tensor::gaussian(m.cfg.d, 2 * m.cfg.d, 0.1f, r2);
    Tape t;
    Node h0 = build_h0(t, m, in);
    Node projected = m.proj.project(t, t.constant(in.ctx.e));
    Node emb = m.base.embed_tokens(t, in.token_ids);
    const Tensor& h = t.val(h0);
    std::size_t slot_cursor = 0;
    for (int i = 0; i < in.layout.sequence_length; ++i) {
      const bool is_slot = slot_cursor < in.layout.positions.size() &&
                           in.layout.positions[slot_cursor] == i;
      for (int c = 0; c < m.cfg.d; ++c) {
        if (is_slot)
          CHECK(h.at(i, c) == t.val(projected).at(static_cast<int>(slot_cursor), c));
        else
          CHECK(h.at(i, c) == t.val(emb).at(i, c));
      }
      if (is_slot) ++slot_cursor;
    }
    CHECK(slot_cursor == in.layout.positions.size());
  }
}

TEST_CASE("question marker substitution") {
  ArcModel m = tiny_model();
  Vocab vocab(64);
  std::vector<std::vector<int>> segs = {{10, 11}, {12, 13}};
  CompressedContext ctx = m.encoder.encode(segs);
  PromptTemplate tmpl = instantiate(parse_template(builtin_qa_template_text(), vocab), ctx.m);
  const std::vector<int> question = {10};
  AssembledInput in = assemble(question, ctx, tmpl, vocab);
  // the question token appears after the slots
  bool found = false;
  for (int p = in.layout.positions.back() + 1; p < in.layout.sequence_length; ++p)
    found = found || in.token_ids[static_cast<std::size_t>(p)] == 10;
  CHECK(found);
  // a question without a question marker is a template error
  PromptTemplate no_q = instantiate(parse_template("background : [B] ->", vocab), ctx.m);
  CHECK_THROWS_AS(assemble(question, ctx, no_q, vocab), TemplateError);
}
