#include <cmath>
#include <functional>

#include "arcslot/error.hpp"
#include "arcslot/gate.hpp"
#include "arcslot/gradcheck.hpp"
#include "arcslot/tape.hpp"
#include "doctest.h"

using namespace arcslot;

namespace {

Tensor random_tensor(int r, int c, std::uint64_t seed, float std = 1.f) {
  Rng rng(seed);
  return Tensor::gaussian(r, c, std, rng);
}

// FD harness: loss = sum(op(x) * W) with a fixed random weight to break
// symmetry. 20+ seeds per primitive.
void check_primitive(const char* name, const std::function<Node(Tape&, Node)>& op,
                     int rows = 4, int cols = 4, int seeds = 20, float tol = 1e-3f) {
  for (int s = 0; s < seeds; ++s) {
    Tensor x = random_tensor(rows, cols, 777 + static_cast<std::uint64_t>(s));
    auto loss_of = [&](Tape& t, Node xn) {
      Node y = op(t, xn);
      Tensor w = random_tensor(t.val(y).rows(), t.val(y).cols(), 55 + static_cast<std::uint64_t>(s));
      return t.sum_all(t.mul(y, t.constant(w)));
    };
    GradCheckReport rep = check_gradients(loss_of, x, 1e-3f, tol);
    INFO(std::string(name) << " seed " << s << " max_rel_err " << rep.max_rel_err);
    CHECK(rep.pass);
  }
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 6.f);
  CHECK(t.all_finite());
  CHECK_THROWS_AS(Tensor({2, 2}, {1.f, 2.f, 3.f}), DimError);
  t.ensure_grad();
  CHECK(t.grad.size() == t.data.size());
}

TEST_CASE("matmul identity and hand-computed cases") {
  Tape t;
  Tensor id3 = Tensor::zeros(3, 3);
  for (int i = 0; i < 3; ++i) id3.at(i, i) = 1.f;
  Tensor m = random_tensor(3, 3, 3);
  Node out = t.matmul(t.constant(id3), t.constant(m));
  CHECK(bitwise_equal(t.val(out), m));

  Node prod = t.matmul(t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4})),
                       t.constant(Tensor::matrix(2, 1, {0, 1})));
  CHECK(t.val(prod).at(0, 0) == 2.f);
  CHECK(t.val(prod).at(1, 0) == 4.f);

  Tensor bad = Tensor::zeros(5, 3);
  CHECK_THROWS_AS(t.matmul(t.constant(m), t.constant(bad)), DimError);
  CHECK_THROWS_WITH_AS(t.matmul(t.constant(m), t.constant(bad)),
                       doctest::Contains("[3x3]"), DimError);
}

TEST_CASE("matmul gradient of sum equals column-sum broadcast of b") {
  Tensor a = random_tensor(5, 7, 11);
  Tensor b = random_tensor(7, 3, 12);
  a.requires_grad = true;
  a.ensure_grad();
  a.zero_grad();
  Tape t;
  Node loss = t.sum_all(t.matmul(t.leaf(&a), t.constant(b)));
  t.backward(loss);
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < 7; ++k) {
      float expect = 0.f;
      for (int j = 0; j < 3; ++j) expect += b.at(k, j);
      CHECK(a.grad[static_cast<std::size_t>(i) * 7 + k] == doctest::Approx(expect).epsilon(1e-5));
    }
  // independent finite-difference confirmation
  auto f = [&](Tape& tp, Node xn) { return tp.sum_all(tp.matmul(xn, tp.constant(b))); };
  GradCheckReport rep = check_gradients(f, a, 1e-3f, 1e-3f);
  CHECK(rep.pass);
}

TEST_CASE("sigmoid values") {
  Tape t;
  Node y = t.sigmoid(t.constant(Tensor::matrix(1, 3, {0.f, 100.f, 1.f})));
  CHECK(t.val(y).at(0, 0) == 0.5f);
  CHECK(std::fabs(t.val(y).at(0, 1) - 1.0) < 1e-9);
  CHECK(t.val(y).at(0, 2) == doctest::Approx(0.7310585786).epsilon(1e-6));
}

TEST_CASE("stop_gradient is a forward identity with a dead backward edge") {
  Tensor x = random_tensor(3, 3, 21);
  x.requires_grad = true;
  x.ensure_grad();

  SUBCASE("sum of stopped value has zero gradient") {
    x.zero_grad();
    Tape t;
    Node xn = t.leaf(&x);
    Node stopped = t.stop_gradient(xn);
    CHECK(bitwise_equal(t.val(stopped), x));
    Node loss = t.sum_all(stopped);
    t.backward(loss);
    for (float g : x.grad) CHECK(g == 0.f);
  }
  SUBCASE("only the live branch contributes") {
    x.zero_grad();
    Tape t;
    Node xn = t.leaf(&x);
    Node loss = t.sum_all(t.add(xn, t.stop_gradient(xn)));
    t.backward(loss);
    for (float g : x.grad) CHECK(g == 1.f);
  }
}

TEST_CASE("straight-through composite: hard forward, continuous gradient") {
  Tensor g = Tensor::matrix(4, 1, {0.7f, 0.3f, 0.5f, 0.9999f});
  g.requires_grad = true;
  g.ensure_grad();
  g.zero_grad();
  Tensor c = Tensor::matrix(4, 1, {2.5f, -3.f, 0.125f, 7.f});
  Tape t;
  Node gn = t.leaf(&g);
  Node hard = ste_gate(t, gn);
  CHECK(t.val(hard).data[0] == 1.f);
  CHECK(t.val(hard).data[1] == 0.f);
  CHECK(t.val(hard).data[2] == 1.f);  // inclusive threshold
  CHECK(t.val(hard).data[3] == 1.f);
  Node loss = t.sum_all(t.mul(hard, t.constant(c)));
  t.backward(loss);
  for (int i = 0; i < 4; ++i) CHECK(g.grad[static_cast<std::size_t>(i)] == c.data[static_cast<std::size_t>(i)]);
}

TEST_CASE("softmax of an all-equal row is uniform") {
  Tape t;
  Node y = t.softmax_rows(t.constant(Tensor::full(2, 8, 3.25f)));
  for (int j = 0; j < 8; ++j) CHECK(t.val(y).at(0, j) == doctest::Approx(0.125).epsilon(1e-6));
}

TEST_CASE("layer_norm output rows have zero mean and unit variance") {
  Tape t;
  Tensor x = random_tensor(5, 16, 31, 2.f);
  Node y = t.layer_norm(t.constant(x), t.constant(Tensor::full(1, 16, 1.f)),
                        t.constant(Tensor::zeros(1, 16)));
  for (int i = 0; i < 5; ++i) {
    double mean = 0, var = 0;
    for (int j = 0; j < 16; ++j) mean += t.val(y).at(i, j);
    mean /= 16;
    for (int j = 0; j < 16; ++j) {
      const double c = t.val(y).at(i, j) - mean;
      var += c * c;
    }
    var /= 16;
    CHECK(std::fabs(mean) < 1e-5);
    CHECK(std::fabs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("every primitive passes the central-difference check") {
  check_primitive("add", [](Tape& t, Node x) { return t.add(x, t.constant(random_tensor(4, 4, 1))); });
  check_primitive("sub", [](Tape& t, Node x) { return t.sub(t.constant(random_tensor(4, 4, 2)), x); });
  check_primitive("mul", [](Tape& t, Node x) { return t.mul(x, t.constant(random_tensor(4, 4, 3))); });
  check_primitive("matmul_a", [](Tape& t, Node x) { return t.matmul(x, t.constant(random_tensor(4, 4, 4))); });
  check_primitive("matmul_b", [](Tape& t, Node x) { return t.matmul(t.constant(random_tensor(4, 4, 5)), x); });
  check_primitive("matmul_nt_a", [](Tape& t, Node x) { return t.matmul_nt(x, t.constant(random_tensor(6, 4, 6))); });
  check_primitive("matmul_nt_b", [](Tape& t, Node x) { return t.matmul_nt(t.constant(random_tensor(6, 4, 7)), x); });
  check_primitive("add_bias_x", [](Tape& t, Node x) { return t.add_bias(x, t.constant(random_tensor(1, 4, 8))); });
  check_primitive("add_bias_b", [](Tape& t, Node x) { return t.add_bias(t.constant(random_tensor(5, 4, 9)), x); }, 1, 4);
  check_primitive("scale", [](Tape& t, Node x) { return t.scale(x, -1.75f); });
  check_primitive("sigmoid", [](Tape& t, Node x) { return t.sigmoid(x); });
  check_primitive("silu", [](Tape& t, Node x) { return t.silu(x); });
  check_primitive("layer_norm_x", [](Tape& t, Node x) {
    return t.layer_norm(x, t.constant(random_tensor(1, 4, 10)), t.constant(random_tensor(1, 4, 11)));
  });
  check_primitive("layer_norm_gain", [](Tape& t, Node x) {
    return t.layer_norm(t.constant(random_tensor(5, 4, 12)), x, t.constant(random_tensor(1, 4, 13)));
  }, 1, 4);
  check_primitive("layer_norm_bias", [](Tape& t, Node x) {
    return t.layer_norm(t.constant(random_tensor(5, 4, 14)), t.constant(random_tensor(1, 4, 15)), x);
  }, 1, 4);
  check_primitive("softmax_rows", [](Tape& t, Node x) { return t.softmax_rows(x); });
  check_primitive("causal_softmax", [](Tape& t, Node x) { return t.causal_softmax(x); });
  check_primitive("slice_rows", [](Tape& t, Node x) { return t.slice_rows(x, 1, 3); });
  check_primitive("slice_cols", [](Tape& t, Node x) { return t.slice_cols(x, 1, 3); });
  check_primitive("concat_rows", [](Tape& t, Node x) {
    const Node parts[] = {x, t.constant(random_tensor(2, 4, 16))};
    return t.concat_rows(parts);
  });
  check_primitive("concat_cols", [](Tape& t, Node x) {
    const Node parts[] = {x, t.constant(random_tensor(4, 3, 17))};
    return t.concat_cols(parts);
  });
  check_primitive("gather_embedding", [](Tape& t, Node x) {
    const int ids[] = {3, 1, 1, 0};  // repeated id accumulates
    return t.gather_embedding(x, ids);
  });
  check_primitive("gather_rows", [](Tape& t, Node x) {
    const int idx[] = {2, 0, 2};
    return t.gather_rows(x, idx);
  });
  check_primitive("scatter_rows", [](Tape& t, Node x) {
    const int idx[] = {5, 1, 3, 0};
    return t.scatter_rows(x, idx, 7);
  });
  check_primitive("row_update_prev", [](Tape& t, Node x) {
    Rng rng(18);
    Tensor coeff(std::vector<int>{4, 1});
    for (auto& v : coeff.data) v = rng.uniform(0.1f, 0.9f);
    return t.row_update(x, t.constant(random_tensor(4, 4, 19)), t.constant(coeff));
  });
  check_primitive("row_update_cand", [](Tape& t, Node x) {
    Rng rng(20);
    Tensor coeff(std::vector<int>{4, 1});
    for (auto& v : coeff.data) v = rng.uniform(0.1f, 0.9f);
    return t.row_update(t.constant(random_tensor(4, 4, 21)), x, t.constant(coeff));
  });
  check_primitive("row_update_coeff", [](Tape& t, Node x) {
    Node c = t.scale(t.sigmoid(x), 0.8f);  // keep coefficients inside (0,1)
    return t.row_update(t.constant(random_tensor(4, 4, 22)), t.constant(random_tensor(4, 4, 23)), c);
  }, 4, 1);
  check_primitive("dropout", [](Tape& t, Node x) {
    Rng rng(24);  // fixed mask per evaluation
    return t.dropout(x, 0.3f, rng);
  });
  check_primitive("causal_attention_q", [](Tape& t, Node x) {
    return t.causal_attention(x, t.constant(random_tensor(4, 4, 25)), t.constant(random_tensor(4, 4, 26)), 0.5f);
  });
  check_primitive("causal_attention_k", [](Tape& t, Node x) {
    return t.causal_attention(t.constant(random_tensor(4, 4, 27)), x, t.constant(random_tensor(4, 4, 28)), 0.5f);
  });
  check_primitive("causal_attention_v", [](Tape& t, Node x) {
    return t.causal_attention(t.constant(random_tensor(4, 4, 29)), t.constant(random_tensor(4, 4, 30)), x, 0.5f);
  });
  check_primitive("masked_nll", [](Tape& t, Node x) {
    const int ids[] = {1, 3, 0, 2};
    const std::uint8_t flags[] = {0, 1, 1, 1};
    return t.masked_nll(x, ids, flags);
  });
}

TEST_CASE("check_gradients contract and reference cases") {
  SUBCASE("non-scalar f is a contract error") {
    Tensor x = random_tensor(2, 2, 40);
    auto f = [](Tape& t, Node xn) { return t.add(xn, xn); };
    CHECK_THROWS_AS(check_gradients(f, x, 1e-3f, 1e-3f), ContractError);
  }
  SUBCASE("sum of squares: analytic gradient 2x, exact central differences") {
    Rng rng(41);
    Tensor x({4, 4});
    for (auto& v : x.data) v = (rng.uniform() < 0.5f ? -1.f : 1.f) * rng.uniform(0.5f, 1.5f);
    auto f = [](Tape& t, Node xn) { return t.sum_all(t.mul(xn, xn)); };
    // quadratic loss: central differences have zero truncation error
    GradCheckReport rep = check_gradients(f, x, 0.05f, 1e-4f);
    INFO("max_rel_err " << rep.max_rel_err);
    CHECK(rep.pass);
    x.requires_grad = true;
    x.ensure_grad();
    x.zero_grad();
    Tape t;
    Node loss = f(t, t.leaf(&x));
    t.backward(loss);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      CHECK(x.grad[i] == doctest::Approx(2.f * x.data[i]).epsilon(1e-5));
  }
  SUBCASE("constant f: both gradients identically zero") {
    Tensor x = random_tensor(3, 3, 42);
    auto f = [](Tape& t, Node) { return t.constant(Tensor::scalar(4.f)); };
    GradCheckReport rep = check_gradients(f, x, 1e-3f, 1e-3f);
    CHECK(rep.max_rel_err == 0.f);
    CHECK(rep.pass);
  }
}

TEST_CASE("backward replay is deterministic") {
  Tensor a = random_tensor(6, 6, 50);
  Tensor b = random_tensor(6, 6, 51);
  a.requires_grad = b.requires_grad = true;
  a.ensure_grad();
  b.ensure_grad();

  auto run = [&]() {
    a.zero_grad();
    b.zero_grad();
    Tape t;
    Node an = t.leaf(&a);
    Node bn = t.leaf(&b);
    Node h = t.silu(t.matmul(an, bn));
    h = t.layer_norm(h, t.constant(Tensor::full(1, 6, 1.f)), t.constant(Tensor::zeros(1, 6)));
    Node loss = t.sum_all(t.mul(h, h));
    t.backward(loss);
    return std::make_pair(a.grad, b.grad);
  };
  auto [ga1, gb1] = run();
  auto [ga2, gb2] = run();
  CHECK(ga1 == ga2);
  CHECK(gb1 == gb2);
}

TEST_CASE("gradient accumulation is additive across backward passes") {
  Tensor x = random_tensor(3, 3, 60);
  x.requires_grad = true;
  x.ensure_grad();
  x.zero_grad();
  for (int rep = 0; rep < 3; ++rep) {
    Tape t;
    Node loss = t.sum_all(t.leaf(&x));
    t.backward(loss);
  }
  for (float g : x.grad) CHECK(g == 3.f);
}

TEST_CASE("masked_nll contract errors") {
  Tape t;
  Node logits = t.constant(random_tensor(4, 8, 70));
  const int ids[] = {1, 2, 3, 4};
  SUBCASE("empty target") {
    const std::uint8_t flags[] = {0, 0, 0, 0};
    CHECK_THROWS_AS(t.masked_nll(logits, ids, flags), ContractError);
  }
  SUBCASE("target at position zero") {
    const std::uint8_t flags[] = {1, 0, 0, 0};
    CHECK_THROWS_AS(t.masked_nll(logits, ids, flags), ContractError);
  }
}

TEST_CASE("fused causal attention equals the composed route") {
  Rng rng(90);
  const int n = 7, hd = 5;
  Tensor q = Tensor::gaussian(n, hd, 1.f, rng);
  Tensor k = Tensor::gaussian(n, hd, 1.f, rng);
  Tensor v = Tensor::gaussian(n, hd, 1.f, rng);
  const float scale = 1.f / std::sqrt(static_cast<float>(hd));
  Tape t;
  Node fused = t.causal_attention(t.constant(q), t.constant(k), t.constant(v), scale);
  Node composed = t.matmul(t.causal_softmax(t.scale(t.matmul_nt(t.constant(q), t.constant(k)), scale)),
                           t.constant(v));
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < hd; ++c)
      CHECK(t.val(fused).at(i, c) == doctest::Approx(t.val(composed).at(i, c)).epsilon(1e-5));
}

TEST_CASE("documented operations keep finite values on finite inputs") {
  Rng rng(80);
  Tensor x = Tensor::gaussian(6, 6, 50.f, rng);  // large spread
  Tape t;
  Node xn = t.constant(x);
  CHECK(t.val(t.sigmoid(xn)).all_finite());
  CHECK(t.val(t.silu(xn)).all_finite());
  CHECK(t.val(t.softmax_rows(xn)).all_finite());
  CHECK(t.val(t.causal_softmax(xn)).all_finite());
  CHECK(t.val(t.layer_norm(xn, t.constant(Tensor::full(1, 6, 1.f)), t.constant(Tensor::zeros(1, 6)))).all_finite());
  // constant row: zero variance is still finite under the eps guard
  Node flat = t.constant(Tensor::full(2, 6, 3.f));
  CHECK(t.val(t.layer_norm(flat, t.constant(Tensor::full(1, 6, 1.f)), t.constant(Tensor::zeros(1, 6)))).all_finite());
}
