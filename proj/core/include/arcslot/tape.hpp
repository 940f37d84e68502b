#pragma once
#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "arcslot/rng.hpp"
#include "arcslot/tensor.hpp"

namespace arcslot {

struct Node {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Single-use reverse-mode tape. Each op records its forward value and enough
// local context to replay adjoints in reverse topological order. backward()
// accumulates additively into the grad buffers of requires_grad leaves, so the
// caller zeroes grads between steps. Rebuilt each forward pass: the gated
// recursion makes control flow data-dependent, so there is no static graph.
class Tape {
 public:
  // Wraps an externally owned tensor (parameter or input). The tensor must
  // outlive the tape. Gradients flow back iff t->requires_grad.
  Node leaf(Tensor* t);
  // Tape-owned constant; never receives gradient.
  Node constant(Tensor t);

  Node matmul(Node a, Node b);     // [p x q] . [q x s]
  Node matmul_nt(Node a, Node b);  // [p x q] . [s x q]^T
  Node add(Node a, Node b);
  Node sub(Node a, Node b);
  Node mul(Node a, Node b);        // elementwise
  Node add_bias(Node x, Node b);   // x [n x d] + b [1 x d] broadcast over rows
  Node scale(Node x, float c);
  Node sigmoid(Node x);
  Node silu(Node x);
  Node layer_norm(Node x, Node gain, Node bias, float eps = 1e-5f);
  Node softmax_rows(Node x);
  // Row i is a softmax over columns j <= i; columns j > i are exactly zero.
  Node causal_softmax(Node x);
  // Fused causal attention for one head: out_i = sum_{j<=i} p_ij v_j with
  // p_i = softmax(scale * q_i . k_{j<=i}). Equivalent to causal_softmax over
  // scaled scores followed by the value mix, in one entry.
  Node causal_attention(Node q, Node k, Node v, float scale);
  Node slice_rows(Node x, int r0, int r1);
  Node slice_cols(Node x, int c0, int c1);
  Node concat_rows(std::span<const Node> xs);
  Node concat_cols(std::span<const Node> xs);
  Node gather_embedding(Node table, std::span<const int> ids);
  Node gather_rows(Node x, std::span<const int> idx);
  // Inverse of gather_rows: row idx[j] of the [n_rows x k] output is row j of
  // x, all other rows are zero.
  Node scatter_rows(Node x, std::span<const int> idx, int n_rows);
  // Per-row convex update out_i = prev_i + c_i * (cand_i - prev_i) with exact
  // copy semantics at c_i == 0 (row of prev, bitwise) and c_i == 1 (row of
  // cand, bitwise). Gradients are those of the blend evaluated at c.
  Node row_update(Node prev, Node cand, Node coeff);
  // Forward indicator(x >= thr); zero gradient.
  Node hard_threshold(Node x, float thr = 0.5f);
  // Forward identity (bitwise); blocks all gradient flow.
  Node stop_gradient(Node x);
  // Inverted dropout on the low-rank branch input; mask drawn at record time.
  Node dropout(Node x, float rate, Rng& rng);
  Node sum_all(Node x);
  // Mean negative log-likelihood over flagged target positions. Position p
  // must be predicted from logits row p-1; flagged positions at index 0 or
  // an empty flag set are contract errors.
  Node masked_nll(Node logits, std::span<const int> ids, std::span<const std::uint8_t> is_target);

  const Tensor& val(Node n) const;
  bool needs_grad(Node n) const;
  // Unaveraged total and token count of a masked_nll node (for perplexity).
  double nll_total(Node n) const;
  int nll_count(Node n) const;

  // loss must be a scalar node; throws ContractError otherwise.
  void backward(Node loss);

  std::size_t size() const { return entries_.size(); }

 private:
  enum class Op : std::uint8_t {
    leaf, constant, matmul, matmul_nt, add, sub, mul, add_bias, scale,
    sigmoid, silu, layer_norm, softmax_rows, causal_softmax,
    slice_rows, slice_cols, concat_rows, concat_cols, causal_attention,
    gather_embedding, gather_rows, scatter_rows,
    row_update, hard_threshold, stop_gradient, dropout, sum_all, masked_nll,
  };

  struct Entry {
    Op op;
    std::array<std::int32_t, 3> in{-1, -1, -1};
    std::vector<std::int32_t> more_in;  // concat inputs
    Tensor val;
    std::vector<float> bar;
    bool needs = false;
    Tensor* external = nullptr;
    std::vector<int> idx;    // gather ids / scatter positions / slice bounds
    float c0 = 0.f;          // scale factor, eps, threshold, dropout rate
    std::vector<float> aux;  // saved forward intermediates
    double aux_d = 0.0;
    int aux_i = 0;
  };

  Entry& at(Node n);
  const Entry& at(Node n) const;
  Node push(Entry en);
  void add_into_bar(Entry& dst, const std::vector<float>& src);
  void backward_entry(std::int32_t i);

  std::vector<Entry> entries_;
};

}  // namespace arcslot
