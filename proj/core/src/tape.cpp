#include "arcslot/tape.hpp"

#include <cmath>
#include <cstring>

#include "arcslot/error.hpp"

namespace arcslot {

namespace {

void require_matrix(const Tensor& t, const char* who) {
  if (t.ndim() != 2) throw DimError(std::string(who) + ": expected a matrix, got " + t.shape_str());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape != b.shape)
    throw DimError(std::string(who) + ": shapes " + a.shape_str() + " and " + b.shape_str() + " differ");
}

}  // namespace

Tape::Entry& Tape::at(Node n) { return entries_[static_cast<std::size_t>(n.id)]; }
const Tape::Entry& Tape::at(Node n) const { return entries_[static_cast<std::size_t>(n.id)]; }

Node Tape::push(Entry en) {
  entries_.push_back(std::move(en));
  return Node{static_cast<std::int32_t>(entries_.size() - 1)};
}

const Tensor& Tape::val(Node n) const { return at(n).val; }
bool Tape::needs_grad(Node n) const { return at(n).needs; }

double Tape::nll_total(Node n) const {
  const Entry& e = at(n);
  if (e.op != Op::masked_nll) throw ContractError("nll_total: node is not a masked_nll node");
  return e.aux_d;
}

int Tape::nll_count(Node n) const {
  const Entry& e = at(n);
  if (e.op != Op::masked_nll) throw ContractError("nll_count: node is not a masked_nll node");
  return e.aux_i;
}

Node Tape::leaf(Tensor* t) {
  Entry e;
  e.op = Op::leaf;
  e.external = t;
  e.val = *t;  // snapshot; backward targets the external buffer
  e.needs = t->requires_grad;
  return push(std::move(e));
}

Node Tape::constant(Tensor t) {
  Entry e;
  e.op = Op::constant;
  e.val = std::move(t);
  e.needs = false;
  return push(std::move(e));
}

Node Tape::matmul(Node a, Node b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  if (A.cols() != B.rows())
    throw DimError("matmul: inner dimensions of " + A.shape_str() + " and " + B.shape_str() + " disagree");
  const int p = A.rows(), q = A.cols(), s = B.cols();
  Entry e;
  e.op = Op::matmul;
  e.in = {a.id, b.id, -1};
  e.needs = at(a).needs || at(b).needs;
  e.val = Tensor::zeros(p, s);
  for (int i = 0; i < p; ++i) {
    float* out = e.val.row_ptr(i);
    const float* ar = A.row_ptr(i);
    for (int k = 0; k < q; ++k) {
      const float av = ar[k];
      const float* br = B.row_ptr(k);
      for (int j = 0; j < s; ++j) out[j] += av * br[j];
    }
  }
  return push(std::move(e));
}

Node Tape::matmul_nt(Node a, Node b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  require_matrix(A, "matmul_nt");
  require_matrix(B, "matmul_nt");
  if (A.cols() != B.cols())
    throw DimError("matmul_nt: inner dimensions of " + A.shape_str() + " and " + B.shape_str() + "^T disagree");
  const int p = A.rows(), q = A.cols(), s = B.rows();
  Entry e;
  e.op = Op::matmul_nt;
  e.in = {a.id, b.id, -1};
  e.needs = at(a).needs || at(b).needs;
  e.val = Tensor::zeros(p, s);
  // 4-wide register blocking over output columns
  for (int i = 0; i < p; ++i) {
    const float* ar = A.row_ptr(i);
    float* out = e.val.row_ptr(i);
    int j = 0;
    for (; j + 4 <= s; j += 4) {
      const float* b0 = B.row_ptr(j);
      const float* b1 = B.row_ptr(j + 1);
      const float* b2 = B.row_ptr(j + 2);
      const float* b3 = B.row_ptr(j + 3);
      float a0 = 0.f, a1 = 0.f, a2 = 0.f, a3 = 0.f;
#pragma omp simd reduction(+ : a0, a1, a2, a3)
      for (int k = 0; k < q; ++k) {
        const float av = ar[k];
        a0 += av * b0[k];
        a1 += av * b1[k];
        a2 += av * b2[k];
        a3 += av * b3[k];
      }
      out[j] = a0;
      out[j + 1] = a1;
      out[j + 2] = a2;
      out[j + 3] = a3;
    }
    for (; j < s; ++j) {
      const float* br = B.row_ptr(j);
      float acc = 0.f;
#pragma omp simd reduction(+ : acc)
      for (int k = 0; k < q; ++k) acc += ar[k] * br[k];
      out[j] = acc;
    }
  }
  return push(std::move(e));
}

Node Tape::add(Node a, Node b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  require_same_shape(A, B, "add");
  Entry e;
  e.op = Op::add;
  e.in = {a.id, b.id, -1};
  e.needs = at(a).needs || at(b).needs;
  e.val = A;
  for (std::size_t i = 0; i < e.val.data.size(); ++i) e.val.data[i] += B.data[i];
  return push(std::move(e));
}

Node Tape::sub(Node a, Node b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  require_same_shape(A, B, "sub");
  Entry e;
  e.op = Op::sub;
  e.in = {a.id, b.id, -1};
  e.needs = at(a).needs || at(b).needs;
  e.val = A;
  for (std::size_t i = 0; i < e.val.data.size(); ++i) e.val.data[i] -= B.data[i];
  return push(std::move(e));
}

Node Tape::mul(Node a, Node b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  require_same_shape(A, B, "mul");
  Entry e;
  e.op = Op::mul;
  e.in = {a.id, b.id, -1};
  e.needs = at(a).needs || at(b).needs;
  e.val = A;
  for (std::size_t i = 0; i < e.val.data.size(); ++i) e.val.data[i] *= B.data[i];
  return push(std::move(e));
}

Node Tape::add_bias(Node x, Node b) {
  const Tensor& X = val(x);
  const Tensor& B = val(b);
  require_matrix(X, "add_bias");
  if (B.ndim() != 2 || B.rows() != 1 || B.cols() != X.cols())
    throw DimError("add_bias: bias " + B.shape_str() + " does not broadcast over " + X.shape_str());
  Entry e;
  e.op = Op::add_bias;
  e.in = {x.id, b.id, -1};
  e.needs = at(x).needs || at(b).needs;
  e.val = X;
  const float* bias = B.row_ptr(0);
  for (int i = 0; i < X.rows(); ++i) {
    float* out = e.val.row_ptr(i);
    for (int j = 0; j < X.cols(); ++j) out[j] += bias[j];
  }
  return push(std::move(e));
}

Node Tape::scale(Node x, float c) {
  Entry e;
  e.op = Op::scale;
  e.in = {x.id, -1, -1};
  e.needs = at(x).needs;
  e.c0 = c;
  e.val = val(x);
  for (auto& v : e.val.data) v *= c;
  return push(std::move(e));
}

Node Tape::sigmoid(Node x) {
  Entry e;
  e.op = Op::sigmoid;
  e.in = {x.id, -1, -1};
  e.needs = at(x).needs;
  e.val = val(x);
  for (auto& v : e.val.data) v = 1.f / (1.f + std::exp(-v));
  return push(std::move(e));
}

Node Tape::silu(Node x) {
  const Tensor& X = val(x);
  Entry e;
  e.op = Op::silu;
  e.in = {x.id, -1, -1};
  e.needs = at(x).needs;
  e.val = X;
  e.aux.resize(X.data.size());
  for (std::size_t i = 0; i < X.data.size(); ++i) {
    const float s = 1.f / (1.f + std::exp(-X.data[i]));
    e.aux[i] = s;
    e.val.data[i] = X.data[i] * s;
  }
  return push(std::move(e));
}

Node Tape::layer_norm(Node x, Node gain, Node bias, float eps) {
  const Tensor& X = val(x);
  const Tensor& G = val(gain);
  const Tensor& B = val(bias);
  require_matrix(X, "layer_norm");
  const int n = X.rows(), d = X.cols();
  if (G.ndim() != 2 || G.rows() != 1 || G.cols() != d || B.rows() != 1 || B.cols() != d)
    throw DimError("layer_norm: scale/shift " + G.shape_str() + "/" + B.shape_str() + " do not match " + X.shape_str());
  Entry e;
  e.op = Op::layer_norm;
  e.in = {x.id, gain.id, bias.id};
  e.needs = at(x).needs || at(gain).needs || at(bias).needs;
  e.c0 = eps;
  e.val = Tensor::zeros(n, d);
  e.aux.resize(static_cast<std::size_t>(n) * d + n);  // xhat rows, then rstd per row
  const float* g = G.row_ptr(0);
  const float* b = B.row_ptr(0);
  for (int i = 0; i < n; ++i) {
    const float* xr = X.row_ptr(i);
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= d;
    const float rstd = static_cast<float>(1.0 / std::sqrt(var + eps));
    float* xhat = e.aux.data() + static_cast<std::size_t>(i) * d;
    float* out = e.val.row_ptr(i);
    for (int j = 0; j < d; ++j) {
      xhat[j] = (xr[j] - static_cast<float>(mean)) * rstd;
      out[j] = xhat[j] * g[j] + b[j];
    }
    e.aux[static_cast<std::size_t>(n) * d + i] = rstd;
  }
  return push(std::move(e));
}

Node Tape::softmax_rows(Node x) {
  const Tensor& X = val(x);
  require_matrix(X, "softmax_rows");
  Entry e;
  e.op = Op::softmax_rows;
  e.in = {x.id, -1, -1};
  e.needs = at(x).needs;
  e.val = Tensor::zeros(X.rows(), X.cols());
  for (int i = 0; i < X.rows(); ++i) {
    const float* xr = X.row_ptr(i);
    float* out = e.val.row_ptr(i);
    float mx = xr[0];
    for (int j = 1; j < X.cols(); ++j) mx = std::max(mx, xr[j]);
    double denom = 0.0;
    for (int j = 0; j < X.cols(); ++j) {
      out[j] = std::exp(xr[j] - mx);
      denom += out[j];
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int j = 0; j < X.cols(); ++j) out[j] *= inv;
  }
  return push(std::move(e));
}

Node Tape::causal_softmax(Node x) {
  const Tensor& X = val(x);
  require_matrix(X, "causal_softmax");
  if (X.rows() != X.cols())
    throw DimError("causal_softmax: expected square scores, got " + X.shape_str());
  Entry e;
  e.op = Op::causal_softmax;
  e.in = {x.id, -1, -1};
  e.needs = at(x).needs;
  e.val = Tensor::zeros(X.rows(), X.cols());
  for (int i = 0; i < X.rows(); ++i) {
    const float* xr = X.row_ptr(i);
    float* out = e.val.row_ptr(i);
    float mx = xr[0];
    for (int j = 1; j <= i; ++j) mx = std::max(mx, xr[j]);
    double denom = 0.0;
    for (int j = 0; j <= i; ++j) {
      out[j] = std::exp(xr[j] - mx);
      denom += out[j];
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int j = 0; j <= i; ++j) out[j] *= inv;
  }
  return push(std::move(e));
}

Node Tape::causal_attention(Node q, Node k, Node v, float scale) {
  const Tensor& Q = val(q);
  const Tensor& K = val(k);
  const Tensor& V = val(v);
  require_matrix(Q, "causal_attention");
  if (K.shape != Q.shape || V.shape != Q.shape)
    throw DimError("causal_attention: shapes " + Q.shape_str() + "/" + K.shape_str() + "/" +
                   V.shape_str() + " disagree");
  const int n = Q.rows(), hd = Q.cols();
  Entry e;
  e.op = Op::causal_attention;
  e.in = {q.id, k.id, v.id};
  e.needs = at(q).needs || at(k).needs || at(v).needs;
  e.c0 = scale;
  e.val = Tensor::zeros(n, hd);
  e.aux.resize(static_cast<std::size_t>(n) * (n + 1) / 2);  // packed attention rows
  std::size_t row_off = 0;
  for (int i = 0; i < n; ++i) {
    float* p = e.aux.data() + row_off;
    const float* qi = Q.row_ptr(i);
    float mx = -3.4e38f;
    for (int j = 0; j <= i; ++j) {
      const float* kj = K.row_ptr(j);
      float acc = 0.f;
#pragma omp simd reduction(+ : acc)
      for (int c = 0; c < hd; ++c) acc += qi[c] * kj[c];
      p[j] = acc * scale;
      mx = std::max(mx, p[j]);
    }
    double denom = 0.0;
    for (int j = 0; j <= i; ++j) {
      p[j] = std::exp(p[j] - mx);
      denom += p[j];
    }
    const float inv = static_cast<float>(1.0 / denom);
    float* out = e.val.row_ptr(i);
    for (int j = 0; j <= i; ++j) {
      p[j] *= inv;
      const float* vj = V.row_ptr(j);
      const float w = p[j];
#pragma omp simd
      for (int c = 0; c < hd; ++c) out[c] += w * vj[c];
    }
    row_off += static_cast<std::size_t>(i) + 1;
  }
  return push(std::move(e));
}

Node Tape::slice_rows(Node x, int r0, int r1) {
  const Tensor& X = val(x);
  require_matrix(X, "slice_rows");
  if (r0 < 0 || r1 < r0 || r1 > X.rows())
    throw DimError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) + ") out of " + X.shape_str());
  Entry e;
  e.op = Op::slice_rows;
  e.in = {x.id, -1, -1};
  e.needs = at(x).needs;
  e.idx = {r0, r1};
  e.val = Tensor::zeros(r1 - r0, X.cols());
  std::memcpy(e.val.data.data(), X.row_ptr(r0), e.val.data.size() * sizeof(float));
  return push(std::move(e));
}

Node Tape::slice_cols(Node x, int c0, int c1) {
  const Tensor& X = val(x);
  require_matrix(X, "slice_cols");
  if (c0 < 0 || c1 < c0 || c1 > X.cols())
    throw DimError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) + ") out of " + X.shape_str());
  Entry e;
  e.op = Op::slice_cols;
  e.in = {x.id, -1, -1};
  e.needs = at(x).needs;
  e.idx = {c0, c1};
  e.val = Tensor::zeros(X.rows(), c1 - c0);
  for (int i = 0; i < X.rows(); ++i)
    std::memcpy(e.val.row_ptr(i), X.row_ptr(i) + c0, static_cast<std::size_t>(c1 - c0) * sizeof(float));
  return push(std::move(e));
}

Node Tape::concat_rows(std::span<const Node> xs) {
  if (xs.empty()) throw DimError("concat_rows: no inputs");
  const int cols = val(xs[0]).cols();
  int rows = 0;
  Entry e;
  e.op = Op::concat_rows;
  for (Node n : xs) {
    const Tensor& T = val(n);
    require_matrix(T, "concat_rows");
    if (T.cols() != cols)
      throw DimError("concat_rows: column mismatch " + T.shape_str() + " vs " + val(xs[0]).shape_str());
    rows += T.rows();
    e.more_in.push_back(n.id);
    e.needs = e.needs || at(n).needs;
  }
  e.val = Tensor::zeros(rows, cols);
  int r = 0;
  for (Node n : xs) {
    const Tensor& T = val(n);
    if (T.numel() > 0)
      std::memcpy(e.val.row_ptr(r), T.data.data(), T.data.size() * sizeof(float));
    r += T.rows();
  }
  return push(std::move(e));
}

Node Tape::concat_cols(std::span<const Node> xs) {
  if (xs.empty()) throw DimError("concat_cols: no inputs");
  const int rows = val(xs[0]).rows();
  int cols = 0;
  Entry e;
  e.op = Op::concat_cols;
  for (Node n : xs) {
    const Tensor& T = val(n);
    require_matrix(T, "concat_cols");
    if (T.rows() != rows)
      throw DimError("concat_cols: row mismatch " + T.shape_str() + " vs " + val(xs[0]).shape_str());
    cols += T.cols();
    e.more_in.push_back(n.id);
    e.needs = e.needs || at(n).needs;
  }
  e.val = Tensor::zeros(rows, cols);
  int c = 0;
  for (Node n : xs) {
    const Tensor& T = val(n);
    for (int i = 0; i < rows; ++i)
      std::memcpy(e.val.row_ptr(i) + c, T.row_ptr(i), static_cast<std::size_t>(T.cols()) * sizeof(float));
    c += T.cols();
  }
  return push(std::move(e));
}

Node Tape::gather_embedding(Node table, std::span<const int> ids) {
  const Tensor& T = val(table);
  require_matrix(T, "gather_embedding");
  Entry e;
  e.op = Op::gather_embedding;
  e.in = {table.id, -1, -1};
  e.needs = at(table).needs;
  e.idx.assign(ids.begin(), ids.end());
  for (int id : ids)
    if (id < 0 || id >= T.rows())
      throw DimError("gather_embedding: id " + std::to_string(id) + " out of table " + T.shape_str());
  e.val = Tensor::zeros(static_cast<int>(ids.size()), T.cols());
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::memcpy(e.val.row_ptr(static_cast<int>(i)), T.row_ptr(ids[i]), static_cast<std::size_t>(T.cols()) * sizeof(float));
  return push(std::move(e));
}

Node Tape::gather_rows(Node x, std::span<const int> idx) {
  const Tensor& X = val(x);
  require_matrix(X, "gather_rows");
  Entry e;
  e.op = Op::gather_rows;
  e.in = {x.id, -1, -1};
  e.needs = at(x).needs;
  e.idx.assign(idx.begin(), idx.end());
  for (int i : idx)
    if (i < 0 || i >= X.rows())
      throw DimError("gather_rows: row " + std::to_string(i) + " out of " + X.shape_str());
  e.val = Tensor::zeros(static_cast<int>(idx.size()), X.cols());
  for (std::size_t j = 0; j < idx.size(); ++j)
    std::memcpy(e.val.row_ptr(static_cast<int>(j)), X.row_ptr(idx[j]), static_cast<std::size_t>(X.cols()) * sizeof(float));
  return push(std::move(e));
}

Node Tape::scatter_rows(Node x, std::span<const int> idx, int n_rows) {
  const Tensor& X = val(x);
  require_matrix(X, "scatter_rows");
  if (static_cast<int>(idx.size()) != X.rows())
    throw DimError("scatter_rows: " + std::to_string(idx.size()) + " positions for " + X.shape_str());
  Entry e;
  e.op = Op::scatter_rows;
  e.in = {x.id, -1, -1};
  e.needs = at(x).needs;
  e.idx.assign(idx.begin(), idx.end());
  for (int i : idx)
    if (i < 0 || i >= n_rows)
      throw DimError("scatter_rows: position " + std::to_string(i) + " out of " + std::to_string(n_rows) + " rows");
  e.val = Tensor::zeros(n_rows, X.cols());
  for (std::size_t j = 0; j < idx.size(); ++j)
    std::memcpy(e.val.row_ptr(idx[j]), X.row_ptr(static_cast<int>(j)), static_cast<std::size_t>(X.cols()) * sizeof(float));
  return push(std::move(e));
}

Node Tape::row_update(Node prev, Node cand, Node coeff) {
  const Tensor& P = val(prev);
  const Tensor& C = val(cand);
  const Tensor& G = val(coeff);
  require_same_shape(P, C, "row_update");
  require_matrix(P, "row_update");
  if (G.ndim() != 2 || G.cols() != 1 || G.rows() != P.rows())
    throw DimError("row_update: coefficients " + G.shape_str() + " do not match " + P.shape_str());
  Entry e;
  e.op = Op::row_update;
  e.in = {prev.id, cand.id, coeff.id};
  e.needs = at(prev).needs || at(cand).needs || at(coeff).needs;
  e.val = Tensor::zeros(P.rows(), P.cols());
  const int d = P.cols();
  for (int i = 0; i < P.rows(); ++i) {
    const float c = G.data[static_cast<std::size_t>(i)];
    float* out = e.val.row_ptr(i);
    const float* pr = P.row_ptr(i);
    const float* cr = C.row_ptr(i);
    if (c == 0.f) {
      std::memcpy(out, pr, static_cast<std::size_t>(d) * sizeof(float));
    } else if (c == 1.f) {
      std::memcpy(out, cr, static_cast<std::size_t>(d) * sizeof(float));
    } else {
      for (int j = 0; j < d; ++j) out[j] = pr[j] + c * (cr[j] - pr[j]);
    }
  }
  return push(std::move(e));
}

Node Tape::hard_threshold(Node x, float thr) {
  Entry e;
  e.op = Op::hard_threshold;
  e.in = {x.id, -1, -1};
  e.needs = false;  // piecewise constant, no gradient
  e.c0 = thr;
  e.val = val(x);
  for (auto& v : e.val.data) v = (v >= thr) ? 1.f : 0.f;
  return push(std::move(e));
}

Node Tape::stop_gradient(Node x) {
  Entry e;
  e.op = Op::stop_gradient;
  e.in = {x.id, -1, -1};
  e.needs = false;
  e.val = val(x);
  return push(std::move(e));
}

Node Tape::dropout(Node x, float rate, Rng& rng) {
  if (rate < 0.f || rate >= 1.f)
    throw ContractError("dropout: rate " + std::to_string(rate) + " outside [0,1)");
  const Tensor& X = val(x);
  Entry e;
  e.op = Op::dropout;
  e.in = {x.id, -1, -1};
  e.needs = at(x).needs;
  e.c0 = rate;
  e.val = X;
  e.aux.resize(X.data.size());
  const float keep = 1.f - rate;
  const float inv_keep = 1.f / keep;
  for (std::size_t i = 0; i < X.data.size(); ++i) {
    e.aux[i] = (rng.uniform() < keep) ? inv_keep : 0.f;
    e.val.data[i] = X.data[i] * e.aux[i];
  }
  return push(std::move(e));
}

Node Tape::sum_all(Node x) {
  const Tensor& X = val(x);
  Entry e;
  e.op = Op::sum_all;
  e.in = {x.id, -1, -1};
  e.needs = at(x).needs;
  double acc = 0.0;
  for (float v : X.data) acc += v;
  e.val = Tensor::scalar(static_cast<float>(acc));
  return push(std::move(e));
}

Node Tape::masked_nll(Node logits, std::span<const int> ids, std::span<const std::uint8_t> is_target) {
  const Tensor& L = val(logits);
  require_matrix(L, "masked_nll");
  if (ids.size() != is_target.size())
    throw ContractError("masked_nll: ids and target flags differ in length");
  const int n = static_cast<int>(ids.size());
  const int vocab = L.cols();
  Entry e;
  e.op = Op::masked_nll;
  e.in = {logits.id, -1, -1};
  e.needs = at(logits).needs;
  int count = 0;
  for (int p = 0; p < n; ++p) {
    if (!is_target[static_cast<std::size_t>(p)]) continue;
    if (p == 0) throw ContractError("masked_nll: target at position 0 has no predecessor");
    if (p - 1 >= L.rows())
      throw ContractError("masked_nll: logits " + L.shape_str() + " do not cover position " + std::to_string(p));
    if (ids[static_cast<std::size_t>(p)] < 0 || ids[static_cast<std::size_t>(p)] >= vocab)
      throw ContractError("masked_nll: gold id out of vocabulary");
    e.idx.push_back(p);
    ++count;
  }
  if (count == 0) throw ContractError("masked_nll: empty target");
  e.aux_i = count;
  e.aux.resize(static_cast<std::size_t>(count) * vocab);  // softmax rows for backward
  double total = 0.0;
  for (int t = 0; t < count; ++t) {
    const int p = e.idx[static_cast<std::size_t>(t)];
    const float* row = L.row_ptr(p - 1);
    float mx = row[0];
    for (int j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    float* sm = e.aux.data() + static_cast<std::size_t>(t) * vocab;
    for (int j = 0; j < vocab; ++j) {
      sm[j] = std::exp(row[j] - mx);
      denom += sm[j];
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int j = 0; j < vocab; ++j) sm[j] *= inv;
    const double lse = mx + std::log(denom);
    total += lse - row[ids[static_cast<std::size_t>(p)]];
  }
  e.aux_d = total;
  e.val = Tensor::scalar(static_cast<float>(total / count));
  // keep gold ids next to positions for backward
  for (int t = 0; t < count; ++t) e.idx.push_back(ids[static_cast<std::size_t>(e.idx[static_cast<std::size_t>(t)])]);
  return push(std::move(e));
}

void Tape::add_into_bar(Entry& dst, const std::vector<float>& src) {
  if (dst.bar.empty()) dst.bar.assign(dst.val.data.size(), 0.f);
  for (std::size_t i = 0; i < src.size(); ++i) dst.bar[i] += src[i];
}

void Tape::backward(Node loss) {
  Entry& le = at(loss);
  if (le.val.numel() != 1)
    throw ContractError("backward: loss must be scalar, got " + le.val.shape_str());
  for (auto& e : entries_) e.bar.clear();
  if (!le.needs) return;
  le.bar.assign(1, 1.f);
  for (std::int32_t i = loss.id; i >= 0; --i) {
    Entry& e = entries_[static_cast<std::size_t>(i)];
    if (!e.needs || e.bar.empty()) continue;
    backward_entry(i);
  }
}

void Tape::backward_entry(std::int32_t i) {
  Entry& e = entries_[static_cast<std::size_t>(i)];
  const std::vector<float>& bar = e.bar;
  auto input = [&](int k) -> Entry& { return entries_[static_cast<std::size_t>(e.in[static_cast<std::size_t>(k)])]; };
  auto want = [&](int k) { return input(k).needs; };
  auto bar_of = [&](Entry& in) -> std::vector<float>& {
    if (in.bar.empty()) in.bar.assign(in.val.data.size(), 0.f);
    return in.bar;
  };

  switch (e.op) {
    case Op::leaf: {
      if (e.external && e.external->requires_grad) {
        e.external->ensure_grad();
        for (std::size_t k = 0; k < bar.size(); ++k) e.external->grad[k] += bar[k];
      }
      break;
    }
    case Op::constant:
      break;
    case Op::matmul: {
      Entry& A = input(0);
      Entry& B = input(1);
      const int p = A.val.rows(), q = A.val.cols(), s = B.val.cols();
      if (want(0)) {
        auto& ab = bar_of(A);
        for (int r = 0; r < p; ++r) {
          const float* br = bar.data() + static_cast<std::size_t>(r) * s;
          float* ar = ab.data() + static_cast<std::size_t>(r) * q;
          int k = 0;
          for (; k + 4 <= q; k += 4) {
            const float* b0 = B.val.row_ptr(k);
            const float* b1 = B.val.row_ptr(k + 1);
            const float* b2 = B.val.row_ptr(k + 2);
            const float* b3 = B.val.row_ptr(k + 3);
            float a0 = 0.f, a1 = 0.f, a2 = 0.f, a3 = 0.f;
#pragma omp simd reduction(+ : a0, a1, a2, a3)
            for (int j = 0; j < s; ++j) {
              const float bv = br[j];
              a0 += bv * b0[j];
              a1 += bv * b1[j];
              a2 += bv * b2[j];
              a3 += bv * b3[j];
            }
            ar[k] += a0;
            ar[k + 1] += a1;
            ar[k + 2] += a2;
            ar[k + 3] += a3;
          }
          for (; k < q; ++k) {
            const float* bk = B.val.row_ptr(k);
            float acc = 0.f;
#pragma omp simd reduction(+ : acc)
            for (int j = 0; j < s; ++j) acc += br[j] * bk[j];
            ar[k] += acc;
          }
        }
      }
      if (want(1)) {
        auto& bb = bar_of(B);
        for (int r = 0; r < p; ++r) {
          const float* ar = A.val.row_ptr(r);
          const float* br = bar.data() + static_cast<std::size_t>(r) * s;
          for (int k = 0; k < q; ++k) {
            const float av = ar[k];
            float* bk = bb.data() + static_cast<std::size_t>(k) * s;
            for (int j = 0; j < s; ++j) bk[j] += av * br[j];
          }
        }
      }
      break;
    }
    case Op::matmul_nt: {
      Entry& A = input(0);
      Entry& B = input(1);
      const int p = A.val.rows(), q = A.val.cols(), s = B.val.rows();
      if (want(0)) {
        auto& ab = bar_of(A);
        for (int r = 0; r < p; ++r) {
          const float* br = bar.data() + static_cast<std::size_t>(r) * s;
          float* ar = ab.data() + static_cast<std::size_t>(r) * q;
          for (int j = 0; j < s; ++j) {
            const float bv = br[j];
            if (bv == 0.f) continue;
            const float* bj = B.val.row_ptr(j);
            for (int k = 0; k < q; ++k) ar[k] += bv * bj[k];
          }
        }
      }
      if (want(1)) {
        auto& bb = bar_of(B);
        for (int r = 0; r < p; ++r) {
          const float* ar = A.val.row_ptr(r);
          const float* br = bar.data() + static_cast<std::size_t>(r) * s;
          for (int j = 0; j < s; ++j) {
            const float bv = br[j];
            if (bv == 0.f) continue;
            float* bj = bb.data() + static_cast<std::size_t>(j) * q;
            for (int k = 0; k < q; ++k) bj[k] += bv * ar[k];
          }
        }
      }
      break;
    }
    case Op::add: {
      if (want(0)) add_into_bar(input(0), bar);
      if (want(1)) add_into_bar(input(1), bar);
      break;
    }
    case Op::sub: {
      if (want(0)) add_into_bar(input(0), bar);
      if (want(1)) {
        auto& bb = bar_of(input(1));
        for (std::size_t k = 0; k < bar.size(); ++k) bb[k] -= bar[k];
      }
      break;
    }
    case Op::mul: {
      Entry& A = input(0);
      Entry& B = input(1);
      if (want(0)) {
        auto& ab = bar_of(A);
        for (std::size_t k = 0; k < bar.size(); ++k) ab[k] += bar[k] * B.val.data[k];
      }
      if (want(1)) {
        auto& bb = bar_of(B);
        for (std::size_t k = 0; k < bar.size(); ++k) bb[k] += bar[k] * A.val.data[k];
      }
      break;
    }
    case Op::add_bias: {
      Entry& X = input(0);
      Entry& B = input(1);
      if (want(0)) add_into_bar(X, bar);
      if (want(1)) {
        auto& bb = bar_of(B);
        const int n = X.val.rows(), d = X.val.cols();
        for (int r = 0; r < n; ++r) {
          const float* br = bar.data() + static_cast<std::size_t>(r) * d;
          for (int j = 0; j < d; ++j) bb[static_cast<std::size_t>(j)] += br[j];
        }
      }
      break;
    }
    case Op::scale: {
      if (want(0)) {
        auto& xb = bar_of(input(0));
        for (std::size_t k = 0; k < bar.size(); ++k) xb[k] += bar[k] * e.c0;
      }
      break;
    }
    case Op::sigmoid: {
      if (want(0)) {
        auto& xb = bar_of(input(0));
        for (std::size_t k = 0; k < bar.size(); ++k) {
          const float y = e.val.data[k];
          xb[k] += bar[k] * y * (1.f - y);
        }
      }
      break;
    }
    case Op::silu: {
      if (want(0)) {
        Entry& X = input(0);
        auto& xb = bar_of(X);
        for (std::size_t k = 0; k < bar.size(); ++k) {
          const float s = e.aux[k];
          const float x = X.val.data[k];
          xb[k] += bar[k] * s * (1.f + x * (1.f - s));
        }
      }
      break;
    }
    case Op::layer_norm: {
      Entry& X = input(0);
      Entry& G = input(1);
      Entry& B = input(2);
      const int n = X.val.rows(), d = X.val.cols();
      const float* gain = G.val.row_ptr(0);
      const float* xhat_all = e.aux.data();
      const float* rstd_all = e.aux.data() + static_cast<std::size_t>(n) * d;
      if (want(0)) {
        auto& xb = bar_of(X);
        for (int r = 0; r < n; ++r) {
          const float* br = bar.data() + static_cast<std::size_t>(r) * d;
          const float* xhat = xhat_all + static_cast<std::size_t>(r) * d;
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < d; ++j) {
            const double dxh = static_cast<double>(br[j]) * gain[j];
            m1 += dxh;
            m2 += dxh * xhat[j];
          }
          m1 /= d;
          m2 /= d;
          const float rstd = rstd_all[r];
          float* xbr = xb.data() + static_cast<std::size_t>(r) * d;
          for (int j = 0; j < d; ++j) {
            const double dxh = static_cast<double>(br[j]) * gain[j];
            xbr[j] += static_cast<float>(rstd * (dxh - m1 - xhat[j] * m2));
          }
        }
      }
      if (want(1)) {
        auto& gb = bar_of(G);
        for (int r = 0; r < n; ++r) {
          const float* br = bar.data() + static_cast<std::size_t>(r) * d;
          const float* xhat = xhat_all + static_cast<std::size_t>(r) * d;
          for (int j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += br[j] * xhat[j];
        }
      }
      if (want(2)) {
        auto& bb = bar_of(B);
        for (int r = 0; r < n; ++r) {
          const float* br = bar.data() + static_cast<std::size_t>(r) * d;
          for (int j = 0; j < d; ++j) bb[static_cast<std::size_t>(j)] += br[j];
        }
      }
      break;
    }
    case Op::softmax_rows:
    case Op::causal_softmax: {
      if (want(0)) {
        auto& xb = bar_of(input(0));
        const int n = e.val.rows(), d = e.val.cols();
        for (int r = 0; r < n; ++r) {
          const float* y = e.val.row_ptr(r);
          const float* br = bar.data() + static_cast<std::size_t>(r) * d;
          double dot = 0.0;
          for (int j = 0; j < d; ++j) dot += static_cast<double>(br[j]) * y[j];
          float* xbr = xb.data() + static_cast<std::size_t>(r) * d;
          for (int j = 0; j < d; ++j) xbr[j] += y[j] * (br[j] - static_cast<float>(dot));
        }
      }
      break;
    }
    case Op::causal_attention: {
      Entry& Q = input(0);
      Entry& K = input(1);
      Entry& V = input(2);
      const int n = e.val.rows(), hd = e.val.cols();
      const float scale = e.c0;
      const bool wq = want(0), wk = want(1), wv = want(2);
      std::vector<float>* qb = wq ? &bar_of(Q) : nullptr;
      std::vector<float>* kb = wk ? &bar_of(K) : nullptr;
      std::vector<float>* vb = wv ? &bar_of(V) : nullptr;
      std::vector<float> dp;  // per-row attention adjoints
      std::size_t row_off = 0;
      for (int i = 0; i < n; ++i) {
        const float* p = e.aux.data() + row_off;
        const float* bi = bar.data() + static_cast<std::size_t>(i) * hd;
        dp.assign(static_cast<std::size_t>(i) + 1, 0.f);
        double dot = 0.0;
        for (int j = 0; j <= i; ++j) {
          const float* vj = V.val.row_ptr(j);
          float acc = 0.f;
#pragma omp simd reduction(+ : acc)
          for (int c = 0; c < hd; ++c) acc += bi[c] * vj[c];
          dp[static_cast<std::size_t>(j)] = acc;
          dot += static_cast<double>(p[j]) * acc;
        }
        for (int j = 0; j <= i; ++j) {
          const float w = p[j];
          if (wv && w != 0.f) {
            float* dst = vb->data() + static_cast<std::size_t>(j) * hd;
#pragma omp simd
            for (int c = 0; c < hd; ++c) dst[c] += w * bi[c];
          }
          const float ds = scale * w * (dp[static_cast<std::size_t>(j)] - static_cast<float>(dot));
          if (ds == 0.f) continue;
          if (wq) {
            float* dst = qb->data() + static_cast<std::size_t>(i) * hd;
            const float* kj = K.val.row_ptr(j);
#pragma omp simd
            for (int c = 0; c < hd; ++c) dst[c] += ds * kj[c];
          }
          if (wk) {
            float* dst = kb->data() + static_cast<std::size_t>(j) * hd;
            const float* qi = Q.val.row_ptr(i);
#pragma omp simd
            for (int c = 0; c < hd; ++c) dst[c] += ds * qi[c];
          }
        }
        row_off += static_cast<std::size_t>(i) + 1;
      }
      break;
    }
    case Op::slice_rows: {
      if (want(0)) {
        Entry& X = input(0);
        auto& xb = bar_of(X);
        const int d = X.val.cols();
        const int r0 = e.idx[0];
        for (int r = 0; r < e.val.rows(); ++r) {
          float* dst = xb.data() + static_cast<std::size_t>(r0 + r) * d;
          const float* src = bar.data() + static_cast<std::size_t>(r) * d;
          for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
      }
      break;
    }
    case Op::slice_cols: {
      if (want(0)) {
        Entry& X = input(0);
        auto& xb = bar_of(X);
        const int dx = X.val.cols();
        const int c0 = e.idx[0];
        const int w = e.val.cols();
        for (int r = 0; r < e.val.rows(); ++r) {
          float* dst = xb.data() + static_cast<std::size_t>(r) * dx + c0;
          const float* src = bar.data() + static_cast<std::size_t>(r) * w;
          for (int j = 0; j < w; ++j) dst[j] += src[j];
        }
      }
      break;
    }
    case Op::concat_rows: {
      int r = 0;
      const int d = e.val.cols();
      for (std::int32_t nid : e.more_in) {
        Entry& X = entries_[static_cast<std::size_t>(nid)];
        if (X.needs) {
          auto& xb = bar_of(X);
          for (int rr = 0; rr < X.val.rows(); ++rr) {
            const float* src = bar.data() + static_cast<std::size_t>(r + rr) * d;
            float* dst = xb.data() + static_cast<std::size_t>(rr) * d;
            for (int j = 0; j < d; ++j) dst[j] += src[j];
          }
        }
        r += X.val.rows();
      }
      break;
    }
    case Op::concat_cols: {
      int c = 0;
      const int d = e.val.cols();
      for (std::int32_t nid : e.more_in) {
        Entry& X = entries_[static_cast<std::size_t>(nid)];
        if (X.needs) {
          auto& xb = bar_of(X);
          const int w = X.val.cols();
          for (int r = 0; r < X.val.rows(); ++r) {
            const float* src = bar.data() + static_cast<std::size_t>(r) * d + c;
            float* dst = xb.data() + static_cast<std::size_t>(r) * w;
            for (int j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
        c += X.val.cols();
      }
      break;
    }
    case Op::gather_embedding:
    case Op::gather_rows: {
      if (want(0)) {
        Entry& T = input(0);
        auto& tb = bar_of(T);
        const int d = e.val.cols();
        for (std::size_t j = 0; j < e.idx.size(); ++j) {
          float* dst = tb.data() + static_cast<std::size_t>(e.idx[j]) * d;
          const float* src = bar.data() + j * d;
          for (int k = 0; k < d; ++k) dst[k] += src[k];
        }
      }
      break;
    }
    case Op::scatter_rows: {
      if (want(0)) {
        Entry& X = input(0);
        auto& xb = bar_of(X);
        const int d = e.val.cols();
        for (std::size_t j = 0; j < e.idx.size(); ++j) {
          float* dst = xb.data() + j * d;
          const float* src = bar.data() + static_cast<std::size_t>(e.idx[j]) * d;
          for (int k = 0; k < d; ++k) dst[k] += src[k];
        }
      }
      break;
    }
    case Op::row_update: {
      Entry& P = input(0);
      Entry& C = input(1);
      Entry& G = input(2);
      const int n = e.val.rows(), d = e.val.cols();
      for (int r = 0; r < n; ++r) {
        const float c = G.val.data[static_cast<std::size_t>(r)];
        const float* br = bar.data() + static_cast<std::size_t>(r) * d;
        if (want(0)) {
          float* pb = bar_of(P).data() + static_cast<std::size_t>(r) * d;
          const float w = 1.f - c;
          for (int j = 0; j < d; ++j) pb[j] += w * br[j];
        }
        if (want(1) && c != 0.f) {
          float* cb = bar_of(C).data() + static_cast<std::size_t>(r) * d;
          for (int j = 0; j < d; ++j) cb[j] += c * br[j];
        }
        if (want(2)) {
          const float* pr = P.val.row_ptr(r);
          const float* cr = C.val.row_ptr(r);
          double acc = 0.0;
          for (int j = 0; j < d; ++j) acc += static_cast<double>(br[j]) * (cr[j] - pr[j]);
          bar_of(G)[static_cast<std::size_t>(r)] += static_cast<float>(acc);
        }
      }
      break;
    }
    case Op::hard_threshold:
    case Op::stop_gradient:
      break;
    case Op::dropout: {
      if (want(0)) {
        auto& xb = bar_of(input(0));
        for (std::size_t k = 0; k < bar.size(); ++k) xb[k] += bar[k] * e.aux[k];
      }
      break;
    }
    case Op::sum_all: {
      if (want(0)) {
        auto& xb = bar_of(input(0));
        const float b = bar[0];
        for (auto& v : xb) v += b;
      }
      break;
    }
    case Op::masked_nll: {
      if (want(0)) {
        Entry& L = input(0);
        auto& lb = bar_of(L);
        const int vocab = L.val.cols();
        const int count = e.aux_i;
        const float w = bar[0] / static_cast<float>(count);
        for (int t = 0; t < count; ++t) {
          const int p = e.idx[static_cast<std::size_t>(t)];
          const int gold = e.idx[static_cast<std::size_t>(count + t)];
          const float* sm = e.aux.data() + static_cast<std::size_t>(t) * vocab;
          float* dst = lb.data() + static_cast<std::size_t>(p - 1) * vocab;
          for (int j = 0; j < vocab; ++j) dst[j] += w * sm[j];
          dst[gold] -= w;
        }
      }
      break;
    }
  }
}

}  // namespace arcslot
