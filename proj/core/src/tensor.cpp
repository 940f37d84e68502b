#include "arcslot/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "arcslot/error.hpp"

namespace arcslot {

std::int64_t shape_numel(const std::vector<int>& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return s.empty() ? 0 : n;
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  for (int d : shape)
    if (d < 0) throw DimError("negative extent in shape " + shape_str());
  data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.f);
}

Tensor::Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
    throw DimError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str());
}

Tensor Tensor::zeros(int r, int c) { return Tensor({r, c}); }

Tensor Tensor::full(int r, int c, float v) {
  Tensor t({r, c});
  for (auto& x : t.data) x = v;
  return t;
}

Tensor Tensor::scalar(float v) { return Tensor({1, 1}, {v}); }

Tensor Tensor::row(std::vector<float> v) {
  const int c = static_cast<int>(v.size());
  return Tensor({1, c}, std::move(v));
}

Tensor Tensor::col(std::vector<float> v) {
  const int r = static_cast<int>(v.size());
  return Tensor({r, 1}, std::move(v));
}

Tensor Tensor::matrix(int r, int c, std::vector<float> v) { return Tensor({r, c}, std::move(v)); }

Tensor Tensor::gaussian(int r, int c, float std, Rng& rng) {
  Tensor t({r, c});
  for (auto& x : t.data) x = rng.normal(0.f, std);
  return t;
}

int Tensor::rows() const {
  if (ndim() != 2) throw DimError("rows() on non-matrix " + shape_str());
  return shape[0];
}

int Tensor::cols() const {
  if (ndim() != 2) throw DimError("cols() on non-matrix " + shape_str());
  return shape[1];
}

float& Tensor::at(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
float Tensor::at(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

const float* Tensor::row_ptr(int r) const { return data.data() + static_cast<std::size_t>(r) * shape[1]; }
float* Tensor::row_ptr(int r) { return data.data() + static_cast<std::size_t>(r) * shape[1]; }

void Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.f);
}

void Tensor::zero_grad() {
  if (!grad.empty()) std::memset(grad.data(), 0, grad.size() * sizeof(float));
}

bool Tensor::all_finite() const {
  for (float x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

}  // namespace arcslot
