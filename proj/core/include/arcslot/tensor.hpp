#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "arcslot/rng.hpp"

namespace arcslot {

std::int64_t shape_numel(const std::vector<int>& s);

// Dense row-major float32 matrix. Parameters keep an additive grad buffer;
// activations live on the tape and never allocate one.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  Tensor(std::vector<int> s, std::vector<float> d);

  static Tensor zeros(int r, int c);
  static Tensor full(int r, int c, float v);
  static Tensor scalar(float v);
  static Tensor row(std::vector<float> v);
  static Tensor col(std::vector<float> v);
  static Tensor matrix(int r, int c, std::vector<float> v);
  static Tensor gaussian(int r, int c, float std, Rng& rng);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int rows() const;
  int cols() const;

  float& at(int r, int c);
  float at(int r, int c) const;
  const float* row_ptr(int r) const;
  float* row_ptr(int r);

  void ensure_grad();
  void zero_grad();
  bool all_finite() const;
  std::string shape_str() const;
};

bool same_shape(const Tensor& a, const Tensor& b);
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace arcslot
