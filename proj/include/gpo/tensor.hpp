#pragma once

#include "gpo/common.hpp"

namespace gpo::ad {

// Dense multi-dimensional array of finite doubles, row-major.
struct Tensor {
  std::vector<int64_t> shape;
  Vec data;

  Tensor() = default;
  Tensor(std::vector<int64_t> s, Vec d) : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor scalar(double value) { return full({}, value); }
  static Tensor from(std::vector<int64_t> shape, std::initializer_list<double> vals);

  int64_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return shape.empty(); }
  double value() const { return data[0]; }  // scalar access
  int64_t extent(int axis) const { return shape[axis]; }

  // Flat size of the trailing axes starting at `axis`.
  int64_t tail_size(int axis) const;

  // View as (leading, last-axis) row-major matrix.
  Eigen::Map<const RowMat> as_matrix() const;
  Eigen::Map<RowMat> as_matrix();
};

int64_t shape_numel(const std::vector<int64_t>& shape);
bool same_shape(const Tensor& a, const Tensor& b);

// Forward math shared by the plain and taped evaluation paths. Every
// function validates operand shapes and raises NumericalError if a
// non-finite value would escape.
namespace ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);

// 2-D matrix product.
Tensor matmul(const Tensor& a, const Tensor& b);

// x: [..., c_in] times W: [c_in, c_out] plus bias [c_out]; applied per point.
Tensor affine_last(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

Tensor exp(const Tensor& a);
// sqrt(max(x, eps)); gradient 0 below the guard.
Tensor sqrt_guarded(const Tensor& a, double eps = 1e-12);
Tensor gelu(const Tensor& a);
Tensor tanh(const Tensor& a);

// Concat / slice along the last (channel) axis.
Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor slice_last(const Tensor& a, int64_t begin, int64_t count);

void check_finite(const Tensor& t, const char* op);

}  // namespace ops

}  // namespace gpo::ad
