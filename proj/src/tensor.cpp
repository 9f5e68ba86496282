#include "gpo/tensor.hpp"

#include <array>
#include <sstream>

namespace gpo {

uint32_t crc32(const void* data, size_t len, uint32_t seed) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  const auto* p = static_cast<const unsigned char*>(data);
  uint32_t c = seed ^ 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

uint64_t fnv1a(const void* data, size_t len, uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

uint64_t fnv1a(const std::vector<double>& v, uint64_t seed) {
  return fnv1a(v.data(), v.size() * sizeof(double), seed);
}

uint64_t fnv1a(const Vec& v, uint64_t seed) {
  return fnv1a(v.data(), static_cast<size_t>(v.size()) * sizeof(double), seed);
}

std::string format_shape(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << "]";
  return os.str();
}

}  // namespace gpo

namespace gpo::ad {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e < 0) throw ValidationError("negative tensor extent in " + format_shape(shape));
    n *= e;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
  int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), Vec::Zero(n));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
  int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), Vec::Constant(n, value));
}

Tensor Tensor::from(std::vector<int64_t> shape, std::initializer_list<double> vals) {
  int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(vals.size()))
    throw ValidationError("tensor literal has " + std::to_string(vals.size()) +
                          " values for shape " + format_shape(shape));
  Vec d(n);
  int64_t i = 0;
  for (double v : vals) d[i++] = v;
  return Tensor(std::move(shape), std::move(d));
}

int64_t Tensor::tail_size(int axis) const {
  int64_t n = 1;
  for (size_t i = axis; i < shape.size(); ++i) n *= shape[i];
  return n;
}

Eigen::Map<const RowMat> Tensor::as_matrix() const {
  int64_t cols = shape.empty() ? 1 : shape.back();
  int64_t rows = cols == 0 ? 0 : numel() / cols;
  return {data.data(), rows, cols};
}

Eigen::Map<RowMat> Tensor::as_matrix() {
  int64_t cols = shape.empty() ? 1 : shape.back();
  int64_t rows = cols == 0 ? 0 : numel() / cols;
  return {data.data(), rows, cols};
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

namespace ops {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_shape(a, b))
    throw ValidationError(std::string(op) + ": shape mismatch " + format_shape(a.shape) +
                          " vs " + format_shape(b.shape));
}

}  // namespace

void check_finite(const Tensor& t, const char* op) {
  if (!t.data.allFinite())
    throw NumericalError(std::string(op) + " produced a non-finite value");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return Tensor(a.shape, a.data + b.data);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return Tensor(a.shape, a.data - b.data);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return Tensor(a.shape, a.data.cwiseProduct(b.data));
}

Tensor scale(const Tensor& a, double c) { return Tensor(a.shape, a.data * c); }

Tensor neg(const Tensor& a) { return Tensor(a.shape, -a.data); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ValidationError("matmul expects rank-2 operands, got " + format_shape(a.shape) +
                          " and " + format_shape(b.shape));
  if (a.shape[1] != b.shape[0])
    throw ValidationError("matmul: inner extents differ, " + format_shape(a.shape) + " vs " +
                          format_shape(b.shape));
  Tensor out = Tensor::zeros({a.shape[0], b.shape[1]});
  out.as_matrix() = a.as_matrix() * b.as_matrix();
  check_finite(out, "matmul");
  return out;
}

Tensor affine_last(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() < 1) throw ValidationError("affine_last expects a non-scalar input");
  if (w.rank() != 2 || b.rank() != 1)
    throw ValidationError("affine_last expects W rank 2 and bias rank 1");
  int64_t c_in = x.shape.back();
  if (w.shape[0] != c_in || w.shape[1] != b.shape[0])
    throw ValidationError("affine_last: W " + format_shape(w.shape) + " incompatible with input " +
                          format_shape(x.shape) + " and bias " + format_shape(b.shape));
  std::vector<int64_t> out_shape = x.shape;
  out_shape.back() = w.shape[1];
  Tensor out = Tensor::zeros(out_shape);
  out.as_matrix() = (x.as_matrix() * w.as_matrix()).rowwise() + b.data.transpose();
  check_finite(out, "affine_last");
  return out;
}

Tensor sum_all(const Tensor& a) { return Tensor::scalar(a.data.sum()); }

Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw ValidationError("mean_all of an empty tensor");
  return Tensor::scalar(a.data.mean());
}

Tensor exp(const Tensor& a) {
  Tensor out(a.shape, a.data.array().exp().matrix());
  check_finite(out, "exp");
  return out;
}

Tensor sqrt_guarded(const Tensor& a, double eps) {
  Tensor out(a.shape, a.data.array().max(eps).sqrt().matrix());
  return out;
}

Tensor gelu(const Tensor& a) {
  // Exact form x * Phi(x) with the standard normal CDF.
  Tensor out(a.shape, Vec(a.data.size()));
  for (int64_t i = 0; i < a.data.size(); ++i) {
    double x = a.data[i];
    out.data[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
  }
  return out;
}

Tensor tanh(const Tensor& a) { return Tensor(a.shape, a.data.array().tanh().matrix()); }

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 1)
    throw ValidationError("concat_last: rank mismatch " + format_shape(a.shape) + " vs " +
                          format_shape(b.shape));
  for (int i = 0; i + 1 < a.rank(); ++i)
    if (a.shape[i] != b.shape[i])
      throw ValidationError("concat_last: leading extents differ, " + format_shape(a.shape) +
                            " vs " + format_shape(b.shape));
  std::vector<int64_t> out_shape = a.shape;
  out_shape.back() = a.shape.back() + b.shape.back();
  Tensor out = Tensor::zeros(out_shape);
  auto om = out.as_matrix();
  om.leftCols(a.shape.back()) = a.as_matrix();
  om.rightCols(b.shape.back()) = b.as_matrix();
  return out;
}

Tensor slice_last(const Tensor& a, int64_t begin, int64_t count) {
  if (a.rank() < 1) throw ValidationError("slice_last expects a non-scalar input");
  int64_t c = a.shape.back();
  if (begin < 0 || count < 0 || begin + count > c)
    throw ValidationError("slice_last: [" + std::to_string(begin) + ", " +
                          std::to_string(begin + count) + ") out of range for extent " +
                          std::to_string(c));
  std::vector<int64_t> out_shape = a.shape;
  out_shape.back() = count;
  Tensor out = Tensor::zeros(out_shape);
  out.as_matrix() = a.as_matrix().middleCols(begin, count);
  return out;
}

}  // namespace ops

}  // namespace gpo::ad
