#include "gpo/wavelet.hpp"

#include <algorithm>

namespace gpo::ad {

namespace {

// Orthonormal low-pass filters, sum = sqrt(2). High-pass is the
// alternating flip g[k] = (-1)^k h[m-1-k].
const double kHaar[2] = {0.70710678118654757, 0.70710678118654757};

const double kDb4[8] = {0.23037781330889648,   0.71484657055291567,  0.63088076792985903,
                        -0.027983769416859566, -0.18703481171909309, 0.030841381835560625,
                        0.032883011666885176,  -0.01059740178506902};

const double kDb6[12] = {0.1115407433501094,     0.49462389039845273,  0.75113390802109481,
                         0.31525035170919835,    -0.22626469396543972, -0.12976686756726155,
                         0.097501605587322876,   0.027522865530305675, -0.031582039317485988,
                         0.00055384220116149829, 0.0047772575109455047,
                         -0.0010773010853084789};

Vec to_vec(const double* p, int n) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = p[i];
  return v;
}

// Analysis along the leading `cur` rows of X, in place: rows [0, cur/2)
// become the approximation, rows [cur/2, cur) the detail.
template <typename MapT>
void analyze_rows(MapT X, int64_t cur, const Vec& h, const Vec& g) {
  const int64_t half = cur / 2;
  const int64_t m = h.size();
  RowMat tmp = RowMat::Zero(cur, X.cols());
  for (int64_t i = 0; i < half; ++i)
    for (int64_t k = 0; k < m; ++k) {
      const auto row = X.row((2 * i + k) % cur);
      tmp.row(i) += h[k] * row;
      tmp.row(half + i) += g[k] * row;
    }
  for (int64_t r = 0; r < cur; ++r) X.row(r) = tmp.row(r);
}

// Adjoint of analyze_rows; for an orthonormal bank this is the inverse.
template <typename MapT>
void synthesize_rows(MapT X, int64_t cur, const Vec& h, const Vec& g) {
  const int64_t half = cur / 2;
  const int64_t m = h.size();
  RowMat tmp = RowMat::Zero(cur, X.cols());
  for (int64_t i = 0; i < half; ++i)
    for (int64_t k = 0; k < m; ++k)
      tmp.row((2 * i + k) % cur) += h[k] * X.row(i) + g[k] * X.row(half + i);
  for (int64_t r = 0; r < cur; ++r) X.row(r) = tmp.row(r);
}

using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

void validate_packed_args(const Tensor& x, int levels, int spatial_rank, const char* op) {
  if (spatial_rank != 1 && spatial_rank != 2)
    throw ValidationError(std::string(op) + ": spatial rank must be 1 or 2");
  if (x.rank() != spatial_rank + 2)
    throw ValidationError(std::string(op) + ": expected shape [batch, space..., channels], got " +
                          format_shape(x.shape));
  if (levels < 1) throw ValidationError(std::string(op) + ": levels must be >= 1");
  const int64_t div = int64_t(1) << levels;
  for (int a = 0; a < spatial_rank; ++a) {
    int64_t n = x.shape[1 + a];
    if (n % div != 0)
      throw ValidationError(std::string(op) + ": spatial extent " + std::to_string(n) +
                            " on axis " + std::to_string(a) + " is not divisible by 2^" +
                            std::to_string(levels));
  }
}

}  // namespace

WaveletBasis WaveletBasis::from_name(const std::string& name) {
  WaveletBasis b;
  b.name = name;
  if (name == "haar")
    b.dec_lo = to_vec(kHaar, 2);
  else if (name == "db4")
    b.dec_lo = to_vec(kDb4, 8);
  else if (name == "db6")
    b.dec_lo = to_vec(kDb6, 12);
  else
    throw ValidationError("unknown wavelet basis '" + name + "' (expected haar, db4 or db6)");
  const int m = static_cast<int>(b.dec_lo.size());
  b.dec_hi.resize(m);
  for (int k = 0; k < m; ++k) b.dec_hi[k] = (k % 2 ? -1.0 : 1.0) * b.dec_lo[m - 1 - k];
  b.rec_lo = b.dec_lo;
  b.rec_hi = b.dec_hi;
  return b;
}

double WaveletBasis::reconstruction_defect() const {
  const int m = static_cast<int>(dec_lo.size());
  double worst = std::abs(dec_lo.sum() - std::sqrt(2.0));
  worst = std::max(worst, std::abs(dec_hi.sum()));
  for (int lag = 0; lag < m; lag += 2) {
    double hh = 0.0, gg = 0.0, hg = 0.0;
    for (int k = 0; k + lag < m; ++k) {
      hh += dec_lo[k] * dec_lo[k + lag];
      gg += dec_hi[k] * dec_hi[k + lag];
      hg += dec_lo[k] * dec_hi[k + lag];
    }
    const double target = lag == 0 ? 1.0 : 0.0;
    worst = std::max({worst, std::abs(hh - target), std::abs(gg - target), std::abs(hg)});
  }
  return worst;
}

BandLayout band_layout(const std::vector<int64_t>& extents, int levels, int spatial_rank) {
  if (static_cast<int>(extents.size()) != spatial_rank)
    throw ValidationError("band_layout: extents rank " + std::to_string(extents.size()) +
                          " does not match spatial rank " + std::to_string(spatial_rank));
  const int64_t div = int64_t(1) << levels;
  for (int64_t n : extents)
    if (levels < 1 || n % div != 0)
      throw ValidationError("band_layout: extent " + std::to_string(n) +
                            " is not divisible by 2^" + std::to_string(levels));
  BandLayout lay;
  lay.extents = extents;
  lay.levels = levels;
  lay.spatial_rank = spatial_rank;
  if (spatial_rank == 1) {
    const int64_t n = extents[0];
    lay.bands.push_back({{0}, {n >> levels}, 0});
    for (int l = levels; l >= 1; --l) {
      const int64_t half = n >> l;
      lay.bands.push_back({{half}, {half}, l});
    }
  } else {
    const int64_t ny = extents[0], nx = extents[1];
    lay.bands.push_back({{0, 0}, {ny >> levels, nx >> levels}, 0});
    for (int l = levels; l >= 1; --l) {
      const int64_t hy = ny >> l, hx = nx >> l;
      lay.bands.push_back({{0, hx}, {hy, hx}, l});
      lay.bands.push_back({{hy, 0}, {hy, hx}, l});
      lay.bands.push_back({{hy, hx}, {hy, hx}, l});
    }
  }
  return lay;
}

namespace ops {

Tensor dwt_packed(const Tensor& x, const WaveletBasis& basis, int levels, int spatial_rank) {
  validate_packed_args(x, levels, spatial_rank, "dwt");
  Tensor out = x;
  const Vec& h = basis.dec_lo;
  const Vec& g = basis.dec_hi;
  const int64_t B = out.shape[0];
  const int64_t C = out.shape.back();
  if (spatial_rank == 1) {
    const int64_t n = out.shape[1];
    for (int64_t b = 0; b < B; ++b) {
      Eigen::Map<RowMat> X(out.data.data() + b * n * C, n, C);
      int64_t cur = n;
      for (int l = 0; l < levels; ++l, cur /= 2) analyze_rows(X, cur, h, g);
    }
  } else {
    const int64_t ny = out.shape[1], nx = out.shape[2];
    for (int64_t b = 0; b < B; ++b) {
      double* base = out.data.data() + b * ny * nx * C;
      int64_t cy = ny, cx = nx;
      for (int l = 0; l < levels; ++l, cy /= 2, cx /= 2) {
        for (int64_t y = 0; y < cy; ++y) {
          Eigen::Map<RowMat> X(base + y * nx * C, nx, C);
          analyze_rows(X, cx, h, g);
        }
        for (int64_t xcol = 0; xcol < cx; ++xcol) {
          StridedMap X(base + xcol * C, ny, C, Eigen::OuterStride<>(nx * C));
          analyze_rows(X, cy, h, g);
        }
      }
    }
  }
  check_finite(out, "dwt");
  return out;
}

Tensor idwt_packed(const Tensor& packed, const WaveletBasis& basis, int levels,
                   int spatial_rank) {
  validate_packed_args(packed, levels, spatial_rank, "idwt");
  Tensor out = packed;
  const Vec& h = basis.dec_lo;
  const Vec& g = basis.dec_hi;
  const int64_t B = out.shape[0];
  const int64_t C = out.shape.back();
  if (spatial_rank == 1) {
    const int64_t n = out.shape[1];
    for (int64_t b = 0; b < B; ++b) {
      Eigen::Map<RowMat> X(out.data.data() + b * n * C, n, C);
      for (int l = levels - 1; l >= 0; --l) synthesize_rows(X, n >> l, h, g);
    }
  } else {
    const int64_t ny = out.shape[1], nx = out.shape[2];
    for (int64_t b = 0; b < B; ++b) {
      double* base = out.data.data() + b * ny * nx * C;
      for (int l = levels - 1; l >= 0; --l) {
        const int64_t cy = ny >> l, cx = nx >> l;
        for (int64_t xcol = 0; xcol < cx; ++xcol) {
          StridedMap X(base + xcol * C, ny, C, Eigen::OuterStride<>(nx * C));
          synthesize_rows(X, cy, h, g);
        }
        for (int64_t y = 0; y < cy; ++y) {
          Eigen::Map<RowMat> X(base + y * nx * C, nx, C);
          synthesize_rows(X, cx, h, g);
        }
      }
    }
  }
  check_finite(out, "idwt");
  return out;
}

Tensor gather_band(const Tensor& packed, const Band& band) {
  const int rank = static_cast<int>(band.offset.size());
  const int64_t B = packed.shape[0];
  const int64_t C = packed.shape.back();
  int64_t positions = 1;
  for (int64_t e : band.extent) positions *= e;
  Tensor out = Tensor::zeros({B, positions, C});
  if (rank == 1) {
    const int64_t n = packed.shape[1];
    for (int64_t b = 0; b < B; ++b)
      Eigen::Map<RowMat>(out.data.data() + b * positions * C, positions, C) =
          Eigen::Map<const RowMat>(packed.data.data() + (b * n + band.offset[0]) * C, positions,
                                   C);
  } else {
    const int64_t ny = packed.shape[1], nx = packed.shape[2];
    const int64_t ey = band.extent[0], ex = band.extent[1];
    for (int64_t b = 0; b < B; ++b)
      for (int64_t y = 0; y < ey; ++y) {
        const double* src =
            packed.data.data() + ((b * ny + band.offset[0] + y) * nx + band.offset[1]) * C;
        double* dst = out.data.data() + (b * positions + y * ex) * C;
        std::copy(src, src + ex * C, dst);
      }
  }
  return out;
}

void scatter_band_add(Tensor& packed, const Band& band, const Tensor& block) {
  const int rank = static_cast<int>(band.offset.size());
  const int64_t B = packed.shape[0];
  const int64_t C = packed.shape.back();
  int64_t positions = 1;
  for (int64_t e : band.extent) positions *= e;
  if (block.rank() != 3 || block.shape[0] != B || block.shape[1] != positions ||
      block.shape[2] != C)
    throw ValidationError("scatter_band_add: block shape " + format_shape(block.shape) +
                          " does not match band with " + std::to_string(positions) +
                          " positions");
  if (rank == 1) {
    const int64_t n = packed.shape[1];
    for (int64_t b = 0; b < B; ++b)
      Eigen::Map<RowMat>(packed.data.data() + (b * n + band.offset[0]) * C, positions, C) +=
          Eigen::Map<const RowMat>(block.data.data() + b * positions * C, positions, C);
  } else {
    const int64_t ny = packed.shape[1], nx = packed.shape[2];
    const int64_t ey = band.extent[0], ex = band.extent[1];
    for (int64_t b = 0; b < B; ++b)
      for (int64_t y = 0; y < ey; ++y) {
        const double* src = block.data.data() + (b * positions + y * ex) * C;
        double* dst =
            packed.data.data() + ((b * ny + band.offset[0] + y) * nx + band.offset[1]) * C;
        Eigen::Map<RowMat>(dst, ex, C) += Eigen::Map<const RowMat>(src, ex, C);
      }
  }
}

namespace {

void validate_mix_args(const Tensor& packed, const std::vector<const Tensor*>& weights,
                       const std::vector<int>& weight_for_band, const BandLayout& layout) {
  if (weight_for_band.size() != layout.bands.size())
    throw ValidationError("band_mix: weight map covers " +
                          std::to_string(weight_for_band.size()) + " bands, layout has " +
                          std::to_string(layout.bands.size()));
  if (packed.rank() != layout.spatial_rank + 2)
    throw ValidationError("band_mix: packed rank does not match layout");
  for (int a = 0; a < layout.spatial_rank; ++a)
    if (packed.shape[1 + a] != layout.extents[a])
      throw ValidationError("band_mix: packed extents " + format_shape(packed.shape) +
                            " do not match layout extents " + format_shape(layout.extents));
  const int64_t C = packed.shape.back();
  for (size_t i = 0; i < layout.bands.size(); ++i) {
    int w = weight_for_band[i];
    if (w < 0) continue;
    if (w >= static_cast<int>(weights.size()))
      throw ValidationError("band_mix: band maps to missing weight index " + std::to_string(w));
    int64_t positions = 1;
    for (int64_t e : layout.bands[i].extent) positions *= e;
    const Tensor& W = *weights[w];
    if (W.rank() != 3 || W.shape[0] != positions || W.shape[1] != C || W.shape[2] != C)
      throw ValidationError("band_mix: weight " + std::to_string(w) + " shape " +
                            format_shape(W.shape) + " wants [" + std::to_string(positions) +
                            ", " + std::to_string(C) + ", " + std::to_string(C) + "]");
  }
}

enum class MixMode { forward, adjoint_input };

Tensor mix_core(const Tensor& packed, const std::vector<const Tensor*>& weights,
                const std::vector<int>& weight_for_band, const BandLayout& layout,
                MixMode mode) {
  validate_mix_args(packed, weights, weight_for_band, layout);
  const int64_t B = packed.shape[0];
  const int64_t C = packed.shape.back();
  Tensor out = Tensor::zeros(packed.shape);
  for (size_t i = 0; i < layout.bands.size(); ++i) {
    const int w = weight_for_band[i];
    if (w < 0) continue;
    const Band& band = layout.bands[i];
    Tensor block = gather_band(packed, band);
    const int64_t positions = block.shape[1];
    const Tensor& W = *weights[w];
    Tensor mixed = Tensor::zeros(block.shape);
    for (int64_t p = 0; p < positions; ++p) {
      Eigen::Map<const RowMat> Wp(W.data.data() + p * C * C, C, C);
      StridedMap src(const_cast<double*>(block.data.data()) + p * C, B, C,
                     Eigen::OuterStride<>(positions * C));
      StridedMap dst(mixed.data.data() + p * C, B, C, Eigen::OuterStride<>(positions * C));
      if (mode == MixMode::forward)
        dst = src * Wp;
      else
        dst = src * Wp.transpose();
    }
    scatter_band_add(out, band, mixed);
  }
  check_finite(out, "band_mix");
  return out;
}

}  // namespace

Tensor band_mix(const Tensor& packed, const std::vector<const Tensor*>& weights,
                const std::vector<int>& weight_for_band, const BandLayout& layout) {
  return mix_core(packed, weights, weight_for_band, layout, MixMode::forward);
}

Tensor band_mix_adjoint_input(const Tensor& out_adj, const std::vector<const Tensor*>& weights,
                              const std::vector<int>& weight_for_band,
                              const BandLayout& layout) {
  return mix_core(out_adj, weights, weight_for_band, layout, MixMode::adjoint_input);
}

void band_mix_adjoint_weights(const Tensor& out_adj, const Tensor& packed_in,
                              const std::vector<int>& weight_for_band, const BandLayout& layout,
                              std::vector<Tensor>& weight_adjoints) {
  const int64_t B = out_adj.shape[0];
  const int64_t C = out_adj.shape.back();
  for (size_t i = 0; i < layout.bands.size(); ++i) {
    const int w = weight_for_band[i];
    if (w < 0) continue;
    const Band& band = layout.bands[i];
    Tensor gout = gather_band(out_adj, band);
    Tensor xin = gather_band(packed_in, band);
    const int64_t positions = gout.shape[1];
    Tensor& gw = weight_adjoints[w];
    if (gw.rank() != 3 || gw.shape[0] != positions || gw.shape[1] != C || gw.shape[2] != C)
      throw ValidationError("band_mix: weight adjoint shape mismatch");
    for (int64_t p = 0; p < positions; ++p) {
      StridedMap gsl(gout.data.data() + p * C, B, C, Eigen::OuterStride<>(positions * C));
      StridedMap xsl(xin.data.data() + p * C, B, C, Eigen::OuterStride<>(positions * C));
      Eigen::Map<RowMat>(gw.data.data() + p * C * C, C, C) += xsl.transpose() * gsl;
    }
  }
}

}  // namespace ops

WaveletCoeffs dwt(const Tensor& signal, const WaveletBasis& basis, int levels) {
  const int rank = signal.rank();
  if (rank != 1 && rank != 2)
    throw ValidationError("dwt expects a [n] or [ny, nx] signal, got " +
                          format_shape(signal.shape));
  Tensor wrapped = signal;
  wrapped.shape.insert(wrapped.shape.begin(), 1);
  wrapped.shape.push_back(1);
  Tensor packed = ops::dwt_packed(wrapped, basis, levels, rank);
  const BandLayout lay = band_layout(signal.shape, levels, rank);

  WaveletCoeffs c;
  c.levels = levels;
  c.spatial_rank = rank;
  c.basis = basis.name;
  c.signal_shape = signal.shape;
  auto unwrap = [](Tensor block, const Band& band) {
    block.shape = band.extent;
    return block;
  };
  c.approx = unwrap(ops::gather_band(packed, lay.bands[0]), lay.bands[0]);
  const int per_level = rank == 1 ? 1 : 3;
  size_t next = 1;
  for (int l = levels; l >= 1; --l) {
    std::vector<Tensor> orient;
    for (int o = 0; o < per_level; ++o, ++next)
      orient.push_back(unwrap(ops::gather_band(packed, lay.bands[next]), lay.bands[next]));
    c.details.push_back(std::move(orient));
  }
  return c;
}

Tensor idwt(const WaveletCoeffs& coeffs, const WaveletBasis& basis) {
  if (coeffs.levels < 1 || static_cast<int>(coeffs.details.size()) != coeffs.levels)
    throw ValidationError("idwt: coefficient set has " + std::to_string(coeffs.details.size()) +
                          " detail levels, header says " + std::to_string(coeffs.levels));
  const int rank = coeffs.spatial_rank;
  const BandLayout lay = band_layout(coeffs.signal_shape, coeffs.levels, rank);
  std::vector<int64_t> packed_shape = coeffs.signal_shape;
  packed_shape.insert(packed_shape.begin(), 1);
  packed_shape.push_back(1);
  Tensor packed = Tensor::zeros(packed_shape);
  auto wrap = [](const Tensor& band_tensor, const Band& band) {
    int64_t positions = 1;
    for (int64_t e : band.extent) positions *= e;
    if (band_tensor.shape != band.extent)
      throw ValidationError("idwt: band shape " + format_shape(band_tensor.shape) +
                            " does not match layout band " + format_shape(band.extent));
    Tensor b = band_tensor;
    b.shape = {1, positions, 1};
    return b;
  };
  ops::scatter_band_add(packed, lay.bands[0], wrap(coeffs.approx, lay.bands[0]));
  const int per_level = rank == 1 ? 1 : 3;
  size_t next = 1;
  for (int li = 0; li < coeffs.levels; ++li) {
    if (static_cast<int>(coeffs.details[li].size()) != per_level)
      throw ValidationError("idwt: level " + std::to_string(li) + " holds " +
                            std::to_string(coeffs.details[li].size()) + " bands, expected " +
                            std::to_string(per_level));
    for (int o = 0; o < per_level; ++o, ++next)
      ops::scatter_band_add(packed, lay.bands[next], wrap(coeffs.details[li][o], lay.bands[next]));
  }
  Tensor out = ops::idwt_packed(packed, basis, coeffs.levels, rank);
  out.shape = coeffs.signal_shape;
  return out;
}

}  // namespace gpo::ad
