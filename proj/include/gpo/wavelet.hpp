#pragma once

#include "gpo/tensor.hpp"

namespace gpo::ad {

// Orthonormal wavelet filter bank. Analysis convolves and downsamples with
// (dec_lo, dec_hi); synthesis is the adjoint of analysis, which for an
// orthonormal bank reuses the same filters (rec_* kept for the record).
struct WaveletBasis {
  std::string name;
  Vec dec_lo, dec_hi;
  Vec rec_lo, rec_hi;

  static WaveletBasis from_name(const std::string& name);  // haar | db4 | db6

  // Max |violation| of the quadrature-mirror identities (unit norm,
  // orthogonality at even lags, zero mean of the high-pass).
  double reconstruction_defect() const;
};

// One coefficient band inside the packed multilevel layout.
struct Band {
  std::vector<int64_t> offset;  // per spatial axis
  std::vector<int64_t> extent;
  int level = 0;  // 1 = finest, `levels` = coarsest; 0 only for the approx band
};

// Packed multilevel layout over given spatial extents. Band 0 is the
// coarsest approximation; detail bands follow from coarsest to finest
// (1 per level in 1-D, 3 orientations per level in 2-D).
struct BandLayout {
  std::vector<int64_t> extents;
  int levels = 0;
  int spatial_rank = 0;
  std::vector<Band> bands;

  int coarsest_band_count() const { return spatial_rank == 1 ? 2 : 4; }
};

BandLayout band_layout(const std::vector<int64_t>& extents, int levels, int spatial_rank);

// Structured coefficient set for the public transform API.
struct WaveletCoeffs {
  int levels = 0;
  int spatial_rank = 0;
  std::string basis;
  std::vector<int64_t> signal_shape;
  Tensor approx;                              // coarsest approximation
  std::vector<std::vector<Tensor>> details;   // [level][orientation], coarsest first
};

// Multilevel periodic DWT of a signal shaped [n] (1-D) or [ny, nx] (2-D).
// Each transformed axis length must be divisible by 2^levels.
WaveletCoeffs dwt(const Tensor& signal, const WaveletBasis& basis, int levels);
Tensor idwt(const WaveletCoeffs& coeffs, const WaveletBasis& basis);

namespace ops {

// Packed batched transforms on tensors shaped [B, sp..., C]. The packed
// output has the same shape as the input; bands live at the offsets given
// by band_layout over the spatial extents.
Tensor dwt_packed(const Tensor& x, const WaveletBasis& basis, int levels, int spatial_rank);
Tensor idwt_packed(const Tensor& packed, const WaveletBasis& basis, int levels, int spatial_rank);

// Per-band, per-position channel mixing: for band i with weight index
// w >= 0, out[b, p, :] = in[b, p, :] * weights[w][p, :, :]; bands mapped to
// -1 are zero-filled. `weight_for_band[i]` selects the weight tensor.
Tensor band_mix(const Tensor& packed, const std::vector<const Tensor*>& weights,
                const std::vector<int>& weight_for_band, const BandLayout& layout);

// Adjoint pieces of band_mix used by the tape.
Tensor band_mix_adjoint_input(const Tensor& out_adj, const std::vector<const Tensor*>& weights,
                              const std::vector<int>& weight_for_band, const BandLayout& layout);
void band_mix_adjoint_weights(const Tensor& out_adj, const Tensor& packed_in,
                              const std::vector<int>& weight_for_band, const BandLayout& layout,
                              std::vector<Tensor>& weight_adjoints);

// Gather / scatter a band's coefficients as a [B, positions, C] tensor.
Tensor gather_band(const Tensor& packed, const Band& band);
void scatter_band_add(Tensor& packed, const Band& band, const Tensor& block);

}  // namespace ops

}  // namespace gpo::ad
