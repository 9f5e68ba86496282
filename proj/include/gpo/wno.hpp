#pragma once

#include "gpo/tape.hpp"

namespace gpo::wno {

using ad::BandLayout;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using ad::WaveletBasis;

enum class Activation { gelu, tanh, identity };

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation a);

// Architecture of the operator embedding. The band-mixing weights live on
// the coarsest grid implied by (train_extents, levels); inputs at other
// resolutions reuse them by re-deriving the decomposition depth.
struct WnoConfig {
  int spatial_rank = 1;
  int in_channels = 1;       // raw input channels, before grid coordinates
  bool with_coords = true;   // append normalized cell-center coordinates
  int width = 32;            // lifted channel count
  int layers = 3;
  int levels = 3;
  std::string basis = "db6";
  int latent_channels = 16;
  Activation activation = Activation::gelu;
  std::vector<int64_t> train_extents;

  void validate() const;
  int lifted_in_channels() const { return in_channels + (with_coords ? spatial_rank : 0); }
  int retained_bands() const { return spatial_rank == 1 ? 2 : 4; }
  std::vector<int64_t> coarsest_shape() const;
};

// Decomposition depth that puts the coarsest grid of `extents` onto the
// trained coarsest shape; throws if no integer depth does.
int transfer_levels(const WnoConfig& cfg, const std::vector<int64_t>& extents);

struct WnoParams {
  struct Layer {
    std::vector<Tensor> band_w;  // retained bands, each [positions, width, width]
    Tensor bypass_w;             // [width, width]
    Tensor bias;                 // [width]
  };
  Tensor lift_w, lift_b;
  std::vector<Layer> layers;
  Tensor proj_w, proj_b;

  static WnoParams init(const WnoConfig& cfg, Rng& rng);

  // Deterministic traversal used for flattening, optimizer state and
  // archive serialization.
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  void for_each_mut(const std::function<void(const std::string&, Tensor&)>& fn);
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  int64_t count() const;
  Vec to_flat() const;
  void from_flat(const Vec& flat);
};

// Appends normalized cell-center coordinate channels to [B, sp..., c].
Tensor with_grid_coords(const Tensor& input, int spatial_rank);

// Latent features [B, sp..., latent_channels] for inputs [B, sp..., in_channels].
Tensor wno_forward(const Tensor& input, const WnoParams& params, const WnoConfig& cfg);

// One spectral block without bypass or activation: analyze, mix the
// retained coarse bands, zero the rest, synthesize.
Tensor spectral_conv(const Tensor& v, const std::vector<Tensor>& band_w,
                     const WaveletBasis& basis, int levels);

// Taped forward whose parameter leaves line up with WnoParams::tensors().
struct TapedWno {
  Var input;
  std::vector<Var> params;
  Var out;
};
TapedWno wno_forward_taped(Tape& tape, const Tensor& input, const WnoParams& params,
                           const WnoConfig& cfg);

// Zero-valued parameter set with the same shapes, for gradient accumulation
// and optimizer state.
WnoParams zeros_like(const WnoParams& params);

}  // namespace gpo::wno
