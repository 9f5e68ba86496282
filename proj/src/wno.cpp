#include "gpo/wno.hpp"

namespace gpo::wno {

Activation activation_from_name(const std::string& name) {
  if (name == "gelu") return Activation::gelu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw ValidationError("unknown activation '" + name + "' (expected gelu, tanh or identity)");
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::gelu: return "gelu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  throw ValidationError("invalid activation enum value");
}

void WnoConfig::validate() const {
  if (spatial_rank != 1 && spatial_rank != 2)
    throw ValidationError("wno: spatial rank must be 1 or 2");
  if (in_channels < 1 || width < 1 || layers < 1 || levels < 1 || latent_channels < 1)
    throw ValidationError("wno: channel counts, layers and levels must be positive");
  (void)WaveletBasis::from_name(basis);
  if (static_cast<int>(train_extents.size()) != spatial_rank)
    throw ValidationError("wno: train extents " + format_shape(train_extents) +
                          " do not match spatial rank " + std::to_string(spatial_rank));
  const int64_t div = int64_t(1) << levels;
  for (int64_t e : train_extents)
    if (e < div || e % div != 0)
      throw ValidationError("wno: train extent " + std::to_string(e) +
                            " is not divisible by 2^" + std::to_string(levels));
}

std::vector<int64_t> WnoConfig::coarsest_shape() const {
  std::vector<int64_t> s;
  for (int64_t e : train_extents) s.push_back(e >> levels);
  return s;
}

int transfer_levels(const WnoConfig& cfg, const std::vector<int64_t>& extents) {
  if (extents.size() != cfg.train_extents.size())
    throw ValidationError("wno: input extents " + format_shape(extents) +
                          " do not match configured rank");
  const std::vector<int64_t> coarse = cfg.coarsest_shape();
  int k = -1;
  for (size_t a = 0; a < extents.size(); ++a) {
    int64_t e = extents[a];
    if (e < 2 * coarse[a] || e % coarse[a] != 0)
      throw ValidationError("wno: extent " + std::to_string(e) +
                            " cannot be decomposed onto the trained coarse grid of " +
                            std::to_string(coarse[a]));
    int64_t ratio = e / coarse[a];
    if ((ratio & (ratio - 1)) != 0)
      throw ValidationError("wno: extent " + std::to_string(e) + " over coarse grid " +
                            std::to_string(coarse[a]) + " is not a power of two");
    int ka = 0;
    while ((int64_t(1) << ka) < ratio) ++ka;
    if (k >= 0 && ka != k)
      throw ValidationError("wno: axes disagree on decomposition depth for extents " +
                            format_shape(extents));
    k = ka;
  }
  return k;
}

WnoParams WnoParams::init(const WnoConfig& cfg, Rng& rng) {
  cfg.validate();
  const int w = cfg.width;
  const int d_in = cfg.lifted_in_channels();
  const int d_lat = cfg.latent_channels;
  int64_t positions = 1;
  for (int64_t e : cfg.coarsest_shape()) positions *= e;

  auto dense = [&rng](int64_t rows, int64_t cols) {
    Tensor t = Tensor::zeros({rows, cols});
    const double s = std::sqrt(2.0 / static_cast<double>(rows + cols));
    for (int64_t i = 0; i < t.numel(); ++i) t.data[i] = s * rng.normal();
    return t;
  };
  auto near_identity = [&rng, w](int64_t rows) {
    Tensor t = Tensor::zeros({rows, w, w});
    for (int64_t p = 0; p < rows; ++p)
      for (int64_t i = 0; i < w; ++i)
        for (int64_t j = 0; j < w; ++j)
          t.data[(p * w + i) * w + j] = (i == j ? 1.0 : 0.0) + 0.05 * rng.normal();
    return t;
  };

  WnoParams p;
  p.lift_w = dense(d_in, w);
  p.lift_b = Tensor::zeros({w});
  for (int j = 0; j < cfg.layers; ++j) {
    Layer layer;
    for (int b = 0; b < cfg.retained_bands(); ++b) layer.band_w.push_back(near_identity(positions));
    Tensor byp = near_identity(1);
    byp.shape = {w, w};
    layer.bypass_w = std::move(byp);
    layer.bias = Tensor::zeros({w});
    p.layers.push_back(std::move(layer));
  }
  p.proj_w = dense(w, d_lat);
  p.proj_b = Tensor::zeros({d_lat});
  return p;
}

void WnoParams::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<WnoParams*>(this)->for_each_mut(
      [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

void WnoParams::for_each_mut(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("lift_w", lift_w);
  fn("lift_b", lift_b);
  for (size_t j = 0; j < layers.size(); ++j) {
    const std::string prefix = "layer" + std::to_string(j) + "_";
    for (size_t b = 0; b < layers[j].band_w.size(); ++b)
      fn(prefix + "band" + std::to_string(b), layers[j].band_w[b]);
    fn(prefix + "bypass_w", layers[j].bypass_w);
    fn(prefix + "bias", layers[j].bias);
  }
  fn("proj_w", proj_w);
  fn("proj_b", proj_b);
}

std::vector<Tensor*> WnoParams::tensors() {
  std::vector<Tensor*> out;
  for_each_mut([&out](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<const Tensor*> WnoParams::tensors() const {
  std::vector<const Tensor*> out;
  for_each([&out](const std::string&, const Tensor& t) { out.push_back(&t); });
  return out;
}

int64_t WnoParams::count() const {
  int64_t n = 0;
  for_each([&n](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

Vec WnoParams::to_flat() const {
  Vec flat(count());
  int64_t at = 0;
  for_each([&](const std::string&, const Tensor& t) {
    flat.segment(at, t.numel()) = t.data;
    at += t.numel();
  });
  return flat;
}

void WnoParams::from_flat(const Vec& flat) {
  if (flat.size() != count())
    throw ValidationError("wno: flat parameter vector has " + std::to_string(flat.size()) +
                          " entries, model wants " + std::to_string(count()));
  int64_t at = 0;
  for_each_mut([&](const std::string&, Tensor& t) {
    t.data = flat.segment(at, t.numel());
    at += t.numel();
  });
}

WnoParams zeros_like(const WnoParams& params) {
  WnoParams z = params;
  z.for_each_mut([](const std::string&, Tensor& t) { t.data.setZero(); });
  return z;
}

Tensor with_grid_coords(const Tensor& input, int spatial_rank) {
  if (input.rank() != spatial_rank + 2)
    throw ValidationError("wno: expected input shaped [batch, space..., channels], got " +
                          format_shape(input.shape));
  std::vector<int64_t> cshape = input.shape;
  cshape.back() = spatial_rank;
  Tensor coords = Tensor::zeros(cshape);
  const int64_t B = input.shape[0];
  if (spatial_rank == 1) {
    const int64_t n = input.shape[1];
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < n; ++i)
        coords.data[(b * n + i)] = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  } else {
    const int64_t ny = input.shape[1], nx = input.shape[2];
    for (int64_t b = 0; b < B; ++b)
      for (int64_t y = 0; y < ny; ++y)
        for (int64_t x = 0; x < nx; ++x) {
          int64_t at = ((b * ny + y) * nx + x) * 2;
          coords.data[at] = (static_cast<double>(y) + 0.5) / static_cast<double>(ny);
          coords.data[at + 1] = (static_cast<double>(x) + 0.5) / static_cast<double>(nx);
        }
  }
  return ad::ops::concat_last(input, coords);
}

namespace {

struct PlainEngine {
  using V = Tensor;
  V affine_last(const V& x, const V& w, const V& b) { return ad::ops::affine_last(x, w, b); }
  V add(const V& a, const V& b) { return ad::ops::add(a, b); }
  V dwt(const V& x, const WaveletBasis& basis, int levels, int rank) {
    return ad::ops::dwt_packed(x, basis, levels, rank);
  }
  V idwt(const V& x, const WaveletBasis& basis, int levels, int rank) {
    return ad::ops::idwt_packed(x, basis, levels, rank);
  }
  V band_mix(const V& packed, const std::vector<V>& w, const BandLayout& lay) {
    std::vector<const Tensor*> ptrs;
    std::vector<int> map(lay.bands.size(), -1);
    for (size_t i = 0; i < w.size(); ++i) {
      ptrs.push_back(&w[i]);
      map[i] = static_cast<int>(i);
    }
    return ad::ops::band_mix(packed, ptrs, map, lay);
  }
  V activation(const V& x, Activation a) {
    switch (a) {
      case Activation::gelu: return ad::ops::gelu(x);
      case Activation::tanh: return ad::ops::tanh(x);
      case Activation::identity: return x;
    }
    throw ValidationError("invalid activation enum value");
  }
};

struct TapeEngine {
  Tape* tape;
  using V = Var;
  V affine_last(V x, V w, V b) { return ad::affine_last(x, w, b); }
  V add(V a, V b) { return ad::add(a, b); }
  V dwt(V x, const WaveletBasis& basis, int levels, int rank) {
    return ad::dwt_packed(x, basis, levels, rank);
  }
  V idwt(V x, const WaveletBasis& basis, int levels, int rank) {
    return ad::idwt_packed(x, basis, levels, rank);
  }
  V band_mix(V packed, const std::vector<V>& w, const BandLayout& lay) {
    return ad::band_mix(packed, w, lay);
  }
  V activation(V x, Activation a) {
    switch (a) {
      case Activation::gelu: return ad::gelu(x);
      case Activation::tanh: return ad::tanh(x);
      case Activation::identity: return x;
    }
    throw ValidationError("invalid activation enum value");
  }
};

// Shared network body; `params` follows the WnoParams::tensors() order.
template <class E>
typename E::V run_forward(E& eng, typename E::V x, const std::vector<typename E::V>& params,
                          const WnoConfig& cfg, const WaveletBasis& basis, int levels,
                          const BandLayout& lay) {
  size_t next = 0;
  auto take = [&params, &next]() { return params[next++]; };
  auto lift_w = take();
  auto lift_b = take();
  auto v = eng.affine_last(x, lift_w, lift_b);
  for (int j = 0; j < cfg.layers; ++j) {
    std::vector<typename E::V> band_w;
    for (int b = 0; b < cfg.retained_bands(); ++b) band_w.push_back(take());
    auto bypass_w = take();
    auto bias = take();
    auto spec = eng.idwt(
        eng.band_mix(eng.dwt(v, basis, levels, cfg.spatial_rank), band_w, lay), basis, levels,
        cfg.spatial_rank);
    v = eng.activation(eng.add(spec, eng.affine_last(v, bypass_w, bias)), cfg.activation);
  }
  auto proj_w = take();
  auto proj_b = take();
  return eng.affine_last(v, proj_w, proj_b);
}

struct ForwardPlan {
  WaveletBasis basis;
  int levels;
  BandLayout lay;
  Tensor input_with_coords;
};

ForwardPlan plan_forward(const Tensor& input, const WnoConfig& cfg) {
  cfg.validate();
  if (input.rank() != cfg.spatial_rank + 2)
    throw ValidationError("wno: expected input shaped [batch, space..., channels], got " +
                          format_shape(input.shape));
  if (input.shape.back() != cfg.in_channels)
    throw ValidationError("wno: input carries " + std::to_string(input.shape.back()) +
                          " channels, config wants " + std::to_string(cfg.in_channels));
  std::vector<int64_t> extents(input.shape.begin() + 1, input.shape.end() - 1);
  ForwardPlan plan{WaveletBasis::from_name(cfg.basis), transfer_levels(cfg, extents),
                   ad::band_layout(extents, transfer_levels(cfg, extents), cfg.spatial_rank),
                   cfg.with_coords ? with_grid_coords(input, cfg.spatial_rank) : input};
  return plan;
}

}  // namespace

Tensor spectral_conv(const Tensor& v, const std::vector<Tensor>& band_w,
                     const WaveletBasis& basis, int levels) {
  const int rank = v.rank() - 2;
  std::vector<int64_t> extents(v.shape.begin() + 1, v.shape.end() - 1);
  BandLayout lay = ad::band_layout(extents, levels, rank);
  PlainEngine eng;
  return eng.idwt(eng.band_mix(eng.dwt(v, basis, levels, rank), band_w, lay), basis, levels,
                  rank);
}

Tensor wno_forward(const Tensor& input, const WnoParams& params, const WnoConfig& cfg) {
  ForwardPlan plan = plan_forward(input, cfg);
  std::vector<Tensor> ps;
  params.for_each([&ps](const std::string&, const Tensor& t) { ps.push_back(t); });
  PlainEngine eng;
  return run_forward(eng, plan.input_with_coords, ps, cfg, plan.basis, plan.levels, plan.lay);
}

TapedWno wno_forward_taped(Tape& tape, const Tensor& input, const WnoParams& params,
                           const WnoConfig& cfg) {
  ForwardPlan plan = plan_forward(input, cfg);
  TapedWno taped;
  taped.input = tape.leaf(plan.input_with_coords, false);
  params.for_each([&](const std::string&, const Tensor& t) {
    taped.params.push_back(tape.leaf(t, true));
  });
  TapeEngine eng{&tape};
  taped.out = run_forward(eng, taped.input, taped.params, cfg, plan.basis, plan.levels, plan.lay);
  return taped;
}

}  // namespace gpo::wno
