#include "gpo/tape.hpp"

namespace gpo::ad {

Var Tape::leaf(Tensor value, bool is_param) {
  ops::check_finite(value, "leaf");
  Node n;
  n.value = std::move(value);
  n.is_param = is_param;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::vector<int> parents,
                 std::function<void(Tape&, const Node&)> pull, const char* op) {
  for (int p : parents)
    if (p < 0 || p >= static_cast<int>(nodes_.size()))
      throw ValidationError(std::string("tape op ") + op + " references a node not on this tape");
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.pull = std::move(pull);
  n.op = op;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::adjoint_mut(int id) {
  Node& n = nodes_[id];
  if (n.adjoint.numel() != n.value.numel()) n.adjoint = Tensor::zeros(n.value.shape);
  return n.adjoint;
}

void Tape::backward(Var seed) {
  if (seed.tape != this) throw ValidationError("backward: seed var belongs to another tape");
  const Node& s = nodes_[seed.id];
  if (!s.value.is_scalar())
    throw ValidationError("backward expects a scalar seed, got shape " +
                          format_shape(s.value.shape));
  reset_adjoints();
  adjoint_mut(seed.id) = Tensor::scalar(1.0);
  run_backward(seed.id);
}

void Tape::backward_seeded(Var node, const Tensor& adj) {
  if (node.tape != this) throw ValidationError("backward_seeded: var belongs to another tape");
  if (!same_shape(nodes_[node.id].value, adj))
    throw ValidationError("backward_seeded: adjoint shape " + format_shape(adj.shape) +
                          " does not match value shape " +
                          format_shape(nodes_[node.id].value.shape));
  reset_adjoints();
  adjoint_mut(node.id) = adj;
  run_backward(node.id);
}

void Tape::run_backward(int seed_id) {
  for (int i = seed_id; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (n.adjoint.numel() == 0) continue;  // no gradient reached this node
    if (n.pull) n.pull(*this, n);
  }
}

void Tape::reset_adjoints() {
  for (Node& n : nodes_) n.adjoint = Tensor();
}

void Tape::clear() { nodes_.clear(); }

namespace {

Tape& tape_of(Var a) {
  if (!a.tape) throw ValidationError("tape op on a default-constructed var");
  return *a.tape;
}

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape)
    throw ValidationError(std::string(op) + ": operands live on different tapes");
}

void accum(Tape& t, int id, const Tensor& g) { t.adjoint_mut(id).data += g.data; }

}  // namespace

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  Tape& t = tape_of(a);
  Tensor v = ops::add(t.value(a), t.value(b));
  return t.record(std::move(v), {a.id, b.id},
                  [](Tape& tp, const Tape::Node& n) {
                    accum(tp, n.parents[0], n.adjoint);
                    accum(tp, n.parents[1], n.adjoint);
                  },
                  "add");
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  Tape& t = tape_of(a);
  Tensor v = ops::sub(t.value(a), t.value(b));
  return t.record(std::move(v), {a.id, b.id},
                  [](Tape& tp, const Tape::Node& n) {
                    accum(tp, n.parents[0], n.adjoint);
                    tp.adjoint_mut(n.parents[1]).data -= n.adjoint.data;
                  },
                  "sub");
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  Tape& t = tape_of(a);
  Tensor v = ops::mul(t.value(a), t.value(b));
  return t.record(std::move(v), {a.id, b.id},
                  [](Tape& tp, const Tape::Node& n) {
                    const Tensor& av = tp.value({&tp, n.parents[0]});
                    const Tensor& bv = tp.value({&tp, n.parents[1]});
                    tp.adjoint_mut(n.parents[0]).data += n.adjoint.data.cwiseProduct(bv.data);
                    tp.adjoint_mut(n.parents[1]).data += n.adjoint.data.cwiseProduct(av.data);
                  },
                  "mul");
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a);
  Tensor v = ops::scale(t.value(a), c);
  return t.record(std::move(v), {a.id},
                  [c](Tape& tp, const Tape::Node& n) {
                    tp.adjoint_mut(n.parents[0]).data += c * n.adjoint.data;
                  },
                  "scale");
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  Tape& t = tape_of(a);
  Tensor v = ops::matmul(t.value(a), t.value(b));
  return t.record(std::move(v), {a.id, b.id},
                  [](Tape& tp, const Tape::Node& n) {
                    const Tensor& av = tp.value({&tp, n.parents[0]});
                    const Tensor& bv = tp.value({&tp, n.parents[1]});
                    tp.adjoint_mut(n.parents[0]).as_matrix() +=
                        n.adjoint.as_matrix() * bv.as_matrix().transpose();
                    tp.adjoint_mut(n.parents[1]).as_matrix() +=
                        av.as_matrix().transpose() * n.adjoint.as_matrix();
                  },
                  "matmul");
}

Var affine_last(Var x, Var w, Var b) {
  require_same_tape(x, w, "affine_last");
  require_same_tape(x, b, "affine_last");
  Tape& t = tape_of(x);
  Tensor v = ops::affine_last(t.value(x), t.value(w), t.value(b));
  return t.record(std::move(v), {x.id, w.id, b.id},
                  [](Tape& tp, const Tape::Node& n) {
                    const Tensor& xv = tp.value({&tp, n.parents[0]});
                    const Tensor& wv = tp.value({&tp, n.parents[1]});
                    auto ga = n.adjoint.as_matrix();
                    tp.adjoint_mut(n.parents[0]).as_matrix() += ga * wv.as_matrix().transpose();
                    tp.adjoint_mut(n.parents[1]).as_matrix() +=
                        xv.as_matrix().transpose() * ga;
                    tp.adjoint_mut(n.parents[2]).data += ga.colwise().sum().transpose();
                  },
                  "affine_last");
}

Var sum_all(Var a) {
  Tape& t = tape_of(a);
  Tensor v = ops::sum_all(t.value(a));
  return t.record(std::move(v), {a.id},
                  [](Tape& tp, const Tape::Node& n) {
                    tp.adjoint_mut(n.parents[0]).data.array() += n.adjoint.value();
                  },
                  "sum_all");
}

Var mean_all(Var a) {
  Tape& t = tape_of(a);
  Tensor v = ops::mean_all(t.value(a));
  int64_t count = t.value(a).numel();
  return t.record(std::move(v), {a.id},
                  [count](Tape& tp, const Tape::Node& n) {
                    tp.adjoint_mut(n.parents[0]).data.array() +=
                        n.adjoint.value() / static_cast<double>(count);
                  },
                  "mean_all");
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  Tensor v = ops::exp(t.value(a));
  return t.record(v, {a.id},
                  [v](Tape& tp, const Tape::Node& n) {
                    tp.adjoint_mut(n.parents[0]).data += n.adjoint.data.cwiseProduct(v.data);
                  },
                  "exp");
}

Var sqrt_guarded(Var a, double eps) {
  Tape& t = tape_of(a);
  Tensor v = ops::sqrt_guarded(t.value(a), eps);
  Tensor in = t.value(a);
  return t.record(v, {a.id},
                  [v, in, eps](Tape& tp, const Tape::Node& n) {
                    Tensor& g = tp.adjoint_mut(n.parents[0]);
                    for (int64_t i = 0; i < v.numel(); ++i)
                      if (in.data[i] > eps) g.data[i] += n.adjoint.data[i] * 0.5 / v.data[i];
                  },
                  "sqrt_guarded");
}

Var gelu(Var a) {
  Tape& t = tape_of(a);
  Tensor v = ops::gelu(t.value(a));
  Tensor in = t.value(a);
  return t.record(std::move(v), {a.id},
                  [in](Tape& tp, const Tape::Node& n) {
                    Tensor& g = tp.adjoint_mut(n.parents[0]);
                    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
                    for (int64_t i = 0; i < in.numel(); ++i) {
                      double x = in.data[i];
                      double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
                      double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
                      g.data[i] += n.adjoint.data[i] * (cdf + x * pdf);
                    }
                  },
                  "gelu");
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Tensor v = ops::tanh(t.value(a));
  return t.record(v, {a.id},
                  [v](Tape& tp, const Tape::Node& n) {
                    tp.adjoint_mut(n.parents[0]).data +=
                        n.adjoint.data.cwiseProduct((1.0 - v.data.array().square()).matrix());
                  },
                  "tanh");
}

Var concat_last(Var a, Var b) {
  require_same_tape(a, b, "concat_last");
  Tape& t = tape_of(a);
  Tensor v = ops::concat_last(t.value(a), t.value(b));
  int64_t ca = t.value(a).shape.back();
  int64_t cb = t.value(b).shape.back();
  return t.record(std::move(v), {a.id, b.id},
                  [ca, cb](Tape& tp, const Tape::Node& n) {
                    auto ga = n.adjoint.as_matrix();
                    tp.adjoint_mut(n.parents[0]).as_matrix() += ga.leftCols(ca);
                    tp.adjoint_mut(n.parents[1]).as_matrix() += ga.rightCols(cb);
                  },
                  "concat_last");
}

Var slice_last(Var a, int64_t begin, int64_t count) {
  Tape& t = tape_of(a);
  Tensor v = ops::slice_last(t.value(a), begin, count);
  return t.record(std::move(v), {a.id},
                  [begin, count](Tape& tp, const Tape::Node& n) {
                    tp.adjoint_mut(n.parents[0]).as_matrix().middleCols(begin, count) +=
                        n.adjoint.as_matrix();
                  },
                  "slice_last");
}

Var dwt_packed(Var x, const WaveletBasis& basis, int levels, int spatial_rank) {
  Tape& t = tape_of(x);
  Tensor v = ops::dwt_packed(t.value(x), basis, levels, spatial_rank);
  return t.record(std::move(v), {x.id},
                  [basis, levels, spatial_rank](Tape& tp, const Tape::Node& n) {
                    // Orthonormal transform: transpose equals inverse.
                    Tensor g = ops::idwt_packed(n.adjoint, basis, levels, spatial_rank);
                    accum(tp, n.parents[0], g);
                  },
                  "dwt_packed");
}

Var idwt_packed(Var x, const WaveletBasis& basis, int levels, int spatial_rank) {
  Tape& t = tape_of(x);
  Tensor v = ops::idwt_packed(t.value(x), basis, levels, spatial_rank);
  return t.record(std::move(v), {x.id},
                  [basis, levels, spatial_rank](Tape& tp, const Tape::Node& n) {
                    Tensor g = ops::dwt_packed(n.adjoint, basis, levels, spatial_rank);
                    accum(tp, n.parents[0], g);
                  },
                  "idwt_packed");
}

Var band_mix(Var packed, const std::vector<Var>& weights, const BandLayout& layout) {
  Tape& t = tape_of(packed);
  if (layout.bands.empty()) throw ValidationError("band_mix: empty band layout");
  std::vector<int> weight_for_band(layout.bands.size(), -1);
  // Weights cover the leading bands (coarsest approx + coarsest details ...);
  // any band beyond the provided weights is dropped.
  if (weights.size() > layout.bands.size())
    throw ValidationError("band_mix: more weights than bands");
  std::vector<const Tensor*> wt(weights.size());
  std::vector<int> parents{packed.id};
  for (size_t i = 0; i < weights.size(); ++i) {
    require_same_tape(packed, weights[i], "band_mix");
    weight_for_band[i] = static_cast<int>(i);
    wt[i] = &t.value(weights[i]);
    parents.push_back(weights[i].id);
  }
  Tensor v = ops::band_mix(t.value(packed), wt, weight_for_band, layout);
  return t.record(std::move(v), std::move(parents),
                  [weight_for_band, layout](Tape& tp, const Tape::Node& n) {
                    size_t n_w = n.parents.size() - 1;
                    std::vector<const Tensor*> wt(n_w);
                    for (size_t i = 0; i < n_w; ++i) wt[i] = &tp.value({&tp, n.parents[i + 1]});
                    Tensor gin =
                        ops::band_mix_adjoint_input(n.adjoint, wt, weight_for_band, layout);
                    accum(tp, n.parents[0], gin);
                    std::vector<Tensor> gw(n_w);
                    for (size_t i = 0; i < n_w; ++i) gw[i] = Tensor::zeros(wt[i]->shape);
                    ops::band_mix_adjoint_weights(n.adjoint, tp.value({&tp, n.parents[0]}),
                                                  weight_for_band, layout, gw);
                    for (size_t i = 0; i < n_w; ++i)
                      tp.adjoint_mut(n.parents[i + 1]).data += gw[i].data;
                  },
                  "band_mix");
}

}  // namespace gpo::ad
