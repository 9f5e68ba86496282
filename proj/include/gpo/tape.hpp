#pragma once

#include <functional>

#include "gpo/tensor.hpp"
#include "gpo/wavelet.hpp"

namespace gpo::ad {

class Tape;

// Handle to a tape node. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so parents
// always precede children; backward walks the record once in reverse.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor adjoint;  // allocated on demand during backward
    std::vector<int> parents;
    // Pulls this node's adjoint into the parents' adjoints.
    std::function<void(Tape&, const Node&)> pull;
    bool is_param = false;
    const char* op = "leaf";
  };

  Var leaf(Tensor value, bool is_param = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op node; `pull` may be empty for ops with no differentiable
  // parents.
  Var record(Tensor value, std::vector<int> parents,
             std::function<void(Tape&, const Node&)> pull, const char* op);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& adjoint(Var v) const { return nodes_[v.id].adjoint; }
  Tensor& adjoint_mut(int id);

  // Standard reverse pass from a scalar output; visits each node once.
  void backward(Var seed);
  // Reverse pass seeded with an explicit adjoint (used when a vector-valued
  // output feeds a manually differentiated stage downstream).
  void backward_seeded(Var node, const Tensor& adj);

  void reset_adjoints();
  void clear();
  size_t size() const { return nodes_.size(); }

 private:
  void run_backward(int seed_id);
  std::vector<Node> nodes_;
};

// Primitive ops on tape variables. Forward math is shared with gpo::ad::ops.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var matmul(Var a, Var b);
Var affine_last(Var x, Var w, Var b);
Var sum_all(Var a);
Var mean_all(Var a);
Var exp(Var a);
Var sqrt_guarded(Var a, double eps = 1e-12);
Var gelu(Var a);
Var tanh(Var a);
Var concat_last(Var a, Var b);
Var slice_last(Var a, int64_t begin, int64_t count);

// Linear wavelet primitives; backward is the transpose transform.
Var dwt_packed(Var x, const WaveletBasis& basis, int levels, int spatial_rank);
Var idwt_packed(Var x, const WaveletBasis& basis, int levels, int spatial_rank);

// Multiplies selected coefficient bands by per-position channel-mix weights,
// zero-filling bands without weights. `weights[i]` has shape
// [positions(band_i), c, c].
Var band_mix(Var packed, const std::vector<Var>& weights, const BandLayout& layout);

}  // namespace gpo::ad
