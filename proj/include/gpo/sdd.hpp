#pragma once

#include <memory>
#include <vector>

#include "gpo/kernel.hpp"

namespace gpo::sdd {

using kernel::KernelFamily;
using kernel::KernelHyper;
using kernel::LatentCache;

// Serves rows of the training Gram matrix K (without the noise diagonal).
struct KernelRowProvider {
  virtual ~KernelRowProvider() = default;
  virtual int64_t size() const = 0;
  // Returns the stacked rows K[idx, :], one per index, in order. Indices may repeat.
  virtual Mat rows(const std::vector<int>& idx) const = 0;
};

// Rows of a precomputed dense Gram matrix. Preferred at desk scale: the Gram
// is built once after the embedding is frozen and every step is a pure GEMM.
class DenseRows final : public KernelRowProvider {
 public:
  explicit DenseRows(Mat gram);
  int64_t size() const override { return gram_.rows(); }
  Mat rows(const std::vector<int>& idx) const override;
  const Mat& gram() const { return gram_; }

 private:
  Mat gram_;
};

// Rows evaluated on demand from cached latent features. Trades GEMM throughput
// for O(B * N) memory per step; used when the dense Gram does not fit.
class CacheRows final : public KernelRowProvider {
 public:
  CacheRows(const LatentCache& cache, KernelHyper hyper, KernelFamily family);
  int64_t size() const override;
  Mat rows(const std::vector<int>& idx) const override;

 private:
  const LatentCache* cache_;
  KernelHyper hyper_;
  KernelFamily family_;
};

struct SddConfig {
  int64_t steps = 1000;      // total stochastic steps T; 0 is the degenerate no-op solve
  int64_t batch = 32;        // minibatch size B, sampled with replacement
  double step_size = 0.1;    // rate; sdd_solve uses the raw step rate / N
  double momentum = 0.9;     // rho
  double averaging = 0.9;    // r, weight of the newest iterate in the geometric average
  uint64_t seed = 0;
  int64_t monitor_rows = 256;  // loss-trace subset cap; full data when N is smaller

  void validate() const;
};

// Iterates of the dual ascent. The averaged iterate abar is what the solver returns.
struct SddState {
  Mat a;     // current dual weights, N x d
  Mat v;     // velocity, N x d
  Mat abar;  // geometric average of the iterates, N x d
  int64_t step = 0;
};

struct SddTraceRow {
  int64_t step = 0;
  double primal_loss = 0.0;  // refreshed once per epoch on the monitoring subset
  double grad_norm = 0.0;    // Frobenius norm of the minibatch gradient estimate
  double wall_ms = 0.0;      // cumulative wall-clock time
};

struct SddResult {
  Mat weights;  // averaged iterate abar after the final step
  SddState state;
  std::vector<SddTraceRow> trace;  // one row per step
};

// Dual objective 0.5 * tr(A^T (K + noise I) A) - tr(A^T U). Minimized by the
// exact solution A = (K + noise I)^{-1} U; its gradient is the fit residual.
double dual_objective(const Mat& a, const Mat& k, double noise_variance, const Mat& u);

// Primal loss 0.5 * |U - K A|_F^2 + (noise / 2) * tr(A^T K A); the quantity
// whose trace the solver reports.
double primal_loss(const Mat& a, const Mat& k, double noise_variance, const Mat& u);

// One update: gradient on the sampled rows at the momentum look-ahead point,
// velocity and iterate updates, then the geometric average. cfg.step_size is
// applied raw here: with batch == N, momentum 0, averaging 1 this is plain
// gradient descent on the dual, stable for step < 2 / (lambda_max + noise).
// Returns the Frobenius norm of the minibatch gradient estimate. Throws
// NumericalError when an iterate stops being finite.
double sdd_step(SddState& state, const std::vector<int>& batch_idx,
                const KernelRowProvider& rows, const Mat& u, double noise_variance,
                const SddConfig& cfg);

// Runs cfg.steps updates with minibatches sampled with replacement and returns
// the averaged iterate. The configured rate is divided by N to form the raw
// step, so usable rates do not depend on the training-set size. steps == 0
// returns zero weights. Deterministic given cfg.seed.
SddResult sdd_solve(const KernelRowProvider& rows, const Mat& u, double noise_variance,
                    const SddConfig& cfg);

}  // namespace gpo::sdd
