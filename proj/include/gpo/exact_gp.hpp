#pragma once

#include "gpo/kernel.hpp"

namespace gpo::gp {

using ad::Tensor;
using kernel::HyperGrads;
using kernel::KernelFamily;
using kernel::KernelHyper;

// Negative log marginal likelihood over weighted latent rows, with gradients
// in row space and log-hyperparameter space. Targets are N x d_u; outputs
// share the kernel and are independent given it.
struct DenseNll {
  double value = 0.0;
  Mat grad_rows;
  HyperGrads hyper;
};

DenseNll nll_dense(const Mat& rows, const Mat& targets, const KernelHyper& hyper,
                   KernelFamily family, bool with_grads = true);

// Same likelihood, differentiated all the way into the operator parameters.
// Latent rows are recomputed per block on a tape, so memory stays bounded by
// the block size rather than the subset size.
struct NllGrads {
  double value = 0.0;
  wno::WnoParams params;  // gradient slots shaped like the model
  HyperGrads hyper;
};

NllGrads nll_with_grads(const Tensor& inputs, const Mat& targets, const wno::WnoParams& params,
                        const wno::WnoConfig& cfg, const KernelHyper& hyper, KernelFamily family,
                        int block = 32);

double jitter_for(const Mat& k);

// Exact representer weights (K + noise I)^{-1} U with the standard jitter;
// the correctness reference for the iterative solver.
Mat cholesky_solve_oracle(const Mat& k, double noise_variance, const Mat& targets);

struct ExactPosterior {
  Mat chol;   // lower-triangular factor of K + noise I (+ jitter)
  Mat alpha;  // (K + noise I)^{-1} targets
};
ExactPosterior exact_posterior(const Mat& k, double noise_variance, const Mat& targets);

struct InitConfig {
  int subset = 500;  // S_init
  int steps = 200;
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t seed = 0;
  int block = 32;
};

struct InitResult {
  wno::WnoParams params;
  KernelHyper hyper;
  std::vector<double> loss_trace;  // one entry per step, plus the final loss
  std::vector<int> subset_indices;
};

// Adaptive-moment descent of the exact NLL on a uniformly sampled subset;
// trains the operator parameters and the kernel hyperparameters jointly.
InitResult init_train(const Tensor& inputs, const Mat& targets, const wno::WnoConfig& cfg,
                      const wno::WnoParams& start_params, const KernelHyper& start_hyper,
                      KernelFamily family, const InitConfig& icfg);

std::vector<int> uniform_subset(int64_t n, int64_t count, Rng& rng);
Tensor gather_samples(const Tensor& inputs, const std::vector<int>& idx);
Mat gather_rows(const Mat& m, const std::vector<int>& idx);

}  // namespace gpo::gp
