#pragma once

#include "gpo/wno.hpp"

namespace gpo::kernel {

using ad::Tensor;

enum class KernelFamily { matern52, rbf };

KernelFamily family_from_name(const std::string& name);
std::string family_name(KernelFamily f);

// Log-space hyperparameters so positivity is structural.
struct KernelHyper {
  double log_lengthscale = 0.0;
  double log_process_variance = 0.0;
  double log_noise_variance = std::log(1e-2);

  double lengthscale() const { return std::exp(log_lengthscale); }
  double process_variance() const { return std::exp(log_process_variance); }
  double noise_variance() const { return std::exp(log_noise_variance); }
  void validate() const;
};

// Per-hyperparameter gradient slots, in the same log coordinates.
struct HyperGrads {
  double log_lengthscale = 0.0;
  double log_process_variance = 0.0;
  double log_noise_variance = 0.0;
};

double matern52(double d, const KernelHyper& h);
double rbf(double d, const KernelHyper& h);
double kernel_value(KernelFamily f, double d, const KernelHyper& h);
// kappa'(d)/d, finite at d = 0 (the analytic limit), used by the distance
// chain rule without a 1/d singularity.
double kernel_slope_over_d(KernelFamily f, double d, const KernelHyper& h);
double kernel_grad_log_lengthscale(KernelFamily f, double d, const KernelHyper& h);

// Discretized function-space distance between two latent fields sampled on
// the same grid: sqrt(sum_p w_p * |psi_i(p) - psi_j(p)|^2) over channels.
double latent_distance(const Tensor& psi_i, const Tensor& psi_j, const Vec& weights);

// Weighted latent rows of the training set. Rows are pre-scaled by
// sqrt(weight) per position, so row distances are plain Euclidean.
struct LatentCache {
  Mat features;                         // N x (positions * channels)
  std::vector<int64_t> latent_extents;  // spatial extents of the latent grid
  int latent_channels = 0;
  Vec sqrt_weights;                     // one entry per grid position
  uint64_t fingerprint = 0;

  int64_t size() const { return features.rows(); }
  int64_t positions() const { return sqrt_weights.size(); }
};

uint64_t cache_fingerprint(const wno::WnoParams& params, const Tensor& inputs);

LatentCache build_latent_cache(const Tensor& inputs, const wno::WnoParams& params,
                               const wno::WnoConfig& cfg, int block = 64);

// Throws if the cache was built from different parameters or inputs.
void ensure_fresh(const LatentCache& cache, const wno::WnoParams& params, const Tensor& inputs);

// Weighted rows for probe inputs. Probes at a finer resolution than the
// cache grid are mean-pooled onto it so distances stay comparable.
Mat embed_rows(const Tensor& inputs, const wno::WnoParams& params, const wno::WnoConfig& cfg,
               const std::vector<int64_t>& cache_extents, const Vec& cache_sqrt_weights,
               int block = 64);

// Mean-pools a latent field [B, sp..., c] onto coarser extents that divide
// the current ones.
Tensor pool_latent(const Tensor& latent, const std::vector<int64_t>& to_extents);

double row_distance(const Mat& rows_a, int64_t i, const Mat& rows_b, int64_t j);

// Gram blocks; every entry goes through the scalar kernel path so results
// are bitwise reproducible against entry-by-entry evaluation.
Mat gram(const std::vector<int>& rows_i, const std::vector<int>& rows_j,
         const LatentCache& cache, const KernelHyper& hyper, KernelFamily family);
Mat gram_full(const LatentCache& cache, const KernelHyper& hyper, KernelFamily family);
Mat cross_gram(const Mat& rows_a, const Mat& rows_b, const KernelHyper& hyper,
               KernelFamily family);

// Throws NumericalError when the smallest eigenvalue drops below
// -tol_scale * trace(K).
void validate_psd(const Mat& k, double tol_scale = 1e-8);

}  // namespace gpo::kernel
