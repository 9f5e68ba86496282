#pragma once

#include <vector>

#include "gpo/kernel.hpp"
#include "gpo/sdd.hpp"

namespace gpo::post {

using ad::Tensor;
using kernel::KernelFamily;
using kernel::KernelHyper;
using kernel::LatentCache;

// A trained operator surrogate, frozen after fitting: embedding weights,
// kernel hyperparameters, the latent cache over the training inputs, and the
// representer weights against the training targets.
struct GpoModel {
  wno::WnoConfig arch;
  wno::WnoParams params;
  KernelFamily family = KernelFamily::matern52;
  KernelHyper hyper;
  LatentCache cache;
  Mat weights;  // representer weights, one row per training sample
  Mat targets;  // training targets, flattened fields as rows
  std::vector<int64_t> target_extents;
  uint64_t config_digest = 0;  // provenance of the training run
  uint64_t train_seed = 0;

  int64_t train_count() const { return cache.size(); }
  int64_t field_size() const;
  void validate() const;
};

// Weighted latent rows for probe inputs, on the training cache grid.
Mat test_rows(const GpoModel& model, const Tensor& inputs);

// Band-limited upsampling of flattened fields (one per row) from one grid to
// a finer one via zero-padded Fourier interpolation, axis by axis.
Mat upsample_fields(const Mat& fields, const std::vector<int64_t>& from_extents,
                    const std::vector<int64_t>& to_extents);

// Predictive mean fields, one row per probe. out_extents requests a finer
// output grid; empty means the native training-target grid. Combining targets
// and upsampling commute (both linear), so the native prediction is upsampled.
Mat predict_mean(const GpoModel& model, const Tensor& inputs,
                 const std::vector<int64_t>& out_extents = {});

// Posterior draws at the probe inputs plus their empirical moments.
struct SampleSet {
  Mat mean;                // empirical mean of the draws, probes x field
  Mat stddev;              // unbiased empirical standard deviation
  std::vector<Mat> draws;  // sample_count fields, probes x field
  int64_t sample_count = 0;
};

// Pathwise conditioning: each draw is a joint prior sample over the training
// and probe latents (one shared Cholesky factor), corrected by the predictive
// mean minus the kernel combination of noisy prior representer weights. The
// correction weights for all draws are obtained in a single stacked stochastic
// solve, so results are deterministic given the seed and independent of how
// callers might batch draws. Per-draw noise comes from split child streams.
// exact_correction swaps the stochastic solve for the Cholesky oracle, the
// sampling analogue of the degenerate exact-weights mode.
SampleSet pathwise_sample(const GpoModel& model, const Tensor& inputs, int64_t sample_count,
                          uint64_t seed, const sdd::SddConfig& solve_cfg,
                          bool exact_correction = false);

struct ConfidenceBand {
  Mat lower;
  Mat upper;
  double level = 0.95;
};

// Gaussian-moment band mean +- z_level * std. Requires at least 30 samples
// for stable moments.
ConfidenceBand confidence_band(const SampleSet& samples, double level = 0.95);

// Standard normal quantile, used for band half-widths.
double normal_quantile(double p);

}  // namespace gpo::post
