#pragma once

#include <string>
#include <vector>

#include "gpo/config.hpp"
#include "gpo/pde_data.hpp"
#include "gpo/posterior.hpp"
#include "gpo/report.hpp"

namespace gpo::pipeline {

using ad::Tensor;

// Affine input normalization fitted on the training inputs (one channel, so
// scalars suffice). Applied before the operator embedding everywhere.
struct Standardizer {
  double mean = 0.0;
  double scale = 1.0;

  static Standardizer fit(const Tensor& inputs);
  Tensor apply(const Tensor& inputs) const;
};

// Cell-center-aligned linear resampling of flattened fields (one per row)
// between arbitrary rank-1 or rank-2 extents; edges clamp.
Mat resample_bilinear(const Mat& fields, const std::vector<int64_t>& from_extents,
                      const std::vector<int64_t>& to_extents);

// Grid the operator runs on for a given raw grid: 1D grids must already
// divide by 2^levels; 2D grids round each axis up to the decomposition
// granularity (training) or to coarsest * 2^k (probes), so band weights
// transfer across resolutions.
std::vector<int64_t> train_embed_extents(const cfg::ExperimentConfig& config,
                                         const std::vector<int64_t>& native);
std::vector<int64_t> probe_embed_extents(const wno::WnoConfig& arch,
                                         const std::vector<int64_t>& native);

// A trained surrogate plus everything needed to reuse it: the experiment
// snapshot, the input normalization, and the training traces.
struct TrainedModel {
  cfg::ExperimentConfig config;
  post::GpoModel model;
  Standardizer input_norm;
  std::vector<double> init_losses;      // one entry per init step
  std::vector<sdd::SddTraceRow> trace;  // descent-phase trace

  // Standardize and resample raw fields onto the operator grid.
  Tensor embed_inputs(const Tensor& raw, bool probe) const;
  Mat predict(const Tensor& raw_inputs, const std::vector<int64_t>& out_extents = {}) const;
  post::SampleSet sample(const Tensor& raw_inputs, int64_t sample_count,
                         uint64_t seed) const;
};

// Two-phase fit: adaptive-moment descent of the exact objective on the
// S_init subset, freeze the operator, build the latent cache, then the
// stochastic dual solve for the representer weights. S_init = train count
// switches the weight solve to the exact Cholesky oracle.
TrainedModel train_model(const cfg::ExperimentConfig& config,
                         const pde::OperatorDataset& train);

struct EvalOptions {
  int64_t samples = 64;   // posterior draws; 0 skips the band pass
  double level = 0.95;
  int64_t superres = 0;   // regenerate the test set at this resolution
  uint64_t seed = 0;      // sampling seed
};

struct EvalReport {
  std::vector<double> per_sample;  // native-grid relative L2 per test sample
  report::Aggregate native;
  bool has_band = false;
  double coverage = 0.0;
  bool has_super = false;
  std::vector<double> per_sample_super;
  report::Aggregate super;
  // Native-grid fields for plotting, one row per test sample.
  Mat truth, pred, lower, upper;
};

EvalReport evaluate_model(const TrainedModel& tm, const pde::OperatorDataset& test,
                          const EvalOptions& opt);

// Model archive: a directory of GPOT tensors plus a flat-text manifest and
// the config echo. Loading verifies a stored probe prediction bitwise.
void save_model(const TrainedModel& tm, const std::string& dir);
TrainedModel load_model(const std::string& dir);

// Repeated train/evaluate over an axis, several seeds per value.
struct SweepResult {
  std::vector<report::SweepRow> rows;   // one per (value, seed)
  std::vector<double> axis_values;
  std::vector<double> medians;          // per axis value, over seeds
};

SweepResult run_sweep(const cfg::ExperimentConfig& base, const std::string& axis,
                      const std::vector<int64_t>& values, int64_t seeds,
                      const pde::OperatorDataset& train,
                      const pde::OperatorDataset& test);

// First n samples of a dataset (the generators make prefixes independent of
// the total count, so this is a genuine sub-experiment).
pde::OperatorDataset head_samples(const pde::OperatorDataset& ds, int64_t n);

}  // namespace gpo::pipeline
