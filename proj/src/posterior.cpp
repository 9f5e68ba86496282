#include "gpo/posterior.hpp"

#include <cmath>
#include <complex>
#include <unsupported/Eigen/FFT>

#include "gpo/exact_gp.hpp"

namespace gpo::post {

int64_t GpoModel::field_size() const {
  int64_t d = 1;
  for (int64_t e : target_extents) d *= e;
  return d;
}

void GpoModel::validate() const {
  arch.validate();
  hyper.validate();
  if (cache.size() < 1) throw ValidationError("model: latent cache is empty");
  if (target_extents.size() != static_cast<size_t>(arch.spatial_rank))
    throw ValidationError("model: target grid rank must match the spatial rank");
  for (int64_t e : target_extents)
    if (e < 1) throw ValidationError("model: target extents must be positive");
  const int64_t d = field_size();
  if (weights.rows() != cache.size() || targets.rows() != cache.size())
    throw ValidationError("model: weights and targets need one row per cached training sample");
  if (weights.cols() != d || targets.cols() != d)
    throw ValidationError("model: weights and targets must have " + std::to_string(d) +
                          " columns for the target grid");
}

Mat test_rows(const GpoModel& model, const Tensor& inputs) {
  return kernel::embed_rows(inputs, model.params, model.arch, model.cache.latent_extents,
                            model.cache.sqrt_weights);
}

namespace {

// Zero-padded spectral interpolation of one real sequence to length np >= n.
std::vector<double> upsample_line(const std::vector<double>& x, int64_t np) {
  const int64_t n = static_cast<int64_t>(x.size());
  if (np == n) return x;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, x);

  std::vector<std::complex<double>> pad(static_cast<size_t>(np), {0.0, 0.0});
  const double scale = static_cast<double>(np) / static_cast<double>(n);
  pad[0] = scale * spec[0];
  const int64_t half = n / 2;
  for (int64_t k = 1; k < (n + 1) / 2; ++k) {
    pad[static_cast<size_t>(k)] = scale * spec[static_cast<size_t>(k)];
    pad[static_cast<size_t>(np - k)] = scale * spec[static_cast<size_t>(n - k)];
  }
  if (n % 2 == 0) {
    // Split the Nyquist bin to keep the padded spectrum Hermitian.
    pad[static_cast<size_t>(half)] = 0.5 * scale * spec[static_cast<size_t>(half)];
    pad[static_cast<size_t>(np - half)] = std::conj(pad[static_cast<size_t>(half)]);
  }

  std::vector<double> out;
  fft.inv(out, pad);
  return out;
}

}  // namespace

Mat upsample_fields(const Mat& fields, const std::vector<int64_t>& from_extents,
                    const std::vector<int64_t>& to_extents) {
  if (from_extents.size() != to_extents.size() || from_extents.empty() ||
      from_extents.size() > 2)
    throw ValidationError("upsample: grids must share a rank of 1 or 2");
  int64_t from_size = 1;
  for (size_t a = 0; a < from_extents.size(); ++a) {
    if (to_extents[a] < from_extents[a])
      throw ValidationError("upsample: output grid must be at least as fine as the input grid");
    from_size *= from_extents[a];
  }
  if (fields.cols() != from_size)
    throw ValidationError("upsample: fields have " + std::to_string(fields.cols()) +
                          " values per row, expected " + std::to_string(from_size));
  if (from_extents == to_extents) return fields;

  if (from_extents.size() == 1) {
    const int64_t n = from_extents[0], np = to_extents[0];
    Mat out(fields.rows(), np);
    std::vector<double> line(static_cast<size_t>(n));
    for (int64_t r = 0; r < fields.rows(); ++r) {
      for (int64_t i = 0; i < n; ++i) line[static_cast<size_t>(i)] = fields(r, i);
      std::vector<double> up = upsample_line(line, np);
      for (int64_t i = 0; i < np; ++i) out(r, i) = up[static_cast<size_t>(i)];
    }
    return out;
  }

  // Rank 2, row-major [e0, e1]: interpolate the fast axis, then the slow axis.
  const int64_t n0 = from_extents[0], n1 = from_extents[1];
  const int64_t p0 = to_extents[0], p1 = to_extents[1];
  Mat out(fields.rows(), p0 * p1);
  std::vector<double> row(static_cast<size_t>(n1)), col(static_cast<size_t>(n0));
  Mat stage(n0, p1);
  for (int64_t r = 0; r < fields.rows(); ++r) {
    for (int64_t i = 0; i < n0; ++i) {
      for (int64_t j = 0; j < n1; ++j) row[static_cast<size_t>(j)] = fields(r, i * n1 + j);
      std::vector<double> up = upsample_line(row, p1);
      for (int64_t j = 0; j < p1; ++j) stage(i, j) = up[static_cast<size_t>(j)];
    }
    for (int64_t j = 0; j < p1; ++j) {
      for (int64_t i = 0; i < n0; ++i) col[static_cast<size_t>(i)] = stage(i, j);
      std::vector<double> up = upsample_line(col, p0);
      for (int64_t i = 0; i < p0; ++i) out(r, i * p1 + j) = up[static_cast<size_t>(i)];
    }
  }
  return out;
}

Mat predict_mean(const GpoModel& model, const Tensor& inputs,
                 const std::vector<int64_t>& out_extents) {
  model.validate();
  Mat rows = test_rows(model, inputs);
  Mat kstar = kernel::cross_gram(rows, model.cache.features, model.hyper, model.family);
  Mat mean = kstar * model.weights;
  if (out_extents.empty() || out_extents == model.target_extents) return mean;
  return upsample_fields(mean, model.target_extents, out_extents);
}

SampleSet pathwise_sample(const GpoModel& model, const Tensor& inputs, int64_t sample_count,
                          uint64_t seed, const sdd::SddConfig& solve_cfg,
                          bool exact_correction) {
  model.validate();
  if (sample_count < 1)
    throw ValidationError("pathwise sampling needs at least one sample, got " +
                          std::to_string(sample_count));

  Mat probe = test_rows(model, inputs);
  const int64_t n = model.train_count();
  const int64_t m = probe.rows();
  const int64_t d = model.field_size();
  const int64_t s_total = sample_count * d;

  // Joint prior covariance over training and probe latents; one factorization
  // is shared by every draw.
  Mat joint(n + m, probe.cols());
  joint.topRows(n) = model.cache.features;
  joint.bottomRows(m) = probe;
  Mat g = kernel::cross_gram(joint, joint, model.hyper, model.family);
  Mat k_train = g.topLeftCorner(n, n);
  g.diagonal().array() += gp::jitter_for(g);
  Eigen::LLT<Mat> llt(g);
  if (llt.info() != Eigen::Success)
    throw NumericalError(
        "pathwise sampling: joint prior covariance failed to factorize; increase the jitter "
        "scale");
  Mat chol = llt.matrixL();

  // Every draw owns a split noise stream: the joint field normals first, then
  // the observation noise, so draws do not depend on sample_count.
  Rng root(seed);
  const double noise_sd = std::sqrt(model.hyper.noise_variance());
  Mat xi(n + m, s_total);
  Mat eps(n, s_total);
  for (int64_t s = 0; s < sample_count; ++s) {
    Rng draw = root.split(static_cast<uint64_t>(s));
    for (int64_t i = 0; i < n + m; ++i)
      for (int64_t j = 0; j < d; ++j) xi(i, s * d + j) = draw.normal();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j) eps(i, s * d + j) = noise_sd * draw.normal();
  }

  Mat field = chol * xi;
  Mat rhs = field.topRows(n) + eps;

  // Representer weights for every draw in one stacked solve; the solver seed
  // is derived from the sampling seed, overriding solve_cfg.seed.
  Mat beta;
  if (exact_correction) {
    beta = gp::cholesky_solve_oracle(k_train, model.hyper.noise_variance(), rhs);
  } else {
    sdd::SddConfig scfg = solve_cfg;
    scfg.seed = seed ^ 0x9e3779b97f4a7c15ULL;
    sdd::DenseRows rows(k_train);
    beta = sdd::sdd_solve(rows, rhs, model.hyper.noise_variance(), scfg).weights;
  }

  Mat kstar = kernel::cross_gram(probe, model.cache.features, model.hyper, model.family);
  Mat mean_pred = kstar * model.weights;
  Mat correction = kstar * beta;

  SampleSet out;
  out.sample_count = sample_count;
  out.draws.reserve(static_cast<size_t>(sample_count));
  out.mean = Mat::Zero(m, d);
  for (int64_t s = 0; s < sample_count; ++s) {
    Mat draw =
        field.bottomRows(m).middleCols(s * d, d) + mean_pred - correction.middleCols(s * d, d);
    out.mean += draw;
    out.draws.push_back(std::move(draw));
  }
  out.mean /= static_cast<double>(sample_count);

  out.stddev = Mat::Zero(m, d);
  if (sample_count > 1) {
    for (const Mat& draw : out.draws) out.stddev += (draw - out.mean).cwiseAbs2();
    out.stddev = (out.stddev / static_cast<double>(sample_count - 1)).cwiseSqrt();
  }
  return out;
}

ConfidenceBand confidence_band(const SampleSet& samples, double level) {
  if (samples.sample_count < 30)
    throw ValidationError("confidence band needs at least 30 samples, got " +
                          std::to_string(samples.sample_count));
  if (!(level > 0.0 && level < 1.0))
    throw ValidationError("confidence band: level must lie in (0, 1)");
  const double z = normal_quantile(0.5 * (1.0 + level));
  ConfidenceBand band;
  band.level = level;
  band.lower = samples.mean - z * samples.stddev;
  band.upper = samples.mean + z * samples.stddev;
  return band;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw ValidationError("normal quantile: probability must lie in (0, 1)");
  // Newton iteration on the CDF; quadratic convergence from the origin for
  // the moderate probabilities used by confidence bands.
  double x = 0.0;
  for (int iter = 0; iter < 100; ++iter) {
    const double cdf = 0.5 * std::erfc(-x * M_SQRT1_2);
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    const double step = (cdf - p) / pdf;
    x -= step;
    if (std::abs(step) < 1e-14) break;
  }
  return x;
}

}  // namespace gpo::post
