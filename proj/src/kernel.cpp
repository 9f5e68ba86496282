#include "gpo/kernel.hpp"

#include <Eigen/Eigenvalues>

namespace gpo::kernel {

KernelFamily family_from_name(const std::string& name) {
  if (name == "matern52") return KernelFamily::matern52;
  if (name == "rbf") return KernelFamily::rbf;
  throw ValidationError("unknown kernel family '" + name + "' (expected matern52 or rbf)");
}

std::string family_name(KernelFamily f) {
  return f == KernelFamily::matern52 ? "matern52" : "rbf";
}

void KernelHyper::validate() const {
  for (double v : {lengthscale(), process_variance(), noise_variance()})
    if (!std::isfinite(v) || v <= 0.0)
      throw ValidationError("kernel hyperparameters must exponentiate to finite positives");
}

double matern52(double d, const KernelHyper& h) {
  const double u = std::sqrt(5.0) * d / h.lengthscale();
  return h.process_variance() * (1.0 + u + u * u / 3.0) * std::exp(-u);
}

double rbf(double d, const KernelHyper& h) {
  const double s = d / h.lengthscale();
  return h.process_variance() * std::exp(-0.5 * s * s);
}

double kernel_value(KernelFamily f, double d, const KernelHyper& h) {
  if (!(d >= 0.0) || !std::isfinite(d))
    throw NumericalError("kernel evaluated at an invalid distance");
  return f == KernelFamily::matern52 ? matern52(d, h) : rbf(d, h);
}

double kernel_slope_over_d(KernelFamily f, double d, const KernelHyper& h) {
  const double l = h.lengthscale();
  if (f == KernelFamily::matern52) {
    const double u = std::sqrt(5.0) * d / l;
    return -h.process_variance() * (5.0 / (3.0 * l * l)) * (1.0 + u) * std::exp(-u);
  }
  const double s = d / l;
  return -h.process_variance() / (l * l) * std::exp(-0.5 * s * s);
}

double kernel_grad_log_lengthscale(KernelFamily f, double d, const KernelHyper& h) {
  const double l = h.lengthscale();
  if (f == KernelFamily::matern52) {
    const double u = std::sqrt(5.0) * d / l;
    return h.process_variance() * (u * u / 3.0) * (1.0 + u) * std::exp(-u);
  }
  const double s = d / l;
  return rbf(d, h) * s * s;
}

double latent_distance(const Tensor& psi_i, const Tensor& psi_j, const Vec& weights) {
  if (psi_i.shape != psi_j.shape)
    throw ValidationError("latent_distance: fields differ in shape, " +
                          format_shape(psi_i.shape) + " vs " + format_shape(psi_j.shape));
  if (psi_i.rank() < 1)
    throw ValidationError("latent_distance: expected fields shaped [positions..., channels]");
  const int64_t channels = psi_i.shape.back();
  const int64_t positions = channels == 0 ? 0 : psi_i.numel() / channels;
  if (weights.size() != positions)
    throw ValidationError("latent_distance: " + std::to_string(weights.size()) +
                          " weights for " + std::to_string(positions) + " grid positions");
  double acc = 0.0;
  for (int64_t p = 0; p < positions; ++p) {
    double cell = 0.0;
    for (int64_t c = 0; c < channels; ++c) {
      const double diff = psi_i.data[p * channels + c] - psi_j.data[p * channels + c];
      cell += diff * diff;
    }
    acc += weights[p] * cell;
  }
  return std::sqrt(acc);
}

uint64_t cache_fingerprint(const wno::WnoParams& params, const Tensor& inputs) {
  uint64_t h = fnv1a(params.to_flat());
  h = fnv1a(inputs.data, h);
  for (int64_t e : inputs.shape) h = fnv1a(&e, sizeof(e), h);
  return h;
}

LatentCache build_latent_cache(const Tensor& inputs, const wno::WnoParams& params,
                               const wno::WnoConfig& cfg, int block) {
  cfg.validate();
  if (inputs.rank() != cfg.spatial_rank + 2)
    throw ValidationError("latent cache: inputs must be shaped [n, space..., channels], got " +
                          format_shape(inputs.shape));
  LatentCache cache;
  const int64_t n = inputs.shape[0];
  std::vector<int64_t> extents(inputs.shape.begin() + 1, inputs.shape.end() - 1);
  cache.latent_extents = extents;
  cache.latent_channels = cfg.latent_channels;
  int64_t positions = 1;
  for (int64_t e : extents) positions *= e;
  // Uniform cells over the unit domain.
  cache.sqrt_weights = Vec::Constant(positions, 1.0 / std::sqrt(static_cast<double>(positions)));
  cache.features = embed_rows(inputs, params, cfg, extents, cache.sqrt_weights, block);
  (void)n;
  cache.fingerprint = cache_fingerprint(params, inputs);
  return cache;
}

void ensure_fresh(const LatentCache& cache, const wno::WnoParams& params, const Tensor& inputs) {
  if (cache.fingerprint != cache_fingerprint(params, inputs))
    throw ValidationError(
        "stale latent cache: parameters or inputs changed since it was built; "
        "re-run the embedding to rebuild it");
}

Tensor pool_latent(const Tensor& latent, const std::vector<int64_t>& to_extents) {
  const int rank = static_cast<int>(to_extents.size());
  if (latent.rank() != rank + 2)
    throw ValidationError("pool_latent: field " + format_shape(latent.shape) +
                          " does not match target extents " + format_shape(to_extents));
  std::vector<int64_t> from(latent.shape.begin() + 1, latent.shape.end() - 1);
  for (int a = 0; a < rank; ++a)
    if (to_extents[a] < 1 || from[a] % to_extents[a] != 0)
      throw ValidationError("pool_latent: extent " + std::to_string(from[a]) +
                            " is not an integer multiple of " + std::to_string(to_extents[a]));
  const int64_t B = latent.shape[0];
  const int64_t C = latent.shape.back();
  std::vector<int64_t> out_shape = {B};
  out_shape.insert(out_shape.end(), to_extents.begin(), to_extents.end());
  out_shape.push_back(C);
  Tensor out = Tensor::zeros(out_shape);
  if (rank == 1) {
    const int64_t f = from[0] / to_extents[0];
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < to_extents[0]; ++i)
        for (int64_t k = 0; k < f; ++k)
          for (int64_t c = 0; c < C; ++c)
            out.data[(b * to_extents[0] + i) * C + c] +=
                latent.data[(b * from[0] + i * f + k) * C + c] / static_cast<double>(f);
  } else {
    const int64_t fy = from[0] / to_extents[0], fx = from[1] / to_extents[1];
    const double inv = 1.0 / static_cast<double>(fy * fx);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t y = 0; y < to_extents[0]; ++y)
        for (int64_t x = 0; x < to_extents[1]; ++x)
          for (int64_t ky = 0; ky < fy; ++ky)
            for (int64_t kx = 0; kx < fx; ++kx)
              for (int64_t c = 0; c < C; ++c)
                out.data[((b * to_extents[0] + y) * to_extents[1] + x) * C + c] +=
                    latent.data[((b * from[0] + y * fy + ky) * from[1] + x * fx + kx) * C + c] *
                    inv;
  }
  return out;
}

Mat embed_rows(const Tensor& inputs, const wno::WnoParams& params, const wno::WnoConfig& cfg,
               const std::vector<int64_t>& cache_extents, const Vec& cache_sqrt_weights,
               int block) {
  if (block < 1) throw ValidationError("embed_rows: block size must be positive");
  const int64_t n = inputs.shape[0];
  int64_t positions = 1;
  for (int64_t e : cache_extents) positions *= e;
  if (cache_sqrt_weights.size() != positions)
    throw ValidationError("embed_rows: weight count does not match the cache grid");
  const int64_t width = positions * cfg.latent_channels;
  Mat rows(n, width);
  const int64_t in_stride = inputs.tail_size(1);
  for (int64_t at = 0; at < n; at += block) {
    const int64_t b = std::min<int64_t>(block, n - at);
    std::vector<int64_t> shape = inputs.shape;
    shape[0] = b;
    Tensor chunk(shape, inputs.data.segment(at * in_stride, b * in_stride));
    Tensor latent = wno::wno_forward(chunk, params, cfg);
    std::vector<int64_t> lat_extents(latent.shape.begin() + 1, latent.shape.end() - 1);
    if (lat_extents != cache_extents) latent = pool_latent(latent, cache_extents);
    const int64_t C = cfg.latent_channels;
    for (int64_t s = 0; s < b; ++s)
      for (int64_t p = 0; p < positions; ++p)
        for (int64_t c = 0; c < C; ++c)
          rows(at + s, p * C + c) = latent.data[(s * positions + p) * C + c] *
                                    cache_sqrt_weights[p];
  }
  return rows;
}

double row_distance(const Mat& rows_a, int64_t i, const Mat& rows_b, int64_t j) {
  return (rows_a.row(i) - rows_b.row(j)).norm();
}

Mat gram(const std::vector<int>& rows_i, const std::vector<int>& rows_j,
         const LatentCache& cache, const KernelHyper& hyper, KernelFamily family) {
  hyper.validate();
  for (int idx : rows_i)
    if (idx < 0 || idx >= cache.size())
      throw ValidationError("gram: row index " + std::to_string(idx) + " out of range");
  for (int idx : rows_j)
    if (idx < 0 || idx >= cache.size())
      throw ValidationError("gram: column index " + std::to_string(idx) + " out of range");
  Mat k(rows_i.size(), rows_j.size());
  for (size_t a = 0; a < rows_i.size(); ++a)
    for (size_t b = 0; b < rows_j.size(); ++b)
      k(a, b) = kernel_value(
          family, row_distance(cache.features, rows_i[a], cache.features, rows_j[b]), hyper);
  return k;
}

Mat gram_full(const LatentCache& cache, const KernelHyper& hyper, KernelFamily family) {
  hyper.validate();
  const int64_t n = cache.size();
  Mat k(n, n);
  for (int64_t i = 0; i < n; ++i) {
    k(i, i) = kernel_value(family, 0.0, hyper);
    for (int64_t j = 0; j < i; ++j) {
      const double v =
          kernel_value(family, row_distance(cache.features, i, cache.features, j), hyper);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

Mat cross_gram(const Mat& rows_a, const Mat& rows_b, const KernelHyper& hyper,
               KernelFamily family) {
  hyper.validate();
  if (rows_a.cols() != rows_b.cols())
    throw ValidationError("cross_gram: feature widths differ (" +
                          std::to_string(rows_a.cols()) + " vs " +
                          std::to_string(rows_b.cols()) + ")");
  Mat k(rows_a.rows(), rows_b.rows());
  for (int64_t i = 0; i < rows_a.rows(); ++i)
    for (int64_t j = 0; j < rows_b.rows(); ++j)
      k(i, j) = kernel_value(family, row_distance(rows_a, i, rows_b, j), hyper);
  return k;
}

void validate_psd(const Mat& k, double tol_scale) {
  if (k.rows() != k.cols()) throw ValidationError("validate_psd: matrix is not square");
  Eigen::SelfAdjointEigenSolver<Mat> eig(k, Eigen::EigenvaluesOnly);
  const double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig < -tol_scale * k.trace())
    throw NumericalError("gram block is not positive semidefinite: min eigenvalue " +
                         std::to_string(min_eig));
}

}  // namespace gpo::kernel
