#include "gpo/exact_gp.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <limits>

namespace gpo::gp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void validate_training_set(const Mat& rows_or_inputs_count, const Mat& targets) {
  if (rows_or_inputs_count.rows() != targets.rows())
    throw ValidationError("likelihood: " + std::to_string(rows_or_inputs_count.rows()) +
                          " inputs vs " + std::to_string(targets.rows()) + " target rows");
  if (targets.rows() < 1) throw ValidationError("likelihood: empty training set");
}

}  // namespace

double jitter_for(const Mat& k) {
  return 1e-8 * std::abs(k.trace()) / static_cast<double>(k.rows());
}

DenseNll nll_dense(const Mat& rows, const Mat& targets, const KernelHyper& hyper,
                   KernelFamily family, bool with_grads) {
  hyper.validate();
  validate_training_set(rows, targets);
  const int64_t n = rows.rows();
  const int64_t d_u = targets.cols();

  Mat dist(n, n);
  for (int64_t i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (int64_t j = 0; j < i; ++j) {
      const double d = kernel::row_distance(rows, i, rows, j);
      dist(i, j) = d;
      dist(j, i) = d;
    }
  }
  Mat k(n, n);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) k(i, j) = kernel::kernel_value(family, dist(i, j), hyper);

  Mat m = k;
  m.diagonal().array() += hyper.noise_variance() + jitter_for(k);
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success)
    throw NumericalError(
        "likelihood: Cholesky of K + noise failed; increase jitter or the noise floor");
  const Mat a = llt.solve(targets);
  double logdet = 0.0;
  for (int64_t i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixLLT()(i, i));

  DenseNll out;
  out.value = 0.5 * (targets.array() * a.array()).sum() +
              0.5 * static_cast<double>(d_u) * logdet +
              0.5 * static_cast<double>(n * d_u) * kLog2Pi;
  if (!with_grads) return out;

  Mat minv = llt.solve(Mat::Identity(n, n));
  minv = 0.5 * (minv + minv.transpose()).eval();
  const Mat omega = 0.5 * (static_cast<double>(d_u) * minv - a * a.transpose());

  out.hyper.log_process_variance = (omega.array() * k.array()).sum();
  out.hyper.log_noise_variance = omega.trace() * hyper.noise_variance();
  double g_l = 0.0;
  Mat c(n, n);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      g_l += omega(i, j) * kernel::kernel_grad_log_lengthscale(family, dist(i, j), hyper);
      c(i, j) = 2.0 * omega(i, j) * kernel::kernel_slope_over_d(family, dist(i, j), hyper);
    }
  out.hyper.log_lengthscale = g_l;
  out.grad_rows = c.rowwise().sum().asDiagonal() * rows - c * rows;
  return out;
}

NllGrads nll_with_grads(const Tensor& inputs, const Mat& targets, const wno::WnoParams& params,
                        const wno::WnoConfig& cfg, const KernelHyper& hyper, KernelFamily family,
                        int block) {
  cfg.validate();
  if (block < 1) throw ValidationError("likelihood: block size must be positive");
  const int64_t n = inputs.shape[0];
  if (n != targets.rows())
    throw ValidationError("likelihood: " + std::to_string(n) + " inputs vs " +
                          std::to_string(targets.rows()) + " target rows");
  std::vector<int64_t> extents(inputs.shape.begin() + 1, inputs.shape.end() - 1);
  int64_t positions = 1;
  for (int64_t e : extents) positions *= e;
  const Vec sqrt_w =
      Vec::Constant(positions, 1.0 / std::sqrt(static_cast<double>(positions)));

  const Mat rows = kernel::embed_rows(inputs, params, cfg, extents, sqrt_w, block);
  DenseNll dense = nll_dense(rows, targets, hyper, family, true);

  NllGrads out;
  out.value = dense.value;
  out.hyper = dense.hyper;
  out.params = wno::zeros_like(params);
  std::vector<ad::Tensor*> grad_slots = out.params.tensors();

  const int64_t c_lat = cfg.latent_channels;
  const int64_t in_stride = inputs.tail_size(1);
  for (int64_t at = 0; at < n; at += block) {
    const int64_t b = std::min<int64_t>(block, n - at);
    std::vector<int64_t> shape = inputs.shape;
    shape[0] = b;
    Tensor chunk(shape, inputs.data.segment(at * in_stride, b * in_stride));

    ad::Tape tape;
    wno::TapedWno taped = wno::wno_forward_taped(tape, chunk, params, cfg);
    Tensor seed = Tensor::zeros(tape.value(taped.out).shape);
    for (int64_t s = 0; s < b; ++s)
      for (int64_t p = 0; p < positions; ++p)
        for (int64_t c = 0; c < c_lat; ++c)
          seed.data[(s * positions + p) * c_lat + c] =
              dense.grad_rows(at + s, p * c_lat + c) * sqrt_w[p];
    tape.backward_seeded(taped.out, seed);
    for (size_t t = 0; t < grad_slots.size(); ++t) {
      const Tensor& adj = tape.adjoint(taped.params[t]);
      if (adj.numel() > 0) grad_slots[t]->data += adj.data;
    }
  }
  return out;
}

Mat cholesky_solve_oracle(const Mat& k, double noise_variance, const Mat& targets) {
  if (k.rows() != k.cols()) throw ValidationError("solve: kernel matrix is not square");
  if (k.rows() != targets.rows())
    throw ValidationError("solve: " + std::to_string(k.rows()) + " kernel rows vs " +
                          std::to_string(targets.rows()) + " target rows");
  if ((k - k.transpose()).cwiseAbs().maxCoeff() >
      1e-10 * std::max(1.0, k.cwiseAbs().maxCoeff()))
    throw ValidationError("solve: kernel matrix is not symmetric");
  if (noise_variance < 0.0) throw ValidationError("solve: negative noise variance");
  Mat m = k;
  m.diagonal().array() += noise_variance;
  Mat regularized = m;
  regularized.diagonal().array() += jitter_for(k);
  Eigen::LLT<Mat> llt(regularized);
  if (llt.info() != Eigen::Success)
    throw NumericalError(
        "solve: matrix is not positive definite even after jitter; increase the jitter scale "
        "or the noise variance");
  // Refine against the unjittered system so the returned weights satisfy it
  // to solver precision, not just to jitter precision.
  Mat alpha = llt.solve(targets);
  for (int pass = 0; pass < 2; ++pass) alpha += llt.solve(targets - m * alpha);
  return alpha;
}

ExactPosterior exact_posterior(const Mat& k, double noise_variance, const Mat& targets) {
  Mat m = k;
  m.diagonal().array() += noise_variance + jitter_for(k);
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success)
    throw NumericalError("posterior factorization failed; increase jitter or noise");
  ExactPosterior post;
  post.chol = llt.matrixL();
  post.alpha = llt.solve(targets);
  return post;
}

std::vector<int> uniform_subset(int64_t n, int64_t count, Rng& rng) {
  if (count < 1) throw ValidationError("subset size must be at least 1");
  if (count > n)
    throw ValidationError("subset of " + std::to_string(count) + " from " + std::to_string(n) +
                          " samples");
  std::vector<int> idx(n);
  for (int64_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  for (int64_t i = 0; i < count; ++i) {
    const int64_t j = i + rng.uniform_int(static_cast<int>(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Tensor gather_samples(const Tensor& inputs, const std::vector<int>& idx) {
  const int64_t stride = inputs.tail_size(1);
  std::vector<int64_t> shape = inputs.shape;
  shape[0] = static_cast<int64_t>(idx.size());
  Tensor out = Tensor::zeros(shape);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= inputs.shape[0])
      throw ValidationError("sample index " + std::to_string(idx[i]) + " out of range");
    out.data.segment(i * stride, stride) = inputs.data.segment(idx[i] * stride, stride);
  }
  return out;
}

Mat gather_rows(const Mat& m, const std::vector<int>& idx) {
  Mat out(idx.size(), m.cols());
  for (size_t i = 0; i < idx.size(); ++i) out.row(i) = m.row(idx[i]);
  return out;
}

InitResult init_train(const Tensor& inputs, const Mat& targets, const wno::WnoConfig& cfg,
                      const wno::WnoParams& start_params, const KernelHyper& start_hyper,
                      KernelFamily family, const InitConfig& icfg) {
  cfg.validate();
  start_hyper.validate();
  if (icfg.steps < 1) throw ValidationError("init: step count must be positive");
  const int64_t n = inputs.shape[0];
  Rng rng(icfg.seed);
  InitResult res;
  res.subset_indices = uniform_subset(n, icfg.subset, rng);
  const Tensor sub_inputs = gather_samples(inputs, res.subset_indices);
  const Mat sub_targets = gather_rows(targets, res.subset_indices);

  res.params = start_params;
  res.hyper = start_hyper;
  const int64_t n_params = res.params.count();
  Vec theta(n_params + 3);
  theta.head(n_params) = res.params.to_flat();
  theta[n_params] = res.hyper.log_lengthscale;
  theta[n_params + 1] = res.hyper.log_process_variance;
  theta[n_params + 2] = res.hyper.log_noise_variance;

  Vec m = Vec::Zero(theta.size());
  Vec v = Vec::Zero(theta.size());
  double last_finite = std::numeric_limits<double>::quiet_NaN();
  for (int step = 1; step <= icfg.steps; ++step) {
    res.params.from_flat(theta.head(n_params));
    res.hyper.log_lengthscale = theta[n_params];
    res.hyper.log_process_variance = theta[n_params + 1];
    res.hyper.log_noise_variance = theta[n_params + 2];

    NllGrads ng;
    try {
      ng = nll_with_grads(sub_inputs, sub_targets, res.params, cfg, res.hyper, family,
                          icfg.block);
    } catch (const NumericalError& err) {
      throw NumericalError("init diverged at step " + std::to_string(step) +
                           " (last finite loss " + std::to_string(last_finite) +
                           "): " + err.what());
    } catch (const ValidationError& err) {
      // Step 1 sees genuine setup mistakes; later steps only get here when
      // the iterates ran away (e.g. hyperparameters overflowed).
      if (step == 1) throw;
      throw NumericalError("init diverged at step " + std::to_string(step) +
                           " (last finite loss " + std::to_string(last_finite) +
                           "): " + err.what());
    }
    if (!std::isfinite(ng.value))
      throw NumericalError("init diverged at step " + std::to_string(step) +
                           " (last finite loss " + std::to_string(last_finite) + ")");
    last_finite = ng.value;
    res.loss_trace.push_back(ng.value);

    Vec g(theta.size());
    g.head(n_params) = ng.params.to_flat();
    g[n_params] = ng.hyper.log_lengthscale;
    g[n_params + 1] = ng.hyper.log_process_variance;
    g[n_params + 2] = ng.hyper.log_noise_variance;

    m = icfg.beta1 * m + (1.0 - icfg.beta1) * g;
    v = icfg.beta2 * v + (1.0 - icfg.beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(icfg.beta1, step);
    const double bc2 = 1.0 - std::pow(icfg.beta2, step);
    theta -= (icfg.step_size / bc1) *
             (m.array() / ((v / bc2).array().sqrt() + icfg.eps)).matrix();
  }
  res.params.from_flat(theta.head(n_params));
  res.hyper.log_lengthscale = theta[n_params];
  res.hyper.log_process_variance = theta[n_params + 1];
  res.hyper.log_noise_variance = theta[n_params + 2];

  // Final loss after the last update, for the trace consumers.
  std::vector<int64_t> extents(sub_inputs.shape.begin() + 1, sub_inputs.shape.end() - 1);
  int64_t positions = 1;
  for (int64_t e : extents) positions *= e;
  const Vec sqrt_w =
      Vec::Constant(positions, 1.0 / std::sqrt(static_cast<double>(positions)));
  const Mat rows = kernel::embed_rows(sub_inputs, res.params, cfg, extents, sqrt_w, icfg.block);
  res.loss_trace.push_back(nll_dense(rows, sub_targets, res.hyper, family, false).value);
  return res;
}

}  // namespace gpo::gp
