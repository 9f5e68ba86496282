#include "gpo/sdd.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "gpo/exact_gp.hpp"

namespace gpo::sdd {

DenseRows::DenseRows(Mat gram) : gram_(std::move(gram)) {
  if (gram_.rows() != gram_.cols())
    throw ValidationError("dense rows: gram matrix must be square, got " +
                          std::to_string(gram_.rows()) + " x " + std::to_string(gram_.cols()));
}

Mat DenseRows::rows(const std::vector<int>& idx) const {
  Mat out(static_cast<int64_t>(idx.size()), gram_.cols());
  for (size_t b = 0; b < idx.size(); ++b) {
    if (idx[b] < 0 || idx[b] >= gram_.rows())
      throw ValidationError("dense rows: index " + std::to_string(idx[b]) + " out of range");
    out.row(static_cast<int64_t>(b)) = gram_.row(idx[b]);
  }
  return out;
}

CacheRows::CacheRows(const LatentCache& cache, KernelHyper hyper, KernelFamily family)
    : cache_(&cache), hyper_(hyper), family_(family) {
  hyper_.validate();
  if (cache.size() == 0) throw ValidationError("cache rows: latent cache is empty");
}

int64_t CacheRows::size() const { return cache_->size(); }

Mat CacheRows::rows(const std::vector<int>& idx) const {
  const Mat& f = cache_->features;
  const int64_t n = f.rows();
  Mat out(static_cast<int64_t>(idx.size()), n);
  for (size_t b = 0; b < idx.size(); ++b) {
    const int i = idx[b];
    if (i < 0 || i >= n)
      throw ValidationError("cache rows: index " + std::to_string(i) + " out of range");
    for (int64_t j = 0; j < n; ++j)
      out(static_cast<int64_t>(b), j) =
          kernel::kernel_value(family_, kernel::row_distance(f, i, f, j), hyper_);
  }
  return out;
}

void SddConfig::validate() const {
  if (steps < 0) throw ValidationError("sdd config: steps must be >= 0");
  if (batch < 1) throw ValidationError("sdd config: batch size must be >= 1");
  if (!(step_size > 0.0) || !std::isfinite(step_size))
    throw ValidationError("sdd config: step size must be positive and finite");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ValidationError("sdd config: momentum must lie in [0, 1)");
  if (!(averaging > 0.0 && averaging <= 1.0))
    throw ValidationError("sdd config: averaging weight must lie in (0, 1]");
  if (monitor_rows < 1) throw ValidationError("sdd config: monitor rows must be >= 1");
}

namespace {

void check_system(const Mat& a, const Mat& k, const Mat& u) {
  if (k.rows() != k.cols())
    throw ValidationError("sdd: gram matrix must be square");
  if (a.rows() != k.rows() || u.rows() != k.rows() || a.cols() != u.cols())
    throw ValidationError("sdd: weights " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " and targets " + std::to_string(u.rows()) +
                          "x" + std::to_string(u.cols()) + " must both match the " +
                          std::to_string(k.rows()) + "-row gram matrix");
}

}  // namespace

double dual_objective(const Mat& a, const Mat& k, double noise_variance, const Mat& u) {
  check_system(a, k, u);
  Mat ka = k * a + noise_variance * a;
  return 0.5 * a.cwiseProduct(ka).sum() - a.cwiseProduct(u).sum();
}

double primal_loss(const Mat& a, const Mat& k, double noise_variance, const Mat& u) {
  check_system(a, k, u);
  Mat ka = k * a;
  return 0.5 * (u - ka).squaredNorm() + 0.5 * noise_variance * a.cwiseProduct(ka).sum();
}

double sdd_step(SddState& state, const std::vector<int>& batch_idx,
                const KernelRowProvider& rows, const Mat& u, double noise_variance,
                const SddConfig& cfg) {
  const int64_t n = rows.size();
  const int64_t b = static_cast<int64_t>(batch_idx.size());
  if (b == 0) throw ValidationError("sdd step: batch is empty");
  if (state.a.rows() != n || u.rows() != n || state.a.cols() != u.cols())
    throw ValidationError("sdd step: state and targets must match the provider rows");

  // Gradient at the momentum look-ahead point. step_size is the raw step of
  // the update rule here; the per-row coefficient carries the N / B gradient
  // scaling. sdd_solve divides the configured rate by N before calling.
  Mat look = state.a + cfg.momentum * state.v;
  Mat k_batch = rows.rows(batch_idx);
  Mat s = k_batch * look;
  for (int64_t r = 0; r < b; ++r) {
    const int i = batch_idx[static_cast<size_t>(r)];
    s.row(r) += noise_variance * look.row(i) - u.row(i);
  }

  state.v *= cfg.momentum;
  const double coeff = cfg.step_size * static_cast<double>(n) / static_cast<double>(b);
  for (int64_t r = 0; r < b; ++r)
    state.v.row(batch_idx[static_cast<size_t>(r)]) -= coeff * s.row(r);
  state.a += state.v;
  state.abar = cfg.averaging * state.a + (1.0 - cfg.averaging) * state.abar;
  state.step += 1;

  if (!state.a.allFinite() || !state.v.allFinite())
    throw NumericalError("sdd diverged at step " + std::to_string(state.step) +
                         ": iterate is no longer finite; reduce the step size");

  // Norm of the full gradient estimate (N / B) * sum_i e_i s_i^T, with
  // duplicate batch rows accumulated before taking the norm.
  std::vector<int> order(batch_idx.size());
  for (size_t r = 0; r < order.size(); ++r) order[r] = static_cast<int>(r);
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return batch_idx[static_cast<size_t>(x)] < batch_idx[static_cast<size_t>(y)]; });
  double sq = 0.0;
  Vec acc = Vec::Zero(s.cols());
  for (size_t r = 0; r < order.size(); ++r) {
    acc += s.row(order[r]).transpose();
    const bool last = r + 1 == order.size() ||
                      batch_idx[static_cast<size_t>(order[r + 1])] !=
                          batch_idx[static_cast<size_t>(order[r])];
    if (last) {
      sq += acc.squaredNorm();
      acc.setZero();
    }
  }
  return static_cast<double>(n) / static_cast<double>(b) * std::sqrt(sq);
}

SddResult sdd_solve(const KernelRowProvider& rows, const Mat& u, double noise_variance,
                    const SddConfig& cfg) {
  cfg.validate();
  const int64_t n = rows.size();
  if (u.rows() != n)
    throw ValidationError("sdd solve: targets have " + std::to_string(u.rows()) +
                          " rows but the provider serves " + std::to_string(n));
  if (!(noise_variance >= 0.0) || !std::isfinite(noise_variance))
    throw ValidationError("sdd solve: noise variance must be finite and non-negative");

  SddResult result;
  result.state.a = Mat::Zero(n, u.cols());
  result.state.v = Mat::Zero(n, u.cols());
  result.state.abar = Mat::Zero(n, u.cols());
  if (cfg.steps == 0) {
    result.weights = result.state.abar;
    return result;
  }
  if (cfg.batch > n)
    throw ValidationError("sdd solve: batch size " + std::to_string(cfg.batch) +
                          " exceeds the number of rows " + std::to_string(n));

  Rng rng(cfg.seed);
  Rng monitor_rng = rng.split(1);

  // Fixed monitoring subset: the primal loss estimate stays O(M * N) per
  // refresh and is refreshed once per epoch.
  std::vector<int> monitor_idx;
  if (n <= cfg.monitor_rows) {
    monitor_idx.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) monitor_idx[static_cast<size_t>(i)] = static_cast<int>(i);
  } else {
    monitor_idx = gp::uniform_subset(n, cfg.monitor_rows, monitor_rng);
  }
  Mat k_monitor = rows.rows(monitor_idx);
  Mat u_monitor = gp::gather_rows(u, monitor_idx);
  const double scale = static_cast<double>(n) / static_cast<double>(monitor_idx.size());
  auto monitor_loss = [&](const Mat& a) {
    Mat ka = k_monitor * a;
    Mat a_m = gp::gather_rows(a, monitor_idx);
    return scale * (0.5 * (u_monitor - ka).squaredNorm() +
                    0.5 * noise_variance * a_m.cwiseProduct(ka).sum());
  };

  const int64_t epoch = (n + cfg.batch - 1) / cfg.batch;
  const auto start = std::chrono::steady_clock::now();
  std::vector<int> batch_idx(static_cast<size_t>(cfg.batch));
  double last_loss = 0.0;
  result.trace.reserve(static_cast<size_t>(cfg.steps));
  // The configured rate follows the convention that the raw step is rate / N,
  // which keeps usable rates independent of the training-set size.
  SddConfig step_cfg = cfg;
  step_cfg.step_size = cfg.step_size / static_cast<double>(n);
  for (int64_t t = 0; t < cfg.steps; ++t) {
    for (auto& i : batch_idx) i = rng.uniform_int(static_cast<int>(n));
    const double grad_norm =
        sdd_step(result.state, batch_idx, rows, u, noise_variance, step_cfg);
    if (t % epoch == 0) last_loss = monitor_loss(result.state.abar);
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    result.trace.push_back({result.state.step, last_loss, grad_norm, wall_ms});
  }
  result.weights = result.state.abar;
  return result;
}

}  // namespace gpo::sdd
