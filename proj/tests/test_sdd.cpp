#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numeric>

#include "gpo/exact_gp.hpp"
#include "gpo/sdd.hpp"
#include "helpers.hpp"

using namespace gpo;
using namespace gpo::sdd;
using gpo::kernel::KernelFamily;
using gpo::kernel::KernelHyper;

namespace {

Mat random_psd(int n, Rng& rng) {
  Mat a(n, n);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  return a * a.transpose() / static_cast<double>(n) + 0.1 * Mat::Identity(n, n);
}

Mat random_mat(int64_t rows, int64_t cols, Rng& rng) {
  Mat m(rows, cols);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

KernelHyper fixture_hyper() {
  KernelHyper h;
  h.log_lengthscale = std::log(0.4);
  h.log_process_variance = 0.0;
  h.log_noise_variance = std::log(1e-2);
  return h;
}

// Matern Gram over random latent-like feature rows, as left by a frozen embedding.
Mat fixture_gram(int64_t n, int64_t dim, Rng& rng, const KernelHyper& h) {
  Mat feats(n, dim);
  for (int i = 0; i < feats.size(); ++i) feats.data()[i] = rng.uniform(0.0, 1.0);
  return kernel::cross_gram(feats, feats, h, KernelFamily::matern52);
}

}  // namespace

TEST_CASE("config validation rejects out-of-range fields") {
  SddConfig good;
  CHECK_NOTHROW(good.validate());

  SddConfig c = good;
  c.steps = -1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = good;
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = good;
  c.step_size = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = good;
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = good;
  c.momentum = -0.1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = good;
  c.averaging = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = good;
  c.averaging = 1.5;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("dual objective closed forms") {
  Rng rng(11);
  Mat u = random_mat(5, 2, rng);
  Mat eye = Mat::Identity(5, 5);
  Mat zero = Mat::Zero(5, 2);

  CHECK(dual_objective(zero, eye, 0.0, u) == 0.0);

  // With K = I and no noise the objective is 0.5|A|^2 - tr(A^T U), minimized
  // at A = U with value -0.5|U|^2.
  const double at_min = dual_objective(u, eye, 0.0, u);
  CHECK(at_min == doctest::Approx(-0.5 * u.squaredNorm()).epsilon(1e-12));
  for (int trial = 0; trial < 4; ++trial) {
    Mat other = u + 0.3 * random_mat(5, 2, rng);
    CHECK(dual_objective(other, eye, 0.0, u) > at_min);
  }

  Mat bad = Mat::Zero(4, 2);
  CHECK_THROWS_AS(dual_objective(bad, eye, 0.0, u), ValidationError);
}

TEST_CASE("primal loss closed forms") {
  Rng rng(13);
  Mat u = random_mat(6, 3, rng);
  Mat zero_a = Mat::Zero(6, 3);
  Mat eye = Mat::Identity(6, 6);

  CHECK(primal_loss(zero_a, eye, 0.5, u) == doctest::Approx(0.5 * u.squaredNorm()));

  // Degenerate kernel: the K-norm term vanishes for any weights.
  Mat any_a = random_mat(6, 3, rng);
  CHECK(primal_loss(any_a, Mat::Zero(6, 6), 0.5, u) ==
        doctest::Approx(0.5 * u.squaredNorm()));
}

TEST_CASE("full-batch step on the identity system converges in one step") {
  Rng rng(17);
  const int n = 6;
  Mat u = random_mat(n, 2, rng);
  DenseRows rows(Mat::Identity(n, n));

  SddConfig cfg;
  cfg.batch = n;
  cfg.step_size = 1.0;
  cfg.momentum = 0.0;
  cfg.averaging = 1.0;

  SddState st;
  st.a = Mat::Zero(n, 2);
  st.v = Mat::Zero(n, 2);
  st.abar = Mat::Zero(n, 2);

  std::vector<int> batch(n);
  std::iota(batch.begin(), batch.end(), 0);
  sdd_step(st, batch, rows, u, 0.0, cfg);

  CHECK((st.a - u).cwiseAbs().maxCoeff() == 0.0);
  CHECK((st.abar - u).cwiseAbs().maxCoeff() == 0.0);
  CHECK(st.step == 1);
}

TEST_CASE("zero targets are a fixed point") {
  Rng rng(19);
  Mat k = random_psd(8, rng);
  DenseRows rows(k);
  Mat u = Mat::Zero(8, 2);

  SddConfig cfg;
  cfg.batch = 3;
  cfg.step_size = 0.5;

  SddState st;
  st.a = Mat::Zero(8, 2);
  st.v = Mat::Zero(8, 2);
  st.abar = Mat::Zero(8, 2);
  for (int t = 0; t < 10; ++t) {
    std::vector<int> batch = {rng.uniform_int(8), rng.uniform_int(8), rng.uniform_int(8)};
    const double gn = sdd_step(st, batch, rows, u, 0.1, cfg);
    CHECK(gn == 0.0);
  }
  CHECK(st.a.cwiseAbs().maxCoeff() == 0.0);
  CHECK(st.v.cwiseAbs().maxCoeff() == 0.0);
  CHECK(st.abar.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("full-batch descent is monotone below the stability threshold") {
  Rng rng(23);
  const int n = 16;
  Mat k = random_psd(n, rng);
  const double noise = 0.1;
  Eigen::SelfAdjointEigenSolver<Mat> eig(k);
  const double lam_max = eig.eigenvalues().maxCoeff();

  Mat u = random_mat(n, 2, rng);
  DenseRows rows(k);
  std::vector<int> batch(n);
  std::iota(batch.begin(), batch.end(), 0);

  SddConfig cfg;
  cfg.batch = n;
  cfg.momentum = 0.0;
  cfg.averaging = 1.0;
  cfg.step_size = 1.9 / (lam_max + noise);

  SddState st;
  st.a = Mat::Zero(n, 2);
  st.v = st.a;
  st.abar = st.a;
  double prev = dual_objective(st.a, k, noise, u);
  for (int t = 0; t < 60; ++t) {
    sdd_step(st, batch, rows, u, noise, cfg);
    const double cur = dual_objective(st.a, k, noise, u);
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }

  // Above the threshold the objective stops decreasing monotonically.
  cfg.step_size = 2.5 / (lam_max + noise);
  SddState unstable;
  unstable.a = Mat::Zero(n, 2);
  unstable.v = unstable.a;
  unstable.abar = unstable.a;
  bool increased = false;
  prev = dual_objective(unstable.a, k, noise, u);
  for (int t = 0; t < 60 && !increased; ++t) {
    sdd_step(unstable, batch, rows, u, noise, cfg);
    const double cur = dual_objective(unstable.a, k, noise, u);
    increased = cur > prev;
    prev = cur;
  }
  CHECK(increased);
}

TEST_CASE("dual gradient vanishes at the direct solution") {
  Rng rng(29);
  const int n = 48;
  Mat k = random_psd(n, rng);
  const double noise = 0.05;
  Mat u = random_mat(n, 3, rng);

  Mat a = gp::cholesky_solve_oracle(k, noise, u);
  Mat grad = k * a + noise * a - u;
  CHECK(grad.norm() / u.norm() < 1e-9);
}

TEST_CASE("stochastic solve matches the direct solution on a latent fixture") {
  Rng rng(31);
  KernelHyper h = fixture_hyper();
  const int64_t n = 256;
  Mat k = fixture_gram(n, 8, rng, h);
  Mat u = random_mat(n, 3, rng);
  const double noise = h.noise_variance();
  Mat oracle = gp::cholesky_solve_oracle(k, noise, u);

  DenseRows rows(k);
  SddConfig cfg;
  cfg.steps = 3200;
  cfg.batch = 32;
  cfg.step_size = 0.5;
  cfg.momentum = 0.9;
  cfg.averaging = 0.9;

  std::vector<double> rel_errors;
  std::vector<SddResult> results;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    cfg.seed = seed;
    results.push_back(sdd_solve(rows, u, noise, cfg));
    rel_errors.push_back((results.back().weights - oracle).norm() / oracle.norm());
  }
  std::sort(rel_errors.begin(), rel_errors.end());
  CHECK(rel_errors[2] < 1e-3);

  const auto& trace = results.front().trace;
  REQUIRE(trace.size() == static_cast<size_t>(cfg.steps));

  // Primal loss is refreshed once per epoch (N/B = 8 steps) and decreases.
  CHECK(trace[0].primal_loss == trace[7].primal_loss);
  CHECK(trace[8].primal_loss != trace[7].primal_loss);
  CHECK(trace.back().primal_loss < trace.front().primal_loss);

  // The trace settles onto the primal value of the direct solution.
  const double at_oracle = primal_loss(oracle, k, noise, u);
  const double at_zero = primal_loss(Mat::Zero(n, 3), k, noise, u);
  CHECK(at_oracle < at_zero);
  CHECK(trace.back().primal_loss < 1.05 * at_oracle);

  // With a tiny noise floor the solution interpolates and the primal minimum
  // nearly vanishes.
  Mat tiny = gp::cholesky_solve_oracle(k, 1e-8, u);
  CHECK(primal_loss(tiny, k, 1e-8, u) < 1e-3 * at_zero);

  // Smoothed gradient norm drops by at least 10x over the run.
  auto mean_over = [&](size_t lo, size_t hi) {
    double s = 0.0;
    for (size_t i = lo; i < hi; ++i) s += trace[i].grad_norm;
    return s / static_cast<double>(hi - lo);
  };
  CHECK(mean_over(trace.size() - 20, trace.size()) < 0.1 * mean_over(0, 20));

  CHECK(trace.front().wall_ms <= trace.back().wall_ms);
}

TEST_CASE("solve is deterministic given the seed") {
  Rng rng(37);
  Mat k = random_psd(40, rng);
  Mat u = random_mat(40, 2, rng);
  DenseRows rows(k);

  SddConfig cfg;
  cfg.steps = 50;
  cfg.batch = 8;
  cfg.seed = 99;

  Mat first = sdd_solve(rows, u, 0.1, cfg).weights;
  Mat second = sdd_solve(rows, u, 0.1, cfg).weights;
  CHECK((first - second).cwiseAbs().maxCoeff() == 0.0);

  cfg.seed = 100;
  Mat third = sdd_solve(rows, u, 0.1, cfg).weights;
  CHECK((first - third).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("zero steps return zero weights") {
  Rng rng(41);
  Mat k = random_psd(10, rng);
  Mat u = random_mat(10, 2, rng);
  DenseRows rows(k);

  SddConfig cfg;
  cfg.steps = 0;
  SddResult res = sdd_solve(rows, u, 0.1, cfg);
  CHECK(res.weights.cwiseAbs().maxCoeff() == 0.0);
  CHECK(res.trace.empty());
}

TEST_CASE("divergent step size reports the failing step") {
  Rng rng(43);
  Mat k = random_psd(12, rng);
  Mat u = random_mat(12, 2, rng);
  DenseRows rows(k);

  SddConfig cfg;
  cfg.steps = 100000;
  cfg.batch = 12;
  cfg.step_size = 1e6;
  cfg.momentum = 0.0;

  CHECK_THROWS_WITH_AS(sdd_solve(rows, u, 0.1, cfg),
                       doctest::Contains("reduce the step size"), NumericalError);
}

TEST_CASE("provider validation and solve preconditions") {
  Rng rng(47);
  Mat k = random_psd(9, rng);
  DenseRows rows(k);

  CHECK_THROWS_AS(rows.rows({9}), ValidationError);
  CHECK_THROWS_AS(rows.rows({-1}), ValidationError);
  CHECK_THROWS_AS(DenseRows(Mat::Zero(3, 4)), ValidationError);

  Mat u = random_mat(9, 1, rng);
  SddConfig cfg;
  cfg.batch = 10;
  CHECK_THROWS_AS(sdd_solve(rows, u, 0.1, cfg), ValidationError);
  cfg.batch = 4;
  Mat short_u = random_mat(7, 1, rng);
  CHECK_THROWS_AS(sdd_solve(rows, short_u, 0.1, cfg), ValidationError);
  CHECK_THROWS_AS(sdd_solve(rows, u, -0.1, cfg), ValidationError);
}

TEST_CASE("cache-backed rows match the dense gram bitwise") {
  Rng rng(53);
  wno::WnoConfig cfg;
  cfg.spatial_rank = 1;
  cfg.in_channels = 1;
  cfg.width = 4;
  cfg.layers = 1;
  cfg.levels = 2;
  cfg.basis = "haar";
  cfg.latent_channels = 3;
  cfg.train_extents = {8};

  wno::WnoParams params = wno::WnoParams::init(cfg, rng);
  ad::Tensor inputs = testutil::random_tensor({5, 8, 1}, rng, -1.0, 1.0);
  kernel::LatentCache cache = kernel::build_latent_cache(inputs, params, cfg);

  KernelHyper h = fixture_hyper();
  Mat dense = kernel::gram_full(cache, h, KernelFamily::matern52);
  CacheRows cache_rows(cache, h, KernelFamily::matern52);
  REQUIRE(cache_rows.size() == 5);

  std::vector<int> all = {0, 1, 2, 3, 4};
  Mat fetched = cache_rows.rows(all);
  CHECK((fetched - dense).cwiseAbs().maxCoeff() == 0.0);

  // Same rows through either provider drive identical solves.
  Mat u = random_mat(5, 2, rng);
  SddConfig scfg;
  scfg.steps = 40;
  scfg.batch = 2;
  scfg.seed = 7;
  Mat via_cache = sdd_solve(cache_rows, u, 0.1, scfg).weights;
  Mat via_dense = sdd_solve(DenseRows(dense), u, 0.1, scfg).weights;
  CHECK((via_cache - via_dense).cwiseAbs().maxCoeff() == 0.0);
}
