#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "gpo/container.hpp"
#include "gpo/pde_data.hpp"
#include "helpers.hpp"

using namespace gpo;
using namespace gpo::pde;

namespace {

double rel_l2(const Vec& got, const Vec& want) {
  return (got - want).norm() / want.norm();
}

// Sample moments of a field ensemble: per-point mean plus pooled variance.
struct FieldMoments {
  Vec mean;
  double pooled_var = 0.0;
};

template <typename Draw>
FieldMoments ensemble_moments(int64_t draws, int64_t points, Draw&& draw) {
  Mat fields(draws, points);
  for (int64_t d = 0; d < draws; ++d) fields.row(d) = draw(d).transpose();
  FieldMoments m;
  m.mean = fields.colwise().mean();
  Mat centered = fields.rowwise() - m.mean.transpose();
  m.pooled_var = centered.array().square().sum() /
                 static_cast<double>((draws - 1) * points);
  return m;
}

}  // namespace

TEST_CASE("grf spec: spectral law and validation") {
  GrfSpec spec;
  CHECK(spec.eigenvalue(0.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(spec.eigenvalue(1.0) ==
        doctest::Approx(625.0 / std::pow(4.0 * M_PI * M_PI + 25.0, 2.0)).epsilon(1e-14));
  // Larger modes carry less energy.
  CHECK(spec.eigenvalue(4.0) < spec.eigenvalue(1.0));

  GrfSpec bad = spec;
  bad.tau = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = spec;
  bad.modes = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = spec;
  bad.alpha = -1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("grf 1d: ensemble moments match the truncated spectrum") {
  GrfSpec spec;
  spec.modes = 12;
  const double want_var = grf_variance_1d(spec);
  const int64_t draws = 20000, res = 8;
  Rng rng(11);
  FieldMoments m = ensemble_moments(draws, res, [&](int64_t) {
    return grf_sample_1d(res, spec, rng);
  });
  const double se = std::sqrt(want_var / static_cast<double>(draws));
  for (int64_t j = 0; j < res; ++j) CHECK(std::abs(m.mean[j]) < 4.0 * se);
  CHECK(std::abs(m.pooled_var - want_var) / want_var < 0.04);
}

TEST_CASE("grf 2d: ensemble moments match the truncated spectrum") {
  GrfSpec spec;
  spec.scale = 9.0;
  spec.tau = 3.0;
  spec.modes = 3;
  const double want_var = grf_variance_2d(spec);
  const int64_t draws = 4000, res = 4;
  Rng rng(12);
  FieldMoments m = ensemble_moments(draws, res * res, [&](int64_t) {
    return grf_sample_2d(res, spec, rng);
  });
  const double se = std::sqrt(want_var / static_cast<double>(draws));
  for (int64_t j = 0; j < res * res; ++j) CHECK(std::abs(m.mean[j]) < 4.5 * se);
  CHECK(std::abs(m.pooled_var - want_var) / want_var < 0.08);
}

TEST_CASE("grf: deterministic per seed and exact on nested grids") {
  GrfSpec spec;
  spec.modes = 12;
  Rng a(7), b(7), c(8);
  Vec ua = grf_sample_1d(16, spec, a);
  Vec ub = grf_sample_1d(16, spec, b);
  Vec uc = grf_sample_1d(16, spec, c);
  CHECK(ua == ub);
  CHECK(ua != uc);

  // The same draw evaluated at twice the resolution agrees on shared points,
  // because samples evaluate the truncated series pointwise.
  Rng coarse_rng(7), fine_rng(7);
  Vec coarse = grf_sample_1d(8, spec, coarse_rng);
  Vec fine = grf_sample_1d(16, spec, fine_rng);
  for (int64_t j = 0; j < 8; ++j) CHECK(coarse[j] == fine[2 * j]);

  Rng d(7), e(7);
  CHECK(grf_sample_2d(6, spec, d) == grf_sample_2d(6, spec, e));
}

TEST_CASE("burgers: conserves the mean and dissipates energy") {
  const int64_t n = 64;
  Vec u0(n);
  for (int64_t j = 0; j < n; ++j) {
    const double x = static_cast<double>(j) / static_cast<double>(n);
    u0[j] = 0.4 + std::sin(2.0 * M_PI * x) + 0.3 * std::cos(4.0 * M_PI * x);
  }
  Vec u1 = burgers_solve(u0, 0.1, 0.2);
  CHECK(std::abs(u1.mean() - u0.mean()) < 1e-12);
  CHECK(u1.squaredNorm() < u0.squaredNorm());
  CHECK(burgers_solve(u0, 0.1, 0.0) == u0);
}

TEST_CASE("burgers: strong diffusion decays monotonically toward the mean") {
  const int64_t n = 64;
  Vec u0(n);
  for (int64_t j = 0; j < n; ++j)
    u0[j] = std::sin(2.0 * M_PI * static_cast<double>(j) / static_cast<double>(n));
  double prev = u0.norm();
  for (double t : {0.005, 0.01, 0.02}) {
    Vec u = burgers_solve(u0, 10.0, t);
    const double dev = (u.array() - u.mean()).matrix().norm();
    CHECK(dev < prev);
    prev = dev;
  }
  // nu = 10 at t = 0.02 is essentially flat.
  Vec late = burgers_solve(u0, 10.0, 0.02);
  CHECK((late.array() - late.mean()).abs().maxCoeff() <
        1e-3 * u0.cwiseAbs().maxCoeff());
}

TEST_CASE("burgers: self-convergence under grid refinement") {
  GrfSpec spec;
  Rng coarse_rng(21), fine_rng(21);
  Vec u0c = grf_sample_1d(256, spec, coarse_rng);
  Vec u0f = grf_sample_1d(512, spec, fine_rng);
  Vec uc = burgers_solve(u0c, 0.1, 1.0);
  Vec uf = burgers_solve(u0f, 0.1, 1.0);
  Vec restricted(256);
  for (int64_t j = 0; j < 256; ++j) restricted[j] = uf[2 * j];
  CHECK(rel_l2(uc, restricted) < 1e-5);
}

TEST_CASE("burgers: rejects unstable steps and bad arguments") {
  Vec u0(32);
  for (int64_t j = 0; j < 32; ++j)
    u0[j] = std::sin(2.0 * M_PI * static_cast<double>(j) / 32.0);
  CHECK_THROWS_WITH_AS(burgers_solve(u0, 0.1, 0.5, 0.05),
                       doctest::Contains("reduce the time step"), NumericalError);
  CHECK_THROWS_AS(burgers_solve(Vec::Zero(4), 0.1, 1.0), ValidationError);
  CHECK_THROWS_AS(burgers_solve(u0, 0.0, 1.0), ValidationError);
  CHECK_THROWS_AS(burgers_solve(u0, 0.1, -1.0), ValidationError);
  Vec bad = u0;
  bad[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(burgers_solve(bad, 0.1, 1.0), ValidationError);
}

TEST_CASE("advection ic: profile shape and parameter boxes") {
  AdvectionIc ic;
  ic.center = 0.5;
  ic.width = 0.4;
  ic.height = 1.5;
  // Dome peak sits on the square wave: value 2h at the center.
  CHECK(ic.value(0.5) == doctest::Approx(3.0).epsilon(1e-14));
  // At the half-width edge the dome closes and only the square wave remains.
  CHECK(ic.value(0.5 + 0.2) == doctest::Approx(1.5).epsilon(1e-6));
  CHECK(ic.value(0.5 + 0.2001) == 0.0);
  CHECK(ic.value(0.0) == 0.0);

  AdvectionIc bad = ic;
  bad.center = 0.2;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = ic;
  bad.width = 0.7;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = ic;
  bad.height = 2.5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("advection ic: draws stay in the boxes with matching means") {
  Rng rng(31);
  double c_sum = 0.0, w_sum = 0.0, h_sum = 0.0;
  const int64_t draws = 4000;
  for (int64_t i = 0; i < draws; ++i) {
    AdvectionIc ic = draw_advection_ic(rng);
    ic.validate();
    c_sum += ic.center;
    w_sum += ic.width;
    h_sum += ic.height;
  }
  CHECK(c_sum / draws == doctest::Approx(0.5).epsilon(0.01));
  CHECK(w_sum / draws == doctest::Approx(0.45).epsilon(0.01));
  CHECK(h_sum / draws == doctest::Approx(1.5).epsilon(0.01));
}

TEST_CASE("advection: whole-cell shifts relabel the grid exactly") {
  AdvectionIc ic;
  ic.center = 0.4;
  const int64_t n = 40;
  Vec base = advection_ic_grid(ic, n);
  CHECK(advection_solve(ic, 1.0, 0.0, n) == base);

  // nu t = 13/40 shifts by exactly 13 cells.
  Vec shifted = advection_solve(ic, 1.0, 13.0 / 40.0, n);
  for (int64_t j = 0; j < n; ++j) CHECK(shifted[j] == base[((j - 13) % n + n) % n]);

  // The benchmark setting nu = 1, t = 0.5 is a half-period shift.
  Vec half = advection_solve(ic, 1.0, 0.5, n);
  for (int64_t j = 0; j < n; ++j) CHECK(half[j] == base[((j - 20) % n + n) % n]);
}

TEST_CASE("advection: fractional shifts resample the analytic profile") {
  AdvectionIc ic;
  ic.center = 0.55;
  ic.width = 0.5;
  ic.height = 1.2;
  const int64_t n = 48;
  const double t = 0.303;
  Vec u = advection_solve(ic, 1.0, t, n);
  for (int64_t j = 0; j < n; ++j) {
    const double x = static_cast<double>(j) / static_cast<double>(n) - t;
    CHECK(u[j] == doctest::Approx(ic.value(x - std::floor(x))).epsilon(1e-13));
  }
  CHECK_THROWS_AS(advection_solve(ic, 1.0, -0.5, n), ValidationError);
  CHECK_THROWS_AS(advection_ic_grid(ic, 1), ValidationError);
}

TEST_CASE("darcy: constant coefficients match the separable series solution") {
  // -lap u = 1 on the unit square with zero boundary values has
  // u(1/2, 1/2) = 16/pi^4 sum_{m,n odd} (-1)^((m+n)/2-1) / (m n (m^2+n^2)).
  double want = 0.0;
  for (int64_t m = 1; m < 400; m += 2)
    for (int64_t n = 1; n < 400; n += 2) {
      const double sign = ((m - 1) / 2 + (n - 1) / 2) % 2 == 0 ? 1.0 : -1.0;
      want += sign / static_cast<double>(m * n * (m * m + n * n));
    }
  want *= 16.0 / std::pow(M_PI, 4.0);

  auto center_value = [&](int64_t n) {
    Vec u = darcy_solve(Vec::Ones(n * n), n);
    return u[(n / 2) * n + n / 2];
  };
  const double err33 = std::abs(center_value(33) - want);
  const double err65 = std::abs(center_value(65) - want);
  CHECK(err65 / want < 2e-3);
  // Second-order discretization: halving h shrinks the error about fourfold.
  CHECK(err65 < err33 / 2.5);
}

TEST_CASE("darcy: symmetry, positivity, and scaling") {
  const int64_t n = 17;
  Vec u = darcy_solve(Vec::Ones(n * n), n);
  const double scale = u.maxCoeff();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      CHECK(std::abs(u[i * n + j] - u[j * n + i]) < 1e-9 * scale);
      CHECK(std::abs(u[i * n + j] - u[(n - 1 - i) * n + j]) < 1e-9 * scale);
      CHECK(u[i * n + j] > -1e-12);
    }
  CHECK(u[(n / 2) * n + n / 2] == doctest::Approx(scale).epsilon(1e-12));

  GrfSpec spec;
  spec.scale = 9.0;
  spec.tau = 3.0;
  spec.modes = 5;
  Rng rng(41);
  Vec perm = darcy_permeability_sample(n, spec, rng);
  Vec base = darcy_solve(perm, n);
  Vec scaled = darcy_solve(5.0 * perm, n);
  CHECK(rel_l2(scaled, base / 5.0) < 1e-8);
  // Doubling the forcing doubles the pressure.
  Vec forced = darcy_solve(perm, n, 2.0);
  CHECK(rel_l2(forced, 2.0 * base) < 1e-8);
}

TEST_CASE("darcy: self-convergence under grid refinement") {
  auto smooth_perm = [](int64_t n) {
    Vec a(n * n);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        const double x = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        const double y = (static_cast<double>(j) + 0.5) / static_cast<double>(n);
        a[i * n + j] = 1.0 + 0.5 * std::sin(2.0 * M_PI * x) * std::sin(2.0 * M_PI * y);
      }
    return a;
  };
  Vec coarse = darcy_solve(smooth_perm(29), 29);
  Vec fine = darcy_solve(smooth_perm(116), 116);
  // Restrict by 4x4 block means onto the coarse cells.
  Vec restricted = Vec::Zero(29 * 29);
  for (int64_t i = 0; i < 116; ++i)
    for (int64_t j = 0; j < 116; ++j)
      restricted[(i / 4) * 29 + j / 4] += fine[i * 116 + j] / 16.0;
  CHECK(rel_l2(coarse, restricted) < 1e-2);

  // The thresholded medium converges more slowly but stays consistent.
  GrfSpec spec;
  spec.scale = 9.0;
  spec.tau = 3.0;
  spec.modes = 14;
  Rng rc(5), rf(5);
  Vec pc = darcy_permeability_sample(29, spec, rc);
  Vec pf = darcy_permeability_sample(116, spec, rf);
  Vec uc = darcy_solve(pc, 29);
  Vec uf = darcy_solve(pf, 116);
  Vec ur = Vec::Zero(29 * 29);
  for (int64_t i = 0; i < 116; ++i)
    for (int64_t j = 0; j < 116; ++j) ur[(i / 4) * 29 + j / 4] += uf[i * 116 + j] / 16.0;
  CHECK(rel_l2(uc, ur) < 0.1);
}

TEST_CASE("darcy: permeability law and error paths") {
  GrfSpec spec;
  spec.scale = 9.0;
  spec.tau = 3.0;
  spec.modes = 14;
  const int64_t n = 32;
  double frac = 0.0;
  for (uint64_t s = 0; s < 50; ++s) {
    Rng rng(100 + s);
    Vec perm = darcy_permeability_sample(n, spec, rng);
    for (int64_t i = 0; i < perm.size(); ++i) {
      CHECK((perm[i] == 12.0 || perm[i] == 3.0));
      frac += perm[i] == 12.0 ? 1.0 : 0.0;
    }
  }
  frac /= 50.0 * static_cast<double>(n * n);
  // The level set of a zero-mean symmetric field covers half the square on
  // average; 50 draws of a correlated field leave visible sampling noise.
  CHECK(std::abs(frac - 0.5) < 0.06);

  Rng ra(3), rb(3);
  CHECK(darcy_permeability_sample(n, spec, ra) == darcy_permeability_sample(n, spec, rb));

  Vec flat = Vec::Ones(9 * 9);
  flat[40] = 0.0;
  CHECK_THROWS_AS(darcy_solve(flat, 9), ValidationError);
  CHECK_THROWS_AS(darcy_solve(Vec::Ones(4), 2), ValidationError);
  CHECK_THROWS_AS(darcy_solve(Vec::Ones(81), 10), ValidationError);
  // A generic medium stalls near machine precision, far above this tolerance.
  Rng stall(9);
  Vec rough(64);
  for (int64_t i = 0; i < 64; ++i) rough[i] = stall.uniform(0.5, 2.0);
  CHECK_THROWS_WITH_AS(darcy_solve(rough, 8, 1.0, 1e-30),
                       doctest::Contains("stagnated"), NumericalError);
}

TEST_CASE("dataset: burgers generation invariants") {
  OperatorDataset ds = make_dataset("burgers", 3, 24, 17);
  CHECK(ds.boundary == "periodic");
  CHECK(ds.count() == 3);
  CHECK(ds.inputs.shape == std::vector<int64_t>{3, 24, 1});
  CHECK(ds.targets.shape == std::vector<int64_t>{3, 24, 1});
  CHECK(ds.input_extents() == std::vector<int64_t>{24});

  Mat u0 = field_rows(ds.inputs);
  Mat u1 = field_rows(ds.targets);
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(std::abs(u0.row(i).mean() - u1.row(i).mean()) < 1e-12);
    CHECK(u1.row(i).squaredNorm() < u0.row(i).squaredNorm());
  }

  // Split child streams: a shorter dataset is a prefix of a longer one.
  OperatorDataset prefix = make_dataset("burgers", 2, 24, 17);
  for (int64_t i = 0; i < prefix.inputs.numel(); ++i) {
    CHECK(prefix.inputs.data[i] == ds.inputs.data[i]);
    CHECK(prefix.targets.data[i] == ds.targets.data[i]);
  }
  OperatorDataset again = make_dataset("burgers", 3, 24, 17);
  CHECK(again.inputs.data == ds.inputs.data);
  CHECK(again.digest() == ds.digest());
  OperatorDataset other = make_dataset("burgers", 3, 24, 18);
  CHECK(other.digest() != ds.digest());
}

TEST_CASE("dataset: advection targets are exact half-period shifts") {
  const int64_t n = 40;
  OperatorDataset ds = make_dataset("advection", 2, n, 23);
  Mat u0 = field_rows(ds.inputs);
  Mat u1 = field_rows(ds.targets);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < n; ++j) CHECK(u1(i, j) == u0(i, ((j - 20) % n + n) % n));
}

TEST_CASE("dataset: darcy generation and validation errors") {
  OperatorDataset ds = make_dataset("darcy", 1, 9, 29);
  CHECK(ds.boundary == "dirichlet");
  CHECK(ds.inputs.shape == std::vector<int64_t>{1, 9, 9, 1});
  for (double v : ds.inputs.data) CHECK((v == 12.0 || v == 3.0));
  for (double v : ds.targets.data) CHECK(v > -1e-12);

  CHECK_THROWS_WITH_AS(make_dataset("stokes", 1, 9, 0),
                       doctest::Contains("unknown pde"), ValidationError);
  CHECK_THROWS_AS(make_dataset("burgers", -1, 24, 0), ValidationError);

  OperatorDataset empty = make_dataset("advection", 0, 16, 0);
  CHECK(empty.count() == 0);
  empty.validate();

  OperatorDataset bad = ds;
  bad.boundary = "neumann";
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = ds;
  bad.targets = ad::Tensor::zeros({2, 9, 9, 1});
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = ds;
  bad.inputs.data[5] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("dataset: field rows flatten sample-major") {
  ad::Tensor stack = ad::Tensor::zeros({2, 3, 1});
  for (int64_t i = 0; i < 6; ++i) stack.data[i] = static_cast<double>(i);
  Mat rows = field_rows(stack);
  CHECK(rows.rows() == 2);
  CHECK(rows.cols() == 3);
  CHECK(rows(0, 2) == 2.0);
  CHECK(rows(1, 0) == 3.0);
  CHECK_THROWS_AS(field_rows(ad::Tensor::zeros({4})), ValidationError);
}

TEST_CASE("dataset: write and ingest round-trip bitwise") {
  const std::string stem = "/tmp/gpo_pde_roundtrip";
  OperatorDataset ds = make_dataset("advection", 3, 16, 7);
  write_dataset(ds, stem);
  // On disk the stacks are channel-first.
  CHECK(io::read_gpot(stem + ".inputs.gpot").shape == std::vector<int64_t>{3, 1, 16});
  OperatorDataset back = ingest_dataset(stem);
  CHECK(back.pde == "advection");
  CHECK(back.boundary == "periodic");
  CHECK(back.seed == 7);
  CHECK(back.inputs.shape == ds.inputs.shape);
  CHECK(back.inputs.data == ds.inputs.data);
  CHECK(back.targets.data == ds.targets.data);
  CHECK(back.digest() == ds.digest());

  // A tampered payload no longer matches the recorded digest.
  io::write_gpot(stem + ".targets.gpot", ad::Tensor::zeros({3, 16, 1}));
  CHECK_THROWS_WITH_AS(ingest_dataset(stem), doctest::Contains("digest"), IoError);
  CHECK_THROWS_AS(ingest_dataset("/tmp/gpo_pde_missing"), IoError);

  for (const char* suffix : {".inputs.gpot", ".targets.gpot", ".meta"})
    std::remove((stem + suffix).c_str());
}
