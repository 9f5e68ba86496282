#pragma once

#include <string>
#include <vector>

#include "gpo/common.hpp"
#include "gpo/tensor.hpp"

namespace gpo::pde {

using ad::Tensor;

// Spectral law of a periodic Gaussian random field: covariance eigenvalue
// scale * ((2 pi k)^2 + tau^2)^(-alpha) at integer mode k, truncated at
// |k| <= modes per axis. Samples evaluate the truncated series directly, so
// one draw is exact on any grid.
struct GrfSpec {
  double scale = 625.0;
  double tau = 5.0;
  double alpha = 2.0;
  int64_t modes = 40;

  double eigenvalue(double mode_sq) const;
  void validate() const;
};

// Stationary pointwise variance of the truncated field.
double grf_variance_1d(const GrfSpec& spec);
double grf_variance_2d(const GrfSpec& spec);

// Field on x_j = j/n (1D) or cell centers (i+0.5)/n x (j+0.5)/n (2D, row-major).
Vec grf_sample_1d(int64_t resolution, const GrfSpec& spec, Rng& rng);
Vec grf_sample_2d(int64_t resolution, const GrfSpec& spec, Rng& rng);

// Viscous Burgers on the periodic unit interval: pseudo-spectral in space with
// 2/3 dealiasing, classic explicit Runge-Kutta in time with a diffusive step
// bound capped by the advective CFL condition. dt_override forces a step size
// (still stability-checked). Returns u(., t_final) at the input resolution.
Vec burgers_solve(const Vec& u0, double nu, double t_final, double dt_override = 0.0);

// Square wave plus an elliptic dome, the wave-advection initial condition.
// Parameters live in the boxes c in [0.3,0.7], width in [0.3,0.6], h in [1,2].
struct AdvectionIc {
  double center = 0.5;
  double width = 0.4;
  double height = 1.5;

  void validate() const;
  double value(double x) const;
};

AdvectionIc draw_advection_ic(Rng& rng);
Vec advection_ic_grid(const AdvectionIc& ic, int64_t resolution);

// Exact characteristic solution u(x,t) = u0((x - nu t) mod 1), resampled from
// the analytic initial condition; shifts landing on whole cells reduce to an
// exact circular index shift.
Vec advection_solve(const AdvectionIc& ic, double nu, double t_final, int64_t resolution);

// Two-phase permeability: a smooth zero-mean field thresholded to 12 where
// positive and 3 where negative.
Vec darcy_permeability_sample(int64_t resolution, const GrfSpec& spec, Rng& rng);

// -div(a grad u) = forcing on the unit square, u = 0 on the boundary.
// Cell-centered finite volumes with harmonic-mean face coefficients, solved
// by Jacobi-preconditioned conjugate gradients to a relative residual of tol.
Vec darcy_solve(const Vec& permeability, int64_t resolution, double forcing = 1.0,
                double tol = 1e-10);

// A generated or ingested benchmark set: inputs and targets are stacks of
// grid fields [count, extents..., 1].
struct OperatorDataset {
  std::string pde;
  std::string boundary;  // periodic | dirichlet
  Tensor inputs;
  Tensor targets;
  uint64_t seed = 0;

  int64_t count() const;
  std::vector<int64_t> input_extents() const;
  std::vector<int64_t> target_extents() const;
  uint64_t digest() const;
  void validate() const;
};

// Flattened row-per-sample view of a field stack.
Mat field_rows(const Tensor& stack);

// Generators for the three benchmarks, deterministic given the seed. Samples
// draw from split child streams, so a dataset prefix does not depend on count.
OperatorDataset make_dataset(const std::string& pde, int64_t count, int64_t resolution,
                             uint64_t seed);

// Storage layout: <stem>.inputs.gpot, <stem>.targets.gpot, <stem>.meta.
void write_dataset(const OperatorDataset& ds, const std::string& stem);
OperatorDataset ingest_dataset(const std::string& stem);

}  // namespace gpo::pde
