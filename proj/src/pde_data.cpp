#include "gpo/pde_data.hpp"

#include <cmath>
#include <complex>
#include <sstream>
#include <unsupported/Eigen/FFT>

#include "gpo/container.hpp"

namespace gpo::pde {

double GrfSpec::eigenvalue(double mode_sq) const {
  return scale * std::pow(4.0 * M_PI * M_PI * mode_sq + tau * tau, -alpha);
}

void GrfSpec::validate() const {
  if (!(scale > 0.0) || !(tau > 0.0) || !(alpha > 0.0))
    throw ValidationError("grf spec: scale, tau, and alpha must be positive");
  if (modes < 1) throw ValidationError("grf spec: need at least one mode");
}

double grf_variance_1d(const GrfSpec& spec) {
  double var = spec.eigenvalue(0.0);
  for (int64_t k = 1; k <= spec.modes; ++k)
    var += 2.0 * spec.eigenvalue(static_cast<double>(k * k));
  return var;
}

double grf_variance_2d(const GrfSpec& spec) {
  double var = spec.eigenvalue(0.0);
  for (int64_t k2 = 1; k2 <= spec.modes; ++k2)
    var += 2.0 * spec.eigenvalue(static_cast<double>(k2 * k2));
  for (int64_t k1 = 1; k1 <= spec.modes; ++k1)
    for (int64_t k2 = -spec.modes; k2 <= spec.modes; ++k2)
      var += 2.0 * spec.eigenvalue(static_cast<double>(k1 * k1 + k2 * k2));
  return var;
}

Vec grf_sample_1d(int64_t resolution, const GrfSpec& spec, Rng& rng) {
  spec.validate();
  if (resolution < 2) throw ValidationError("grf: resolution must be at least 2");
  Vec u = Vec::Constant(resolution, std::sqrt(spec.eigenvalue(0.0)) * rng.normal());
  for (int64_t k = 1; k <= spec.modes; ++k) {
    const double amp = std::sqrt(2.0 * spec.eigenvalue(static_cast<double>(k * k)));
    const double xi = rng.normal();
    const double eta = rng.normal();
    for (int64_t j = 0; j < resolution; ++j) {
      const double angle = 2.0 * M_PI * static_cast<double>(k) * static_cast<double>(j) /
                           static_cast<double>(resolution);
      u[j] += amp * (xi * std::cos(angle) + eta * std::sin(angle));
    }
  }
  return u;
}

Vec grf_sample_2d(int64_t resolution, const GrfSpec& spec, Rng& rng) {
  spec.validate();
  if (resolution < 2) throw ValidationError("grf: resolution must be at least 2");
  const int64_t n = resolution;
  const int64_t kmax = spec.modes;

  // Angle tables at cell centers, one per axis.
  Mat ct(kmax + 1, n), st(kmax + 1, n);
  for (int64_t k = 0; k <= kmax; ++k)
    for (int64_t i = 0; i < n; ++i) {
      const double angle =
          2.0 * M_PI * static_cast<double>(k) * (static_cast<double>(i) + 0.5) /
          static_cast<double>(n);
      ct(k, i) = std::cos(angle);
      st(k, i) = std::sin(angle);
    }

  Vec u = Vec::Constant(n * n, std::sqrt(spec.eigenvalue(0.0)) * rng.normal());
  auto add_mode = [&](int64_t k1, int64_t k2) {
    const double amp =
        std::sqrt(2.0 * spec.eigenvalue(static_cast<double>(k1 * k1 + k2 * k2)));
    const double xi = rng.normal();
    const double eta = rng.normal();
    const int64_t a2 = std::abs(k2);
    const double sign = k2 < 0 ? -1.0 : 1.0;
    for (int64_t i = 0; i < n; ++i) {
      const double cx = ct(k1, i), sx = st(k1, i);
      for (int64_t j = 0; j < n; ++j) {
        const double cy = ct(a2, j), sy = sign * st(a2, j);
        u[i * n + j] += amp * (xi * (cx * cy - sx * sy) + eta * (sx * cy + cx * sy));
      }
    }
  };
  // Half lattice: the conjugate modes are implied by the real parametrization.
  for (int64_t k2 = 1; k2 <= kmax; ++k2) add_mode(0, k2);
  for (int64_t k1 = 1; k1 <= kmax; ++k1)
    for (int64_t k2 = -kmax; k2 <= kmax; ++k2) add_mode(k1, k2);
  return u;
}

Vec burgers_solve(const Vec& u0, double nu, double t_final, double dt_override) {
  using cplx = std::complex<double>;
  const int64_t n = u0.size();
  if (n < 8) throw ValidationError("burgers: resolution must be at least 8");
  if (!(nu > 0.0) || !std::isfinite(nu))
    throw ValidationError("burgers: viscosity must be positive and finite");
  if (!(t_final >= 0.0) || !std::isfinite(t_final))
    throw ValidationError("burgers: final time must be non-negative");
  if (!u0.allFinite()) throw ValidationError("burgers: initial condition must be finite");
  if (t_final == 0.0) return u0;

  Eigen::FFT<double> fft;
  std::vector<double> phys(static_cast<size_t>(n)), prod(static_cast<size_t>(n));
  for (int64_t j = 0; j < n; ++j) phys[static_cast<size_t>(j)] = u0[j];
  std::vector<cplx> state;
  fft.fwd(state, phys);

  const int64_t cut = n / 3;
  std::vector<double> wav(static_cast<size_t>(n)), mask(static_cast<size_t>(n));
  for (int64_t j = 0; j < n; ++j) {
    const int64_t m = j <= n / 2 ? j : j - n;
    wav[static_cast<size_t>(j)] = 2.0 * M_PI * static_cast<double>(m);
    mask[static_cast<size_t>(j)] = std::abs(m) <= cut ? 1.0 : 0.0;
  }
  for (int64_t j = 0; j < n; ++j) state[static_cast<size_t>(j)] *= mask[static_cast<size_t>(j)];

  const double dx = 1.0 / static_cast<double>(n);
  const double umax0 = u0.cwiseAbs().maxCoeff();
  double dt = 0.25 * dx * dx / nu;
  dt = std::min(dt, 0.4 * dx / std::max(umax0, 1e-12));
  if (dt_override > 0.0) dt = dt_override;
  const int64_t steps = static_cast<int64_t>(std::ceil(t_final / dt));
  dt = t_final / static_cast<double>(steps);

  std::vector<cplx> wh, k1(state.size()), k2(state.size()), k3(state.size()), k4(state.size()),
      stage(state.size());
  // RHS in spectral space: -0.5 i k F[u^2] (dealiased) - nu k^2 u_hat.
  // Returns the physical sup norm for the stability check.
  auto rhs = [&](const std::vector<cplx>& in, std::vector<cplx>& out) {
    fft.inv(phys, in);
    double sup = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      sup = std::max(sup, std::abs(phys[static_cast<size_t>(j)]));
      prod[static_cast<size_t>(j)] =
          phys[static_cast<size_t>(j)] * phys[static_cast<size_t>(j)];
    }
    fft.fwd(wh, prod);
    for (int64_t j = 0; j < n; ++j) {
      const size_t s = static_cast<size_t>(j);
      out[s] = cplx(0.0, -0.5) * wav[s] * mask[s] * wh[s] - nu * wav[s] * wav[s] * in[s];
    }
    return sup;
  };

  for (int64_t step = 0; step < steps; ++step) {
    const double sup = rhs(state, k1);
    const double advective = 0.4 * dx / std::max(sup, 1e-12);
    if (dt > advective * (1.0 + 1e-9)) {
      std::ostringstream msg;
      msg << "burgers: advective stability violated at t = "
          << static_cast<double>(step) * dt << "; reduce the time step to at most "
          << advective;
      throw NumericalError(msg.str());
    }
    for (size_t j = 0; j < stage.size(); ++j) stage[j] = state[j] + 0.5 * dt * k1[j];
    rhs(stage, k2);
    for (size_t j = 0; j < stage.size(); ++j) stage[j] = state[j] + 0.5 * dt * k2[j];
    rhs(stage, k3);
    for (size_t j = 0; j < stage.size(); ++j) stage[j] = state[j] + dt * k3[j];
    rhs(stage, k4);
    for (size_t j = 0; j < state.size(); ++j)
      state[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    if ((step & 63) == 0 && !std::isfinite(state[0].real()))
      throw NumericalError("burgers: solution diverged; reduce the time step");
  }

  fft.inv(phys, state);
  Vec out(n);
  for (int64_t j = 0; j < n; ++j) {
    out[j] = phys[static_cast<size_t>(j)];
    if (!std::isfinite(out[j]))
      throw NumericalError("burgers: solution diverged; reduce the time step");
  }
  return out;
}

void AdvectionIc::validate() const {
  if (!(center >= 0.3 && center <= 0.7))
    throw ValidationError("advection ic: center must lie in [0.3, 0.7]");
  if (!(width >= 0.3 && width <= 0.6))
    throw ValidationError("advection ic: width must lie in [0.3, 0.6]");
  if (!(height >= 1.0 && height <= 2.0))
    throw ValidationError("advection ic: height must lie in [1, 2]");
}

double AdvectionIc::value(double x) const {
  const double a = 2.0 * height / width;
  const double dx = x - center;
  double v = std::abs(dx) <= 0.5 * width ? height : 0.0;
  const double dome = height * height - a * a * dx * dx;
  if (dome > 0.0) v += std::sqrt(dome);
  return v;
}

AdvectionIc draw_advection_ic(Rng& rng) {
  AdvectionIc ic;
  ic.center = rng.uniform(0.3, 0.7);
  ic.width = rng.uniform(0.3, 0.6);
  ic.height = rng.uniform(1.0, 2.0);
  return ic;
}

Vec advection_ic_grid(const AdvectionIc& ic, int64_t resolution) {
  ic.validate();
  if (resolution < 2) throw ValidationError("advection: resolution must be at least 2");
  Vec u(resolution);
  for (int64_t j = 0; j < resolution; ++j)
    u[j] = ic.value(static_cast<double>(j) / static_cast<double>(resolution));
  return u;
}

Vec advection_solve(const AdvectionIc& ic, double nu, double t_final, int64_t resolution) {
  ic.validate();
  if (resolution < 2) throw ValidationError("advection: resolution must be at least 2");
  if (!std::isfinite(nu) || !std::isfinite(t_final) || t_final < 0.0)
    throw ValidationError("advection: speed and time must be finite, time non-negative");

  const double shift_cells = nu * t_final * static_cast<double>(resolution);
  const double rounded = std::round(shift_cells);
  if (std::abs(shift_cells - rounded) < 1e-12 * std::max(1.0, std::abs(shift_cells))) {
    // Whole-cell shift: exact circular relabeling of the sampled values.
    Vec base = advection_ic_grid(ic, resolution);
    Vec out(resolution);
    const int64_t s = static_cast<int64_t>(rounded);
    for (int64_t j = 0; j < resolution; ++j) {
      int64_t src = (j - s) % resolution;
      if (src < 0) src += resolution;
      out[j] = base[src];
    }
    return out;
  }

  Vec out(resolution);
  for (int64_t j = 0; j < resolution; ++j) {
    const double x = static_cast<double>(j) / static_cast<double>(resolution) - nu * t_final;
    out[j] = ic.value(x - std::floor(x));
  }
  return out;
}

Vec darcy_permeability_sample(int64_t resolution, const GrfSpec& spec, Rng& rng) {
  Vec smooth = grf_sample_2d(resolution, spec, rng);
  Vec out(smooth.size());
  for (int64_t i = 0; i < smooth.size(); ++i) out[i] = smooth[i] >= 0.0 ? 12.0 : 3.0;
  return out;
}

Vec darcy_solve(const Vec& permeability, int64_t resolution, double forcing, double tol) {
  const int64_t n = resolution;
  if (n < 3) throw ValidationError("darcy: resolution must be at least 3");
  if (permeability.size() != n * n)
    throw ValidationError("darcy: permeability needs " + std::to_string(n * n) +
                          " cells, got " + std::to_string(permeability.size()));
  if (!permeability.allFinite() || permeability.minCoeff() <= 0.0)
    throw ValidationError("darcy: permeability must be strictly positive");
  if (!(tol > 0.0)) throw ValidationError("darcy: tolerance must be positive");

  // Face transmissibilities: harmonic mean between cells, 2a against the
  // Dirichlet boundary half-cell.
  auto harmonic = [](double a, double b) { return 2.0 * a * b / (a + b); };
  Mat tw(n, n), te(n, n), tn(n, n), ts(n, n);
  auto cell = [&](int64_t i, int64_t j) { return permeability[i * n + j]; };
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      tw(i, j) = j > 0 ? harmonic(cell(i, j), cell(i, j - 1)) : 2.0 * cell(i, j);
      te(i, j) = j < n - 1 ? harmonic(cell(i, j), cell(i, j + 1)) : 2.0 * cell(i, j);
      tn(i, j) = i > 0 ? harmonic(cell(i, j), cell(i - 1, j)) : 2.0 * cell(i, j);
      ts(i, j) = i < n - 1 ? harmonic(cell(i, j), cell(i + 1, j)) : 2.0 * cell(i, j);
    }

  auto apply = [&](const Vec& x, Vec& y) {
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        const int64_t c = i * n + j;
        double acc = (tw(i, j) + te(i, j) + tn(i, j) + ts(i, j)) * x[c];
        if (j > 0) acc -= tw(i, j) * x[c - 1];
        if (j < n - 1) acc -= te(i, j) * x[c + 1];
        if (i > 0) acc -= tn(i, j) * x[c - n];
        if (i < n - 1) acc -= ts(i, j) * x[c + n];
        y[c] = acc;
      }
  };

  const double h2 = 1.0 / static_cast<double>(n * n);
  Vec b = Vec::Constant(n * n, forcing * h2);
  Vec diag(n * n);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      diag[i * n + j] = tw(i, j) + te(i, j) + tn(i, j) + ts(i, j);

  // Jacobi-preconditioned conjugate gradients. Convergence is only accepted
  // on a recomputed residual: the recursively updated one drifts below
  // machine precision while b - A x stalls.
  Vec x = Vec::Zero(n * n), r = b, z = r.cwiseQuotient(diag), p = z, ap(n * n);
  double rz = r.dot(z);
  const double target = tol * b.norm();
  const int64_t max_iter = 200 * n + 10000;
  int64_t refreshes = 0;
  for (int64_t iter = 0; iter < max_iter; ++iter) {
    if (r.norm() <= target) {
      apply(x, ap);
      r = b - ap;
      if (r.norm() <= target) return x;
      if (++refreshes > 30) break;
      z = r.cwiseQuotient(diag);
      p = z;
      rz = r.dot(z);
    }
    apply(p, ap);
    const double alpha = rz / p.dot(ap);
    x += alpha * p;
    r -= alpha * ap;
    z = r.cwiseQuotient(diag);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  throw NumericalError("darcy: conjugate gradients stagnated; residual " +
                       std::to_string(r.norm()) + " above the requested " +
                       std::to_string(target));
}

int64_t OperatorDataset::count() const {
  return inputs.shape.empty() ? 0 : inputs.shape[0];
}

std::vector<int64_t> OperatorDataset::input_extents() const {
  if (inputs.shape.size() < 3) throw ValidationError("dataset: inputs must be field stacks");
  return {inputs.shape.begin() + 1, inputs.shape.end() - 1};
}

std::vector<int64_t> OperatorDataset::target_extents() const {
  if (targets.shape.size() < 3) throw ValidationError("dataset: targets must be field stacks");
  return {targets.shape.begin() + 1, targets.shape.end() - 1};
}

uint64_t OperatorDataset::digest() const {
  uint64_t d = fnv1a(pde.data(), pde.size());
  d = fnv1a(inputs.shape.data(), inputs.shape.size() * sizeof(int64_t), d);
  d = fnv1a(targets.shape.data(), targets.shape.size() * sizeof(int64_t), d);
  d = fnv1a(inputs.data, d);
  d = fnv1a(targets.data, d);
  return d;
}

void OperatorDataset::validate() const {
  if (pde.empty()) throw ValidationError("dataset: missing pde tag");
  if (boundary != "periodic" && boundary != "dirichlet")
    throw ValidationError("dataset: boundary must be periodic or dirichlet");
  if (inputs.shape.size() < 3 || targets.shape.size() < 3)
    throw ValidationError("dataset: inputs and targets must be [count, extents..., channels]");
  if (inputs.shape[0] != targets.shape[0])
    throw ValidationError("dataset: " + std::to_string(inputs.shape[0]) + " inputs vs " +
                          std::to_string(targets.shape[0]) + " targets");
  for (double v : inputs.data)
    if (!std::isfinite(v)) throw ValidationError("dataset: inputs contain non-finite values");
  for (double v : targets.data)
    if (!std::isfinite(v)) throw ValidationError("dataset: targets contain non-finite values");
}

Mat field_rows(const Tensor& stack) {
  if (stack.shape.size() < 2) throw ValidationError("field rows: need a field stack");
  const int64_t count = stack.shape[0];
  int64_t per = 1;
  for (size_t a = 1; a < stack.shape.size(); ++a) per *= stack.shape[a];
  Mat out(count, per);
  if (count > 0)
    out = Eigen::Map<const RowMat>(stack.data.data(), count, per);
  return out;
}

OperatorDataset make_dataset(const std::string& pde, int64_t count, int64_t resolution,
                             uint64_t seed) {
  if (count < 0) throw ValidationError("dataset: count must be non-negative");
  OperatorDataset ds;
  ds.pde = pde;
  ds.seed = seed;
  Rng root(seed);

  if (pde == "burgers") {
    if (resolution < 12) throw ValidationError("burgers: resolution must be at least 12");
    ds.boundary = "periodic";
    GrfSpec spec;
    spec.modes = std::min<int64_t>(40, resolution / 3 - 1);
    ds.inputs = Tensor::zeros({count, resolution, 1});
    ds.targets = Tensor::zeros({count, resolution, 1});
    for (int64_t i = 0; i < count; ++i) {
      Rng child = root.split(static_cast<uint64_t>(i));
      Vec u0 = grf_sample_1d(resolution, spec, child);
      Vec u1 = burgers_solve(u0, 0.1, 1.0);
      for (int64_t j = 0; j < resolution; ++j) {
        ds.inputs.data[static_cast<size_t>(i * resolution + j)] = u0[j];
        ds.targets.data[static_cast<size_t>(i * resolution + j)] = u1[j];
      }
    }
  } else if (pde == "advection") {
    ds.boundary = "periodic";
    ds.inputs = Tensor::zeros({count, resolution, 1});
    ds.targets = Tensor::zeros({count, resolution, 1});
    for (int64_t i = 0; i < count; ++i) {
      Rng child = root.split(static_cast<uint64_t>(i));
      AdvectionIc ic = draw_advection_ic(child);
      Vec u0 = advection_ic_grid(ic, resolution);
      Vec u1 = advection_solve(ic, 1.0, 0.5, resolution);
      for (int64_t j = 0; j < resolution; ++j) {
        ds.inputs.data[static_cast<size_t>(i * resolution + j)] = u0[j];
        ds.targets.data[static_cast<size_t>(i * resolution + j)] = u1[j];
      }
    }
  } else if (pde == "darcy") {
    ds.boundary = "dirichlet";
    GrfSpec spec;
    spec.scale = 9.0;
    spec.tau = 3.0;
    spec.modes = std::min<int64_t>(14, resolution / 2);
    ds.inputs = Tensor::zeros({count, resolution, resolution, 1});
    ds.targets = Tensor::zeros({count, resolution, resolution, 1});
    const int64_t cells = resolution * resolution;
    for (int64_t i = 0; i < count; ++i) {
      Rng child = root.split(static_cast<uint64_t>(i));
      Vec perm = darcy_permeability_sample(resolution, spec, child);
      Vec pressure = darcy_solve(perm, resolution);
      for (int64_t j = 0; j < cells; ++j) {
        ds.inputs.data[static_cast<size_t>(i * cells + j)] = perm[j];
        ds.targets.data[static_cast<size_t>(i * cells + j)] = pressure[j];
      }
    }
  } else {
    throw ValidationError("unknown pde tag '" + pde + "' (expected burgers|advection|darcy)");
  }
  ds.validate();
  return ds;
}

namespace {

// The container stores field stacks channel-first, [count, 1, extents...].
// With one channel both layouts share the same contiguous payload, so the
// conversion only rewrites the shape.
Tensor to_channel_first(const Tensor& stack) {
  Tensor out = stack;
  out.shape.assign(stack.shape.begin(), stack.shape.end() - 1);
  out.shape.insert(out.shape.begin() + 1, 1);
  return out;
}

Tensor to_channel_last(const Tensor& stack) {
  if (stack.shape.size() >= 3 && stack.shape[1] == 1) {
    Tensor out = stack;
    out.shape.erase(out.shape.begin() + 1);
    out.shape.push_back(1);
    return out;
  }
  return stack;
}

}  // namespace

void write_dataset(const OperatorDataset& ds, const std::string& stem) {
  ds.validate();
  io::write_gpot(stem + ".inputs.gpot", to_channel_first(ds.inputs));
  io::write_gpot(stem + ".targets.gpot", to_channel_first(ds.targets));
  std::ostringstream meta;
  meta << "pde = " << ds.pde << "\n";
  meta << "boundary = " << ds.boundary << "\n";
  meta << "count = " << ds.count() << "\n";
  meta << "seed = " << ds.seed << "\n";
  meta << "digest = " << ds.digest() << "\n";
  io::write_text(stem + ".meta", meta.str());
}

namespace {

std::string meta_value(const std::string& body, const std::string& key) {
  std::istringstream in(body);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (trim(line.substr(0, eq)) == key) return trim(line.substr(eq + 1));
  }
  return {};
}

}  // namespace

OperatorDataset ingest_dataset(const std::string& stem) {
  OperatorDataset ds;
  ds.inputs = to_channel_last(io::read_gpot(stem + ".inputs.gpot"));
  ds.targets = to_channel_last(io::read_gpot(stem + ".targets.gpot"));
  const std::string meta = io::read_text(stem + ".meta");
  ds.pde = meta_value(meta, "pde");
  ds.boundary = meta_value(meta, "boundary");
  const std::string seed = meta_value(meta, "seed");
  if (!seed.empty()) ds.seed = std::stoull(seed);
  ds.validate();
  const std::string digest = meta_value(meta, "digest");
  if (!digest.empty() && std::stoull(digest) != ds.digest())
    throw IoError(stem + ".meta: digest does not match the container payloads");
  return ds;
}

}  // namespace gpo::pde
