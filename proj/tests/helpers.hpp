#pragma once

#include <functional>

#include "gpo/tensor.hpp"

namespace gpo::testutil {

inline double rel_err(double got, double want, double floor = 1e-9) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

inline ad::Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0,
                                double hi = 1.0) {
  ad::Tensor t = ad::Tensor::zeros(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data[i] = rng.uniform(lo, hi);
  return t;
}

// Central finite differences of a scalar function with respect to one flat
// input vector.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x,
                       double step = 1e-6) {
  Vec g(x.size());
  for (int64_t i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    g[i] = (f(xp) - f(xm)) / (2.0 * step);
  }
  return g;
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

inline double max_rel_diff(const Vec& a, const Vec& b, double floor = 1e-6) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor));
  return worst;
}

}  // namespace gpo::testutil
