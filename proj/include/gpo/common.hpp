#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpo {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Error taxonomy maps onto CLI exit codes: validation 2, numerical 3, io 4.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic RNG: xorshift* bits turned into doubles by fixed formulas,
// so streams are reproducible independent of the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_base_(seed), state_(splitmix(seed)) {
    if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;
  }

  // Child stream `index`; independent of draws already taken from the parent.
  Rng split(uint64_t index) const { return Rng(mix(seed_base_, index)); }

  uint64_t next() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }  // [0,1)

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) { return static_cast<int>(next() % static_cast<uint64_t>(n)); }

  double normal() {  // Box-Muller, cached spare
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static uint64_t splitmix(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }
  static uint64_t mix(uint64_t a, uint64_t b) {
    return splitmix(a ^ splitmix(b + 0x632BE59BD9B4E019ULL));
  }

  uint64_t seed_base_;
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// CRC-32 (IEEE), table-driven.
uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);

// FNV-1a over raw bytes, for cache fingerprints and provenance digests.
uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 0xCBF29CE484222325ULL);
uint64_t fnv1a(const std::vector<double>& v, uint64_t seed = 0xCBF29CE484222325ULL);
uint64_t fnv1a(const Vec& v, uint64_t seed = 0xCBF29CE484222325ULL);

std::string format_shape(const std::vector<int64_t>& shape);

}  // namespace gpo
