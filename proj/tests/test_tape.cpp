#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "gpo/tape.hpp"
#include "helpers.hpp"

using namespace gpo;
using namespace gpo::ad;
using gpo::testutil::fd_gradient;
using gpo::testutil::max_abs_diff;
using gpo::testutil::random_tensor;

namespace {

// Compares the tape gradient of a scalar-valued builder against central
// differences with respect to every input tensor.
void check_gradients(const std::vector<Tensor>& inputs,
                     const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                     double tol = 2e-6) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& in : inputs) vars.push_back(tape.leaf(in, true));
  Var out = build(tape, vars);
  REQUIRE(tape.value(out).is_scalar());
  tape.backward(out);

  for (size_t which = 0; which < inputs.size(); ++which) {
    auto f = [&](const Vec& x) {
      Tape t2;
      std::vector<Var> vs;
      for (size_t i = 0; i < inputs.size(); ++i) {
        Tensor ti = inputs[i];
        if (i == which) ti.data = x;
        vs.push_back(t2.leaf(ti, true));
      }
      return t2.value(build(t2, vs)).value();
    };
    Vec fd = fd_gradient(f, inputs[which].data);
    CAPTURE(which);
    CHECK(max_abs_diff(tape.adjoint(vars[which]).data, fd) < tol);
  }
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  Rng rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({3, 4}, rng);

  check_gradients({a, b}, [&](Tape& t, const std::vector<Var>& v) {
    Var s = add(mul(v[0], v[1]), scale(sub(v[0], v[1]), 0.7));
    return sum_all(mul(s, t.constant(w)));
  });
}

TEST_CASE("matmul and affine gradients match finite differences") {
  Rng rng(11);
  Tensor a = random_tensor({3, 5}, rng);
  Tensor b = random_tensor({5, 2}, rng);
  Tensor w = random_tensor({3, 2}, rng);
  check_gradients({a, b}, [&](Tape& t, const std::vector<Var>& v) {
    return sum_all(mul(matmul(v[0], v[1]), t.constant(w)));
  });

  Tensor x = random_tensor({2, 4, 3}, rng);
  Tensor W = random_tensor({3, 6}, rng);
  Tensor bias = random_tensor({6}, rng);
  Tensor mask = random_tensor({2, 4, 6}, rng);
  check_gradients({x, W, bias}, [&](Tape& t, const std::vector<Var>& v) {
    return sum_all(mul(affine_last(v[0], v[1], v[2]), t.constant(mask)));
  });
}

TEST_CASE("nonlinearities match finite differences") {
  Rng rng(13);
  Tensor x = random_tensor({2, 7}, rng, -2.0, 2.0);
  Tensor w = random_tensor({2, 7}, rng);

  check_gradients({x}, [&](Tape& t, const std::vector<Var>& v) {
    return sum_all(mul(gelu(v[0]), t.constant(w)));
  });
  check_gradients({x}, [&](Tape& t, const std::vector<Var>& v) {
    return sum_all(mul(tanh(v[0]), t.constant(w)));
  });
  check_gradients({x}, [&](Tape& t, const std::vector<Var>& v) {
    return sum_all(mul(exp(scale(v[0], 0.5)), t.constant(w)));
  });

  Tensor pos = random_tensor({2, 7}, rng, 0.5, 2.0);
  check_gradients({pos}, [&](Tape& t, const std::vector<Var>& v) {
    return sum_all(mul(sqrt_guarded(v[0]), t.constant(w)));
  });
}

TEST_CASE("gelu matches the exact normal-cdf form") {
  Tape t;
  Var x = t.leaf(Tensor::from({3}, {0.0, 1.0, -1.0}), true);
  Var y = gelu(x);
  CHECK(t.value(y).data[0] == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(t.value(y).data[1] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(t.value(y).data[2] == doctest::Approx(-0.15865525393145705).epsilon(1e-12));
  t.backward_seeded(y, Tensor::from({3}, {1.0, 0.0, 0.0}));
  CHECK(t.adjoint(x).data[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("sqrt guard clips value and zeroes the gradient below the floor") {
  Tape t;
  Var x = t.leaf(Tensor::from({2}, {-1.0, 4.0}), true);
  Var y = sqrt_guarded(x, 1e-12);
  CHECK(t.value(y).data[0] == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(t.value(y).data[1] == doctest::Approx(2.0).epsilon(1e-14));
  t.backward(sum_all(y));
  CHECK(t.adjoint(x).data[0] == 0.0);
  CHECK(t.adjoint(x).data[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("shared subexpressions accumulate adjoints") {
  Tape t;
  Var x = t.leaf(Tensor::from({2}, {1.5, -0.5}), true);
  Var y = add(mul(x, x), scale(x, 3.0));  // d/dx = 2x + 3
  t.backward(sum_all(y));
  CHECK(t.adjoint(x).data[0] == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(t.adjoint(x).data[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("concat and slice route gradients to the right lanes") {
  Rng rng(17);
  Tensor a = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({2, 2}, rng);
  Tensor w = random_tensor({2, 5}, rng);
  check_gradients({a, b}, [&](Tape& t, const std::vector<Var>& v) {
    return sum_all(mul(concat_last(v[0], v[1]), t.constant(w)));
  });

  Tensor wz = random_tensor({2, 2}, rng);
  check_gradients({a}, [&](Tape& t, const std::vector<Var>& v) {
    return sum_all(mul(slice_last(v[0], 1, 2), t.constant(wz)));
  });
}

TEST_CASE("seeded backward equals gradient of the weighted sum") {
  Rng rng(23);
  Tensor x = random_tensor({3, 3}, rng);
  Tensor seed = random_tensor({3, 3}, rng);

  Tape t1;
  Var v1 = t1.leaf(x, true);
  Var y1 = gelu(matmul(v1, v1));
  t1.backward_seeded(y1, seed);
  Vec got = t1.adjoint(v1).data;

  Tape t2;
  Var v2 = t2.leaf(x, true);
  Var y2 = gelu(matmul(v2, v2));
  t2.backward(sum_all(mul(y2, t2.constant(seed))));
  CHECK(max_abs_diff(got, t2.adjoint(v2).data) < 1e-13);
}

TEST_CASE("repeat backward passes do not accumulate stale adjoints") {
  Tape t;
  Var x = t.leaf(Tensor::from({2}, {2.0, 3.0}), true);
  Var y = sum_all(mul(x, x));
  t.backward(y);
  Vec first = t.adjoint(x).data;
  t.backward(y);
  CHECK(max_abs_diff(first, t.adjoint(x).data) == 0.0);
}

TEST_CASE("tape misuse is rejected") {
  Tape t;
  Var x = t.leaf(Tensor::from({2}, {1.0, 2.0}), true);
  CHECK_THROWS_AS(t.backward(x), ValidationError);  // non-scalar seed

  Tape other;
  Var y = other.leaf(Tensor::from({2}, {1.0, 2.0}), true);
  CHECK_THROWS_AS(add(x, y), ValidationError);

  CHECK_THROWS_AS(add(x, t.leaf(Tensor::from({3}, {1, 2, 3}))), ValidationError);
  CHECK_THROWS_AS(matmul(x, x), ValidationError);
  CHECK_THROWS_AS(t.backward_seeded(x, Tensor::from({3}, {1, 2, 3})), ValidationError);
}

TEST_CASE("non-finite intermediates raise numerical errors") {
  Tape t;
  Var x = t.leaf(Tensor::from({1}, {1e4}), true);
  CHECK_THROWS_AS(exp(x), NumericalError);
  CHECK_THROWS_AS(t.leaf(Tensor::from({1}, {std::nan("")})), NumericalError);
}
