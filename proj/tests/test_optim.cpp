#include <doctest.h>

#include <cmath>

#include "fiqa/optim.hpp"

using namespace fiqa;

TEST_CASE("step schedule") {
  CHECK(step_lr(5e-4, 0.5, 5, 0) == doctest::Approx(5e-4));
  CHECK(step_lr(5e-4, 0.5, 5, 4) == doctest::Approx(5e-4));
  CHECK(step_lr(5e-4, 0.5, 5, 5) == doctest::Approx(2.5e-4));
  CHECK(step_lr(5e-4, 0.5, 5, 11) == doctest::Approx(1.25e-4).epsilon(1e-15));
}

TEST_CASE("adam matches the hand-computed update") {
  nn::Parameter a(Shape{1, 1, 1, 1});
  nn::Parameter b(Shape{1, 1, 1, 1});
  a.value.data()[0] = 1.0f;
  b.value.data()[0] = 1.0f;
  Adam adam({{{&a}, 0.1}, {{&b}, 1.0}}, {0.9, 0.999, 1e-8, 0.01});
  adam.set_lr(1e-2);
  CHECK(adam.lr(0) == doctest::Approx(1e-3));
  CHECK(adam.lr(1) == doctest::Approx(1e-2));

  double wb = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    a.grad.data()[0] = 0.5f;
    b.grad.data()[0] = 0.5f;
    adam.step();
    const double g = 0.5 + 0.01 * wb;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    wb -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
  }
  CHECK(b.value.data()[0] == doctest::Approx(wb).epsilon(1e-6));
  // The first Adam steps move by ~lr regardless of gradient scale.
  CHECK(1.0 - a.value.data()[0] == doctest::Approx(3e-3).epsilon(1e-3));
}
