#include <doctest.h>

#include <random>

#include "fiqa/error.hpp"
#include "fiqa/metrics.hpp"
#include "oracles.hpp"

using namespace fiqa;

TEST_CASE("plcc examples") {
  const std::vector<double> gt{1, 2, 3};
  CHECK(plcc(gt, gt) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(plcc(std::vector<double>{1, 2, 4}, gt) == doctest::Approx(0.98198).epsilon(1e-5));
  CHECK(plcc(std::vector<double>{-1, -2, -3}, gt) == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("srcc examples") {
  const std::vector<double> gt{1, 3, 2};
  CHECK(srcc(std::vector<double>{0.1, 0.4, 0.3}, gt) == doctest::Approx(1.0));
  CHECK(srcc(std::vector<double>{0.1, 0.3, 0.4}, gt) == doctest::Approx(0.5));
  const std::vector<double> tied{1, 1, 2};
  const std::vector<double> g3{1, 2, 3};
  CHECK(average_ranks(tied) == std::vector<double>{1.5, 1.5, 3.0});
  CHECK(srcc(tied, g3) == doctest::Approx(oracle::pearson({1.5, 1.5, 3.0}, {1, 2, 3})));
}

TEST_CASE("degenerate input is an error") {
  auto kind = [](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  const std::vector<double> flat{2, 2, 2}, gt{1, 2, 3};
  CHECK(kind([&] { plcc(flat, gt); }) == ErrorKind::DegenerateInput);
  CHECK(kind([&] { srcc(gt, flat); }) == ErrorKind::DegenerateInput);
  CHECK(kind([&] { plcc(std::vector<double>{1.0}, std::vector<double>{1.0}); }) == ErrorKind::DegenerateInput);
  CHECK(kind([&] { plcc(gt, std::vector<double>{1, 2}); }) == ErrorKind::LengthMismatch);
}

TEST_CASE("final score and four-decimal display") {
  const auto a = final_score(0.9829, 0.9894);
  CHECK(a.final == doctest::Approx(0.98615).epsilon(1e-15));
  CHECK(format_4dp(a.final) == "0.9862");
  const auto b = final_score(0.5324, 0.7833);
  CHECK(format_4dp(b.final) == "0.6578");
  CHECK(final_score(1.0, 1.0).final == 1.0);
  CHECK(format_4dp(1.0) == "1.0000");
  CHECK(format_4dp(-0.25) == "-0.2500");
  CHECK(format_4dp(0.12344999) == "0.1234");
  CHECK(format_4dp(0.12345001) == "0.1235");
}

TEST_CASE("rank correlation is invariant to monotone transforms") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = testing_support::random_vector(rng, 30, trial % 2 == 0);
    const auto y = testing_support::random_vector(rng, 30, false);
    std::vector<double> ex;
    for (double v : x) ex.push_back(std::exp(v) * 3.0 + 1.0);
    CHECK(std::fabs(srcc(ex, y) - srcc(x, y)) < 1e-9);
    std::vector<double> affine;
    for (double v : x) affine.push_back(0.5 * v + 10.0);
    CHECK(std::fabs(plcc(affine, y) - plcc(x, y)) < 1e-9);
  }
}

TEST_CASE("metrics match the brute-force oracle") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> size(2, 100);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(size(rng));
    auto x = testing_support::random_vector(rng, n, trial % 3 == 0);
    auto y = testing_support::random_vector(rng, n, trial % 5 == 0);
    if (x == std::vector<double>(n, x[0]) || y == std::vector<double>(n, y[0])) continue;
    CHECK(std::fabs(plcc(x, y) - oracle::pearson(x, y)) < 1e-9);
    CHECK(std::fabs(srcc(x, y) - oracle::spearman(x, y)) < 1e-9);
  }
}
