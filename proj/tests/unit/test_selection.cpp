#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "debflow/selection.hpp"
#include "oracles.hpp"

using namespace debflow;
using namespace debflow::testing;

namespace {

struct Case {
  std::vector<double> scores;
  double lambda;
  double alpha;
};

Case random_case(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Case c;
  const int n = 1 + static_cast<int>(rng() % 10);
  for (int i = 0; i < n; ++i) c.scores.push_back(rng() % 5 == 0 ? 0.5 : u(rng));
  c.lambda = rng() % 8 == 0 ? 1.0 : u(rng);
  c.alpha = 0.1 + 10.0 * u(rng);
  return c;
}

}  // namespace

TEST_CASE("two-candidate example") {
  const std::vector<double> s{0.8, 0.6};
  const auto p = mixed_probabilities(s, 0.2, 5.0);
  // Weights 1 and e^-1 normalise to 0.73106 / 0.26894; mixed with 0.5 at lambda 0.2.
  CHECK(std::abs(p[0] - 0.6849) < 1e-4);
  CHECK(std::abs(p[1] - 0.3151) < 1e-4);
  const double soft = 1.0 / (1.0 + std::exp(-1.0));
  CHECK(p[0] == doctest::Approx(0.1 + 0.8 * soft).epsilon(1e-12));
}

TEST_CASE("lambda 1 is exactly uniform") {
  const std::vector<double> s{0.9, 0.1, 0.5, 0.0};
  CHECK(mixed_probabilities(s, 1.0, 5.0) == std::vector<double>(4, 0.25));
}

TEST_CASE("equal scores give the uniform vector") {
  for (double lambda : {0.0, 0.2, 0.7}) {
    for (double alpha : {0.5, 5.0, 40.0}) {
      const auto p = mixed_probabilities(std::vector<double>(3, 0.42), lambda, alpha);
      for (double x : p) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
      CHECK(p[0] == p[1]);
      CHECK(p[1] == p[2]);
    }
  }
}

TEST_CASE("invalid inputs are rejected") {
  const std::vector<double> s{0.5};
  CHECK_THROWS_AS(mixed_probabilities({}, 0.2, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(mixed_probabilities(s, -0.1, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(mixed_probabilities(s, 1.1, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(mixed_probabilities(s, 0.2, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(mixed_probabilities(s, std::nan(""), 5.0), std::invalid_argument);
}

TEST_CASE("distribution properties over random inputs") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> shift(-3.0, 3.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto c = random_case(rng);
    CAPTURE(trial);
    const auto p = mixed_probabilities(c.scores, c.lambda, c.alpha);
    const double sum = std::accumulate(p.begin(), p.end(), 0.0);
    REQUIRE(std::abs(sum - 1.0) <= 1e-9);

    const auto expected = oracle_probabilities(c.scores, c.lambda, c.alpha);
    for (size_t i = 0; i < p.size(); ++i) REQUIRE(std::abs(p[i] - expected[i]) <= 1e-12);

    for (size_t i = 0; i < p.size(); ++i) {
      for (size_t j = 0; j < p.size(); ++j) {
        if (c.scores[i] >= c.scores[j]) REQUIRE(p[i] >= p[j]);
      }
    }

    auto moved = c.scores;
    const double k = shift(rng);
    for (auto& x : moved) x += k;
    const auto q = mixed_probabilities(moved, c.lambda, c.alpha);
    for (size_t i = 0; i < p.size(); ++i) REQUIRE(std::abs(p[i] - q[i]) <= 1e-12);

    if (c.lambda == 1.0) {
      for (double x : p) REQUIRE(x == 1.0 / static_cast<double>(p.size()));
    }
  }
}

TEST_CASE("a single candidate is always selected") {
  SelectionRng rng(1);
  const std::vector<double> s{0.3};
  CHECK(mixed_probabilities(s, 0.2, 5.0) == std::vector<double>{1.0});
  for (int i = 0; i < 100; ++i) CHECK(select_candidate(s, 0.2, 5.0, rng) == 0);
}

TEST_CASE("selection is reproducible for a fixed seed") {
  const std::vector<double> s{0.1, 0.5, 0.5, 0.9};
  SelectionRng a(77);
  SelectionRng b(77);
  for (int i = 0; i < 200; ++i) CHECK(select_candidate(s, 0.2, 5.0, a) == select_candidate(s, 0.2, 5.0, b));
}

TEST_CASE("empirical frequencies match the two-candidate example") {
  SelectionRng rng(12345);
  const std::vector<double> s{0.8, 0.6};
  int first = 0;
  for (int i = 0; i < 10'000; ++i) first += select_candidate(s, 0.2, 5.0, rng) == 0;
  CHECK(std::abs(first / 10'000.0 - 0.6849) <= 0.02);
}

TEST_CASE("sampling skips zero-probability entries") {
  SelectionRng rng(3);
  const std::vector<double> p{0.0, 1.0, 0.0};
  for (int i = 0; i < 100; ++i) CHECK(sample_index(p, rng) == 1);
  for (int i = 0; i < 1000; ++i) {
    const double u = unit_draw(rng);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}
