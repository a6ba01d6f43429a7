#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "corrfuse/rng.hpp"
#include "corrfuse/simplex.hpp"

using namespace corrfuse;

TEST_CASE("make_simplex keeps valid inputs bit-identical") {
  const std::vector<double> in{0.2, 0.5, 0.3};
  const Simplex p = make_simplex(in);
  REQUIRE(p.probs() == in);
}

TEST_CASE("make_simplex normalizes unnormalized mass") {
  const Simplex p = make_simplex({2.0, 1.0, 1.0});
  REQUIRE(p[0] == 0.5);
  REQUIRE(p[1] == 0.25);
  REQUIRE(p[2] == 0.25);
}

TEST_CASE("make_simplex clamps hard zeros up to the floor") {
  const Simplex p = make_simplex({1.0, 0.0, 0.0});
  REQUIRE(p[1] == Catch::Approx(kProbFloor).epsilon(1e-6));
  REQUIRE(p[2] == Catch::Approx(kProbFloor).epsilon(1e-6));
  REQUIRE(p[0] == Catch::Approx(1.0).margin(1e-8));
  double sum = p[0] + p[1] + p[2];
  REQUIRE(std::abs(sum - 1.0) <= 1e-9);
}

TEST_CASE("make_simplex handles extreme magnitudes") {
  const Simplex p = make_simplex({1e9, 0.0, 1e-30});
  double sum = 0.0;
  for (double v : p.probs()) {
    REQUIRE(v >= kProbFloor);
    REQUIRE(v <= 1.0);
    sum += v;
  }
  REQUIRE(std::abs(sum - 1.0) <= 1e-9);
}

TEST_CASE("make_simplex rejects invalid input") {
  REQUIRE_THROWS_AS(make_simplex({1.0}), validation_error);
  REQUIRE_THROWS_AS(make_simplex({0.5, -0.1, 0.6}), validation_error);
  REQUIRE_THROWS_AS(make_simplex({0.0, 0.0, 0.0}), validation_error);
  REQUIRE_THROWS_AS(make_simplex({0.5, std::nan(""), 0.5}), validation_error);
  REQUIRE_THROWS_AS(make_simplex({0.5, INFINITY, 0.5}), validation_error);
}

TEST_CASE("make_simplex is idempotent on arbitrary raw input") {
  RngState rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> raw(3);
    for (double& v : raw) {
      const double mag = std::pow(10.0, 12.0 * rng.uniform() - 9.0);
      v = rng.uniform() < 0.15 ? 0.0 : mag;
    }
    if (raw[0] == 0.0 && raw[1] == 0.0 && raw[2] == 0.0) raw[0] = 1.0;
    const Simplex once = make_simplex(raw);
    const Simplex twice = make_simplex(once.probs());
    REQUIRE(once.probs() == twice.probs());
  }
}

TEST_CASE("entropy in nats") {
  const Simplex uniform = make_simplex({1.0 / 3, 1.0 / 3, 1.0 / 3});
  REQUIRE(entropy(uniform) == Catch::Approx(std::log(3.0)).epsilon(1e-12));
  const Simplex p = make_simplex({0.6, 0.2, 0.2});
  REQUIRE(entropy(p) == Catch::Approx(0.9502705392332345).epsilon(1e-12));
}

TEST_CASE("log loss in nats") {
  const Simplex p = make_simplex({0.6, 0.2, 0.2});
  REQUIRE(log_loss(p, ClassLabel{2}) == Catch::Approx(1.6094379124341003).epsilon(1e-12));
  REQUIRE(log_loss(p, ClassLabel{1}) == Catch::Approx(-std::log(0.6)).epsilon(1e-12));
  REQUIRE_THROWS_AS(log_loss(p, ClassLabel{0}), validation_error);
  REQUIRE_THROWS_AS(log_loss(p, ClassLabel{4}), validation_error);
}

TEST_CASE("total variation distance") {
  const Simplex a = make_simplex({0.6, 0.2, 0.2});
  const Simplex b = make_simplex({0.2, 0.6, 0.2});
  REQUIRE(total_variation(a, a) == 0.0);
  REQUIRE(total_variation(a, b) == Catch::Approx(0.4).epsilon(1e-12));
  const Simplex c = make_simplex({0.5, 0.5});
  REQUIRE_THROWS_AS(total_variation(a, c), validation_error);
}

TEST_CASE("class labels are 1-based and validated") {
  REQUIRE(make_class_label(1, 3).index() == 0);
  REQUIRE(make_class_label(3, 3).index() == 2);
  REQUIRE_THROWS_AS(make_class_label(0, 3), validation_error);
  REQUIRE_THROWS_AS(make_class_label(4, 3), validation_error);
}
