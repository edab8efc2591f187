#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "cldob/diagnostics.hpp"
#include "cldob/history_stack.hpp"
#include "cldob/numerics.hpp"
#include "cldob/systems.hpp"

using namespace cldob;

namespace {

Eigen::MatrixXd m1(double v) {
  Eigen::MatrixXd m(1, 1);
  m << v;
  return m;
}

Eigen::VectorXd v1(double v) {
  Eigen::VectorXd x(1);
  x << v;
  return x;
}

SymMatrix sym1(double v) { return SymMatrix(m1(v)); }

SymMatrix diag2(double a, double b) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return SymMatrix(m);
}

}  // namespace

TEST_CASE("check_condition margins", "[diagnostics]") {
  const SymMatrix S_L = diag2(0.1, 0.1);
  const SymMatrix S_U = diag2(1.0, 1.0);

  SECTION("midway state satisfies both bounds") {
    const ConditionStatus st = check_condition(diag2(0.5, 0.5), S_L, S_U);
    CHECK(st.lower_ok);
    CHECK(st.upper_ok);
    CHECK(st.margin_lower == Catch::Approx(0.4).margin(1e-12));
    CHECK(st.margin_upper == Catch::Approx(0.5).margin(1e-12));
  }

  SECTION("sitting exactly on the lower bound fails the strict check") {
    const ConditionStatus st = check_condition(S_L, S_L, S_U);
    CHECK_FALSE(st.lower_ok);
    CHECK(st.margin_lower == Catch::Approx(0.0).margin(1e-12));
    CHECK(st.upper_ok);
  }

  SECTION("near-cleared node breaks the lower bound") {
    // Depth-1 stack built from a gain whose column collapses as x_1 -> 0.
    Eigen::MatrixXd W(2, 2);
    W << 0, 1, 1, 0;
    Eigen::VectorXd x(2);
    x << 1e-4, 0.5;
    const Eigen::MatrixXd L = sis_gain(x, W);
    HistoryStack st(2, 1e-3, DiagonalGain::uniform(2, -1.0), 1);
    st.advance_and_add(L, Eigen::VectorXd::Zero(2));
    const ConditionStatus c =
        check_condition(st.S(), diag2(0.04, 0.04), diag2(9.9, 9.9));
    CHECK_FALSE(c.lower_ok);
    CHECK(c.margin_lower < 0.0);
  }

  SECTION("dimension mismatch throws") {
    CHECK_THROWS_AS(check_condition(sym1(0.5), S_L, S_U), std::invalid_argument);
  }
}

TEST_CASE("ResidualHistory indexing", "[diagnostics]") {
  ResidualHistory h;
  CHECK(h.size() == 0);
  CHECK_THROWS_AS(h.at(0), std::out_of_range);
  h.push(v1(0.5));
  h.push(v1(-0.25));
  CHECK(h.size() == 2);
  CHECK(h.at(1)[0] == -0.25);
  CHECK_THROWS_AS(h.at(2), std::out_of_range);
  CHECK_THROWS_AS(h.at(-1), std::out_of_range);
}

TEST_CASE("residual_discrete closed forms", "[diagnostics]") {
  const DiagonalGain lam = DiagonalGain::uniform(1, -1.0);

  SECTION("constant disturbance") {
    const double c = 0.7;
    const Eigen::VectorXd r = residual_discrete(v1(c), v1(c), lam, 0.1);
    CHECK(r[0] == Catch::Approx(0.09516258196404048 * c).epsilon(1e-13));
  }

  SECTION("zero disturbance") {
    CHECK(residual_discrete(v1(0), v1(0), lam, 0.1).norm() == 0.0);
  }

  SECTION("model-matched disturbance cancels") {
    const double h = 0.05, d0 = 0.9;
    for (int k = 0; k < 5; ++k) {
      const double dk = d0 * std::exp(-h * k);
      const double dk1 = d0 * std::exp(-h * (k + 1));
      const Eigen::VectorXd r = residual_discrete(v1(dk), v1(dk1), lam, h);
      REQUIRE(std::abs(r[0]) < 1e-15);
    }
  }

  SECTION("dimension mismatch throws") {
    CHECK_THROWS_AS(residual_discrete(v1(0), Eigen::VectorXd::Zero(2), lam, 0.1),
                    std::invalid_argument);
  }
}

TEST_CASE("residual_continuous closed forms", "[diagnostics]") {
  const DiagonalGain lam = DiagonalGain::uniform(1, -1.0);

  SECTION("model solution cancels") {
    for (double t : {0.0, 0.5, 2.0}) {
      const double d = std::exp(-t);
      const Eigen::VectorXd r = residual_continuous(v1(-d), v1(d), lam);
      REQUIRE(std::abs(r[0]) < 1e-15);
    }
  }

  SECTION("constant disturbance leaves +c") {
    const Eigen::VectorXd r = residual_continuous(v1(0.0), v1(0.6), lam);
    CHECK(r[0] == Catch::Approx(0.6).margin(1e-15));
  }

  SECTION("sinusoid") {
    for (double t : {0.2, 1.0, 2.5}) {
      const Eigen::VectorXd r =
          residual_continuous(v1(std::cos(t)), v1(std::sin(t)), lam);
      REQUIRE(r[0] == Catch::Approx(std::cos(t) + std::sin(t)).margin(1e-14));
    }
  }
}

TEST_CASE("accumulated_error_discrete closed forms", "[diagnostics]") {
  const double h = 0.1;
  const DiagonalGain lam = DiagonalGain::uniform(1, -1.0);

  SECTION("empty stack reduces to the current residual") {
    HistoryStack st(1, h, lam, 10);
    ResidualHistory res;
    res.push(v1(0.4));
    const Eigen::VectorXd xi = accumulated_error_discrete(st, res);
    CHECK(xi[0] == Catch::Approx(0.4).margin(1e-15));
  }

  SECTION("zero residuals give zero") {
    HistoryStack st(1, h, lam, 10);
    st.advance_and_add(m1(1.3), v1(0.2));
    st.advance_and_add(m1(0.7), v1(0.1));
    ResidualHistory res;
    for (int i = 0; i < 3; ++i) res.push(v1(0.0));
    CHECK(accumulated_error_discrete(st, res).norm() == 0.0);
  }

  SECTION("single unit sample one step back") {
    HistoryStack st(1, h, lam, 10);
    st.advance_and_add(m1(1.0), v1(0.0));  // sample at k_j = 0, current k = 1
    ResidualHistory res;
    res.push(v1(0.7));  // xi_d(0)
    res.push(v1(0.3));  // xi_d(1)
    const Eigen::VectorXd xi = accumulated_error_discrete(st, res);
    // xi = xi_d(1) + e^{0.2} * xi_d(0)
    CHECK(xi[0] == Catch::Approx(0.3 + 0.8549819307121188).epsilon(1e-13));
  }

  SECTION("missing residual index throws") {
    HistoryStack st(1, h, lam, 10);
    st.advance_and_add(m1(1.0), v1(0.0));
    ResidualHistory res;
    res.push(v1(0.1));  // index 1 (current instant) missing
    CHECK_THROWS_AS(accumulated_error_discrete(st, res), std::out_of_range);
  }
}

TEST_CASE("accumulated error with a zero residual tail reduces to the head",
          "[diagnostics][property]") {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  HistoryStack st(2, 0.01, DiagonalGain::uniform(2, -2.0), 50);
  for (int k = 0; k < 30; ++k) {
    Eigen::MatrixXd L(2, 2);
    L << uni(rng), uni(rng), uni(rng), uni(rng);
    Eigen::VectorXd z(2);
    z << uni(rng), uni(rng);
    st.advance_and_add(L, z);
  }
  ResidualHistory res;
  for (long i = 0; i < st.current_instant(); ++i)
    res.push(Eigen::VectorXd::Zero(2));
  Eigen::VectorXd head(2);
  head << 0.37, -0.12;
  res.push(head);
  const Eigen::VectorXd xi = accumulated_error_discrete(st, res);
  CHECK((xi - head).norm() < 1e-15);
}

TEST_CASE("uub_radius_discrete closed forms", "[diagnostics]") {
  CHECK(uub_radius_discrete(5.0, 0.01, 1.0, 1.0) ==
        Catch::Approx(0.6560701700396552).epsilon(1e-13));
  CHECK(uub_radius_discrete(5.0, 0.01, 0.0, 1.0) == 0.0);

  SECTION("small-step limit approaches the h-free expression") {
    const double limit = (1.0 / 10.0 + std::sqrt(1.0 / 20.0)) * 2.0;
    CHECK(uub_radius_discrete(5.0, 1e-12, 1.0, 1.0) ==
          Catch::Approx(limit).margin(1e-6));
  }

  SECTION("invalid arguments throw") {
    CHECK_THROWS_AS(uub_radius_discrete(0.0, 0.01, 1.0, 1.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(uub_radius_discrete(5.0, -0.1, 1.0, 1.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(uub_radius_discrete(5.0, 0.01, -1.0, 1.0),
                    std::invalid_argument);
  }
}

TEST_CASE("uub_radius_continuous closed forms", "[diagnostics]") {
  CHECK(uub_radius_continuous(5.0, 1.0, 1.0) == Catch::Approx(0.4).margin(1e-15));
  CHECK(uub_radius_continuous(5.0, 0.0, 1.0) == 0.0);
  CHECK(uub_radius_continuous(5.0, 1.0, 0.0) == Catch::Approx(0.2).margin(1e-15));
  CHECK_THROWS_AS(uub_radius_continuous(-1.0, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("uub radii monotonicity", "[diagnostics][property]") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> uni(0.1, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double omega = uni(rng), h = 0.1 * uni(rng), xi = uni(rng),
                 rho = uni(rng);
    const double base = uub_radius_discrete(omega, h, xi, rho);
    REQUIRE(uub_radius_discrete(omega, h, xi * 1.5, rho) > base);
    REQUIRE(uub_radius_discrete(omega, h, xi, rho + 0.5) > base);
    REQUIRE(uub_radius_discrete(omega, h * 1.5, xi, rho) > base);
    REQUIRE(uub_radius_discrete(omega * 1.5, h, xi, rho) < base);
    const double cbase = uub_radius_continuous(omega, xi, rho);
    REQUIRE(uub_radius_continuous(omega * 1.5, xi, rho) < cbase);
    REQUIRE(uub_radius_continuous(omega, xi * 1.5, rho) > cbase);
  }
}

TEST_CASE("pe_metric closed forms", "[diagnostics]") {
  SECTION("empty window scores zero") {
    CHECK(pe_metric({}, 0.1) == 0.0);
  }

  SECTION("all-zero products score zero") {
    std::vector<Eigen::VectorXd> prods(5, Eigen::VectorXd::Zero(2));
    CHECK(pe_metric(prods, 0.1) == Catch::Approx(0.0).margin(1e-15));
  }

  SECTION("scalar window of ones") {
    std::vector<Eigen::VectorXd> prods(10, v1(1.0));
    CHECK(pe_metric(prods, 0.1) == Catch::Approx(1.0).epsilon(1e-13));
  }

  SECTION("rank-deficient window scores zero") {
    Eigen::VectorXd dir(2);
    dir << 1.0, 2.0;
    std::vector<Eigen::VectorXd> prods;
    for (int i = 0; i < 8; ++i) prods.push_back((1.0 + i) * dir);
    CHECK(pe_metric(prods, 0.1) == Catch::Approx(0.0).margin(1e-12));
  }

  SECTION("invalid inputs throw") {
    CHECK_THROWS_AS(pe_metric({v1(1.0)}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(pe_metric({v1(1.0), Eigen::VectorXd::Zero(2)}, 0.1),
                    std::invalid_argument);
  }
}

TEST_CASE("pe_metric grows with the window", "[diagnostics][property]") {
  std::mt19937_64 rng(64);
  std::normal_distribution<double> nrm(0.0, 1.0);
  std::vector<Eigen::VectorXd> prods;
  double prev = 0.0;
  for (int k = 0; k < 60; ++k) {
    Eigen::VectorXd v(3);
    for (int i = 0; i < 3; ++i) v[i] = nrm(rng);
    prods.push_back(v);
    const double cur = pe_metric(prods, 0.05);
    REQUIRE(cur >= prev - 1e-12);
    prev = cur;
  }
  REQUIRE(prev > 0.0);
}
