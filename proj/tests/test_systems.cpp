#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "resodyn/splitting.hpp"
#include "resodyn/systems.hpp"
#include "test_helpers.hpp"

using namespace resodyn;

TEST_CASE("torus metric basics") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 10000; ++i) {
    TorusPoint a = testutil::random_point(rng), b = testutil::random_point(rng),
               c = testutil::random_point(rng);
    double ab = torus_distance(a, b), bc = torus_distance(b, c), ac = torus_distance(a, c);
    REQUIRE(ac <= ab + bc + 1e-12);
    REQUIRE(ab <= torus_diameter(2) + 1e-12);
    REQUIRE(ab == Catch::Approx(torus_distance(b, a)).margin(0.0));
  }
  REQUIRE(torus_distance({0.95, 0.0}, {0.05, 0.0}) == Catch::Approx(0.1).margin(1e-15));
}

TEST_CASE("cat map evaluate") {
  DiscreteMap cat = make_map("cat");
  SECTION("fixed point") {
    TorusPoint x(0.0, 0.0);
    REQUIRE(torus_distance(evaluate(cat, x, 5), x) == 0.0);
  }
  SECTION("hand computation A*(0.1,0.2) mod 1 = (0.4,0.3)") {
    TorusPoint y = evaluate(cat, {0.1, 0.2}, 1);
    REQUIRE(y.coords[0] == Catch::Approx(0.4).margin(1e-15));
    REQUIRE(y.coords[1] == Catch::Approx(0.3).margin(1e-15));
  }
  SECTION("zero steps is identity") {
    TorusPoint x(0.37, 0.81);
    REQUIRE(torus_distance(evaluate(cat, x, 0), x) == 0.0);
  }
  SECTION("orbit cap enforced") {
    DiscreteMap capped = cat;
    capped.orbit_cap = 10;
    REQUIRE_THROWS_AS(evaluate(capped, {0.1, 0.1}, 11), precondition_error);
  }
}

TEST_CASE("forward/inverse round trip on built-ins") {
  for (const char* desc : {"cat", "perturbed-cat:delta=0.1", "identity"}) {
    DiscreteMap m = make_map(desc);
    REQUIRE_NOTHROW(validate_map(m, 1000, 42));
  }
}

TEST_CASE("derivative matches central finite differences") {
  std::mt19937_64 rng(5);
  for (const char* desc : {"cat", "perturbed-cat:delta=0.1"}) {
    DiscreteMap m = make_map(desc);
    for (int trial = 0; trial < 20; ++trial) {
      TorusPoint x = testutil::random_point(rng);
      Mat jac = m.derivative(x);
      double h = 1e-6;
      for (int col = 0; col < 2; ++col) {
        Vec dx = Vec::Zero(2);
        dx[col] = h;
        Vec fwd = torus_diff(m.forward(torus_translate(x, dx)), m.forward(torus_translate(x, Vec(-dx))));
        for (int row = 0; row < 2; ++row)
          REQUIRE(jac(row, col) == Catch::Approx(fwd[row] / (2 * h)).margin(1e-6));
      }
    }
  }
}

TEST_CASE("map coefficient file round trip") {
  std::string path = std::string(RESODYN_TEST_DATA_DIR) + "/perturbed_cat.map";
  DiscreteMap from_file = make_map("file:" + path);
  DiscreteMap builtin = make_map("perturbed-cat:delta=0.1");
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    TorusPoint x = testutil::random_point(rng);
    REQUIRE(torus_distance(from_file.forward(x), builtin.forward(x)) < 1e-12);
    REQUIRE((from_file.derivative(x) - builtin.derivative(x)).norm() < 1e-12);
  }
}

TEST_CASE("registry rejects unknown descriptors") {
  REQUIRE_THROWS_AS(make_map("lorenz"), usage_error);
  REQUIRE_THROWS_AS(make_map("perturbed-cat:gamma=1"), usage_error);
}

TEST_CASE("cat eigenframes are invariant to machine precision") {
  DiscreteMap cat = make_map("cat");
  Splitting s = cat_eigen_splitting();
  std::mt19937_64 rng(17);
  for (int i = 0; i < 50; ++i) {
    REQUIRE(splitting_invariance_residual(cat, s, testutil::random_point(rng)) <= 1e-14);
  }
}

TEST_CASE("identity map with any constant splitting has zero residual") {
  DiscreteMap id = make_map("identity");
  std::mt19937_64 rng(23);
  Mat a(2, 1), b(2, 1);
  a << 0.6, 0.8;
  b << -0.8, 0.6;
  Splitting s = constant_splitting({a, b}, "const");
  for (int i = 0; i < 20; ++i)
    REQUIRE(splitting_invariance_residual(id, s, testutil::random_point(rng)) <= 1e-14);
}

TEST_CASE("cone iteration on the cat map recovers the eigenvector") {
  DiscreteMap cat = make_map("cat");
  Mat seed(2, 1);
  seed << 1.0, 0.3;  // inside the unstable cone
  double ang = 0.0;
  Mat e = cone_iterated_frame(cat, {0.2, 0.7}, seed, 60, true, &ang);
  Vec oracle = testutil::oracle_eigvec(testutil::oracle_lambda_plus());
  REQUIRE(std::abs(std::abs(e.col(0).dot(oracle)) - 1.0) < 1e-12);
  REQUIRE(ang < 1e-12);

  Mat fseed(2, 1);
  fseed << 1.0, -1.2;
  Mat f = cone_iterated_frame(cat, {0.2, 0.7}, fseed, 60, false);
  Vec oracle_f = testutil::oracle_eigvec(testutil::oracle_lambda_minus());
  REQUIRE(std::abs(std::abs(f.col(0).dot(oracle_f)) - 1.0) < 1e-12);
}

TEST_CASE("delta=0 perturbation reduces to the exact cat splitting") {
  DiscreteMap flat = make_map("perturbed-cat:delta=0");
  Splitting cat = cat_eigen_splitting();
  std::mt19937_64 rng(29);
  for (int i = 0; i < 10; ++i) {
    TorusPoint x = testutil::random_point(rng);
    Mat e = cone_iterated_frame(flat, x, cat.frame(x, 0), 60, true);
    Mat f = cone_iterated_frame(flat, x, cat.frame(x, 1), 60, false);
    REQUIRE(frame_angle(e, cat.frame(x, 0)) < 1e-13);
    REQUIRE(frame_angle(f, cat.frame(x, 1)) < 1e-13);
  }
}

TEST_CASE("cone iteration depth self-consistency on the perturbed map") {
  DiscreteMap pc = make_map("perturbed-cat:delta=0.1");
  Splitting cat = cat_eigen_splitting();
  std::mt19937_64 rng(31);
  for (int i = 0; i < 5; ++i) {
    TorusPoint x = testutil::random_point(rng);
    for (int bundle : {0, 1}) {
      Mat seed = cat.frame(x, bundle);
      Mat f60 = cone_iterated_frame(pc, x, seed, 60, bundle == 0);
      Mat f120 = cone_iterated_frame(pc, x, seed, 120, bundle == 0);
      REQUIRE(frame_angle(f60, f120) <= 1e-10);
    }
  }
}

TEST_CASE("mesh splitting: residual within tolerance, oracle agreement") {
  DiscreteMap pc = make_map("perturbed-cat:delta=0.1");
  const Splitting& s = testutil::shared_splitting("perturbed-cat:delta=0.1");
  std::mt19937_64 rng(37);
  double worst = 0.0;
  for (int i = 0; i < 40; ++i) {
    TorusPoint x = testutil::random_point(rng);
    worst = std::max(worst, splitting_invariance_residual(pc, s, x));
    // power-iterated frame as oracle (long depth, direct)
    Mat oracle_e = cone_iterated_frame(pc, x, cat_eigen_splitting().frame(x, 0), 100, true);
    REQUIRE(frame_angle(s.frame(x, 0), oracle_e) <= s.invariance_tol);
  }
  REQUIRE(worst <= s.invariance_tol);
  // refined frames beat the mesh at chart-anchor accuracy
  TorusPoint x = testutil::random_point(rng);
  Mat oracle_f = cone_iterated_frame(pc, x, cat_eigen_splitting().frame(x, 1), 120, false);
  REQUIRE(frame_angle(s.frame_refined(x, 1), oracle_f) <= 1e-11);
}

TEST_CASE("mesh splitting residual decreases with cone depth") {
  // monotone (up to 10% slack) in depth on sampled points
  DiscreteMap pc = make_map("perturbed-cat:delta=0.1");
  Splitting cat = cat_eigen_splitting();
  std::mt19937_64 rng(41);
  TorusPoint x = testutil::random_point(rng);
  double prev = 1e9;
  for (int depth : {4, 8, 16, 32}) {
    Mat e = cone_iterated_frame(pc, x, cat.frame(x, 0), depth, true);
    Mat f = cone_iterated_frame(pc, x, cat.frame(x, 1), depth, false);
    Splitting direct;
    direct.dims = {1, 1};
    direct.frame = [&pc, &cat, depth](const TorusPoint& p, int i) {
      return cone_iterated_frame(pc, p, cat.frame(p, i), depth, i == 0);
    };
    double res = 0.0;
    std::mt19937_64 rng2(43);
    for (int i = 0; i < 5; ++i)
      res = std::max(res, splitting_invariance_residual(pc, direct, testutil::random_point(rng2)));
    REQUIRE(res <= prev * 1.1 + 1e-13);
    prev = res;
  }
}
