#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "oslt/etf.hpp"

using namespace oslt;

TEST_CASE("rotation matrices are orthonormal", "[etf]") {
  const Matrix u = make_rotation(3, 3, 0);
  const Matrix gram = u.transpose() * u;
  REQUIRE((gram - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-6);

  const Matrix u2 = make_rotation(128, 7, 42);
  const Matrix g2 = u2.transpose() * u2;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) {
      if (i == j) continue;
      REQUIRE(std::abs(g2(i, j)) < 1e-6);
    }
  REQUIRE(u2.rows() == 128);
  REQUIRE(u2.cols() == 7);
}

TEST_CASE("rotation is deterministic in the seed", "[etf]") {
  const Matrix a = make_rotation(16, 5, 9);
  const Matrix b = make_rotation(16, 5, 9);
  REQUIRE((a - b).cwiseAbs().maxCoeff() == 0.0);
  const Matrix c = make_rotation(16, 5, 10);
  REQUIRE((a - c).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("rotation rejects dim < num_classes", "[etf]") {
  REQUIRE_THROWS_AS(make_rotation(3, 4, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(make_simplex_etf(5, 6, 0), std::invalid_argument);
}

TEST_CASE("two-class frame from the identity rotation", "[etf]") {
  const SimplexEtf frame = make_simplex_etf_from(Matrix::Identity(2, 2));
  REQUIRE(frame.vectors(0, 0) == Catch::Approx(0.70710678).margin(1e-6));
  REQUIRE(frame.vectors(1, 0) == Catch::Approx(-0.70710678).margin(1e-6));
  REQUIRE(frame.vectors(0, 1) == Catch::Approx(-0.70710678).margin(1e-6));
  REQUIRE(frame.vectors(1, 1) == Catch::Approx(0.70710678).margin(1e-6));
  REQUIRE(frame.column(0).dot(frame.column(1)) == Catch::Approx(-1.0).margin(1e-6));
}

TEST_CASE("pairwise inner products equal -1/(L-1)", "[etf]") {
  const SimplexEtf frame = make_simplex_etf(128, 6, 7);
  const Matrix gram = etf_gram(frame);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      if (i == j)
        REQUIRE(gram(i, j) == Catch::Approx(1.0).margin(1e-6));
      else
        REQUIRE(gram(i, j) == Catch::Approx(-0.2).margin(1e-6));
    }
}

TEST_CASE("verify_etf passes exact construction and reports deviations", "[etf]") {
  SimplexEtf frame = make_simplex_etf(8, 4, 3);
  REQUIRE(verify_etf(frame, 1e-6).pass);

  SECTION("scaled column fails with norm deviation 1") {
    frame.vectors.col(1) *= 2.0;
    const EtfReport rep = verify_etf(frame, 1e-6);
    REQUIRE_FALSE(rep.pass);
    REQUIRE(rep.max_norm_deviation == Catch::Approx(1.0).margin(1e-9));
  }

  SECTION("orthonormal basis fails with angle deviation 1/(L-1)") {
    SimplexEtf basis;
    basis.vectors = Matrix::Identity(3, 3);
    basis.num_classes = 3;
    basis.dim = 3;
    const EtfReport rep = verify_etf(basis, 1e-6);
    REQUIRE_FALSE(rep.pass);
    REQUIRE(rep.max_angle_deviation == Catch::Approx(0.5).margin(1e-9));
    REQUIRE(rep.max_norm_deviation == Catch::Approx(0.0).margin(1e-9));
  }
}

TEST_CASE("gram matrix matches the closed form over a parameter sweep", "[etf]") {
  for (int L : {2, 3, 5, 8}) {
    for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
      const int d = L + 3;
      const SimplexEtf frame = make_simplex_etf(d, L, seed);
      const Matrix expected = (static_cast<double>(L) / (L - 1)) * Matrix::Identity(L, L) -
                              Matrix::Constant(L, L, 1.0 / (L - 1));
      REQUIRE((etf_gram(frame) - expected).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("rotated frames stay simplex ETFs", "[etf]") {
  const SimplexEtf frame = make_simplex_etf(16, 5, 4);
  const Matrix q = make_rotation(16, 16, 99);  // square orthogonal
  SimplexEtf rotated = frame;
  rotated.vectors = q * frame.vectors;
  REQUIRE(verify_etf(rotated, 1e-6).pass);
}

TEST_CASE("frame export and import round-trips", "[etf]") {
  const SimplexEtf frame = make_simplex_etf(12, 5, 21);
  const std::string npy = "etf_roundtrip.npy";
  const std::string meta = "etf_roundtrip.json";
  save_etf(frame, npy, meta);
  const SimplexEtf loaded = load_etf(npy, meta);
  REQUIRE(loaded.dim == frame.dim);
  REQUIRE(loaded.num_classes == frame.num_classes);
  REQUIRE(loaded.seed == frame.seed);
  REQUIRE((loaded.vectors - frame.vectors).cwiseAbs().maxCoeff() == 0.0);
  std::remove(npy.c_str());
  std::remove(meta.c_str());
}
