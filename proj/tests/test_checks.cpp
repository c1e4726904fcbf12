#include <doctest.h>

#include <cmath>
#include <numeric>

#include "metagnn/checks.hpp"
#include "metagnn/error.hpp"

using namespace metagnn;

namespace {

const ArchKind kAllArchs[] = {ArchKind::kGcn, ArchKind::kGat, ArchKind::kMpnn, ArchKind::kEgnn};

}  // namespace

// Parameters whose shift is removed by a following normalization have a true
// gradient of zero; their central difference is pure rounding noise (~1e-11),
// so each probe is judged with an absolute floor on top of the relative bound.
TEST_CASE("gradients of every architecture match finite differences") {
  for (ArchKind k : kAllArchs) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      FiniteDiffReport r = gradcheck_model(k, seed);
      REQUIRE(r.probes.size() == 100);
      for (const FiniteDiffProbe& p : r.probes) {
        INFO(arch_name(k), " ", p.name, "[", p.index, "] analytic ", p.analytic, " numeric ", p.numeric);
        CHECK(std::abs(p.analytic - p.numeric) <= 1e-4 * std::max(std::abs(p.analytic), std::abs(p.numeric)) + 1e-9);
        if (p.rel_error >= 1e-4) CHECK(std::abs(p.analytic) < 1e-14);
      }
    }
  }
}

TEST_CASE("predictions ignore node order") {
  for (ArchKind k : kAllArchs) {
    const double dev = permutation_deviation(k, 1);
    INFO(arch_name(k), " deviation ", dev);
    CHECK(dev < 1e-9);
  }
}

TEST_CASE("rigid motions of the coordinates") {
  for (ArchKind k : kAllArchs) {
    E3Deviation d = e3_deviation(k, 2);
    INFO(arch_name(k), " scalar ", d.scalar, " coords ", d.coords);
    CHECK(d.scalar < 1e-9);
    CHECK(d.coords < 1e-9);
  }
}

TEST_CASE("random orthogonal matrices") {
  Rng rng(5);
  int reflections = 0;
  for (int rep = 0; rep < 40; ++rep) {
    Mat3 q = random_orthogonal(rng);
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t b = 0; b < 3; ++b) {
        double dot = 0;
        for (std::size_t r = 0; r < 3; ++r) dot += q[r][a] * q[r][b];
        CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-12);
      }
    }
    const double det = q[0][0] * (q[1][1] * q[2][2] - q[1][2] * q[2][1]) -
                       q[0][1] * (q[1][0] * q[2][2] - q[1][2] * q[2][0]) +
                       q[0][2] * (q[1][0] * q[2][1] - q[1][1] * q[2][0]);
    CHECK(std::abs(std::abs(det) - 1.0) < 1e-12);
    reflections += det < 0;
  }
  CHECK(reflections > 5);
  CHECK(reflections < 35);
}

TEST_CASE("graph relabeling and coordinate transforms") {
  Rng rng(3);
  Graph g = random_graph(7, 3, 2, true, rng);
  CHECK(g.num_nodes == 7);
  std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4}, inverse(7);
  for (std::size_t i = 0; i < 7; ++i) inverse[perm[i]] = i;
  Graph h = permute_graph(g, perm);
  CHECK_NOTHROW(validate_graph(h, 3, 2, true, g.targets.size()));
  CHECK(permute_graph(h, inverse) == g);
  CHECK_THROWS_AS(permute_graph(g, {0, 1}), ContractError);

  Mat3 identity{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Graph shifted = transform_coords(g, identity, {1, 2, 3});
  for (std::size_t i = 0; i < 7; ++i) CHECK(shifted.coords->at(i, 2) == g.coords->at(i, 2) + 3);
  Graph flat = random_graph(4, 1, 0, false, rng);
  CHECK_THROWS_AS(transform_coords(flat, identity, {0, 0, 0}), ContractError);
}
