#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "tensegrity/errors.hpp"
#include "tensegrity/geometry.hpp"

using namespace tensegrity;

namespace {

// Composition computed straight from the permutation arrays: (g . h)[i] = g[h[i]].
std::array<int, kNumEndcaps> compose_perm(const GroupElement& g, const GroupElement& h) {
  std::array<int, kNumEndcaps> out{};
  for (int i = 0; i < kNumEndcaps; ++i) out[i] = g.endcap_perm[h.endcap_perm[i]];
  return out;
}

int find_by_perm(const D3Group& group, const std::array<int, kNumEndcaps>& perm) {
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (group[i].endcap_perm == perm) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

TEST_CASE("canonical topology has 6 endcaps, 3 rods and 9 tendons") {
  const auto topo = build_canonical_topology();
  CHECK(topo.endcap_positions.size() == 6);
  CHECK(topo.rods.size() == 3);
  CHECK(topo.tendons.size() == 9);
  CHECK_NOTHROW(validate_topology(topo));
}

TEST_CASE("every endcap has tendon degree 3 (brute-force incidence count)") {
  const auto topo = build_canonical_topology();
  for (int e = 0; e < kNumEndcaps; ++e) {
    int count = 0;
    for (const auto& [a, b] : topo.tendons) count += (a == e) + (b == e);
    CHECK(count == 3);
    CHECK(tendon_degrees(topo)[e] == 3);
  }
}

TEST_CASE("rod pairs partition the endcaps") {
  const auto topo = build_canonical_topology();
  std::set<int> seen;
  for (const auto& [a, b] : topo.rods) {
    seen.insert(a);
    seen.insert(b);
  }
  CHECK(seen == std::set<int>{0, 1, 2, 3, 4, 5});
  for (int i = 0; i < kNumRods; ++i) CHECK(topo.rods[i] == EdgePair{i, i + 3});
}

TEST_CASE("IMU frames are right-handed with y along the rod from top to bottom") {
  const auto topo = build_canonical_topology();
  for (int r = 0; r < kNumRods; ++r) {
    const Eigen::Matrix3d& q = topo.imu_frames[r];
    CHECK((q.transpose() * q - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(q.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    const Eigen::Vector3d along =
        (topo.endcap_positions[topo.rods[r].second] - topo.endcap_positions[topo.rods[r].first]).normalized();
    CHECK((q.col(1) - along).norm() < 1e-12);
    CHECK(std::abs(q.col(0).z()) < 1e-12);
    const Eigen::Vector3d mid =
        (topo.endcap_positions[topo.rods[r].first] + topo.endcap_positions[topo.rods[r].second]) / 2.0;
    CHECK((topo.imu_positions[r] - mid).norm() < 1e-12);
  }
}

TEST_CASE("validate_topology rejects broken structures") {
  auto topo = build_canonical_topology();
  SUBCASE("tendon duplicating a rod") {
    topo.tendons[0] = {0, 3};
    CHECK_THROWS_AS(validate_topology(topo), GeometryMismatch);
  }
  SUBCASE("rod sharing an endcap") {
    topo.rods[1] = {0, 4};
    CHECK_THROWS_AS(validate_topology(topo), GeometryMismatch);
  }
  SUBCASE("endcap index out of range") {
    topo.tendons[4] = {3, 6};
    CHECK_THROWS_AS(validate_topology(topo), GeometryMismatch);
  }
  SUBCASE("self loop") {
    topo.tendons[2] = {2, 2};
    CHECK_THROWS_AS(validate_topology(topo), GeometryMismatch);
  }
}

TEST_CASE("group elements and their permutations") {
  const auto topo = build_canonical_topology();
  const auto group = build_d3_group(topo);
  REQUIRE(group.size() == 6);
  const auto& e = group.element(GroupLabel::e);
  const auto& r = group.element(GroupLabel::r);
  const auto& r2 = group.element(GroupLabel::r2);
  const auto& f = group.element(GroupLabel::f);

  CHECK(e.endcap_perm == std::array<int, 6>{0, 1, 2, 3, 4, 5});
  CHECK(group.compose(r, group.compose(r, r)).label == GroupLabel::e);
  CHECK(group.compose(f, group.compose(r, f)).label == GroupLabel::r2);
  CHECK(group.inverse(e).label == GroupLabel::e);
  CHECK(group.inverse(f).label == GroupLabel::f);
  CHECK(group.inverse(r).label == GroupLabel::r2);
  for (const auto& g : group.elements()) {
    CHECK(group.compose(e, g).label == g.label);
    CHECK(group.compose(g, e).label == g.label);
    CHECK(group.compose(g, group.inverse(g)).label == GroupLabel::e);
  }

  // r cycles rods 0 -> 1 -> 2 -> 0 and keeps the end triangles in place.
  CHECK(r.rod_perm == std::array<int, 3>{1, 2, 0});
  for (int i = 0; i < 3; ++i) CHECK(r.endcap_perm[i] < 3);
  for (int i = 3; i < 6; ++i) CHECK(r.endcap_perm[i] >= 3);
  CHECK(r2.rod_perm == std::array<int, 3>{2, 0, 1});
  CHECK_FALSE(r.reverses_rods);
  CHECK(f.reverses_rods);
}

TEST_CASE("composition table matches brute-force permutation products") {
  const auto group = build_d3_group(build_canonical_topology());
  const auto table = composition_table(group);
  REQUIRE(table.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    std::set<int> row, col;
    for (std::size_t j = 0; j < 6; ++j) {
      const int expected = find_by_perm(group, compose_perm(group[i], group[j]));
      REQUIRE(expected >= 0);
      CHECK(table[i][j] == expected);
      row.insert(table[i][j]);
      col.insert(table[j][i]);
    }
    CHECK(row.size() == 6);
    CHECK(col.size() == 6);
  }
}

TEST_CASE("each element is a rigid symmetry generating its permutations") {
  const auto topo = build_canonical_topology();
  const auto group = build_d3_group(topo);
  for (const auto& g : group.elements()) {
    CAPTURE(to_string(g.label));
    CHECK((g.transform.transpose() * g.transform - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(g.transform.determinant() == doctest::Approx(1.0));
    for (int i = 0; i < kNumEndcaps; ++i) {
      CHECK((g.transform * topo.endcap_positions[i] - topo.endcap_positions[g.endcap_perm[i]]).norm() < 1e-9);
    }
    for (int k = 0; k < kNumTendons; ++k) {
      const auto [a, b] = topo.tendons[k];
      const auto [c, d] = topo.tendons[g.tendon_perm[k]];
      const std::set<int> image{g.endcap_perm[a], g.endcap_perm[b]};
      CHECK(image == std::set<int>{c, d});
    }
    for (int r = 0; r < kNumRods; ++r) {
      const auto [a, b] = topo.rods[r];
      const auto [c, d] = topo.rods[g.rod_perm[r]];
      CHECK(std::set<int>{g.endcap_perm[a], g.endcap_perm[b]} == std::set<int>{c, d});
      CHECK((g.endcap_perm[a] == d) == g.reverses_rods);
    }
  }
}

TEST_CASE("associativity over all 216 triples and a clean axiom report") {
  const auto topo = build_canonical_topology();
  const auto group = build_d3_group(topo);
  int triples = 0;
  for (const auto& a : group.elements()) {
    for (const auto& b : group.elements()) {
      for (const auto& c : group.elements()) {
        CHECK(group.compose(group.compose(a, b), c).label == group.compose(a, group.compose(b, c)).label);
        ++triples;
      }
    }
  }
  CHECK(triples == 216);
  CHECK(check_group_axioms(group, topo).empty());
}

TEST_CASE("incomplete or corrupted groups are reported") {
  const auto topo = build_canonical_topology();
  const auto full = build_d3_group(topo);
  SUBCASE("missing product") {
    D3Group partial({full.element(GroupLabel::e), full.element(GroupLabel::r)});
    const auto& r = partial.element(GroupLabel::r);
    CHECK_THROWS_AS(partial.compose(r, r), ClosureViolation);
    CHECK_THROWS_AS(partial.element(GroupLabel::f), ClosureViolation);
    CHECK_FALSE(check_group_axioms(partial, topo).empty());
  }
  SUBCASE("non-bijective permutation") {
    auto elements = full.elements();
    elements[1].endcap_perm[0] = elements[1].endcap_perm[1];
    CHECK_FALSE(check_group_axioms(D3Group(elements), topo).empty());
  }
  SUBCASE("swapped labels break the dihedral relations") {
    auto elements = full.elements();
    std::swap(elements[1].label, elements[2].label);
    std::swap(elements[3].label, elements[4].label);
    CHECK_FALSE(check_group_axioms(D3Group(elements), topo).empty());
  }
}

TEST_CASE("a geometry without the prism symmetry is rejected") {
  auto topo = build_canonical_topology();
  topo.endcap_positions[0].x() += 0.01;
  CHECK_THROWS_AS(build_d3_group(topo), GeometryMismatch);
}

TEST_CASE("property: random words in r and f reduce to the element of their permutation product") {
  const auto group = build_d3_group(build_canonical_topology());
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const GroupElement* acc = &group.identity();
    std::array<int, kNumEndcaps> perm{0, 1, 2, 3, 4, 5};
    const int length = static_cast<int>(rng() % 12);
    for (int k = 0; k < length; ++k) {
      const auto& step = group[rng() % group.size()];
      acc = &group.compose(*acc, step);
      std::array<int, kNumEndcaps> next{};
      for (int i = 0; i < kNumEndcaps; ++i) next[i] = perm[step.endcap_perm[i]];
      perm = next;
    }
    CHECK(acc->endcap_perm == perm);
  }
}
