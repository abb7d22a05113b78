#include "tensegrity/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include <Eigen/Geometry>

#include "tensegrity/errors.hpp"

namespace tensegrity {

namespace {

constexpr double kMatchTolerance = 1e-6;

template <std::size_t N>
bool is_bijection(const std::array<int, N>& perm) {
  std::array<bool, N> seen{};
  for (int v : perm) {
    if (v < 0 || v >= static_cast<int>(N) || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

template <std::size_t N>
std::array<int, N> compose_perm(const std::array<int, N>& outer, const std::array<int, N>& inner) {
  std::array<int, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = outer[inner[i]];
  return out;
}

bool same_edge(const EdgePair& a, const EdgePair& b) {
  return (a.first == b.first && a.second == b.second) || (a.first == b.second && a.second == b.first);
}

template <std::size_t N>
std::array<int, N> induced_edge_perm(const std::array<EdgePair, N>& edges,
                                     const std::array<int, kNumEndcaps>& endcap_perm,
                                     const char* what) {
  std::array<int, N> perm{};
  for (std::size_t k = 0; k < N; ++k) {
    const EdgePair image{endcap_perm[edges[k].first], endcap_perm[edges[k].second]};
    const auto it = std::find_if(edges.begin(), edges.end(),
                                 [&](const EdgePair& e) { return same_edge(e, image); });
    if (it == edges.end()) {
      std::ostringstream msg;
      msg << what << " " << k << " is not mapped onto any " << what;
      throw GeometryMismatch(msg.str());
    }
    perm[k] = static_cast<int>(it - edges.begin());
  }
  return perm;
}

GroupElement element_from_transform(const TensegrityTopology& topo, GroupLabel label,
                                    const Eigen::Matrix3d& transform) {
  GroupElement g;
  g.label = label;
  g.transform = transform;
  for (int i = 0; i < kNumEndcaps; ++i) {
    const Eigen::Vector3d image = transform * topo.endcap_positions[i];
    int best = -1;
    int matches = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int j = 0; j < kNumEndcaps; ++j) {
      const double d = (image - topo.endcap_positions[j]).norm();
      if (d < kMatchTolerance) ++matches;
      if (d < best_dist) {
        best_dist = d;
        best = j;
      }
    }
    if (matches != 1) {
      std::ostringstream msg;
      msg << "element " << to_string(label) << ": endcap " << i
          << " has no unique canonical match (nearest distance " << best_dist << " m)";
      throw GeometryMismatch(msg.str());
    }
    g.endcap_perm[i] = best;
  }
  if (!is_bijection(g.endcap_perm)) {
    throw GeometryMismatch(std::string("element ") + to_string(label) + " does not permute endcaps");
  }
  g.rod_perm = induced_edge_perm(topo.rods, g.endcap_perm, "rod");
  g.tendon_perm = induced_edge_perm(topo.tendons, g.endcap_perm, "tendon");
  g.reverses_rods = g.endcap_perm[topo.rods[0].first] == topo.rods[g.rod_perm[0]].second;
  return g;
}

}  // namespace

double TensegrityTopology::tendon_rest_length(int tendon) const {
  const auto [a, b] = tendons.at(tendon);
  return (endcap_positions[a] - endcap_positions[b]).norm();
}

double TensegrityTopology::rod_length() const {
  return (endcap_positions[rods[0].first] - endcap_positions[rods[0].second]).norm();
}

TensegrityTopology build_canonical_topology() {
  TensegrityTopology topo;
  topo.radius = 0.15;
  topo.height = 0.20;
  topo.twist = -150.0 * std::numbers::pi / 180.0;
  topo.rod_axis = Eigen::Vector3d::UnitZ();

  for (int i = 0; i < 3; ++i) {
    const double top = 2.0 * std::numbers::pi * i / 3.0;
    const double bottom = top + topo.twist;
    topo.endcap_positions[i] = {topo.radius * std::cos(top), topo.radius * std::sin(top), 0.5 * topo.height};
    topo.endcap_positions[i + 3] = {topo.radius * std::cos(bottom), topo.radius * std::sin(bottom),
                                    -0.5 * topo.height};
    topo.rods[i] = {i, i + 3};
  }
  topo.tendons = {{{0, 1}, {1, 2}, {2, 0}, {3, 4}, {4, 5}, {5, 3}, {0, 4}, {1, 5}, {2, 3}}};

  const Eigen::Vector3d mid0 = 0.5 * (topo.endcap_positions[0] + topo.endcap_positions[3]);
  const Eigen::Vector3d across = (mid0 - mid0.dot(topo.rod_axis) * topo.rod_axis).normalized();
  const Eigen::Vector3d along = (topo.endcap_positions[3] - topo.endcap_positions[0]).normalized();
  Eigen::Matrix3d frame0;
  frame0.col(0) = across;
  frame0.col(1) = along;
  frame0.col(2) = across.cross(along);
  for (int i = 0; i < 3; ++i) {
    const Eigen::Matrix3d spin =
        Eigen::AngleAxisd(2.0 * std::numbers::pi * i / 3.0, topo.rod_axis).toRotationMatrix();
    topo.imu_frames[i] = spin * frame0;
    topo.imu_positions[i] = spin * mid0;
  }
  return topo;
}

std::array<int, kNumEndcaps> tendon_degrees(const TensegrityTopology& topology) {
  std::array<int, kNumEndcaps> degree{};
  for (const auto& [a, b] : topology.tendons) {
    if (a >= 0 && a < kNumEndcaps) ++degree[a];
    if (b >= 0 && b < kNumEndcaps) ++degree[b];
  }
  return degree;
}

void validate_topology(const TensegrityTopology& topology) {
  std::array<int, kNumEndcaps> rod_count{};
  for (const auto& [a, b] : topology.rods) {
    if (a < 0 || a >= kNumEndcaps || b < 0 || b >= kNumEndcaps || a == b) {
      throw GeometryMismatch("rod endpoint out of range");
    }
    ++rod_count[a];
    ++rod_count[b];
  }
  for (int i = 0; i < kNumEndcaps; ++i) {
    if (rod_count[i] != 1) {
      throw GeometryMismatch("endcap " + std::to_string(i) + " belongs to " + std::to_string(rod_count[i]) +
                             " rods");
    }
  }
  for (const auto& t : topology.tendons) {
    if (t.first < 0 || t.first >= kNumEndcaps || t.second < 0 || t.second >= kNumEndcaps || t.first == t.second) {
      throw GeometryMismatch("tendon endpoint out of range");
    }
    for (const auto& r : topology.rods) {
      if (same_edge(t, r)) throw GeometryMismatch("tendon duplicates a rod");
    }
  }
  const auto degree = tendon_degrees(topology);
  for (int i = 0; i < kNumEndcaps; ++i) {
    if (degree[i] != 3) {
      throw GeometryMismatch("endcap " + std::to_string(i) + " has tendon degree " + std::to_string(degree[i]));
    }
  }
  if (std::abs(topology.rod_axis.norm() - 1.0) > 1e-9) throw GeometryMismatch("rod_axis is not a unit vector");
  const Eigen::Matrix3d spin =
      Eigen::AngleAxisd(2.0 * std::numbers::pi / 3.0, topology.rod_axis).toRotationMatrix();
  for (const auto& x : topology.endcap_positions) {
    const Eigen::Vector3d image = spin * x;
    const bool found = std::any_of(topology.endcap_positions.begin(), topology.endcap_positions.end(),
                                   [&](const Eigen::Vector3d& y) { return (image - y).norm() < kMatchTolerance; });
    if (!found) throw GeometryMismatch("endcap set is not invariant under the 120 deg rotation");
  }
}

const char* to_string(GroupLabel label) noexcept {
  switch (label) {
    case GroupLabel::e: return "e";
    case GroupLabel::r: return "r";
    case GroupLabel::r2: return "r2";
    case GroupLabel::f: return "f";
    case GroupLabel::fr: return "fr";
    case GroupLabel::fr2: return "fr2";
  }
  return "?";
}

const GroupElement& D3Group::element(GroupLabel label) const {
  for (const auto& g : elements_) {
    if (g.label == label) return g;
  }
  throw ClosureViolation(std::string("no element labeled ") + to_string(label));
}

int D3Group::index_of(const GroupElement& g) const {
  for (std::size_t i = 0; i < elements_.size(); ++i) {
    if (elements_[i].same_action(g)) return static_cast<int>(i);
  }
  return -1;
}

const GroupElement& D3Group::compose(const GroupElement& g, const GroupElement& h) const {
  GroupElement product;
  product.endcap_perm = compose_perm(g.endcap_perm, h.endcap_perm);
  product.rod_perm = compose_perm(g.rod_perm, h.rod_perm);
  product.tendon_perm = compose_perm(g.tendon_perm, h.tendon_perm);
  const int idx = index_of(product);
  if (idx < 0) {
    throw ClosureViolation(std::string("product ") + to_string(g.label) + "*" + to_string(h.label) +
                           " is not a group element");
  }
  return elements_[idx];
}

const GroupElement& D3Group::inverse(const GroupElement& g) const {
  const GroupElement& e = identity();
  for (const auto& h : elements_) {
    if (compose(g, h).same_action(e)) return h;
  }
  throw ClosureViolation(std::string("element ") + to_string(g.label) + " has no inverse");
}

D3Group build_d3_group(const TensegrityTopology& topology) {
  validate_topology(topology);
  const Eigen::Vector3d& axis = topology.rod_axis;
  const auto [top0, bottom0] = topology.rods[0];
  const Eigen::Vector3d mid = 0.5 * (topology.endcap_positions[top0] + topology.endcap_positions[bottom0]);
  const Eigen::Vector3d radial = mid - mid.dot(axis) * axis;
  if (radial.norm() < kMatchTolerance) throw GeometryMismatch("rod 0 midpoint lies on rod_axis");

  const Eigen::Matrix3d r = Eigen::AngleAxisd(2.0 * std::numbers::pi / 3.0, axis).toRotationMatrix();
  const Eigen::Matrix3d f = Eigen::AngleAxisd(std::numbers::pi, radial.normalized()).toRotationMatrix();

  std::vector<GroupElement> elements;
  elements.reserve(6);
  elements.push_back(element_from_transform(topology, GroupLabel::e, Eigen::Matrix3d::Identity()));
  elements.push_back(element_from_transform(topology, GroupLabel::r, r));
  elements.push_back(element_from_transform(topology, GroupLabel::r2, r * r));
  elements.push_back(element_from_transform(topology, GroupLabel::f, f));
  elements.push_back(element_from_transform(topology, GroupLabel::fr, f * r));
  elements.push_back(element_from_transform(topology, GroupLabel::fr2, f * r * r));
  return D3Group(std::move(elements));
}

std::vector<std::vector<int>> composition_table(const D3Group& group) {
  const std::size_t n = group.size();
  std::vector<std::vector<int>> table(n, std::vector<int>(n, -1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      GroupElement product;
      product.endcap_perm = compose_perm(group[i].endcap_perm, group[j].endcap_perm);
      product.rod_perm = compose_perm(group[i].rod_perm, group[j].rod_perm);
      product.tendon_perm = compose_perm(group[i].tendon_perm, group[j].tendon_perm);
      table[i][j] = group.index_of(product);
    }
  }
  return table;
}

std::vector<std::string> check_group_axioms(const D3Group& group, const TensegrityTopology& topology) {
  std::vector<std::string> failures;
  const std::size_t n = group.size();
  if (n != 6) failures.push_back("group has " + std::to_string(n) + " elements, expected 6");

  std::set<std::array<int, kNumEndcaps>> distinct;
  for (const auto& g : group.elements()) {
    if (!is_bijection(g.endcap_perm) || !is_bijection(g.rod_perm) || !is_bijection(g.tendon_perm)) {
      failures.push_back(std::string("element ") + to_string(g.label) + " is not a bijection");
    }
    distinct.insert(g.endcap_perm);
  }
  if (distinct.size() != n) failures.push_back("elements are not distinct");

  const auto table = composition_table(group);
  for (std::size_t i = 0; i < n; ++i) {
    std::set<int> row, col;
    for (std::size_t j = 0; j < n; ++j) {
      if (table[i][j] < 0) {
        failures.push_back(std::string("closure fails for ") + to_string(group[i].label) + "*" +
                           to_string(group[j].label));
      }
      row.insert(table[i][j]);
      col.insert(table[j][i]);
    }
    if (row.size() != n || col.size() != n) failures.push_back("table is not a Latin square");
  }
  if (!failures.empty()) return failures;

  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t c = 0; c < n; ++c) {
        if (table[table[a][b]][c] != table[a][table[b][c]]) {
          failures.push_back("associativity fails at (" + std::to_string(a) + "," + std::to_string(b) + "," +
                             std::to_string(c) + ")");
        }
      }
    }
  }

  int id = -1;
  for (std::size_t i = 0; i < n; ++i) {
    bool is_identity = true;
    for (std::size_t j = 0; j < n; ++j) is_identity = is_identity && table[i][j] == static_cast<int>(j) &&
                                                      table[j][i] == static_cast<int>(j);
    if (is_identity) id = static_cast<int>(i);
  }
  if (id < 0 || group[id].label != GroupLabel::e) {
    failures.push_back("no two-sided identity labeled e");
    return failures;
  }
  for (std::size_t i = 0; i < n; ++i) {
    bool has_inverse = false;
    for (std::size_t j = 0; j < n; ++j) has_inverse = has_inverse || (table[i][j] == id && table[j][i] == id);
    if (!has_inverse) failures.push_back(std::string("no inverse for ") + to_string(group[i].label));
  }

  try {
    const auto& e = group.element(GroupLabel::e);
    const auto& r = group.element(GroupLabel::r);
    const auto& r2 = group.element(GroupLabel::r2);
    const auto& f = group.element(GroupLabel::f);
    if (!group.compose(r, group.compose(r, r)).same_action(e)) failures.push_back("r^3 != e");
    if (!group.compose(f, f).same_action(e)) failures.push_back("f^2 != e");
    if (!group.compose(f, group.compose(r, f)).same_action(r2)) failures.push_back("f r f != r2");
    if (!group.compose(r, r).same_action(r2)) failures.push_back("r r != r2");
    if (!group.compose(f, r).same_action(group.element(GroupLabel::fr))) failures.push_back("f r != fr");
    if (!group.compose(f, r2).same_action(group.element(GroupLabel::fr2))) failures.push_back("f r2 != fr2");
    for (int k = 0; k < kNumRods; ++k) {
      if (r.rod_perm[k] != (k + 1) % kNumRods) failures.push_back("r does not cycle rods 0->1->2->0");
    }
    for (int i = 0; i < kNumEndcaps; ++i) {
      if ((r.endcap_perm[i] < 3) != (i < 3)) failures.push_back("r mixes top and bottom endcaps");
    }
  } catch (const ClosureViolation& err) {
    failures.push_back(err.what());
  }

  for (const auto& g : group.elements()) {
    for (int t = 0; t < kNumTendons; ++t) {
      const auto [a, b] = topology.tendons[t];
      const EdgePair image{g.endcap_perm[a], g.endcap_perm[b]};
      if (!same_edge(topology.tendons[g.tendon_perm[t]], image)) {
        failures.push_back(std::string("tendon permutation of ") + to_string(g.label) + " is not induced");
      }
    }
    for (int k = 0; k < kNumRods; ++k) {
      const auto [a, b] = topology.rods[k];
      const EdgePair image{g.endcap_perm[a], g.endcap_perm[b]};
      if (!same_edge(topology.rods[g.rod_perm[k]], image)) {
        failures.push_back(std::string("rod permutation of ") + to_string(g.label) + " is not induced");
      }
    }
  }
  return failures;
}

}  // namespace tensegrity
