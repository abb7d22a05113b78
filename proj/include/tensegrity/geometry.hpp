#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace tensegrity {

inline constexpr int kNumEndcaps = 6;
inline constexpr int kNumRods = 3;
inline constexpr int kNumTendons = 9;

using EdgePair = std::pair<int, int>;

/// Canonical 3-bar prism. Endcaps 0-2 form the top triangle (counterclockwise
/// about rod_axis), 3-5 the bottom triangle; rod i joins endcaps (i, i+3).
/// Tendons 0-2 are the top triangle, 3-5 the bottom triangle, 6-8 the side
/// cables (0,4), (1,5), (2,3). Body origin is the prism centroid.
struct TensegrityTopology {
  std::array<Eigen::Vector3d, kNumEndcaps> endcap_positions;
  std::array<EdgePair, kNumRods> rods;
  std::array<EdgePair, kNumTendons> tendons;
  Eigen::Vector3d rod_axis;

  // Each rod carries one IMU at its midpoint. Columns of the frame matrix are
  // the IMU axes expressed in the body frame: x across the rod (horizontal),
  // y along the rod from its top endcap to its bottom endcap, z = x cross y.
  std::array<Eigen::Vector3d, kNumRods> imu_positions;
  std::array<Eigen::Matrix3d, kNumRods> imu_frames;

  double radius = 0.0;  // circumradius of the end triangles, m
  double height = 0.0;  // distance between end triangles, m
  double twist = 0.0;   // angular offset of endcap i+3 from endcap i, rad

  /// Rest distance between the two endcaps of a tendon.
  double tendon_rest_length(int tendon) const;
  double rod_length() const;
};

/// Fixed canonical prism (radius 0.15 m, height 0.20 m, twist -150 deg).
TensegrityTopology build_canonical_topology();

/// Throws GeometryMismatch naming the first violated topology invariant.
void validate_topology(const TensegrityTopology& topology);

/// Number of tendons incident on each endcap.
std::array<int, kNumEndcaps> tendon_degrees(const TensegrityTopology& topology);

enum class GroupLabel { e, r, r2, f, fr, fr2 };

const char* to_string(GroupLabel label) noexcept;

/// One D3 element acting on the prism by relabeling. A permutation maps index
/// i to perm[i], i.e. the part labeled i is carried onto the place of part perm[i].
struct GroupElement {
  GroupLabel label = GroupLabel::e;
  std::array<int, kNumEndcaps> endcap_perm{};
  std::array<int, kNumRods> rod_perm{};
  std::array<int, kNumTendons> tendon_perm{};
  // Rigid body-frame rotation that generates the permutations.
  Eigen::Matrix3d transform = Eigen::Matrix3d::Identity();
  // True when the element swaps the two end triangles, which reverses every
  // rod's direction (and the y/z axes of the rod IMU frames).
  bool reverses_rods = false;

  bool same_action(const GroupElement& other) const {
    return endcap_perm == other.endcap_perm && rod_perm == other.rod_perm &&
           tendon_perm == other.tendon_perm;
  }
};

class D3Group {
 public:
  explicit D3Group(std::vector<GroupElement> elements) : elements_(std::move(elements)) {}

  const std::vector<GroupElement>& elements() const { return elements_; }
  std::size_t size() const { return elements_.size(); }
  const GroupElement& operator[](std::size_t i) const { return elements_[i]; }

  /// Element with the given label; throws ClosureViolation if absent.
  const GroupElement& element(GroupLabel label) const;
  const GroupElement& identity() const { return element(GroupLabel::e); }

  /// (g . h) acts as h first, then g. Throws ClosureViolation if the product
  /// is not one of the stored elements.
  const GroupElement& compose(const GroupElement& g, const GroupElement& h) const;
  const GroupElement& inverse(const GroupElement& g) const;

  /// Index into elements() of a stored element equal in action to g, or -1.
  int index_of(const GroupElement& g) const;

 private:
  std::vector<GroupElement> elements_;
};

/// Derives the six elements from rigid motions of the reference geometry:
/// the 120 deg rotation about rod_axis and the half-turn about the horizontal
/// axis through rod 0's midpoint. Endcaps are matched to their nearest
/// canonical endcap within 1e-6 m.
D3Group build_d3_group(const TensegrityTopology& topology);

/// table[i][j] = index of elements[i] . elements[j].
std::vector<std::vector<int>> composition_table(const D3Group& group);

/// Exhaustive axiom check (closure, associativity, identity, inverses, and the
/// dihedral relations). Returns one message per failure; empty on success.
std::vector<std::string> check_group_axioms(const D3Group& group, const TensegrityTopology& topology);

}  // namespace tensegrity
