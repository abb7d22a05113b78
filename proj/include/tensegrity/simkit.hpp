#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tensegrity/geometry.hpp"
#include "tensegrity/graphdata.hpp"

namespace tensegrity {

inline constexpr double kGravity = 9.81;

/// Motion primitives. "L"/"R" denote counterclockwise/clockwise change of the
/// travel heading, for forward and backward rolling alike.
enum class Primitive { F, B, FL, FR, BL, BR };

const char* to_string(Primitive p) noexcept;
Primitive parse_primitive(const std::string& text);
inline constexpr std::array<Primitive, 6> kAllPrimitives{Primitive::F, Primitive::B, Primitive::FL,
                                                         Primitive::FR, Primitive::BL, Primitive::BR};

struct SensorNoise {
  double accel = 0.05;    // m/s^2
  double gyro = 0.005;    // rad/s
  double tendon = 0.001;  // m
};

struct SimConfig {
  Primitive primitive = Primitive::F;
  double turning_ratio = 1.0;  // (0, 1]; smaller turns tighter
  double duration = 60.0;      // s
  double sample_rate = 100.0;  // Hz
  SensorNoise noise;
  double contact_height_tolerance = 0.005;  // m
  std::uint64_t seed = 0;

  // Gait timing (s): an initial rest, then alternating tumble and rest phases
  // whose lengths are drawn uniformly from these ranges.
  double initial_rest = 0.5;
  double tumble_min = 0.5, tumble_max = 0.7;
  double rest_min = 0.25, rest_max = 0.45;
  double heading_step_deg = 8.0;  // heading change per tumble at turning_ratio 1

  /// Throws ConfigInvalid.
  void validate() const;
};

/// Body pose per timestep. Position is the prism centroid in the world frame
/// (z up, ground plane z = 0); R maps body to world.
struct GroundTruth {
  std::vector<double> t;
  std::vector<Eigen::Matrix3d> rotation;
  std::vector<Eigen::Vector3d> position;
  std::vector<Eigen::Vector3d> velocity;
  std::vector<std::array<double, kNumEndcaps>> endcap_heights;

  std::size_t size() const { return t.size(); }
  double path_length() const;
};

struct SimResult {
  SensorSequence sequence;
  GroundTruth truth;
};

/// Kinematic surrogate of a rolling 3-bar prism: quasi-static tumbles about
/// edges of the endcap convex hull, tendon-length modulation tied to the gait,
/// rod IMU readings from the exact rigid-body kinematics, noise added last.
SimResult simulate(const SimConfig& config);
SimResult simulate(const SimConfig& config, const TensegrityTopology& topology);

/// i.i.d. zero-mean Gaussian noise per channel; contacts untouched.
SensorSequence add_sensor_noise(const SensorSequence& seq, const SensorNoise& noise, std::uint64_t seed);

/// Convex-hull faces of the endcaps with outward body-frame normals.
struct HullFace {
  std::array<int, 3> endcaps;
  Eigen::Vector3d normal;
};
std::vector<HullFace> hull_faces(const TensegrityTopology& topology);

/// Trajectory CSV `t,x,y,z,qw,qx,qy,qz,vx,vy,vz`.
void write_trajectory(const std::filesystem::path& path, const GroundTruth& trajectory);
GroundTruth read_trajectory(const std::filesystem::path& path);

}  // namespace tensegrity
