#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "tensegrity/geometry.hpp"
#include "tensegrity/graphdata.hpp"
#include "tensegrity/simkit.hpp"

namespace tensegrity {

struct ContactPoint {
  int endcap = -1;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // world frame
};

/// Right-invariant EKF state on SE_{2+K}(3). Error ordering in P is
/// [rotation, velocity, position, contact_0, ..., contact_{K-1}] with the
/// contacts in the order of `contacts`.
struct EstimatorState {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  std::vector<ContactPoint> contacts;
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(9, 9) * 1e-6;

  int dimension() const { return 9 + 3 * static_cast<int>(contacts.size()); }
  /// Index into `contacts`, or -1.
  int find_contact(int endcap) const;
};

struct ImuSample {
  Eigen::Vector3d accel = Eigen::Vector3d::Zero();  // body-frame specific force
  Eigen::Vector3d gyro = Eigen::Vector3d::Zero();   // body-frame angular rate
  double dt = 0.0;
};

/// Continuous-time noise densities (standard deviations).
struct InekfNoise {
  double gyro = 1e-4;
  double accel = 1e-2;
  double contact_slip = 1e-3;
  double measurement = 1e-3;
  double new_contact_variance = 1.0;  // m^2, added to the copied position block
};

Eigen::Matrix3d skew(const Eigen::Vector3d& w);
Eigen::Matrix3d so3_exp(const Eigen::Vector3d& w);
Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& w);
/// Adjoint of the state viewed as an SE_{2+K}(3) element.
Eigen::MatrixXd state_adjoint(const EstimatorState& state);
/// X <- Exp(delta) X for delta ordered like P.
EstimatorState retract_left(const EstimatorState& state, const Eigen::VectorXd& delta);

/// IMU propagation. Throws NonFiniteInput, or ConfigInvalid when dt <= 0.
EstimatorState propagate(const EstimatorState& state, const ImuSample& imu, const InekfNoise& noise);

/// Corrects with persisting contacts, then drops released ones and adds new
/// ones at their current kinematic location. `body_endcaps` are the endcap
/// positions in the body frame.
EstimatorState contact_update(const EstimatorState& state, const ContactVector& contacts,
                              const std::array<Eigen::Vector3d, kNumEndcaps>& body_endcaps,
                              const InekfNoise& noise);

/// Averages the three rod IMUs after rotating them into the body frame.
ImuSample fuse_rod_imus(const ImuFrame& frame, const TensegrityTopology& topology);

struct EstimatorOptions {
  InekfNoise noise;
  std::optional<EstimatorState> initial;  // defaults to static alignment
};

/// Static alignment from the first accelerometer sample: roll and pitch from
/// gravity, zero yaw, origin position, zero velocity.
EstimatorState static_alignment(const ImuFrame& frame, const TensegrityTopology& topology);

/// Filters the full sequence; an empty sequence gives an empty trajectory.
/// Throws LengthMismatch or NonFiniteInput.
GroundTruth run_estimator(const SensorSequence& seq, const std::vector<ContactVector>& contacts,
                          const TensegrityTopology& topology, const EstimatorOptions& options = {});

/// Final position error as a percentage of the ground-truth path length.
/// Throws SequenceTooShort for empty input, LengthMismatch, ConfigInvalid for
/// a zero-length path.
double drift_percent(const GroundTruth& estimate, const GroundTruth& truth);

/// Initial state matching the first ground-truth pose with a tight prior.
EstimatorState state_from_truth(const GroundTruth& truth, std::size_t index = 0);

}  // namespace tensegrity
