#include "tensegrity/inekf.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Geometry>

#include "tensegrity/errors.hpp"

namespace tensegrity {

namespace {

using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

const Vector3d kGravityVec(0.0, 0.0, -kGravity);

Matrix3d orthonormalize(const Matrix3d& R) { return Eigen::Quaterniond(R).normalized().toRotationMatrix(); }

void symmetrize(MatrixXd& P) { P = 0.5 * (P + P.transpose()).eval(); }

bool finite(const Vector3d& v) { return v.allFinite(); }

}  // namespace

int EstimatorState::find_contact(int endcap) const {
  for (std::size_t i = 0; i < contacts.size(); ++i) {
    if (contacts[i].endcap == endcap) return static_cast<int>(i);
  }
  return -1;
}

Matrix3d skew(const Vector3d& w) {
  Matrix3d m;
  m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return m;
}

Matrix3d so3_exp(const Vector3d& w) {
  const double theta = w.norm();
  const Matrix3d K = skew(w);
  if (theta < 1e-8) return Matrix3d::Identity() + K + 0.5 * K * K;
  return Matrix3d::Identity() + std::sin(theta) / theta * K + (1.0 - std::cos(theta)) / (theta * theta) * K * K;
}

Matrix3d so3_left_jacobian(const Vector3d& w) {
  const double theta = w.norm();
  const Matrix3d K = skew(w);
  if (theta < 1e-8) return Matrix3d::Identity() + 0.5 * K + K * K / 6.0;
  const double t2 = theta * theta;
  return Matrix3d::Identity() + (1.0 - std::cos(theta)) / t2 * K + (theta - std::sin(theta)) / (t2 * theta) * K * K;
}

MatrixXd state_adjoint(const EstimatorState& s) {
  const int n = s.dimension();
  MatrixXd adj = MatrixXd::Zero(n, n);
  adj.block<3, 3>(0, 0) = s.R;
  auto fill = [&](int block, const Vector3d& x) {
    adj.block<3, 3>(3 * block, 0) = skew(x) * s.R;
    adj.block<3, 3>(3 * block, 3 * block) = s.R;
  };
  fill(1, s.v);
  fill(2, s.p);
  for (std::size_t k = 0; k < s.contacts.size(); ++k) fill(3 + static_cast<int>(k), s.contacts[k].position);
  return adj;
}

EstimatorState retract_left(const EstimatorState& s, const VectorXd& delta) {
  if (delta.size() != s.dimension()) {
    throw ShapeMismatch("correction has " + std::to_string(delta.size()) + " entries, state dimension is " +
                        std::to_string(s.dimension()));
  }
  const Vector3d phi = delta.segment<3>(0);
  const Matrix3d Rd = so3_exp(phi);
  const Matrix3d J = so3_left_jacobian(phi);
  EstimatorState out = s;
  out.R = orthonormalize(Rd * s.R);
  out.v = Rd * s.v + J * delta.segment<3>(3);
  out.p = Rd * s.p + J * delta.segment<3>(6);
  for (std::size_t k = 0; k < s.contacts.size(); ++k) {
    out.contacts[k].position = Rd * s.contacts[k].position + J * delta.segment<3>(9 + 3 * k);
  }
  return out;
}

EstimatorState propagate(const EstimatorState& s, const ImuSample& imu, const InekfNoise& noise) {
  if (!finite(imu.accel) || !finite(imu.gyro) || !std::isfinite(imu.dt)) {
    throw NonFiniteInput("IMU sample contains a non-finite value");
  }
  if (!(imu.dt > 0)) throw ConfigInvalid("IMU time step must be positive");
  const double dt = imu.dt;
  const int n = s.dimension();

  MatrixXd phi = MatrixXd::Identity(n, n);
  const Matrix3d g = skew(kGravityVec);
  phi.block<3, 3>(3, 0) = g * dt;
  phi.block<3, 3>(6, 0) = 0.5 * g * dt * dt;
  phi.block<3, 3>(6, 3) = Matrix3d::Identity() * dt;

  MatrixXd qc = MatrixXd::Zero(n, n);
  qc.block<3, 3>(0, 0) = Matrix3d::Identity() * noise.gyro * noise.gyro;
  qc.block<3, 3>(3, 3) = Matrix3d::Identity() * noise.accel * noise.accel;
  for (std::size_t k = 0; k < s.contacts.size(); ++k) {
    qc.block<3, 3>(9 + 3 * k, 9 + 3 * k) = Matrix3d::Identity() * noise.contact_slip * noise.contact_slip;
  }
  const MatrixXd phi_adj = phi * state_adjoint(s);

  EstimatorState out = s;
  out.P = phi * s.P * phi.transpose() + phi_adj * qc * phi_adj.transpose() * dt;
  symmetrize(out.P);

  const Vector3d a_world = s.R * imu.accel + kGravityVec;
  out.R = orthonormalize(s.R * so3_exp(imu.gyro * dt));
  out.v = s.v + a_world * dt;
  out.p = s.p + s.v * dt + 0.5 * a_world * dt * dt;
  return out;
}

EstimatorState contact_update(const EstimatorState& s, const ContactVector& contacts,
                              const std::array<Vector3d, kNumEndcaps>& body_endcaps, const InekfNoise& noise) {
  for (const auto& d : body_endcaps) {
    if (!finite(d)) throw NonFiniteInput("non-finite body-frame endcap position");
  }
  if (!s.R.allFinite() || !finite(s.p) || !finite(s.v)) throw NonFiniteInput("non-finite estimator state");
  EstimatorState out = s;
  const Matrix3d cov = Matrix3d::Identity() * noise.measurement * noise.measurement;

  std::vector<int> persisting;
  for (std::size_t k = 0; k < s.contacts.size(); ++k) {
    if (contacts[s.contacts[k].endcap]) persisting.push_back(static_cast<int>(k));
  }
  if (!persisting.empty()) {
    const int n = s.dimension();
    const int m = 3 * static_cast<int>(persisting.size());
    MatrixXd H = MatrixXd::Zero(m, n);
    MatrixXd N = MatrixXd::Zero(m, m);
    VectorXd Z(m);
    for (std::size_t j = 0; j < persisting.size(); ++j) {
      const int k = persisting[j];
      const int row = 3 * static_cast<int>(j);
      H.block<3, 3>(row, 6) = -Matrix3d::Identity();
      H.block<3, 3>(row, 9 + 3 * k) = Matrix3d::Identity();
      N.block<3, 3>(row, row) = s.R * cov * s.R.transpose();
      Z.segment<3>(row) = s.R * body_endcaps[s.contacts[k].endcap] + s.p - s.contacts[k].position;
    }
    const MatrixXd PHt = s.P * H.transpose();
    const MatrixXd S = H * PHt + N;
    const MatrixXd K = S.ldlt().solve(PHt.transpose()).transpose();
    out = retract_left(s, K * Z);
    const MatrixXd ikh = MatrixXd::Identity(n, n) - K * H;
    out.P = ikh * s.P * ikh.transpose() + K * N * K.transpose();
    symmetrize(out.P);
  }

  std::vector<int> keep;
  for (int i = 0; i < 9; ++i) keep.push_back(i);
  std::vector<ContactPoint> kept;
  for (std::size_t k = 0; k < out.contacts.size(); ++k) {
    if (!contacts[out.contacts[k].endcap]) continue;
    kept.push_back(out.contacts[k]);
    for (int i = 0; i < 3; ++i) keep.push_back(9 + 3 * static_cast<int>(k) + i);
  }
  if (kept.size() != out.contacts.size()) {
    out.P = MatrixXd(out.P(keep, keep));
    out.contacts = std::move(kept);
  }

  for (int e = 0; e < kNumEndcaps; ++e) {
    if (!contacts[e] || out.find_contact(e) >= 0) continue;
    const int n = out.dimension();
    MatrixXd P(n + 3, n + 3);
    P.topLeftCorner(n, n) = out.P;
    P.block(n, 0, 3, n) = out.P.block(6, 0, 3, n);
    P.block(0, n, n, 3) = out.P.block(0, 6, n, 3);
    P.block<3, 3>(n, n) = out.P.block<3, 3>(6, 6) + out.R * (Matrix3d::Identity() * noise.new_contact_variance) *
                                                         out.R.transpose();
    symmetrize(P);
    out.P = std::move(P);
    out.contacts.push_back({e, out.p + out.R * body_endcaps[e]});
  }
  return out;
}

ImuSample fuse_rod_imus(const ImuFrame& frame, const TensegrityTopology& topology) {
  ImuSample s;
  for (int r = 0; r < kNumRods; ++r) {
    const Vector3d a(frame[r * kImuChannelsPerRod], frame[r * kImuChannelsPerRod + 1], frame[r * kImuChannelsPerRod + 2]);
    const Vector3d w(frame[r * kImuChannelsPerRod + 3], frame[r * kImuChannelsPerRod + 4],
                     frame[r * kImuChannelsPerRod + 5]);
    s.accel += topology.imu_frames[r] * a;
    s.gyro += topology.imu_frames[r] * w;
  }
  s.accel /= kNumRods;
  s.gyro /= kNumRods;
  return s;
}

EstimatorState static_alignment(const ImuFrame& frame, const TensegrityTopology& topology) {
  const ImuSample imu = fuse_rod_imus(frame, topology);
  if (!finite(imu.accel)) throw NonFiniteInput("IMU sample contains a non-finite value");
  if (imu.accel.norm() < 1e-9) throw ConfigInvalid("cannot align from a zero accelerometer reading");
  const Vector3d f = imu.accel.normalized();
  const double roll = std::atan2(f.y(), f.z());
  const double pitch = std::atan2(-f.x(), std::hypot(f.y(), f.z()));
  EstimatorState s;
  s.R = (Eigen::AngleAxisd(pitch, Vector3d::UnitY()) * Eigen::AngleAxisd(roll, Vector3d::UnitX())).toRotationMatrix();
  s.P = MatrixXd::Zero(9, 9);
  s.P.diagonal() << 1e-2, 1e-2, 1e-2, 1e-2, 1e-2, 1e-2, 1e-4, 1e-4, 1e-4;
  return s;
}

EstimatorState state_from_truth(const GroundTruth& truth, std::size_t index) {
  if (index >= truth.size()) throw EmptyDataset("ground truth has no row " + std::to_string(index));
  EstimatorState s;
  s.R = truth.rotation[index];
  s.p = truth.position[index];
  s.v = truth.velocity[index];
  s.P = MatrixXd::Identity(9, 9) * 1e-6;
  return s;
}

GroundTruth run_estimator(const SensorSequence& seq, const std::vector<ContactVector>& contacts,
                          const TensegrityTopology& topology, const EstimatorOptions& options) {
  const std::size_t n = seq.size();
  if (seq.imu.size() != n) throw LengthMismatch("IMU stream length differs from time stamps");
  if (contacts.size() != n) {
    throw LengthMismatch("contact stream has " + std::to_string(contacts.size()) + " rows, sensor stream has " +
                         std::to_string(n));
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!std::isfinite(seq.t[k])) throw NonFiniteInput("non-finite time stamp at row " + std::to_string(k));
    for (double x : seq.imu[k]) {
      if (!std::isfinite(x)) throw NonFiniteInput("non-finite IMU value at row " + std::to_string(k));
    }
  }

  GroundTruth traj;
  if (n == 0) return traj;
  EstimatorState state = options.initial ? *options.initial : static_alignment(seq.imu[0], topology);
  traj.t.reserve(n);
  auto record = [&](std::size_t k) {
    traj.t.push_back(seq.t[k]);
    traj.rotation.push_back(state.R);
    traj.position.push_back(state.p);
    traj.velocity.push_back(state.v);
    std::array<double, kNumEndcaps> h{};
    for (int e = 0; e < kNumEndcaps; ++e) h[e] = (state.p + state.R * topology.endcap_positions[e]).z();
    traj.endcap_heights.push_back(h);
  };

  state = contact_update(state, contacts[0], topology.endcap_positions, options.noise);
  record(0);
  for (std::size_t k = 1; k < n; ++k) {
    ImuSample imu = fuse_rod_imus(seq.imu[k - 1], topology);
    imu.dt = seq.t[k] - seq.t[k - 1];
    state = propagate(state, imu, options.noise);
    state = contact_update(state, contacts[k], topology.endcap_positions, options.noise);
    record(k);
  }
  return traj;
}

double drift_percent(const GroundTruth& estimate, const GroundTruth& truth) {
  if (estimate.size() != truth.size()) {
    throw LengthMismatch("estimate has " + std::to_string(estimate.size()) + " rows, ground truth has " +
                         std::to_string(truth.size()));
  }
  if (truth.size() == 0) throw SequenceTooShort("drift is undefined for an empty trajectory");
  const double path = truth.path_length();
  if (!(path > 0)) throw ConfigInvalid("ground-truth path length is zero");
  return (estimate.position.back() - truth.position.back()).norm() / path * 100.0;
}

}  // namespace tensegrity
