#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include "tensegrity/errors.hpp"
#include "tensegrity/inekf.hpp"

using namespace tensegrity;
using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector3d;

namespace {

Vector3d so3_log(const Matrix3d& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.axis() * aa.angle();
}

ImuSample resting_imu(double dt) {
  ImuSample imu;
  imu.accel = Vector3d(0, 0, kGravity);
  imu.dt = dt;
  return imu;
}

const SimResult& clean_run(Primitive p) {
  static std::map<Primitive, SimResult> cache;
  auto it = cache.find(p);
  if (it == cache.end()) {
    SimConfig c;
    c.primitive = p;
    c.duration = 60.0;
    c.seed = 2;
    c.noise = {0.0, 0.0, 0.0};
    it = cache.emplace(p, simulate(c)).first;
  }
  return it->second;
}

}  // namespace

TEST_CASE("SO(3) helpers") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Vector3d w(normal(rng), normal(rng), normal(rng));
    const Matrix3d expected = Eigen::AngleAxisd(w.norm(), w.normalized()).toRotationMatrix();
    CHECK((so3_exp(w) - expected).norm() < 1e-12);

    // Exp(w + h e_i) Exp(w)^T ~ Exp(h J e_i)
    const Matrix3d J = so3_left_jacobian(w);
    const double h = 1e-6;
    for (int c = 0; c < 3; ++c) {
      const Vector3d dw = Vector3d::Unit(c) * h;
      const Vector3d numeric =
          (so3_log(so3_exp(w + dw) * so3_exp(w).transpose()) - so3_log(so3_exp(w - dw) * so3_exp(w).transpose())) /
          (2 * h);
      CHECK((numeric - J.col(c)).norm() < 1e-6);
    }
    const Vector3d v(normal(rng), normal(rng), normal(rng));
    CHECK((skew(w) * v - w.cross(v)).norm() < 1e-14);
  }
  CHECK((so3_exp(Vector3d(1e-10, 0, 0)) - Matrix3d::Identity()).norm() < 1e-9);
  CHECK((so3_left_jacobian(Vector3d::Zero()) - Matrix3d::Identity()).norm() == 0.0);
}

TEST_CASE("propagation examples") {
  const InekfNoise noise;
  SUBCASE("hovering stays put") {
    EstimatorState s;
    for (int k = 0; k < 100; ++k) s = propagate(s, resting_imu(0.01), noise);
    CHECK(s.p.norm() < 1e-12);
    CHECK(s.v.norm() < 1e-12);
    CHECK((s.R - Matrix3d::Identity()).norm() < 1e-12);
  }
  SUBCASE("constant acceleration integrates to half a t squared") {
    EstimatorState s;
    ImuSample imu = resting_imu(0.01);
    imu.accel.x() = 1.0;
    for (int k = 0; k < 100; ++k) s = propagate(s, imu, noise);
    CHECK(s.p.x() == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(s.v.x() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(s.p.z()) < 1e-9);
  }
  SUBCASE("constant yaw rate") {
    EstimatorState s;
    ImuSample imu = resting_imu(0.01);
    imu.gyro.z() = std::numbers::pi;
    for (int k = 0; k < 100; ++k) s = propagate(s, imu, noise);
    const Matrix3d expected = Eigen::AngleAxisd(std::numbers::pi, Vector3d::UnitZ()).toRotationMatrix();
    CHECK((s.R - expected).norm() < 1e-9);
    CHECK(s.p.norm() < 1e-9);
  }
  SUBCASE("covariance grows without measurements") {
    EstimatorState s;
    const double before = s.P.trace();
    s = propagate(s, resting_imu(0.01), noise);
    CHECK(s.P.trace() > before);
  }
  SUBCASE("bad inputs") {
    EstimatorState s;
    ImuSample imu = resting_imu(0.0);
    CHECK_THROWS_AS(propagate(s, imu, noise), ConfigInvalid);
    imu.dt = 0.01;
    imu.accel.x() = std::nan("");
    CHECK_THROWS_AS(propagate(s, imu, noise), NonFiniteInput);
  }
}

TEST_CASE("contact bookkeeping") {
  const auto topology = build_canonical_topology();
  const InekfNoise noise;
  EstimatorState s;
  s.p = Vector3d(0.1, -0.2, 0.3);
  const ContactVector three{1, 0, 1, 0, 0, 1};
  s = contact_update(s, three, topology.endcap_positions, noise);
  REQUIRE(s.contacts.size() == 3);
  CHECK(s.dimension() == 18);
  CHECK(s.P.rows() == 18);
  CHECK(s.contacts[1].endcap == 2);
  CHECK((s.contacts[1].position - (s.p + s.R * topology.endcap_positions[2])).norm() < 1e-15);
  CHECK(s.find_contact(5) == 2);
  CHECK(s.find_contact(1) == -1);

  SUBCASE("a consistent measurement is a fixed point and shrinks covariance") {
    const EstimatorState after = contact_update(s, three, topology.endcap_positions, noise);
    CHECK((after.p - s.p).norm() < 1e-12);
    CHECK((after.v - s.v).norm() < 1e-12);
    CHECK((after.R - s.R).norm() < 1e-12);
    for (std::size_t k = 0; k < 3; ++k) CHECK((after.contacts[k].position - s.contacts[k].position).norm() < 1e-12);
    CHECK(after.P.trace() < s.P.trace());
    const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(s.P - after.P);
    CHECK(eig.eigenvalues().minCoeff() > -1e-12);
  }
  SUBCASE("a correction moves the state toward the anchors") {
    EstimatorState moved = s;
    moved.p += Vector3d(0.01, 0.0, 0.0);
    moved.P.topLeftCorner(9, 9) += MatrixXd::Identity(9, 9) * 1e-2;
    const EstimatorState after = contact_update(moved, three, topology.endcap_positions, noise);
    CHECK((after.p - s.p).norm() < (moved.p - s.p).norm());
  }
  SUBCASE("releasing every contact returns to the base state") {
    const EstimatorState none = contact_update(s, ContactVector{}, topology.endcap_positions, noise);
    CHECK(none.contacts.empty());
    CHECK(none.P.rows() == 9);
    CHECK((none.P - s.P.topLeftCorner(9, 9)).norm() == 0.0);
  }
  SUBCASE("partial release keeps the surviving blocks") {
    const EstimatorState two = contact_update(s, ContactVector{1, 0, 0, 0, 0, 1}, topology.endcap_positions, noise);
    REQUIRE(two.contacts.size() == 2);
    CHECK(two.contacts[0].endcap == 0);
    CHECK(two.contacts[1].endcap == 5);
    CHECK(two.P.rows() == 15);
  }
  SUBCASE("enormous measurement noise leaves the state unchanged") {
    InekfNoise loud = noise;
    loud.measurement = 1e9;
    EstimatorState moved = s;
    moved.p += Vector3d(0.05, 0.0, 0.0);
    const EstimatorState after = contact_update(moved, three, topology.endcap_positions, loud);
    CHECK((after.p - moved.p).norm() < 1e-12);
    CHECK((after.P - moved.P).norm() < 1e-12);
  }
  SUBCASE("non-finite inputs") {
    auto bad = topology.endcap_positions;
    bad[3].x() = std::nan("");
    CHECK_THROWS_AS(contact_update(s, three, bad, noise), NonFiniteInput);
    EstimatorState broken = s;
    broken.p.y() = INFINITY;
    CHECK_THROWS_AS(contact_update(broken, three, topology.endcap_positions, noise), NonFiniteInput);
  }
  CHECK_THROWS_AS(retract_left(s, Eigen::VectorXd::Zero(9)), ShapeMismatch);
}

TEST_CASE("covariance stays symmetric PSD and rotation orthonormal") {
  const auto topology = build_canonical_topology();
  const InekfNoise noise;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  EstimatorState s;
  for (int k = 0; k < 2000; ++k) {
    ImuSample imu;
    imu.accel = Vector3d(normal(rng), normal(rng), kGravity + normal(rng));
    imu.gyro = Vector3d(normal(rng), normal(rng), normal(rng));
    imu.dt = 0.01;
    s = propagate(s, imu, noise);
    ContactVector c{};
    for (auto& x : c) x = static_cast<std::uint8_t>(rng() % 3 == 0);
    s = contact_update(s, c, topology.endcap_positions, noise);
    if (k % 50 == 0) {
      REQUIRE((s.P - s.P.transpose()).norm() == 0.0);
      const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(s.P);
      REQUIRE(eig.eigenvalues().minCoeff() > -1e-12 * eig.eigenvalues().maxCoeff());
      REQUIRE((s.R.transpose() * s.R - Matrix3d::Identity()).norm() < 1e-12);
      REQUIRE(s.R.determinant() == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("filter commutes with yaw rotations and translations of the world") {
  const auto topology = build_canonical_topology();
  const auto& run = clean_run(Primitive::FL);
  SensorSequence seq = run.sequence;
  seq.t.resize(600);
  seq.imu.resize(600);
  seq.tendon_lengths.resize(600);
  seq.contacts->resize(600);

  const Matrix3d Rz = Eigen::AngleAxisd(0.7, Vector3d::UnitZ()).toRotationMatrix();
  const Vector3d t(1.5, -2.0, 0.25);

  EstimatorOptions base;
  base.initial = state_from_truth(run.truth);
  base.initial->P = MatrixXd::Identity(9, 9) * 1e-3;
  base.initial->P(0, 1) = base.initial->P(1, 0) = 2e-4;

  EstimatorOptions moved = base;
  EstimatorState g;
  g.R = Rz;
  g.p = t;
  const MatrixXd ad = state_adjoint(g);
  moved.initial->R = Rz * base.initial->R;
  moved.initial->v = Rz * base.initial->v;
  moved.initial->p = Rz * base.initial->p + t;
  moved.initial->P = ad * base.initial->P * ad.transpose();

  const auto a = run_estimator(seq, *seq.contacts, topology, base);
  const auto b = run_estimator(seq, *seq.contacts, topology, moved);
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    worst = std::max(worst, (b.position[k] - (Rz * a.position[k] + t)).norm());
    worst = std::max(worst, (b.velocity[k] - Rz * a.velocity[k]).norm());
    worst = std::max(worst, (b.rotation[k] - Rz * a.rotation[k]).norm());
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("IMU fusion recovers body-frame motion") {
  const auto topology = build_canonical_topology();
  const auto& run = clean_run(Primitive::F);
  for (std::size_t k = 0; k < run.sequence.size(); k += 97) {
    const ImuSample imu = fuse_rod_imus(run.sequence.imu[k], topology);
    if (run.truth.velocity[k].norm() == 0.0) {
      CHECK((run.truth.rotation[k] * imu.accel - Vector3d(0, 0, kGravity)).norm() < 1e-9);
      CHECK(imu.gyro.norm() < 1e-9);
    }
  }
  const EstimatorState aligned = static_alignment(run.sequence.imu[0], topology);
  const Vector3d down_body = aligned.R.transpose() * Vector3d(0, 0, 1);
  const Vector3d truth_down = run.truth.rotation[0].transpose() * Vector3d(0, 0, 1);
  CHECK((down_body - truth_down).norm() < 1e-9);
  CHECK(aligned.P.rows() == 9);
}

TEST_CASE("drift on clean data") {
  const auto topology = build_canonical_topology();
  for (const auto p : {Primitive::F, Primitive::BR}) {
    const auto& run = clean_run(p);
    EstimatorOptions options;
    options.initial = state_from_truth(run.truth);
    const auto with_contacts = run_estimator(run.sequence, *run.sequence.contacts, topology, options);
    const auto blind = run_estimator(run.sequence, std::vector<ContactVector>(run.sequence.size()), topology, options);
    const double drift = drift_percent(with_contacts, run.truth);
    CHECK(drift < 1.0);
    CHECK(drift_percent(blind, run.truth) > drift);
    CHECK(with_contacts.size() == run.sequence.size());
  }
}

TEST_CASE("estimator edge cases") {
  const auto topology = build_canonical_topology();
  const SensorSequence empty;
  const auto traj = run_estimator(empty, {}, topology);
  CHECK(traj.size() == 0);
  CHECK_THROWS_AS(drift_percent(traj, traj), SequenceTooShort);

  const auto& run = clean_run(Primitive::B);
  CHECK_THROWS_AS(run_estimator(run.sequence, std::vector<ContactVector>(3), topology), LengthMismatch);
  SensorSequence bad = run.sequence;
  bad.imu[10][2] = std::nan("");
  CHECK_THROWS_AS(run_estimator(bad, *bad.contacts, topology), NonFiniteInput);

  GroundTruth still;
  still.t = {0.0, 0.01};
  still.position = {Vector3d::Zero(), Vector3d::Zero()};
  CHECK_THROWS_AS(drift_percent(still, still), ConfigInvalid);
  GroundTruth shorter = still;
  shorter.t.pop_back();
  shorter.position.pop_back();
  CHECK_THROWS_AS(drift_percent(shorter, still), LengthMismatch);
  CHECK_THROWS_AS(state_from_truth(GroundTruth{}), EmptyDataset);
}
