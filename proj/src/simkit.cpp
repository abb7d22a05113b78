#include "tensegrity/simkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Geometry>

#include "tensegrity/errors.hpp"

namespace tensegrity {

namespace {

using Eigen::Matrix3d;
using Eigen::Vector3d;

constexpr double kBaseAmplitude = 0.02;
constexpr double kSideAmplitude = 0.03;
constexpr double kActuationAmplitude = 0.06;
constexpr double kPreloadAmplitude = 0.03;
constexpr double kPreloadFraction = 0.4;

double primitive_phase(Primitive p) {
  constexpr double pi = std::numbers::pi;
  switch (p) {
    case Primitive::F: return 0.0;
    case Primitive::B: return pi;
    case Primitive::FL: return pi / 3;
    case Primitive::FR: return -pi / 3;
    case Primitive::BL: return 2 * pi / 3;
    case Primitive::BR: return -2 * pi / 3;
  }
  return 0.0;
}

double turn_sign(Primitive p) {
  switch (p) {
    case Primitive::FL:
    case Primitive::BL: return 1.0;
    case Primitive::FR:
    case Primitive::BR: return -1.0;
    default: return 0.0;
  }
}

bool backward(Primitive p) { return p == Primitive::B || p == Primitive::BL || p == Primitive::BR; }

struct Segment {
  double t0 = 0, t1 = 0;
  bool tumble = false;
  Matrix3d R0 = Matrix3d::Identity();
  Vector3d p0 = Vector3d::Zero();
  Vector3d axis = Vector3d::UnitZ();
  Vector3d pivot = Vector3d::Zero();
  double angle = 0;
  int lift = -1;  // tumble: endcap leaving the ground; rest: endcap lifted by the next tumble
  int land = -1;
  double cycle_start = 0, cycle_end = 1;
  int cycle = 0;
};

Matrix3d orthonormalize(const Matrix3d& R) { return Eigen::Quaterniond(R).normalized().toRotationMatrix(); }

int find_face(const std::vector<HullFace>& faces, int a, int b, int exclude) {
  for (int i = 0; i < static_cast<int>(faces.size()); ++i) {
    if (i == exclude) continue;
    const auto& e = faces[i].endcaps;
    if (std::find(e.begin(), e.end(), a) != e.end() && std::find(e.begin(), e.end(), b) != e.end()) return i;
  }
  throw GeometryMismatch("hull edge without an adjacent face");
}

std::vector<Segment> plan_gait(const SimConfig& cfg, const TensegrityTopology& topo,
                               const std::vector<HullFace>& faces) {
  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
  std::uniform_real_distribution<double> tumble_len(cfg.tumble_min, cfg.tumble_max);
  std::uniform_real_distribution<double> rest_len(cfg.rest_min, cfg.rest_max);

  int face = -1;
  for (int i = 0; i < static_cast<int>(faces.size()); ++i) {
    if (faces[i].normal.z() < -1.0 + 1e-9) face = i;
  }
  if (face < 0) throw GeometryMismatch("no hull face lies flat on the ground in the reference pose");

  Matrix3d R = Matrix3d::Identity();
  Vector3d p = Vector3d::Zero();
  double lowest = 0;
  for (const auto& x : topo.endcap_positions) lowest = std::min(lowest, x.z());
  p.z() = -lowest;

  const double duration = cfg.duration;
  double heading = backward(cfg.primitive) ? std::numbers::pi : 0.0;
  const double step = turn_sign(cfg.primitive) * cfg.heading_step_deg * std::numbers::pi / 180.0 / cfg.turning_ratio;

  std::vector<Segment> segs;
  Segment first;
  first.t0 = 0;
  first.t1 = cfg.initial_rest;
  first.R0 = R;
  first.p0 = p;
  first.cycle = -1;
  first.cycle_start = 0;
  first.cycle_end = cfg.initial_rest;
  segs.push_back(first);

  std::pair<int, int> prev_edge{-1, -1};
  double tc = cfg.initial_rest;
  int cycle = 0;
  while (tc < duration + 1.0) {
    const auto& fe = faces[face].endcaps;
    Vector3d centroid = Vector3d::Zero();
    for (int e : fe) centroid += p + R * topo.endcap_positions[e];
    centroid /= 3.0;
    const Vector3d want(std::cos(heading), std::sin(heading), 0.0);
    double best = -1e300;
    int ea = -1, eb = -1, ec = -1;
    for (int i = 0; i < 3; ++i) {
      const int a = fe[i], b = fe[(i + 1) % 3], c = fe[(i + 2) % 3];
      if ((a == prev_edge.first && b == prev_edge.second) || (a == prev_edge.second && b == prev_edge.first)) continue;
      Vector3d mid = p + R * (topo.endcap_positions[a] + topo.endcap_positions[b]) / 2.0;
      Vector3d dir = mid - centroid;
      dir.z() = 0;
      const double score = dir.normalized().dot(want);
      if (score > best) {
        best = score;
        ea = a;
        eb = b;
        ec = c;
      }
    }
    const int next = find_face(faces, ea, eb, face);
    int land = -1;
    for (int e : faces[next].endcaps) {
      if (e != ea && e != eb) land = e;
    }

    const Vector3d A = p + R * topo.endcap_positions[ea];
    const Vector3d B = p + R * topo.endcap_positions[eb];
    Vector3d u = (B - A).normalized();
    const Vector3d n_next = R * faces[next].normal;
    const double angle = std::acos(std::clamp(n_next.dot(R * faces[face].normal), -1.0, 1.0));
    if ((Eigen::AngleAxisd(angle, u) * n_next - Vector3d(0, 0, -1)).norm() > 1e-6) u = -u;

    segs.back().lift = ec;
    const double T = tumble_len(rng);
    const double rest = rest_len(rng);

    Segment tum;
    tum.t0 = tc;
    tum.t1 = tc + T;
    tum.tumble = true;
    tum.R0 = R;
    tum.p0 = p;
    tum.axis = u;
    tum.pivot = A;
    tum.angle = angle;
    tum.lift = ec;
    tum.land = land;
    tum.cycle = cycle;
    tum.cycle_start = tc;
    tum.cycle_end = tc + T + rest;
    segs.push_back(tum);

    const Eigen::AngleAxisd Q(angle, u);
    R = orthonormalize(Q * R);
    p = A + Q * (p - A);
    double low = 1e300;
    for (const auto& x : topo.endcap_positions) low = std::min(low, (p + R * x).z());
    p.z() -= low;

    Segment rs;
    rs.t0 = tc + T;
    rs.t1 = tc + T + rest;
    rs.R0 = R;
    rs.p0 = p;
    rs.cycle = cycle;
    rs.cycle_start = tum.cycle_start;
    rs.cycle_end = tum.cycle_end;
    segs.push_back(rs);

    prev_edge = {ea, eb};
    face = next;
    heading += step;
    tc += T + rest;
    ++cycle;
  }
  return segs;
}

struct Kinematics {
  Matrix3d R;
  Vector3d p, v, a, omega, alpha;
};

Kinematics evaluate(const Segment& s, double t) {
  Kinematics k;
  if (!s.tumble) {
    k.R = s.R0;
    k.p = s.p0;
    k.v.setZero();
    k.a.setZero();
    k.omega.setZero();
    k.alpha.setZero();
    return k;
  }
  constexpr double pi = std::numbers::pi;
  const double T = s.t1 - s.t0;
  const double x = std::clamp((t - s.t0) / T, 0.0, 1.0);
  const double theta = s.angle * (1.0 - std::cos(pi * x)) / 2.0;
  const double theta_dot = s.angle * pi * std::sin(pi * x) / (2.0 * T);
  const double theta_ddot = s.angle * pi * pi * std::cos(pi * x) / (2.0 * T * T);
  const Eigen::AngleAxisd Q(theta, s.axis);
  k.R = Q * s.R0;
  const Vector3d lever = Q * (s.p0 - s.pivot);
  k.p = s.pivot + lever;
  k.omega = theta_dot * s.axis;
  k.alpha = theta_ddot * s.axis;
  k.v = k.omega.cross(lever);
  k.a = k.alpha.cross(lever) + k.omega.cross(k.omega.cross(lever));
  return k;
}

double smooth_bump(double x) { return std::sin(std::numbers::pi * std::clamp(x, 0.0, 1.0)); }

}  // namespace

const char* to_string(Primitive p) noexcept {
  switch (p) {
    case Primitive::F: return "F";
    case Primitive::B: return "B";
    case Primitive::FL: return "FL";
    case Primitive::FR: return "FR";
    case Primitive::BL: return "BL";
    case Primitive::BR: return "BR";
  }
  return "?";
}

Primitive parse_primitive(const std::string& text) {
  for (Primitive p : kAllPrimitives) {
    if (text == to_string(p)) return p;
  }
  throw ConfigInvalid("unknown primitive '" + text + "' (expected F, B, FL, FR, BL or BR)");
}

void SimConfig::validate() const {
  auto bad = [](const std::string& msg) { throw ConfigInvalid(msg); };
  if (!(turning_ratio > 0.0 && turning_ratio <= 1.0)) bad("turning_ratio must lie in (0, 1]");
  if (!(duration > 0.0) || !std::isfinite(duration)) bad("duration must be positive");
  if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) bad("sample_rate must be positive");
  if (std::llround(duration * sample_rate) < 1) bad("duration * sample_rate must give at least one sample");
  if (!(noise.accel >= 0.0 && noise.gyro >= 0.0 && noise.tendon >= 0.0)) bad("noise levels must be non-negative");
  if (!(contact_height_tolerance > 0.0)) bad("contact_height_tolerance must be positive");
  if (!(initial_rest >= 0.0)) bad("initial_rest must be non-negative");
  if (!(tumble_min > 0.0 && tumble_max >= tumble_min)) bad("tumble duration range is invalid");
  if (!(rest_min > 0.0 && rest_max >= rest_min)) bad("rest duration range is invalid");
  if (!(heading_step_deg >= 0.0)) bad("heading_step_deg must be non-negative");
}

double GroundTruth::path_length() const {
  double total = 0;
  for (std::size_t i = 1; i < position.size(); ++i) total += (position[i] - position[i - 1]).norm();
  return total;
}

std::vector<HullFace> hull_faces(const TensegrityTopology& topology) {
  const auto& x = topology.endcap_positions;
  std::vector<HullFace> faces;
  for (int i = 0; i < kNumEndcaps; ++i) {
    for (int j = i + 1; j < kNumEndcaps; ++j) {
      for (int k = j + 1; k < kNumEndcaps; ++k) {
        Vector3d n = (x[j] - x[i]).cross(x[k] - x[i]);
        if (n.norm() < 1e-12) continue;
        n.normalize();
        int pos = 0, neg = 0;
        for (int m = 0; m < kNumEndcaps; ++m) {
          if (m == i || m == j || m == k) continue;
          const double d = (x[m] - x[i]).dot(n);
          if (d > 1e-9) ++pos;
          else if (d < -1e-9) ++neg;
        }
        if (pos > 0 && neg > 0) continue;
        if (pos + neg != kNumEndcaps - 3) throw GeometryMismatch("coplanar endcaps on the convex hull");
        faces.push_back({{i, j, k}, pos > 0 ? Vector3d(-n) : n});
      }
    }
  }
  return faces;
}

SimResult simulate(const SimConfig& config) { return simulate(config, build_canonical_topology()); }

SimResult simulate(const SimConfig& config, const TensegrityTopology& topology) {
  config.validate();
  validate_topology(topology);
  const auto faces = hull_faces(topology);
  const auto segs = plan_gait(config, topology, faces);

  const auto n = static_cast<std::size_t>(std::llround(config.duration * config.sample_rate));
  SimResult out;
  SensorSequence& seq = out.sequence;
  GroundTruth& gt = out.truth;
  seq.sample_rate = config.sample_rate;
  seq.t.resize(n);
  seq.imu.resize(n);
  seq.tendon_lengths.resize(n);
  seq.contacts.emplace(n);
  gt.t.resize(n);
  gt.rotation.resize(n);
  gt.position.resize(n);
  gt.velocity.resize(n);
  gt.endcap_heights.resize(n);

  std::array<std::vector<int>, kNumEndcaps> incident;
  for (int j = 0; j < kNumTendons; ++j) {
    incident[topology.tendons[j].first].push_back(j);
    incident[topology.tendons[j].second].push_back(j);
  }
  const double offset = primitive_phase(config.primitive);
  const double asym = turn_sign(config.primitive) * 0.5 * (1.25 - config.turning_ratio);
  const Vector3d gravity_up(0, 0, kGravity);

  std::size_t si = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / config.sample_rate;
    while (si + 1 < segs.size() && t >= segs[si].t1) ++si;
    const Segment& s = segs[si];
    const Kinematics kin = evaluate(s, t);

    seq.t[k] = t;
    gt.t[k] = t;
    gt.rotation[k] = kin.R;
    gt.position[k] = kin.p;
    gt.velocity[k] = kin.v;

    auto& contacts = (*seq.contacts)[k];
    for (int e = 0; e < kNumEndcaps; ++e) {
      const double h = (kin.p + kin.R * topology.endcap_positions[e]).z();
      gt.endcap_heights[k][e] = h;
      contacts[e] = h < config.contact_height_tolerance ? 1 : 0;
    }

    auto& imu = seq.imu[k];
    for (int r = 0; r < kNumRods; ++r) {
      const Vector3d lever = kin.R * topology.imu_positions[r];
      const Vector3d acc = kin.a + kin.alpha.cross(lever) + kin.omega.cross(kin.omega.cross(lever));
      const Matrix3d to_rod = topology.imu_frames[r].transpose() * kin.R.transpose();
      const Vector3d f = to_rod * (acc + gravity_up);
      const Vector3d w = to_rod * kin.omega;
      for (int c = 0; c < 3; ++c) {
        imu[r * kImuChannelsPerRod + c] = f[c];
        imu[r * kImuChannelsPerRod + 3 + c] = w[c];
      }
    }

    const double phase = s.cycle + (t - s.cycle_start) / (s.cycle_end - s.cycle_start);
    std::array<double, kNumTendons> mod{};
    for (int j = 0; j < kNumTendons; ++j) {
      const double wave = std::sin(2.0 * std::numbers::pi * phase + offset + 2.0 * std::numbers::pi * j / kNumTendons);
      mod[j] = kBaseAmplitude * wave;
      if (j >= 6) mod[j] += kSideAmplitude * asym * (j - 7) * wave;
    }
    if (s.tumble) {
      const double x = (t - s.t0) / (s.t1 - s.t0);
      for (int j : incident[s.lift]) mod[j] -= kPreloadAmplitude * (1.0 - x) + kActuationAmplitude * smooth_bump(x);
      for (int j : incident[s.land]) mod[j] += 0.5 * kActuationAmplitude * smooth_bump(x);
    } else if (s.lift >= 0) {
      const double len = s.t1 - s.t0;
      const double x = (t - (s.t1 - kPreloadFraction * len)) / (kPreloadFraction * len);
      if (x > 0) {
        for (int j : incident[s.lift]) mod[j] -= kPreloadAmplitude * std::min(x, 1.0);
      }
    }
    for (int j = 0; j < kNumTendons; ++j) seq.tendon_lengths[k][j] = topology.tendon_rest_length(j) * (1.0 + mod[j]);
  }

  seq = add_sensor_noise(seq, config.noise, config.seed);
  return out;
}

SensorSequence add_sensor_noise(const SensorSequence& seq, const SensorNoise& noise, std::uint64_t seed) {
  SensorSequence out = seq;
  std::mt19937_64 rng(seed * 0xD1B54A32D192ED03ULL + 0x8BB84B93962EACC9ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    for (int c = 0; c < kImuChannels; ++c) {
      const double sigma = (c % kImuChannelsPerRod) < 3 ? noise.accel : noise.gyro;
      const double z = normal(rng);
      if (sigma > 0) out.imu[k][c] += sigma * z;
    }
    for (int j = 0; j < kNumTendons; ++j) {
      const double z = normal(rng);
      if (noise.tendon > 0) out.tendon_lengths[k][j] += noise.tendon * z;
    }
  }
  return out;
}

void write_trajectory(const std::filesystem::path& path, const GroundTruth& traj) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << "t,x,y,z,qw,qx,qy,qz,vx,vy,vz\n";
  for (std::size_t k = 0; k < traj.size(); ++k) {
    Eigen::Quaterniond q(traj.rotation[k]);
    q.normalize();
    if (q.w() < 0) q.coeffs() *= -1.0;
    const double vals[] = {traj.t[k],         traj.position[k].x(), traj.position[k].y(), traj.position[k].z(),
                           q.w(),             q.x(),                q.y(),                q.z(),
                           traj.velocity[k].x(), traj.velocity[k].y(), traj.velocity[k].z()};
    for (int i = 0; i < 11; ++i) os << (i ? "," : "") << format_double(vals[i]);
    os << '\n';
  }
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

GroundTruth read_trajectory(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,x,y,z,qw,qx,qy,qz,vx,vy,vz") throw FormatError(path.string() + ": unexpected trajectory header");
  GroundTruth gt;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<double, 11> v{};
    std::stringstream ss(line);
    std::string cell;
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col >= 11) {
        ++col;
        break;
      }
      try {
        std::size_t used = 0;
        v[col] = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError(path.string() + ":" + std::to_string(row) + ": bad number '" + cell + "'");
      }
      ++col;
    }
    if (col != 11)
      throw FormatError(path.string() + ":" + std::to_string(row) + ": expected 11 columns");
    gt.t.push_back(v[0]);
    gt.position.emplace_back(v[1], v[2], v[3]);
    gt.rotation.push_back(Eigen::Quaterniond(v[4], v[5], v[6], v[7]).normalized().toRotationMatrix());
    gt.velocity.emplace_back(v[8], v[9], v[10]);
    gt.endcap_heights.push_back({});
  }
  return gt;
}

}  // namespace tensegrity
