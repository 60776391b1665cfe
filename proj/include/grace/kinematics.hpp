#pragma once

// Upper-limb kinematics: rotation algebra, shoulder Euler decomposition
// (Y-X'-Y'' sequence), elbow angle and 4-DOF forward kinematics.

#include "grace/common.hpp"

#include <array>

namespace grace::kin {

// Maps any real angle into [0, 2pi).
template <typename Scalar>
Scalar canonical_angle(Scalar angle) {
  const Scalar two_pi = static_cast<Scalar>(kTwoPi);
  Scalar a = std::fmod(angle, two_pi);
  if (a < Scalar(0)) a += two_pi;
  if (a >= two_pi) a = Scalar(0);
  return a;
}

template <typename Scalar>
class Rotation {
public:
  using MatrixType = Matrix3<Scalar>;

  Rotation() : m_(MatrixType::Identity()) {}

  // Throws std::invalid_argument unless m is orthonormal with det +1.
  static Rotation from_matrix(const MatrixType& m, Scalar tol = Scalar(1e-9)) {
    const MatrixType gram = m.transpose() * m - MatrixType::Identity();
    if (gram.cwiseAbs().maxCoeff() > tol || std::abs(m.determinant() - Scalar(1)) > tol)
      throw std::invalid_argument("Rotation: matrix is not a proper rotation");
    return Rotation(m, Unchecked{});
  }

  static Rotation identity() { return Rotation(); }

  static Rotation about_x(Scalar angle) {
    const Scalar c = std::cos(angle), s = std::sin(angle);
    MatrixType m;
    m << 1, 0, 0, 0, c, -s, 0, s, c;
    return Rotation(m, Unchecked{});
  }

  static Rotation about_y(Scalar angle) {
    const Scalar c = std::cos(angle), s = std::sin(angle);
    MatrixType m;
    m << c, 0, s, 0, 1, 0, -s, 0, c;
    return Rotation(m, Unchecked{});
  }

  static Rotation about_z(Scalar angle) {
    const Scalar c = std::cos(angle), s = std::sin(angle);
    MatrixType m;
    m << c, -s, 0, s, c, 0, 0, 0, 1;
    return Rotation(m, Unchecked{});
  }

  const MatrixType& matrix() const { return m_; }
  Scalar operator()(int row, int col) const { return m_(row, col); }

  Rotation transpose() const { return Rotation(m_.transpose(), Unchecked{}); }

  friend Rotation operator*(const Rotation& a, const Rotation& b) {
    return Rotation(a.m_ * b.m_, Unchecked{});
  }
  friend Vector3<Scalar> operator*(const Rotation& r, const Vector3<Scalar>& v) { return r.m_ * v; }

private:
  struct Unchecked {};
  Rotation(const MatrixType& m, Unchecked) : m_(m) {}

  MatrixType m_;
};

using Rotationd = Rotation<double>;

// Orientation of segment j expressed in the frame of segment i: Ri^T Rj.
template <typename Scalar>
Rotation<Scalar> relative_rotation(const Rotation<Scalar>& r_i, const Rotation<Scalar>& r_j) {
  return r_i.transpose() * r_j;
}

template <typename Scalar>
struct ShoulderAngles {
  Scalar plane_of_elevation{};
  Scalar elevation{};  // in [0, pi]
  Scalar axial_rotation{};
  // Set when |sin(elevation)| < 1e-8; plane is then reported as 0 and the
  // observable angle sum (or difference) is folded into axial_rotation.
  bool gimbal_lock = false;
};

inline constexpr double kGimbalTolerance = 1e-8;

// R = Ry(plane) * Rx(elevation) * Ry(axial)
template <typename Scalar>
Rotation<Scalar> compose_shoulder(Scalar plane, Scalar elevation, Scalar axial) {
  return Rotation<Scalar>::about_y(plane) * Rotation<Scalar>::about_x(elevation) *
         Rotation<Scalar>::about_y(axial);
}

template <typename Scalar>
ShoulderAngles<Scalar> decompose_shoulder(const Rotation<Scalar>& rel) {
  const auto& r = rel.matrix();
  ShoulderAngles<Scalar> out;
  const Scalar c_elev = std::clamp(r(1, 1), Scalar(-1), Scalar(1));
  out.elevation = std::acos(c_elev);
  const Scalar s_elev = std::sin(out.elevation);
  if (std::abs(s_elev) < Scalar(kGimbalTolerance)) {
    out.gimbal_lock = true;
    out.plane_of_elevation = Scalar(0);
    // Elevation 0: Ry(plane + axial). Elevation pi: Ry(plane) diag(1,-1,-1) Ry(axial),
    // whose top row is (cos(axial - plane), 0, sin(axial - plane)).
    out.axial_rotation = canonical_angle(std::atan2(r(0, 2), r(0, 0)));
    return out;
  }
  out.plane_of_elevation = canonical_angle(std::atan2(r(0, 1), r(2, 1)));
  out.axial_rotation = canonical_angle(std::atan2(r(1, 0), -r(1, 2)));
  return out;
}

template <typename Scalar>
struct ElbowAngle {
  Scalar radians{};
  bool degenerate = false;  // inputs (anti)parallel; result is exactly 0 or pi
};

// Angle between the upper-arm and forearm direction vectors after projecting
// both onto the plane they span.
template <typename Scalar>
ElbowAngle<Scalar> elbow_angle(const Vector3<Scalar>& v_upper, const Vector3<Scalar>& v_forearm) {
  const Scalar nu = v_upper.norm(), nf = v_forearm.norm();
  if (!(nu > Scalar(0)) || !(nf > Scalar(0)))
    throw std::invalid_argument("elbow_angle: zero-length direction vector");
  const Vector3<Scalar> a = v_upper / nu;
  const Vector3<Scalar> b = v_forearm / nf;
  const Vector3<Scalar> normal = a.cross(b);
  const Scalar normal_len = normal.norm();
  if (normal_len < Scalar(1e-10)) {
    return {a.dot(b) >= Scalar(0) ? Scalar(0) : static_cast<Scalar>(kPi), true};
  }
  const Vector3<Scalar> n = normal / normal_len;
  Vector3<Scalar> ua = a - a.dot(n) * n;
  Vector3<Scalar> ub = b - b.dot(n) * n;
  ua.normalize();
  ub.normalize();
  return {std::acos(std::clamp(ua.dot(ub), Scalar(-1), Scalar(1))), false};
}

// Four joint angles, each canonicalized into [0, 2pi) on construction.
class JointConfig {
public:
  JointConfig() = default;
  JointConfig(double plane, double elevation, double axial, double elbow)
      : q_{canonical_angle(plane), canonical_angle(elevation), canonical_angle(axial),
           canonical_angle(elbow)} {}
  explicit JointConfig(const Vector4<double>& v) : JointConfig(v[0], v[1], v[2], v[3]) {}

  double plane_of_elevation() const { return q_[0]; }
  double elevation() const { return q_[1]; }
  double axial_rotation() const { return q_[2]; }
  double elbow_flexion() const { return q_[3]; }

  double operator[](std::size_t i) const { return q_[i]; }
  Vector4<double> vector() const { return {q_[0], q_[1], q_[2], q_[3]}; }
  const std::array<double, 4>& angles() const { return q_; }

  friend bool operator==(const JointConfig&, const JointConfig&) = default;

private:
  std::array<double, 4> q_{};
};

inline constexpr std::array<const char*, 4> kJointNames = {"plane", "elev", "rot", "elbow"};

class ArmGeometry {
public:
  ArmGeometry() = default;
  ArmGeometry(double upper_arm, double forearm, Vector3<double> shoulder = Vector3<double>::Zero())
      : upper_(upper_arm), fore_(forearm), origin_(std::move(shoulder)) {
    if (!(upper_ > 0.0) || !(fore_ > 0.0))
      throw std::invalid_argument("ArmGeometry: segment lengths must be positive");
  }

  double upper_arm_length() const { return upper_; }
  double forearm_length() const { return fore_; }
  double reach() const { return upper_ + fore_; }
  const Vector3<double>& shoulder_origin() const { return origin_; }

private:
  double upper_ = 0.30;
  double fore_ = 0.25;
  Vector3<double> origin_ = Vector3<double>::Zero();
};

// Wrist position. Rest pose (all zeros) hangs along -y; elbow flexion rotates
// the forearm about the humeral x axis.
template <typename Scalar>
Vector3<Scalar> forward_hand_position(Scalar plane, Scalar elevation, Scalar axial, Scalar elbow,
                                      const ArmGeometry& geom) {
  const Rotation<Scalar> shoulder = compose_shoulder(plane, elevation, axial);
  const Vector3<Scalar> down(0, -1, 0);
  const Vector3<Scalar> upper = shoulder * (static_cast<Scalar>(geom.upper_arm_length()) * down);
  const Vector3<Scalar> fore =
      shoulder * (Rotation<Scalar>::about_x(elbow) * (static_cast<Scalar>(geom.forearm_length()) * down));
  return geom.shoulder_origin().template cast<Scalar>() + upper + fore;
}

inline Vector3<double> forward_hand_position(const JointConfig& cfg, const ArmGeometry& geom) {
  return forward_hand_position<double>(cfg[0], cfg[1], cfg[2], cfg[3], geom);
}

// Unit direction of the upper arm for a shoulder pose.
inline Vector3<double> upper_arm_direction(double plane, double elevation) {
  return compose_shoulder(plane, elevation, 0.0) * Vector3<double>(0, -1, 0);
}

// Shoulder (plane, elevation) that points the straightened arm along `direction`.
// Plane is reported as 0 when elevation is at a pole.
inline std::pair<double, double> pointing_angles(const Vector3<double>& direction) {
  const Vector3<double> d = direction.normalized();
  const double elevation = std::acos(std::clamp(-d.y(), -1.0, 1.0));
  if (std::sin(elevation) < kGimbalTolerance) return {0.0, elevation};
  return {canonical_angle(std::atan2(-d.x(), -d.z())), elevation};
}

}  // namespace grace::kin
