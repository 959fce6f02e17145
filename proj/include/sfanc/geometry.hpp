#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "sfanc/fft.hpp"  // kPi

namespace sfanc {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator*(double s, const Vec3& a) {
  return {s * a[0], s * a[1], s * a[2]};
}
inline double norm(const Vec3& a) {
  return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
}

inline double deg2rad(double d) { return d * kPi / 180.0; }

/// Shoebox room: dimensions in meters, broadband RT60 in seconds.
struct Room {
  Vec3 dims;
  double rt60 = 0.0;
  double speed_of_sound = 343.0;

  Room(Vec3 d, double rt, double c = 343.0) : dims(d), rt60(rt), speed_of_sound(c) {
    if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
      throw std::invalid_argument("Room: all dimensions must be positive");
    if (rt60 < 0) throw std::invalid_argument("Room: rt60 must be nonnegative");
  }

  bool contains(const Vec3& p, double margin = 0.0) const {
    for (int i = 0; i < 3; ++i)
      if (p[i] <= margin || p[i] >= dims[i] - margin) return false;
    return true;
  }

  double volume() const { return dims[0] * dims[1] * dims[2]; }
  double surface() const {
    return 2.0 * (dims[0] * dims[1] + dims[0] * dims[2] + dims[1] * dims[2]);
  }
};

/// Four-sensor regular tetrahedral reference array.
struct MicArray {
  Vec3 center;
  std::array<Vec3, 4> positions;
  double diameter = 0.0;
};

/// Source direction and range relative to the array center.
/// Azimuth θ in [0, 360) degrees measured from +x toward +y; elevation φ in
/// [-90, 90] degrees measured from the horizontal plane toward +z.
struct SourcePlacement {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double distance_m = 0.0;

  SourcePlacement(double az, double el, double dist)
      : azimuth_deg(az), elevation_deg(el), distance_m(dist) {
    if (az < 0.0 || az >= 360.0)
      throw std::invalid_argument("SourcePlacement: azimuth must be in [0, 360)");
    if (el < -90.0 || el > 90.0)
      throw std::invalid_argument("SourcePlacement: elevation must be in [-90, 90]");
    if (dist <= 0.0)
      throw std::invalid_argument("SourcePlacement: distance must be positive");
  }
};

/// Regular tetrahedron inscribed in a sphere of radius diameter/2 about
/// center. Orientation: one vertex on the +z axis; yaw_deg rotates the
/// whole array about +z (default 0).
inline MicArray make_tetrahedral_array(const Vec3& center, double diameter,
                                       double yaw_deg = 0.0) {
  if (diameter <= 0.0)
    throw std::invalid_argument("make_tetrahedral_array: diameter must be positive");
  const double r = diameter / 2.0;
  const double s83 = std::sqrt(8.0) / 3.0;   // horizontal radius of base ring
  const double s23 = std::sqrt(2.0 / 3.0);
  const double s29 = std::sqrt(2.0) / 3.0;
  std::array<Vec3, 4> unit = {{
      {0.0, 0.0, 1.0},
      {s83, 0.0, -1.0 / 3.0},
      {-s29, s23, -1.0 / 3.0},
      {-s29, -s23, -1.0 / 3.0},
  }};
  const double yaw = deg2rad(yaw_deg);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  MicArray a;
  a.center = center;
  a.diameter = diameter;
  for (int i = 0; i < 4; ++i) {
    const Vec3& u = unit[i];
    const Vec3 rotated = {cy * u[0] - sy * u[1], sy * u[0] + cy * u[1], u[2]};
    a.positions[i] = center + r * rotated;
  }
  return a;
}

/// Cartesian source position: center + d·(cosφcosθ, cosφsinθ, sinφ).
inline Vec3 place_source(const MicArray& array, const SourcePlacement& p) {
  const double th = deg2rad(p.azimuth_deg);
  const double ph = deg2rad(p.elevation_deg);
  const Vec3 dir = {std::cos(ph) * std::cos(th), std::cos(ph) * std::sin(th),
                    std::sin(ph)};
  return array.center + p.distance_m * dir;
}

/// Uniform wall reflection coefficient from Sabine's formula:
/// α = 0.161·V/(S·RT60), β = sqrt(1 − α). Same β on all six walls.
inline std::array<double, 6> rt60_to_reflection(const Room& room) {
  if (room.rt60 <= 0.0)
    throw std::invalid_argument("rt60_to_reflection: rt60 must be positive");
  const double alpha = 0.161 * room.volume() / (room.surface() * room.rt60);
  if (alpha >= 1.0)
    throw std::invalid_argument(
        "rt60_to_reflection: requested RT60 is shorter than this room can "
        "achieve (Sabine absorption >= 1)");
  double beta = std::sqrt(1.0 - alpha);
  if (beta >= 1.0) beta = std::nextafter(1.0, 0.0);
  std::array<double, 6> out;
  out.fill(beta);
  return out;
}

}  // namespace sfanc
