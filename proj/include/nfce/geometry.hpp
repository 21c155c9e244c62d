#pragma once

#include <cmath>

#include "nfce/errors.hpp"

namespace nfce {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
};

enum class Regime : unsigned char { Far = 0, Near = 1 };

// UAV (array) and UE positions/velocities; straight-line kinematics.
struct TrajectoryState {
    Vec3 r_uav, r_ue;
    Vec3 v_uav, v_ue;

    double separation() const { return (r_uav - r_ue).norm(); }
};

// Rayleigh (Fraunhofer) distance 2 D^2 / lambda with aperture D = (N-1) d.
inline double rayleigh_distance(std::size_t n_antennas, double spacing_m,
                                double wavelength_m) {
    NFCE_REQUIRE(n_antennas >= 2, "rayleigh_distance: need at least 2 antennas");
    NFCE_REQUIRE(spacing_m > 0.0, "rayleigh_distance: spacing must be > 0");
    NFCE_REQUIRE(wavelength_m > 0.0, "rayleigh_distance: wavelength must be > 0");
    const double aperture = static_cast<double>(n_antennas - 1) * spacing_m;
    return 2.0 * aperture * aperture / wavelength_m;
}

// Near iff strictly inside the boundary; the tie goes to Far.
inline Regime classify_regime(double distance_m, double rayleigh_m) {
    NFCE_REQUIRE(distance_m > 0.0, "classify_regime: distance must be > 0");
    NFCE_REQUIRE(rayleigh_m > 0.0, "classify_regime: boundary must be > 0");
    return distance_m < rayleigh_m ? Regime::Near : Regime::Far;
}

inline TrajectoryState advance_positions(const TrajectoryState& s, double dt_s) {
    NFCE_REQUIRE(dt_s >= 0.0, "advance_positions: dt must be >= 0");
    TrajectoryState out = s;
    out.r_uav = s.r_uav + s.v_uav * dt_s;
    out.r_ue = s.r_ue + s.v_ue * dt_s;
    return out;
}

// sin(angle) of a point seen from the array center, measured against the
// array axis (ULA along +x). Clamped strictly inside (-1, 1) so downstream
// asin stays in the open interval.
inline double sin_angle_from_array(const Vec3& array_center, const Vec3& point) {
    const Vec3 u = point - array_center;
    const double d = u.norm();
    NFCE_REQUIRE(d > 0.0, "sin_angle_from_array: coincident points");
    double s = u.x / d;
    const double lim = 1.0 - 1e-12;
    if (s > lim) s = lim;
    if (s < -lim) s = -lim;
    return s;
}

}  // namespace nfce
