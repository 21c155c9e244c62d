#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "nfce/config.hpp"
#include "nfce/errors.hpp"
#include "nfce/geometry.hpp"
#include "nfce/rng.hpp"

namespace nfce {

using cplx = std::complex<double>;

// Dense row-major complex matrix, sized for N x Q channel blocks.
struct CMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<cplx> a;

    CMatrix() = default;
    CMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c) {}

    cplx& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    const cplx& at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }

    double frob_sq() const {
        double s = 0.0;
        for (const cplx& v : a) s += std::norm(v);
        return s;
    }
};

using CVector = std::vector<cplx>;

// One propagation path. sin_theta is the sine of the angle between the
// array axis and the direction to the endpoint; r is measured from the
// array reference element to the UE (LoS) or the scatterer anchor (NLoS).
struct Path {
    bool los = false;
    double sin_theta = 0.0;
    double r = 1.0;
    cplx gain{1.0, 0.0};
    Vec3 anchor;  // NLoS scatterer position; unused for the LoS path
};

struct PathSet {
    std::vector<Path> paths;  // paths[0] is LoS

    void validate() const {
        NFCE_REQUIRE(!paths.empty(), "path set must contain at least one path");
        NFCE_REQUIRE(paths[0].los, "paths[0] must be the LoS path");
        for (const Path& p : paths) {
            NFCE_REQUIRE(p.r > 0.0, "path distance must be > 0");
            NFCE_REQUIRE(std::abs(p.sin_theta) < 1.0, "path angle must be open (-pi/2, pi/2)");
        }
    }
};

struct ChannelBlock {
    CVector h;  // N entries; the slot channel replicates this across Q columns
    Regime regime = Regime::Far;
};

// Far-field plane-wave steering vector: entry n = exp(-j 2 pi d n s / lambda) / sqrt(N),
// with s the sine of the angle.
inline CVector steering_far(double sin_theta, std::size_t n_antennas, double spacing_m,
                            double wavelength_m) {
    NFCE_REQUIRE(n_antennas >= 1, "steering_far: need at least 1 antenna");
    NFCE_REQUIRE(spacing_m > 0.0 && wavelength_m > 0.0,
                 "steering_far: spacing and wavelength must be > 0");
    NFCE_REQUIRE(std::abs(sin_theta) <= 1.0, "steering_far: |sin| must be <= 1");
    const double scale = 1.0 / std::sqrt(static_cast<double>(n_antennas));
    const double k = 2.0 * M_PI * spacing_m / wavelength_m;
    CVector a(n_antennas);
    for (std::size_t n = 0; n < n_antennas; ++n) {
        const double phase = -k * static_cast<double>(n) * sin_theta;
        a[n] = scale * cplx(std::cos(phase), std::sin(phase));
    }
    return a;
}

// Distance from the n-th element to a point at distance r / angle-sine s
// from the reference element, with the array extending away from the
// point's projection: law of cosines sqrt(r^2 + (nd)^2 + 2 r s (nd)).
// Offsets are referenced to element 0 (not the array center) so that the
// r -> infinity limit reproduces steering_far entry by entry, including the
// n = 0 phase reference.
inline double element_distance(double r, double sin_theta, double offset_m) {
    return std::sqrt(r * r + offset_m * offset_m + 2.0 * r * sin_theta * offset_m);
}

// Spherical-wavefront steering vector:
// entry n = exp(-j 2 pi (r^(n) - r) / lambda) / sqrt(N).
inline CVector steering_near(double sin_theta, double r, std::size_t n_antennas,
                             double spacing_m, double wavelength_m) {
    NFCE_REQUIRE(n_antennas >= 1, "steering_near: need at least 1 antenna");
    NFCE_REQUIRE(spacing_m > 0.0 && wavelength_m > 0.0,
                 "steering_near: spacing and wavelength must be > 0");
    NFCE_REQUIRE(std::abs(sin_theta) <= 1.0, "steering_near: |sin| must be <= 1");
    NFCE_REQUIRE(r > static_cast<double>(n_antennas) * spacing_m / 2.0,
                 "steering_near: source inside the array aperture");
    const double scale = 1.0 / std::sqrt(static_cast<double>(n_antennas));
    const double k = 2.0 * M_PI / wavelength_m;
    CVector a(n_antennas);
    for (std::size_t n = 0; n < n_antennas; ++n) {
        const double rn = element_distance(r, sin_theta, static_cast<double>(n) * spacing_m);
        const double phase = -k * (rn - r);
        a[n] = scale * cplx(std::cos(phase), std::sin(phase));
    }
    return a;
}

// Draws the initial path set for an episode: LoS from the actual geometry
// plus L-1 scatterer-anchored NLoS paths. The LoS gain has unit magnitude
// and uniform phase; NLoS gains are CN(0,1).
inline PathSet sample_paths(const TrajectoryState& state, const SystemConfig& cfg,
                            Rng& rng) {
    cfg.validate();
    NFCE_REQUIRE(state.separation() > 0.0, "sample_paths: UAV and UE coincide");
    PathSet out;
    out.paths.reserve(cfg.n_paths);

    Path los;
    los.los = true;
    los.sin_theta = sin_angle_from_array(state.r_uav, state.r_ue);
    los.r = state.separation();
    const double phi = rng.uniform(0.0, 2.0 * M_PI);
    los.gain = cplx(std::cos(phi), std::sin(phi));
    out.paths.push_back(los);

    const Vec3 mid = (state.r_uav + state.r_ue) * 0.5;
    const double guard =
        std::max(0.5, static_cast<double>(cfg.n_antennas) * cfg.spacing() * 0.75);
    for (std::size_t l = 1; l < cfg.n_paths; ++l) {
        Path p;
        p.los = false;
        // uniform in a ball around the midpoint, kept clear of the array
        for (;;) {
            const Vec3 cand{mid.x + cfg.scatter_radius_m * (2.0 * rng.uniform() - 1.0),
                            mid.y + cfg.scatter_radius_m * (2.0 * rng.uniform() - 1.0),
                            mid.z + cfg.scatter_radius_m * (2.0 * rng.uniform() - 1.0)};
            const Vec3 d = cand - mid;
            if (d.dot(d) > cfg.scatter_radius_m * cfg.scatter_radius_m) continue;
            if ((cand - state.r_uav).norm() <= guard) continue;
            p.anchor = cand;
            break;
        }
        p.sin_theta = sin_angle_from_array(state.r_uav, p.anchor);
        p.r = (p.anchor - state.r_uav).norm();
        p.gain = rng.cnormal();
        out.paths.push_back(p);
    }
    out.validate();
    return out;
}

// Advances a path set by one slot. The LoS angle/distance are recomputed
// from the new geometry and its gain phase advances by -2 pi f dr / c;
// NLoS angles/distances are recomputed against the fixed scatterer anchors
// and their gains follow the AR(1) law a <- rho a + sqrt(1-rho^2) w.
inline PathSet evolve_paths(const PathSet& prev, const TrajectoryState& new_state,
                            const SystemConfig& cfg, Rng& rng) {
    prev.validate();
    PathSet out = prev;
    const double rho = cfg.ar_rho;
    const double innov = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    for (Path& p : out.paths) {
        if (p.los) {
            const double r_new = new_state.separation();
            const double dr = r_new - p.r;
            p.sin_theta = sin_angle_from_array(new_state.r_uav, new_state.r_ue);
            p.r = r_new;
            const double dphi = -2.0 * M_PI * cfg.carrier_hz * dr / kSpeedOfLight;
            p.gain *= cplx(std::cos(dphi), std::sin(dphi));
        } else {
            p.sin_theta = sin_angle_from_array(new_state.r_uav, p.anchor);
            p.r = (p.anchor - new_state.r_uav).norm();
            p.gain = rho * p.gain + innov * rng.cnormal();
        }
    }
    out.validate();
    return out;
}

// h = sqrt(N/L) * sum_l gain_l * exp(-j 2 pi f r_l / c) * a_l, with every
// path steered by the regime-selected vector.
inline CVector synthesize_channel(const PathSet& paths, Regime regime,
                                  const SystemConfig& cfg) {
    paths.validate();
    const std::size_t N = cfg.n_antennas;
    const double L = static_cast<double>(paths.paths.size());
    const double amp = std::sqrt(static_cast<double>(N) / L);
    CVector h(N, cplx(0.0, 0.0));
    for (const Path& p : paths.paths) {
        const CVector a = (regime == Regime::Near)
                              ? steering_near(p.sin_theta, p.r, N, cfg.spacing(),
                                              cfg.wavelength_m)
                              : steering_far(p.sin_theta, N, cfg.spacing(), cfg.wavelength_m);
        const double phase = -2.0 * M_PI * cfg.carrier_hz * p.r / kSpeedOfLight;
        const cplx w = p.gain * cplx(std::cos(phase), std::sin(phase));
        for (std::size_t n = 0; n < N; ++n) h[n] += w * a[n];
    }
    for (cplx& v : h) v *= amp;
    return h;
}

}  // namespace nfce
