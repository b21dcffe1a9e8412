#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chanfuse/common.hpp"

namespace chanfuse {

/// Deterministic single-bounce scatterer scene. Stands in for an external
/// ray tracer: every channel quantity is a pure function of (scene, position).
struct SceneConfig {
    Vec3 bs_position{0.0, 0.0, 10.0};
    int num_antennas = 64;         // M, uniform linear array
    double antenna_spacing = 0.0;  // meters; <= 0 resolves to half wavelength at ref_freq_hz
    double ref_freq_hz = 2.62e9;   // fixed reference for amplitude/phase laws
    std::vector<Vec3> scatterers;
    bool include_los = true;
    int max_paths = 25;  // P, strongest-path budget
    uint64_t seed = 0;

    double spacing() const;  // resolved antenna spacing in meters
    void validate() const;   // throws ConfigError on invariant violation
};

struct Path {
    double alpha = 0.0;     // linear amplitude, > 0
    double phi = 0.0;       // phase shift, radians
    double tau = 0.0;       // delay, seconds
    double theta_az = 0.0;  // departure azimuth, radians
    double theta_el = 0.0;  // departure elevation, radians
};

struct PathSet {
    std::vector<Path> paths;
};

struct ChannelVector {
    std::vector<cxd> entries;   // length M
    double carrier_freq_hz = 0.0;
};

struct Trajectory {
    std::vector<Vec3> positions;  // ordered, oldest first; back() is the current position
    double step = 1.0;            // meters, motion strictly along +y

    void validate() const;
};

/// Straight-line motion along +y ending at `end`, `count` positions `step` apart.
Trajectory make_trajectory(const Vec3& end, double step, int count);

/// Path parameters for one user position: one bounce per scatterer plus an
/// optional direct path, strongest `max_paths` kept (sorted by amplitude).
PathSet derive_paths(const SceneConfig& scene, const Vec3& user_pos);

/// Array response of the M-element ULA at carrier f for a departure direction.
std::vector<cxd> manifold(const SceneConfig& scene, double f_hz, double theta_az, double theta_el);

/// Narrowband channel at carrier f: sum of per-path complex gains times the
/// array response of each path.
ChannelVector synthesize_channel(const SceneConfig& scene, const PathSet& paths, double f_hz);

/// Channels at the t_unit positions preceding the trajectory's final position,
/// most recent first.
std::vector<ChannelVector> channel_history(const SceneConfig& scene, const Trajectory& traj,
                                           double f_hz, int t_unit);

struct PartialChannel {
    std::vector<cxd> known;    // entries at mask indices, ascending
    std::vector<cxd> unknown;  // remaining entries, ascending
};

/// Splits a channel into fed-back (known) and to-be-predicted (unknown) parts.
/// `mask` must be a non-empty proper subset of {0..M-1}, sorted ascending.
PartialChannel partial_channel(const ChannelVector& h, const std::vector<int>& mask);

/// Inverse of partial_channel: reassembles the full channel from both parts.
std::vector<cxd> assemble_channel(const std::vector<cxd>& known, const std::vector<cxd>& unknown,
                                  const std::vector<int>& mask, int m);

/// Scatterers placed uniformly at random inside [lo, hi] (seeded, reproducible).
SceneConfig make_random_scene(uint64_t seed, int num_scatterers, const Vec3& lo, const Vec3& hi);

SceneConfig load_scene(const std::string& path);
void save_scene(const SceneConfig& scene, const std::string& path);

}  // namespace chanfuse
