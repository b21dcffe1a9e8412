#include "chanfuse/scene.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>

#include "chanfuse/textconfig.hpp"

namespace chanfuse {

namespace {
constexpr double kMinSegment = 1e-9;  // meters; anything shorter is degenerate

void append_bounce_path(std::vector<Path>& out, const SceneConfig& scene, const Vec3& from,
                        const Vec3& via, const Vec3& to, bool direct) {
    // `direct` paths go straight from->to; bounced paths go from->via->to.
    double leg1 = direct ? distance(from, to) : distance(from, via);
    double leg2 = direct ? 0.0 : distance(via, to);
    if (leg1 < kMinSegment || (!direct && leg2 < kMinSegment))
        throw DegenerateGeometryError("zero-length propagation segment (coincident points)");
    double total = leg1 + leg2;
    double lambda_ref = kSpeedOfLight / scene.ref_freq_hz;

    Path p;
    p.tau = total / kSpeedOfLight;
    p.alpha = lambda_ref / (4.0 * kPi * total);
    p.phi = std::fmod(-2.0 * kPi * scene.ref_freq_hz * p.tau, 2.0 * kPi);
    if (p.phi < 0.0) p.phi += 2.0 * kPi;

    // departure direction at the BS: toward the scatterer, or toward the user for LOS
    Vec3 dir = (direct ? to : via) - from;
    p.theta_az = std::atan2(dir.y, dir.x);
    p.theta_el = std::atan2(dir.z, std::sqrt(dir.x * dir.x + dir.y * dir.y));
    out.push_back(p);
}
}  // namespace

double SceneConfig::spacing() const {
    if (antenna_spacing > 0.0) return antenna_spacing;
    return kSpeedOfLight / (2.0 * ref_freq_hz);
}

void SceneConfig::validate() const {
    if (num_antennas < 1) throw ConfigError("scene: num_antennas must be >= 1");
    if (max_paths < 1) throw ConfigError("scene: max_paths must be >= 1");
    if (spacing() <= 0.0) throw ConfigError("scene: antenna spacing must resolve > 0");
    if (ref_freq_hz <= 0.0) throw ConfigError("scene: ref_freq must be > 0");
    size_t needed = include_los ? static_cast<size_t>(max_paths - 1)
                                : static_cast<size_t>(max_paths);
    if (scatterers.size() < needed)
        throw ConfigError("scene: needs at least " + std::to_string(needed) +
                          " scatterers to supply max_paths=" + std::to_string(max_paths));
}

void Trajectory::validate() const {
    if (positions.size() < 2) return;
    if (step <= 0.0) throw ConfigError("trajectory: step must be > 0");
    for (size_t i = 1; i < positions.size(); ++i) {
        const Vec3& a = positions[i - 1];
        const Vec3& b = positions[i];
        double dy = b.y - a.y;
        double tol = 1e-9 * std::max(1.0, std::abs(step));
        if (a.x != b.x || a.z != b.z || std::abs(dy - step) > tol)
            throw ConfigError("trajectory: consecutive positions must differ by step along y only");
    }
}

Trajectory make_trajectory(const Vec3& end, double step, int count) {
    if (count < 1) throw ConfigError("trajectory: count must be >= 1");
    if (step <= 0.0) throw ConfigError("trajectory: step must be > 0");
    Trajectory t;
    t.step = step;
    t.positions.reserve(static_cast<size_t>(count));
    for (int k = count - 1; k >= 0; --k)
        t.positions.push_back({end.x, end.y - step * k, end.z});
    t.validate();
    return t;
}

PathSet derive_paths(const SceneConfig& scene, const Vec3& user_pos) {
    if (distance(scene.bs_position, user_pos) < kMinSegment)
        throw DegenerateGeometryError("user position coincides with the BS");
    for (const Vec3& s : scene.scatterers)
        if (distance(s, user_pos) < kMinSegment)
            throw DegenerateGeometryError("user position coincides with a scatterer");

    std::vector<Path> paths;
    paths.reserve(scene.scatterers.size() + 1);
    if (scene.include_los)
        append_bounce_path(paths, scene, scene.bs_position, {}, user_pos, true);
    for (const Vec3& s : scene.scatterers)
        append_bounce_path(paths, scene, scene.bs_position, s, user_pos, false);

    // strongest first; tie-break on delay to keep the order fully deterministic
    std::stable_sort(paths.begin(), paths.end(), [](const Path& a, const Path& b) {
        if (a.alpha != b.alpha) return a.alpha > b.alpha;
        return a.tau < b.tau;
    });
    if (paths.size() > static_cast<size_t>(scene.max_paths))
        paths.resize(static_cast<size_t>(scene.max_paths));
    return PathSet{std::move(paths)};
}

std::vector<cxd> manifold(const SceneConfig& scene, double f_hz, double theta_az,
                          double theta_el) {
    if (f_hz <= 0.0) throw ConfigError("manifold: carrier frequency must be > 0");
    double w = 2.0 * kPi * scene.spacing() * f_hz / kSpeedOfLight;
    double phase_step = w * std::sin(theta_el) * std::cos(theta_az);
    std::vector<cxd> a(static_cast<size_t>(scene.num_antennas));
    for (int m = 0; m < scene.num_antennas; ++m)
        a[static_cast<size_t>(m)] = std::polar(1.0, phase_step * m);
    return a;
}

ChannelVector synthesize_channel(const SceneConfig& scene, const PathSet& paths, double f_hz) {
    ChannelVector h;
    h.carrier_freq_hz = f_hz;
    h.entries.assign(static_cast<size_t>(scene.num_antennas), cxd(0.0, 0.0));
    for (const Path& p : paths.paths) {
        cxd gain = p.alpha * std::polar(1.0, p.phi - 2.0 * kPi * f_hz * p.tau);
        std::vector<cxd> a = manifold(scene, f_hz, p.theta_az, p.theta_el);
        for (size_t m = 0; m < h.entries.size(); ++m) h.entries[m] += gain * a[m];
    }
    return h;
}

std::vector<ChannelVector> channel_history(const SceneConfig& scene, const Trajectory& traj,
                                           double f_hz, int t_unit) {
    if (t_unit < 0) throw ConfigError("channel_history: t_unit must be >= 0");
    if (traj.positions.size() < static_cast<size_t>(t_unit) + 1)
        throw InsufficientHistoryError("trajectory has " + std::to_string(traj.positions.size()) +
                                       " positions, needs " + std::to_string(t_unit + 1));
    std::vector<ChannelVector> out;
    out.reserve(static_cast<size_t>(t_unit));
    size_t last = traj.positions.size() - 1;  // current position, excluded
    for (int k = 1; k <= t_unit; ++k) {
        const Vec3& pos = traj.positions[last - static_cast<size_t>(k)];
        out.push_back(synthesize_channel(scene, derive_paths(scene, pos), f_hz));
    }
    return out;
}

PartialChannel partial_channel(const ChannelVector& h, const std::vector<int>& mask) {
    const int m = static_cast<int>(h.entries.size());
    if (mask.empty()) throw InvalidMaskError("partial_channel: mask must be non-empty");
    if (static_cast<int>(mask.size()) >= m)
        throw InvalidMaskError("partial_channel: mask must be a proper subset of the antennas");
    std::vector<bool> in_mask(static_cast<size_t>(m), false);
    int prev = -1;
    for (int idx : mask) {
        if (idx < 0 || idx >= m) throw InvalidMaskError("partial_channel: index out of range");
        if (idx <= prev) throw InvalidMaskError("partial_channel: mask must be strictly ascending");
        in_mask[static_cast<size_t>(idx)] = true;
        prev = idx;
    }
    PartialChannel out;
    for (int i = 0; i < m; ++i)
        (in_mask[static_cast<size_t>(i)] ? out.known : out.unknown)
            .push_back(h.entries[static_cast<size_t>(i)]);
    return out;
}

std::vector<cxd> assemble_channel(const std::vector<cxd>& known, const std::vector<cxd>& unknown,
                                  const std::vector<int>& mask, int m) {
    if (known.size() != mask.size())
        throw InvalidMaskError("assemble_channel: known/mask size mismatch");
    if (known.size() + unknown.size() != static_cast<size_t>(m))
        throw InvalidMaskError("assemble_channel: parts do not sum to M");
    std::vector<bool> in_mask(static_cast<size_t>(m), false);
    for (int idx : mask) {
        if (idx < 0 || idx >= m) throw InvalidMaskError("assemble_channel: index out of range");
        in_mask[static_cast<size_t>(idx)] = true;
    }
    std::vector<cxd> full(static_cast<size_t>(m));
    size_t ki = 0, ui = 0;
    for (int i = 0; i < m; ++i)
        full[static_cast<size_t>(i)] = in_mask[static_cast<size_t>(i)] ? known[ki++] : unknown[ui++];
    return full;
}

SceneConfig make_random_scene(uint64_t seed, int num_scatterers, const Vec3& lo, const Vec3& hi) {
    SceneConfig scene;
    scene.seed = seed;
    std::mt19937_64 rng(mix64(seed));
    std::uniform_real_distribution<double> ux(lo.x, hi.x), uy(lo.y, hi.y), uz(lo.z, hi.z);
    scene.scatterers.reserve(static_cast<size_t>(num_scatterers));
    for (int i = 0; i < num_scatterers; ++i) scene.scatterers.push_back({ux(rng), uy(rng), uz(rng)});
    return scene;
}

SceneConfig load_scene(const std::string& path) {
    TextConfig cfg = TextConfig::parse_file(path);
    SceneConfig scene;
    scene.bs_position = cfg.get_vec3("bs_position");
    scene.num_antennas = static_cast<int>(cfg.get_int("num_antennas"));
    std::string spacing = cfg.get_str("antenna_spacing", "auto");
    scene.antenna_spacing = (spacing == "auto") ? 0.0 : cfg.get_double("antenna_spacing");
    scene.ref_freq_hz = cfg.get_double("ref_freq", 2.62e9);
    scene.include_los = cfg.get_bool("include_los", true);
    scene.max_paths = static_cast<int>(cfg.get_int("max_paths"));
    scene.seed = static_cast<uint64_t>(cfg.get_int("seed", 0));
    for (const auto* e : cfg.find_all("scatterer")) {
        if (e->fields.size() != 3)
            throw ParseError(path, e->line, "scatterer needs exactly 3 coordinates");
        scene.scatterers.push_back({TextConfig::parse_double_field(*e, 0, path),
                                    TextConfig::parse_double_field(*e, 1, path),
                                    TextConfig::parse_double_field(*e, 2, path)});
    }
    scene.validate();
    return scene;
}

void save_scene(const SceneConfig& scene, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write scene file: " + path);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "bs_position = %.17g %.17g %.17g\n", scene.bs_position.x,
                  scene.bs_position.y, scene.bs_position.z);
    out << buf;
    out << "num_antennas = " << scene.num_antennas << "\n";
    if (scene.antenna_spacing > 0.0) {
        std::snprintf(buf, sizeof(buf), "antenna_spacing = %.17g\n", scene.antenna_spacing);
        out << buf;
    } else {
        out << "antenna_spacing = auto\n";
    }
    std::snprintf(buf, sizeof(buf), "ref_freq = %.17g\n", scene.ref_freq_hz);
    out << buf;
    out << "include_los = " << (scene.include_los ? "true" : "false") << "\n";
    out << "max_paths = " << scene.max_paths << "\n";
    out << "seed = " << scene.seed << "\n";
    for (const Vec3& s : scene.scatterers) {
        std::snprintf(buf, sizeof(buf), "scatterer = %.17g %.17g %.17g\n", s.x, s.y, s.z);
        out << buf;
    }
    if (!out) throw IoError("failed writing scene file: " + path);
}

}  // namespace chanfuse
