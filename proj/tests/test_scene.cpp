#include <doctest.h>

#include <complex>
#include <cstdio>
#include <random>

#include "chanfuse/estimators.hpp"
#include "chanfuse/scene.hpp"

using namespace chanfuse;

namespace {

SceneConfig small_scene(int m = 8, int p = 4, int n_scatterers = 6) {
    SceneConfig scene = make_random_scene(7, n_scatterers, {5, -20, 0}, {60, 20, 15});
    scene.bs_position = {0, 0, 10};
    scene.num_antennas = m;
    scene.max_paths = p;
    scene.include_los = true;
    scene.validate();
    return scene;
}

// independent scalar route: evaluates one channel entry at a time
cxd entry_oracle(const SceneConfig& scene, const PathSet& ps, double f, int m) {
    const cxd j(0.0, 1.0);
    cxd acc(0.0, 0.0);
    for (const Path& p : ps.paths) {
        cxd gain = p.alpha * std::exp(j * (p.phi - 2.0 * kPi * f * p.tau));
        double w = 2.0 * kPi * scene.spacing() * f / kSpeedOfLight;
        acc += gain * std::exp(j * (w * m * std::sin(p.theta_el) * std::cos(p.theta_az)));
    }
    return acc;
}

}  // namespace

TEST_SUITE_BEGIN("scene");

TEST_CASE("boresight user with only a direct path") {
    SceneConfig scene;
    scene.bs_position = {0, 0, 5};
    scene.num_antennas = 4;
    scene.max_paths = 1;
    scene.include_los = true;
    scene.scatterers.clear();
    scene.validate();
    Vec3 user{25, 0, 5};
    PathSet ps = derive_paths(scene, user);
    REQUIRE(ps.paths.size() == 1);
    CHECK(ps.paths[0].theta_az == doctest::Approx(0.0));
    CHECK(ps.paths[0].theta_el == doctest::Approx(0.0));
    CHECK(ps.paths[0].tau == doctest::Approx(25.0 / kSpeedOfLight));
    CHECK(ps.paths[0].alpha > 0.0);
}

TEST_CASE("strongest-path budget caps the path count") {
    SceneConfig scene = make_random_scene(3, 24, {5, -30, 0}, {80, 30, 20});
    scene.bs_position = {0, 0, 12};
    scene.num_antennas = 4;
    scene.max_paths = 25;
    scene.include_los = true;
    scene.validate();
    PathSet ps = derive_paths(scene, {40, 3, 1.5});
    CHECK(ps.paths.size() <= 25);
    CHECK(ps.paths.size() == 25);  // 24 bounces + LOS
    for (size_t i = 1; i < ps.paths.size(); ++i)
        CHECK(ps.paths[i - 1].alpha >= ps.paths[i].alpha);
}

TEST_CASE("path derivation is deterministic") {
    SceneConfig scene = small_scene();
    PathSet a = derive_paths(scene, {30, 5, 1.5});
    PathSet b = derive_paths(scene, {30, 5, 1.5});
    REQUIRE(a.paths.size() == b.paths.size());
    for (size_t i = 0; i < a.paths.size(); ++i) {
        CHECK(a.paths[i].alpha == b.paths[i].alpha);
        CHECK(a.paths[i].phi == b.paths[i].phi);
        CHECK(a.paths[i].tau == b.paths[i].tau);
    }
}

TEST_CASE("coincident geometry raises a degenerate-geometry error") {
    SceneConfig scene = small_scene();
    CHECK_THROWS_AS(derive_paths(scene, scene.bs_position), DegenerateGeometryError);
    CHECK_THROWS_AS(derive_paths(scene, scene.scatterers[0]), DegenerateGeometryError);
}

TEST_CASE("array response basics") {
    SceneConfig scene = small_scene(6);
    auto a = manifold(scene, 2.62e9, 0.7, -0.3);
    REQUIRE(a.size() == 6);
    CHECK(a[0] == cxd(1.0, 0.0));

    auto flat = manifold(scene, 2.62e9, 1.1, 0.0);  // zero elevation kills the phase ramp
    for (const cxd& v : flat) {
        CHECK(v.real() == doctest::Approx(1.0));
        CHECK(v.imag() == doctest::Approx(0.0));
    }
}

TEST_CASE("array response: half-wavelength spacing at broadside-to-endfire") {
    // d = c/(2 f), elevation pi/2, azimuth 0 -> phase step of pi per element
    SceneConfig scene;
    scene.num_antennas = 4;
    scene.max_paths = 1;
    scene.include_los = true;
    const double f = 2.0e9;
    scene.antenna_spacing = kSpeedOfLight / (2.0 * f);
    auto a = manifold(scene, f, 0.0, kPi / 2.0);
    for (int m = 0; m < 4; ++m) {
        cxd expect = std::exp(cxd(0.0, kPi * m));
        CHECK(a[static_cast<size_t>(m)].real() == doctest::Approx(expect.real()).epsilon(1e-12));
        CHECK(std::abs(a[static_cast<size_t>(m)].imag() - expect.imag()) < 1e-9);
    }
}

TEST_CASE("array response entries stay on the unit circle") {
    SceneConfig scene = small_scene(16);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> ang(-kPi, kPi);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = manifold(scene, 2.5e9, ang(rng), ang(rng) / 2.0);
        for (const cxd& v : a) CHECK(std::abs(std::abs(v) - 1.0) < 1e-12);
    }
}

TEST_CASE("single path with canceling phase reduces to the array response") {
    SceneConfig scene = small_scene(8);
    const double f = 2.62e9;
    Path p;
    p.alpha = 1.0;
    p.tau = 3.3e-7;
    p.phi = 2.0 * kPi * f * p.tau;  // cancels the delay rotation exactly
    p.theta_az = 0.4;
    p.theta_el = 0.2;
    ChannelVector h = synthesize_channel(scene, PathSet{{p}}, f);
    auto a = manifold(scene, f, p.theta_az, p.theta_el);
    for (size_t m = 0; m < a.size(); ++m) CHECK(std::abs(h.entries[m] - a[m]) < 1e-9);
}

TEST_CASE("two identical paths double the channel") {
    SceneConfig scene = small_scene(8);
    PathSet ps = derive_paths(scene, {33, -4, 1.5});
    PathSet twice{{ps.paths[0], ps.paths[0]}};
    ChannelVector one = synthesize_channel(scene, PathSet{{ps.paths[0]}}, 2.62e9);
    ChannelVector two = synthesize_channel(scene, twice, 2.62e9);
    for (size_t m = 0; m < one.entries.size(); ++m)
        CHECK(std::abs(two.entries[m] - 2.0 * one.entries[m]) < 1e-15);
}

TEST_CASE("channel synthesis matches the per-entry scalar oracle") {
    SceneConfig scene = small_scene(16, 8, 10);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ux(5, 60), uy(-20, 20);
    for (int trial = 0; trial < 5; ++trial) {
        Vec3 user{ux(rng), uy(rng), 1.5};
        PathSet ps = derive_paths(scene, user);
        const double f = 2.62e9;
        ChannelVector h = synthesize_channel(scene, ps, f);
        for (int m = 0; m < 16; ++m) {
            cxd expect = entry_oracle(scene, ps, f, m);
            CHECK(std::abs(h.entries[static_cast<size_t>(m)] - expect) <=
                  1e-12 * std::abs(expect) + 1e-18);
        }
    }
}

TEST_CASE("synthesis is linear over singleton path sets") {
    SceneConfig scene = small_scene(12, 6, 8);
    PathSet ps = derive_paths(scene, {28, 7, 1.5});
    const double f = 2.62e9;
    ChannelVector whole = synthesize_channel(scene, ps, f);
    std::vector<cxd> acc(12, cxd(0, 0));
    for (const Path& p : ps.paths) {
        ChannelVector part = synthesize_channel(scene, PathSet{{p}}, f);
        for (size_t m = 0; m < acc.size(); ++m) acc[m] += part.entries[m];
    }
    for (size_t m = 0; m < acc.size(); ++m)
        CHECK(std::abs(whole.entries[m] - acc[m]) <= 1e-12 * std::abs(whole.entries[m]));
}

TEST_CASE("channel history returns the preceding positions, newest first") {
    SceneConfig scene = small_scene();
    Trajectory traj = make_trajectory({30, 6, 1.5}, 0.5, 4);
    auto hist = channel_history(scene, traj, 2.62e9, 3);
    REQUIRE(hist.size() == 3);
    // newest history entry is the position one step behind the current one
    ChannelVector expect =
        synthesize_channel(scene, derive_paths(scene, {30, 5.5, 1.5}), 2.62e9);
    for (size_t m = 0; m < expect.entries.size(); ++m)
        CHECK(hist[0].entries[m] == expect.entries[m]);

    CHECK(channel_history(scene, traj, 2.62e9, 0).empty());
    CHECK_THROWS_AS(channel_history(scene, traj, 2.62e9, 4), InsufficientHistoryError);
}

TEST_CASE("identical positions give identical history channels") {
    SceneConfig scene = small_scene();
    Vec3 pos{26, 3, 1.5};
    ChannelVector a = synthesize_channel(scene, derive_paths(scene, pos), 2.62e9);
    ChannelVector b = synthesize_channel(scene, derive_paths(scene, pos), 2.62e9);
    for (size_t m = 0; m < a.entries.size(); ++m) CHECK(a.entries[m] == b.entries[m]);
}

TEST_CASE("channels vary continuously with position") {
    SceneConfig scene = small_scene(16, 8, 10);
    Vec3 base{30, 2, 1.5};
    ChannelVector h0 = synthesize_channel(scene, derive_paths(scene, base), 2.62e9);
    double eps = 0.01;
    double prev = 1e9;
    for (int k = 0; k < 5; ++k) {
        Vec3 moved{base.x, base.y + eps, base.z};
        ChannelVector h1 = synthesize_channel(scene, derive_paths(scene, moved), 2.62e9);
        double err = nmse(h1.entries, h0.entries);
        CHECK(err < prev);
        prev = err;
        eps *= 0.5;
    }
    // per-path phase drift scales with eps; at 6.25e-4 m it is far sub-radian
    CHECK(prev < 1e-2);
}

TEST_CASE("uplink and downlink share the same path geometry") {
    SceneConfig scene = small_scene(8, 4, 6);
    PathSet ps = derive_paths(scene, {41, -9, 1.5});
    ChannelVector up = synthesize_channel(scene, ps, 2.50e9);
    ChannelVector down = synthesize_channel(scene, ps, 2.62e9);
    // per-path amplitudes are carrier-independent; only phases differ
    for (const Path& p : ps.paths) {
        ChannelVector u1 = synthesize_channel(scene, PathSet{{p}}, 2.50e9);
        ChannelVector d1 = synthesize_channel(scene, PathSet{{p}}, 2.62e9);
        for (size_t m = 0; m < u1.entries.size(); ++m)
            CHECK(std::abs(u1.entries[m]) == doctest::Approx(std::abs(d1.entries[m])));
    }
    CHECK(up.carrier_freq_hz != down.carrier_freq_hz);
}

TEST_CASE("partial channel split and reassembly") {
    ChannelVector h;
    h.entries.resize(64);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (cxd& v : h.entries) v = cxd(u(rng), u(rng));

    std::vector<int> prefix(48);
    for (int i = 0; i < 48; ++i) prefix[static_cast<size_t>(i)] = i;
    PartialChannel parts = partial_channel(h, prefix);
    CHECK(parts.known.size() == 48);
    CHECK(parts.unknown.size() == 16);
    for (int i = 0; i < 48; ++i)
        CHECK(parts.known[static_cast<size_t>(i)] == h.entries[static_cast<size_t>(i)]);

    std::vector<cxd> rebuilt = assemble_channel(parts.known, parts.unknown, prefix, 64);
    for (size_t i = 0; i < 64; ++i) CHECK(rebuilt[i] == h.entries[i]);

    std::vector<int> scattered{1, 5, 9, 40};
    PartialChannel sp = partial_channel(h, scattered);
    std::vector<cxd> rebuilt2 = assemble_channel(sp.known, sp.unknown, scattered, 64);
    for (size_t i = 0; i < 64; ++i) CHECK(rebuilt2[i] == h.entries[i]);

    CHECK_THROWS_AS(partial_channel(h, {}), InvalidMaskError);
    std::vector<int> full(64);
    for (int i = 0; i < 64; ++i) full[static_cast<size_t>(i)] = i;
    CHECK_THROWS_AS(partial_channel(h, full), InvalidMaskError);
    CHECK_THROWS_AS(partial_channel(h, {3, 3}), InvalidMaskError);
    CHECK_THROWS_AS(partial_channel(h, {70}), InvalidMaskError);
}

TEST_CASE("trajectory moves along y only") {
    Trajectory t = make_trajectory({10, 4, 1.5}, 0.25, 5);
    REQUIRE(t.positions.size() == 5);
    CHECK(t.positions.back().y == doctest::Approx(4.0));
    CHECK(t.positions.front().y == doctest::Approx(3.0));
    t.validate();

    Trajectory bad = t;
    bad.positions[2].x += 0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("scene files round-trip") {
    SceneConfig scene = small_scene(16, 8, 10);
    std::string path = "test_scene_roundtrip.scene";
    save_scene(scene, path);
    SceneConfig loaded = load_scene(path);
    CHECK(loaded.num_antennas == scene.num_antennas);
    CHECK(loaded.max_paths == scene.max_paths);
    CHECK(loaded.bs_position == scene.bs_position);
    REQUIRE(loaded.scatterers.size() == scene.scatterers.size());
    for (size_t i = 0; i < scene.scatterers.size(); ++i)
        CHECK(loaded.scatterers[i] == scene.scatterers[i]);
    CHECK(loaded.spacing() == doctest::Approx(scene.spacing()));
    std::remove(path.c_str());
}

TEST_CASE("scene invariants are enforced") {
    SceneConfig scene;
    scene.num_antennas = 0;
    CHECK_THROWS_AS(scene.validate(), ConfigError);
    scene.num_antennas = 4;
    scene.max_paths = 3;
    scene.include_los = true;
    scene.scatterers = {{1, 2, 3}};  // needs P-1 = 2
    CHECK_THROWS_AS(scene.validate(), ConfigError);
    scene.scatterers.push_back({4, 5, 6});
    CHECK_NOTHROW(scene.validate());
    scene.include_los = false;  // now needs P = 3
    CHECK_THROWS_AS(scene.validate(), ConfigError);
}

TEST_SUITE_END();
