#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace chanfuse {

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s
inline constexpr double kPi = 3.141592653589793238462643383279502884;

using cxd = std::complex<double>;

// Error taxonomy. ConfigError covers bad user input (files, flags, specs);
// everything else is a runtime failure of a specific operation. The CLI maps
// the two groups to distinct exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : ConfigError {
    ParseError(const std::string& source, int line, const std::string& what)
        : ConfigError(source + ":" + std::to_string(line) + ": " + what),
          source_line(line) {}
    int source_line;
};

struct DegenerateGeometryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InsufficientHistoryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InvalidMaskError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct RankDeficiencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InvalidCovarianceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingGradientError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingModalityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonFiniteLossError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// splitmix64 finalizer; used to derive independent per-sample / per-purpose
// RNG streams from one dataset seed without a shared generator.
inline uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t stream, uint64_t counter) {
    return mix64(base ^ mix64(stream ^ 0xa0761d6478bd642full) ^ mix64(counter));
}

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

}  // namespace chanfuse
