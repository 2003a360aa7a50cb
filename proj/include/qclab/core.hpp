#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace qclab {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Vec2 {
    double x = 0.0, y = 0.0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double cross(const Vec2& o) const { return x * o.y - y * o.x; }
    double norm() const { return std::hypot(x, y); }
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline double dist(const Vec2& a, const Vec2& b) { return (a - b).norm(); }
inline double dist(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

// Points are stored as Vec3 everywhere; planar domains keep z == 0.
using Point = Vec3;

inline Vec2 xy(const Point& p) { return {p.x, p.y}; }

struct Aabb {
    Point lo{kInf, kInf, kInf};
    Point hi{-kInf, -kInf, -kInf};

    void expand(const Point& p) {
        lo.x = std::min(lo.x, p.x); lo.y = std::min(lo.y, p.y); lo.z = std::min(lo.z, p.z);
        hi.x = std::max(hi.x, p.x); hi.y = std::max(hi.y, p.y); hi.z = std::max(hi.z, p.z);
    }
    void merge(const Aabb& b) { expand(b.lo); expand(b.hi); }
    bool contains(const Point& p, double pad = 0.0) const {
        return p.x >= lo.x - pad && p.x <= hi.x + pad && p.y >= lo.y - pad &&
               p.y <= hi.y + pad && p.z >= lo.z - pad && p.z <= hi.z + pad;
    }
    // Squared distance from p to the box (0 if inside).
    double dist2(const Point& p) const {
        double dx = std::max({lo.x - p.x, 0.0, p.x - hi.x});
        double dy = std::max({lo.y - p.y, 0.0, p.y - hi.y});
        double dz = std::max({lo.z - p.z, 0.0, p.z - hi.z});
        return dx * dx + dy * dy + dz * dz;
    }
    Point center() const { return {(lo.x + hi.x) / 2, (lo.y + hi.y) / 2, (lo.z + hi.z) / 2}; }
};

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto its exit-code contract.
// ---------------------------------------------------------------------------

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BuildError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct QueryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG (splitmix64). Identical seeds give identical streams on
// every platform, which keeps reports byte-identical.
// ---------------------------------------------------------------------------

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    // Uniform in [0, 1).
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * uniform(); }
    std::uint64_t below(std::uint64_t n) { return next() % n; }

  private:
    std::uint64_t state_;
};

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string format_double(double v);
std::string hex64(std::uint64_t v);

// ---------------------------------------------------------------------------
// Small numerics
// ---------------------------------------------------------------------------

// Solve f(x) = 0 by bisection on [lo, hi]; f(lo) and f(hi) must differ in
// sign. Used by the exponential-profile solvers.
double bisect(const std::function<double(double)>& f, double lo, double hi,
              double tol = 1e-14, int max_iter = 200);

// Profile g(z) = a*(exp(b*z) - 1) with g'(0) = slope0 and g(height) = span.
// Matches the two-equation system {a*b = slope0, a*(exp(b*height)-1) = span}
// by one-dimensional root finding in b. Both roots of the family are
// monotone increasing when slope0, span, height > 0.
struct ExpProfile {
    double a = 0.0;
    double b = 0.0;
    double residual = 0.0;

    double value(double z) const { return a * std::expm1(b * z); }
    double slope(double z) const { return a * b * std::exp(b * z); }
    // Inverse of value().
    double invert(double g) const { return std::log1p(g / a) / b; }
};

ExpProfile solve_exp_profile(double slope0, double height, double span);

}  // namespace qclab
