#include "qclab/core.hpp"

#include <cstdio>

namespace qclab {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

double bisect(const std::function<double(double)>& f, double lo, double hi,
              double tol, int max_iter) {
    double flo = f(lo);
    double fhi = f(hi);
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if ((flo > 0) == (fhi > 0))
        throw BuildError("bisect: no sign change on bracket");
    for (int it = 0; it < max_iter && hi - lo > tol * std::max(1.0, std::abs(lo)); ++it) {
        double mid = 0.5 * (lo + hi);
        double fm = f(mid);
        if (fm == 0.0) return mid;
        if ((fm > 0) == (flo > 0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

ExpProfile solve_exp_profile(double slope0, double height, double span) {
    if (!(slope0 > 0) || !(height > 0) || !(span > 0))
        throw BuildError("solve_exp_profile: parameters must be positive");
    // Eliminate a = slope0 / b:  span = slope0 * expm1(b*height) / b.
    // Substituting t = b*height:  expm1(t)/t = span / (slope0*height),
    // which is monotone in t, so bisection brackets cleanly.
    double target = span / (slope0 * height);
    auto fn = [&](double t) { return std::expm1(t) / t - target; };
    double t;
    if (std::abs(target - 1.0) < 1e-15) {
        t = 0.0;  // degenerate linear profile
    } else if (target > 1.0) {
        double hi = 1.0;
        while (fn(hi) < 0) hi *= 2.0;
        t = bisect(fn, 1e-12, hi);
    } else {
        double lo = -1.0;
        while (fn(lo) > 0) lo *= 2.0;
        t = bisect(fn, lo, -1e-12);
    }
    ExpProfile p;
    if (t == 0.0) {
        // Fall back to an almost-linear profile; b -> 0 limit.
        p.b = 1e-12 / height;
        p.a = slope0 / p.b;
    } else {
        p.b = t / height;
        p.a = slope0 / p.b;
    }
    p.residual = std::abs(p.value(height) - span) / span;
    return p;
}

}  // namespace qclab
