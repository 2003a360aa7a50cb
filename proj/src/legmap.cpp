#include "qclab/legmap.hpp"

namespace qclab {

PlanarStageParams planar_stage_params(Family family, double s, int j) {
    PlanarStageParams p;
    if (family == Family::Planar2John) {
        p.a = std::ldexp(1.0, -2 * (j + 1));
        p.b = std::ldexp(1.0, -j);
        p.c = std::ldexp(1.0, -2 * (j + 1));
        p.square_side = std::ldexp(1.0, -(j + 1));
        p.leg_height = p.square_side;
        p.waist_width = j > 0 ? std::ldexp(1.0, -(j + 1)) / j : 0.0;
    } else if (family == Family::SJohnGH) {
        p.a = std::ldexp(1.0, -(j + 1));
        p.b = std::ldexp(1.0, -(j + 1));
        p.c = std::pow(2.0, -(j + 1) * s);
        // Legs keep the stated width; block side adjusts so the strip tiles
        // the unit length exactly with equal gaps.
        double n_legs = std::ldexp(1.0, j + 1);
        p.square_side = (1.0 - n_legs * p.c) / (n_legs - 1.0);
        p.leg_height = p.b;
        p.waist_width = j > 0 ? std::pow(2.0, -j * (s - 1.0)) / j : 0.0;
    } else {
        throw BuildError("planar_stage_params: not a planar family");
    }
    p.src_scale = j > 0 ? 1.0 / j : 0.0;
    p.src_gap = j > 0 ? 2.0 / (double(j) * j) : 0.0;
    if (!(p.square_side > 0))
        throw BuildError("planar_stage_params: stage tiling degenerate");
    return p;
}

double planar_leg_left(const PlanarStageParams& p, int i) {
    return (2 * i - 1) * p.square_side / 2.0 + (i - 1) * p.c;
}

LegMapParams2D solve_planar_leg(Family family, double s, int j, int i) {
    if (j < 1) throw BuildError("solve_planar_leg: stage must be >= 1");
    PlanarStageParams sp = planar_stage_params(family, s, j);
    int labeled = 1 << j;
    if (i < 1 || i > labeled) throw BuildError("solve_planar_leg: leg index out of range");

    LegMapParams2D lm;
    lm.j = j;
    lm.i = i;
    lm.w = sp.c;
    lm.leg_height = sp.leg_height;
    double jj = double(j);
    lm.gap = 2.0 / (jj * jj);
    lm.waist_target = 1.0 / (jj * jj);
    lm.ax = lm.w / (j + 1);
    lm.top_len = lm.w / j;
    double L = planar_leg_left(sp, i);
    lm.m = L / jj - L / (jj + 1.0);

    // Waist segment as designed: left corner on the line y = k1*x at the
    // half-gap height, width = family waist width.
    double waist_left = i * std::ldexp(1.0, -(j + 1)) / (jj * jj);
    lm.k1 = std::ldexp(1.0, j + 1) / i;
    double waist_right = waist_left + sp.waist_width;
    double denom = waist_right - lm.ax;
    if (denom <= 0) throw BuildError("solve_planar_leg: degenerate right edge (k2 <= 0)");
    lm.k2 = lm.waist_target / denom;
    if (lm.k2 >= lm.k1)
        throw BuildError("solve_planar_leg: slopes out of order (k2 >= k1)");

    lm.a_exp = (lm.k1 - lm.k2) / (lm.k1 * lm.k2 * lm.w);
    lm.b_const = 1.0 / (lm.k1 * (j + 1) * lm.a_exp);
    lm.amp = lm.b_const;
    lm.c_const = 0.0;
    lm.b_alt = 1.0 / (lm.a_exp * jj);

    // Right-edge constant-term residual under both constant choices,
    // normalized by the line's own constant term k2*ax.
    auto edge_resid = [&](double bc) {
        return std::abs(-bc * (lm.k1 - lm.k2) + lm.k2 * lm.ax) / (lm.k2 * lm.ax);
    };
    lm.resid_paper = edge_resid(lm.b_const);
    lm.resid_alt = edge_resid(lm.b_alt);

    // Height where the image reaches the half-gap waist: k1*g(y) = 1/j^2.
    // Shallow stages cannot reach it inside the leg; cap the split so the
    // upper part keeps enough height, and report the shortfall.
    double y_star = std::log1p(lm.a_exp * (jj + 1.0) / (jj * jj)) / lm.a_exp;
    lm.y_split = std::min(y_star, 0.8 * lm.leg_height);
    lm.waist_y = lm.k1 * lm.g(lm.y_split);
    lm.waist_defect = std::abs(lm.waist_y - lm.waist_target) / lm.waist_target;
    lm.px = lm.g(lm.y_split);
    lm.qx = lm.gt(lm.y_split) * lm.w + lm.g(lm.y_split);
    return lm;
}

}  // namespace qclab
