#pragma once

#include "qclab/core.hpp"

namespace qclab {

enum class Family { Planar2John, NDimensional, SJohnGH, UnitSquare };
enum class Side { Target, Source };

// Per-family planar stage parameters. The leg strip of a stage tiles the
// unit length exactly: (2^{j+1}-1) removed blocks of horizontal side
// `square_side` alternate with 2^{j+1} legs of width `leg_width`.
struct PlanarStageParams {
    double a = 0;            // body height
    double b = 0;            // stated leg-length parameter
    double c = 0;            // leg width
    double square_side = 0;  // removed-block horizontal side (tiling-exact)
    double leg_height = 0;   // leg vertical extent
    double waist_width = 0;  // source-leg waist segment length
    double src_scale = 0;    // body scale on the source side
    double src_gap = 0;      // vertical gap below the scaled body
};

PlanarStageParams planar_stage_params(Family family, double s, int j);

// Left x of labeled leg i (1-based, right half; mirror for the left half).
double planar_leg_left(const PlanarStageParams& p, int i);

// Solved constants of one exponential leg map. The map sends the target
// leg rectangle [0,w] x [0,leg_height] onto the two-trapezoid source leg:
//
//   lower part:  f(x,y) = (k1*g(y)*x'... ) with g(y) = b_const*expm1(a_exp*y),
//                f(x,y) = (gt(y)*x + g(y), k1*g(y)),   gt = k1*g',
//   upper part:  reflected profile, affine on horizontal segments,
//                rescaled so the top edge lands exactly on the scaled body.
//
// Constants come from matching the exponential and constant coefficients of
// the right-edge line condition; with b_const = 1/(k1*(j+1)*a_exp) the
// bottom edge, both slanted edges, and g(0)=0 hold exactly. The split
// height y_split is where the image reaches the half-gap waist; when the
// profile cannot reach it within the leg (small j), the split is capped at
// half the leg height and the shortfall is reported as waist_defect.
struct LegMapParams2D {
    int j = 0, i = 0;
    double k1 = 0;       // left-edge slope
    double k2 = 0;       // right-edge slope
    double a_exp = 0;    // exponent rate
    double amp = 0;      // g(y) = amp*e^(a_exp*y + c_const) - b_const
    double b_const = 0;
    double c_const = 0;  // normalized to 0 (amp == b_const)
    double m = 0;        // top-edge x offset between source attachments

    double w = 0;            // target leg width
    double leg_height = 0;   // target leg height
    double gap = 0;          // source gap height (2/j^2)
    double y_split = 0;      // target height of the waist preimage
    double waist_y = 0;      // achieved waist height in the source leg
    double waist_target = 0; // prescribed waist height (1/j^2)
    double waist_defect = 0; // |waist_y - waist_target| / waist_target
    double ax = 0;           // bottom-edge image length, w/(j+1)
    double px = 0, qx = 0;   // achieved waist segment endpoints (local x)
    double top_len = 0;      // top-edge image length, w/j

    double resid_paper = 0;  // right-edge constant-term residual, solved b
    double b_alt = 0;        // constant-term value without the 1/k1 factor
    double resid_alt = 0;    // same residual under b_alt

    double g(double y) const { return b_const * std::expm1(a_exp * y); }
    double gp(double y) const { return b_const * a_exp * std::exp(a_exp * y); }
    double gt(double y) const { return k1 * gp(y); }
    double g_inv(double v) const { return std::log1p(v / b_const) / a_exp; }
};

LegMapParams2D solve_planar_leg(Family family, double s, int j, int i);

}  // namespace qclab
