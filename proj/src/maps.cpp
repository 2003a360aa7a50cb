#include "qclab/maps.hpp"

#include <algorithm>
#include <cmath>

namespace qclab {

// ---------------------------------------------------------------------------
// Jacobian helpers
// ---------------------------------------------------------------------------

double Jacobian::det() const {
    if (dim == 2) return m[0] * m[3] - m[1] * m[2];
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

namespace {

void sv2(const double* m, double* lo, double* hi) {
    double e = (m[0] + m[3]) / 2, f = (m[0] - m[3]) / 2;
    double g = (m[2] + m[1]) / 2, h = (m[2] - m[1]) / 2;
    double q = std::hypot(e, h), r = std::hypot(f, g);
    *hi = q + r;
    *lo = std::abs(q - r);
}

void sv3(const double* m, double* lo, double* hi) {
    // Eigenvalues of J^T J by cyclic Jacobi.
    double a[9];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += m[k * 3 + i] * m[k * 3 + j];
            a[i * 3 + j] = s;
        }
    for (int sweep = 0; sweep < 24; ++sweep) {
        double off = std::abs(a[1]) + std::abs(a[2]) + std::abs(a[5]);
        if (off < 1e-30 * (std::abs(a[0]) + std::abs(a[4]) + std::abs(a[8]) + 1e-300)) break;
        for (int p = 0; p < 2; ++p)
            for (int q = p + 1; q < 3; ++q) {
                double apq = a[p * 3 + q];
                if (std::abs(apq) < 1e-300) continue;
                double theta = (a[q * 3 + q] - a[p * 3 + p]) / (2 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1));
                double c = 1 / std::sqrt(t * t + 1), s = t * c;
                for (int k = 0; k < 3; ++k) {
                    double akp = a[k * 3 + p], akq = a[k * 3 + q];
                    a[k * 3 + p] = c * akp - s * akq;
                    a[k * 3 + q] = s * akp + c * akq;
                }
                for (int k = 0; k < 3; ++k) {
                    double apk = a[p * 3 + k], aqk = a[q * 3 + k];
                    a[p * 3 + k] = c * apk - s * aqk;
                    a[q * 3 + k] = s * apk + c * aqk;
                }
            }
    }
    double e0 = std::max(a[0], 0.0), e1 = std::max(a[4], 0.0), e2 = std::max(a[8], 0.0);
    *lo = std::sqrt(std::min({e0, e1, e2}));
    *hi = std::sqrt(std::max({e0, e1, e2}));
}

}  // namespace

double Jacobian::smin() const {
    double lo, hi;
    if (dim == 2) sv2(m, &lo, &hi); else sv3(m, &lo, &hi);
    return lo;
}

double Jacobian::smax() const {
    double lo, hi;
    if (dim == 2) sv2(m, &lo, &hi); else sv3(m, &lo, &hi);
    return hi;
}

// ---------------------------------------------------------------------------
// Pieces
// ---------------------------------------------------------------------------

namespace {

class IdentityPiece final : public MapPiece {
  public:
    Point t2s(const Point& p) const override { return p; }
    Point s2t(const Point& p) const override { return p; }
    Jacobian jac(const Point&) const override {
        Jacobian J;
        J.dim = 2;
        J.m[0] = J.m[3] = 1;
        return J;
    }
    double seam_distance(const Point&) const override { return kInf; }
};

class PlanarBodyPiece final : public MapPiece {
  public:
    double sc = 1, ty0 = 0, sy0 = 0;
    double x0 = -0.5, x1 = 0.5, yb = 0, yt = 0;  // target rect

    Point t2s(const Point& p) const override {
        return {p.x * sc, sy0 + (p.y - ty0) * sc, 0};
    }
    Point s2t(const Point& p) const override {
        return {p.x / sc, ty0 + (p.y - sy0) / sc, 0};
    }
    Jacobian jac(const Point&) const override {
        Jacobian J;
        J.dim = 2;
        J.m[0] = J.m[3] = sc;
        return J;
    }
    double seam_distance(const Point& p) const override {
        return std::min({p.x - x0, x1 - p.x, p.y - yb, yt - p.y});
    }
};

// One planar leg: exponential lower part and reflected, rescaled upper part.
class PlanarLegPiece final : public MapPiece {
  public:
    LegMapParams2D lm;
    bool mirror = false;
    double L = 0;            // target leg left (unmirrored)
    double t_bottom = 0;     // target leg bottom y
    double anchor_x = 0;     // source leg local origin |x|
    double anchor_y = 0;     // source gap bottom y
    double h_B = 0, nu = 0, TL = 0, TR = 0;

    double xl_of(const Point& p) const {
        return mirror ? (-p.x - L) : (p.x - L);
    }

    Point t2s(const Point& p) const override {
        double x = xl_of(p), y = p.y - t_bottom;
        double X, Y;
        if (y <= lm.y_split) {
            X = lm.gt(y) * x + lm.g(y);
            Y = lm.k1 * lm.g(y);
        } else {
            double u = (y - lm.y_split) * (lm.y_split / h_B);
            double W = lm.k1 * (lm.g(lm.y_split) - lm.g(lm.y_split - u));
            Y = lm.waist_y + nu * W;
            double fr = (Y - lm.waist_y) / (lm.gap - lm.waist_y);
            double XL = lm.px + fr * (TL - lm.px);
            double XR = lm.qx + fr * (TR - lm.qx);
            X = XL + (x / lm.w) * (XR - XL);
        }
        double Xg = mirror ? -(anchor_x + X) : anchor_x + X;
        return {Xg, anchor_y + Y, 0};
    }

    Point s2t(const Point& p) const override {
        double X = (mirror ? -p.x : p.x) - anchor_x;
        double Y = p.y - anchor_y;
        double x, y;
        if (Y <= lm.waist_y) {
            y = lm.g_inv(Y / lm.k1);
            x = (X - lm.g(y)) / lm.gt(y);
        } else {
            double W = (Y - lm.waist_y) / nu;
            double gg = lm.g(lm.y_split) - W / lm.k1;
            double ysu = lm.g_inv(gg);
            double u = lm.y_split - ysu;
            y = lm.y_split + u * (h_B / lm.y_split);
            double fr = (Y - lm.waist_y) / (lm.gap - lm.waist_y);
            double XL = lm.px + fr * (TL - lm.px);
            double XR = lm.qx + fr * (TR - lm.qx);
            x = (X - XL) * lm.w / (XR - XL);
        }
        double xg = mirror ? -(L + x) : L + x;
        return {xg, t_bottom + y, 0};
    }

    Jacobian jac(const Point& p) const override {
        double x = xl_of(p), y = p.y - t_bottom;
        Jacobian J;
        J.dim = 2;
        if (y <= lm.y_split) {
            double gp = lm.gp(y);
            J.m[0] = lm.gt(y);
            J.m[1] = lm.k1 * lm.a_exp * gp * x + gp;
            J.m[2] = 0;
            J.m[3] = lm.k1 * gp;
        } else {
            double u = (y - lm.y_split) * (lm.y_split / h_B);
            double W = lm.k1 * (lm.g(lm.y_split) - lm.g(lm.y_split - u));
            double Y = lm.waist_y + nu * W;
            double dYdy = nu * lm.k1 * lm.gp(lm.y_split - u) * (lm.y_split / h_B);
            double span = lm.gap - lm.waist_y;
            double XLp = (TL - lm.px) / span;
            double XRp = (TR - lm.qx) / span;
            double fr = (Y - lm.waist_y) / span;
            double XL = lm.px + fr * span * XLp;
            double XR = lm.qx + fr * span * XRp;
            J.m[0] = (XR - XL) / lm.w;
            J.m[1] = (XLp + (x / lm.w) * (XRp - XLp)) * dYdy;
            J.m[2] = 0;
            J.m[3] = dYdy;
        }
        if (mirror) J.m[1] = -J.m[1];
        return J;
    }

    double seam_distance(const Point& p) const override {
        double x = xl_of(p), y = p.y - t_bottom;
        return std::min({x, lm.w - x, y, lm.leg_height - y, std::abs(y - lm.y_split)});
    }
};

class VolumetricBodyPiece final : public MapPiece {
  public:
    double sc = 1, tz0 = 0, sz0 = 0;
    Box3 box;  // target box

    Point t2s(const Point& p) const override {
        return {p.x * sc, p.y * sc, sz0 + (p.z - tz0) * sc};
    }
    Point s2t(const Point& p) const override {
        return {p.x / sc, p.y / sc, tz0 + (p.z - sz0) / sc};
    }
    Jacobian jac(const Point&) const override {
        Jacobian J;
        J.dim = 3;
        J.m[0] = J.m[4] = J.m[8] = sc;
        return J;
    }
    double seam_distance(const Point& p) const override {
        return std::min({p.x - box.lo.x, box.hi.x - p.x, p.y - box.lo.y,
                         box.hi.y - p.y, p.z - box.lo.z, box.hi.z - p.z});
    }
};

// One volumetric leg: the target cylinder splits at mid-height; each half
// maps onto its frustum by an exponential height profile whose starting
// slope matches the adjacent box similarity, with linear-in-height radius
// and axis interpolation.
class VolumetricLegPiece final : public MapPiece {
  public:
    VolumetricLegLayout lay;
    ExpProfile p_lo, p_up;
    double zmid = 0;

    struct Half {
        const FrustumN* fr;
        const ExpProfile* prof;
        double span;
        Vec2 c_ref;     // frustum end at the box attachment
        double r_ref;
        Vec2 c_other;   // waist end
        double r_other;
    };

    Half half_for_target(double z) const {
        if (z <= zmid)
            return {&lay.lower, &p_lo, lay.lower.z1 - lay.lower.z0, lay.lower.c0,
                    lay.lower.r0, lay.lower.c1, lay.lower.r1};
        return {&lay.upper, &p_up, lay.upper.z1 - lay.upper.z0, lay.upper.c1,
                lay.upper.r1, lay.upper.c0, lay.upper.r0};
    }

    Point t2s(const Point& p) const override {
        bool low = p.z <= zmid;
        Half h = half_for_target(p.z);
        double zeta = low ? p.z - lay.z_bottom : lay.z_top - p.z;
        double Z = h.prof->value(zeta);
        double fr = Z / h.span;
        Vec2 c = h.c_ref + (h.c_other - h.c_ref) * fr;
        double s = (h.r_ref + (h.r_other - h.r_ref) * fr) / lay.radius;
        double Zg = low ? lay.lower.z0 + Z : lay.upper.z1 - Z;
        return {c.x + s * (p.x - lay.axis.x), c.y + s * (p.y - lay.axis.y), Zg};
    }

    Point s2t(const Point& p) const override {
        bool low = p.z <= lay.lower.z1;
        Half h = low ? half_for_target(zmid - 1) : half_for_target(zmid + 1);
        double Z = low ? p.z - lay.lower.z0 : lay.upper.z1 - p.z;
        double zeta = h.prof->invert(Z);
        double fr = Z / h.span;
        Vec2 c = h.c_ref + (h.c_other - h.c_ref) * fr;
        double s = (h.r_ref + (h.r_other - h.r_ref) * fr) / lay.radius;
        double z = low ? lay.z_bottom + zeta : lay.z_top - zeta;
        return {lay.axis.x + (p.x - c.x) / s, lay.axis.y + (p.y - c.y) / s, z};
    }

    Jacobian jac(const Point& p) const override {
        bool low = p.z <= zmid;
        Half h = half_for_target(p.z);
        double zeta = low ? p.z - lay.z_bottom : lay.z_top - p.z;
        double dzeta_dz = low ? 1.0 : -1.0;
        double Z = h.prof->value(zeta);
        double slope = h.prof->slope(zeta);
        double fr = Z / h.span;
        double dfr_dz = slope * dzeta_dz / h.span;
        Vec2 c = h.c_ref + (h.c_other - h.c_ref) * fr;
        (void)c;
        double s = (h.r_ref + (h.r_other - h.r_ref) * fr) / lay.radius;
        double dc_x = h.c_other.x - h.c_ref.x;
        double dc_y = h.c_other.y - h.c_ref.y;
        double ds = (h.r_other - h.r_ref) / lay.radius;
        Jacobian J;
        J.dim = 3;
        J.m[0] = s;
        J.m[4] = s;
        J.m[2] = (dc_x + ds * (p.x - lay.axis.x)) * dfr_dz;
        J.m[5] = (dc_y + ds * (p.y - lay.axis.y)) * dfr_dz;
        // dZg/dz: lower +slope, upper -slope * d(zeta)/dz = +slope.
        J.m[8] = slope;
        return J;
    }

    double seam_distance(const Point& p) const override {
        double radial = lay.radius - std::hypot(p.x - lay.axis.x, p.y - lay.axis.y);
        return std::min({p.z - lay.z_bottom, lay.z_top - p.z, std::abs(p.z - zmid), radial});
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

LegMapParams2D solve_leg_map_2d(const ConstructionConfig& cfg, int j, int i) {
    cfg.validate();
    if (cfg.family != Family::Planar2John &&
        !(cfg.family == Family::SJohnGH && cfg.n == 2))
        throw ConfigError("solve_leg_map_2d: planar families only");
    return solve_planar_leg(cfg.family, cfg.s, j, i);
}

LegMapParamsND solve_leg_map_nd(const ConstructionConfig& cfg, int j) {
    cfg.validate();
    if (j < 1 || j > cfg.depth) throw ConfigError("solve_leg_map_nd: stage out of range");
    LegMapParamsND out;
    out.j = j;
    double jj = double(j);
    if (cfg.family == Family::NDimensional) {
        out.form = LegMapParamsND::Form::Radial;
        out.g1_0 = 1.0 / (jj * jj);
        out.height = jj * std::pow(2.0, -(cfg.n - 1) * j);
        out.span = 2.0 / (jj * jj);
        out.g1_end_stated = std::pow(2.0, (cfg.n - 1) * j) / (jj * jj);
    } else if (cfg.family == Family::SJohnGH) {
        out.form = LegMapParamsND::Form::Sheared;
        out.g1_0 = 1.0 / jj;
        out.height = std::ldexp(1.0, -j);
        out.span = 2.0 / (jj * jj);
        out.g1_end_stated = std::ldexp(1.0, j) / jj;
    } else {
        throw ConfigError("solve_leg_map_nd: volumetric families only");
    }
    ExpProfile prof = solve_exp_profile(out.g1_0, out.height, out.span);
    if (!(prof.a > 0) || !(prof.b > 0))
        throw BuildError("solve_leg_map_nd: non-positive solution branch");
    out.a_coef = prof.a;
    out.b_coef = prof.b;
    out.residual = prof.residual;
    out.g1_end = prof.slope(out.height);
    out.g1_end_ratio = out.g1_end / out.g1_end_stated;
    return out;
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

int PiecewiseMapModel::piece_at_source(const Point& p) const {
    int cell = source->find_cell(p);
    return cell < 0 ? -1 : piece_of_source_cell[cell];
}

int PiecewiseMapModel::piece_at_target(const Point& p) const {
    int cell = target->find_cell(p);
    return cell < 0 ? -1 : piece_of_target_cell[cell];
}

PiecewiseMapModel assemble_global_map(const DomainModel& source, const DomainModel& target) {
    if (source.config.family != target.config.family)
        throw BuildError("assemble_global_map: family mismatch");
    PiecewiseMapModel model;
    model.source = &source;
    model.target = &target;
    model.source_cfg = source.config;
    model.target_cfg = target.config;

    if (source.config.family == Family::UnitSquare) {
        model.pieces.push_back(std::make_shared<IdentityPiece>());
        model.piece_of_source_cell.assign(source.cells.size(), 0);
        model.piece_of_target_cell.assign(target.cells.size(), 0);
        return model;
    }
    if (source.config.side != Side::Source || target.config.side != Side::Target)
        throw BuildError("assemble_global_map: expects a source and a target domain");
    if (source.config.depth != target.config.depth)
        throw BuildError("assemble_global_map: depth mismatch");

    const ConstructionConfig& cfg = target.config;
    int J = cfg.depth;
    const bool planar = target.dim == 2;

    // Piece lookup keyed by (stage, leg index, mirror); leg index 0 = body.
    std::map<std::tuple<int, int, int>, int> key_to_piece;
    auto add_piece = [&](std::shared_ptr<MapPiece> p, int stage, int leg, bool mirror) {
        p->stage = stage;
        int idx = int(model.pieces.size());
        model.pieces.push_back(std::move(p));
        key_to_piece[{stage, leg, mirror ? 1 : 0}] = idx;
    };

    std::vector<StageSpec> st(1);
    for (int j = 1; j <= J; ++j) st.push_back(make_stage_spec(cfg, j));

    for (int j = 1; j <= J; ++j) {
        if (planar) {
            auto bp = std::make_shared<PlanarBodyPiece>();
            bp->sc = st[j].src_scale;
            bp->ty0 = st[j].y_top;
            bp->sy0 = st[j].src_y_top;
            bp->yb = st[j].y_bottom;
            bp->yt = st[j].y_top;
            bp->feature = st[j].body_h;
            add_piece(std::move(bp), j, 0, false);
        } else {
            auto bp = std::make_shared<VolumetricBodyPiece>();
            bp->sc = st[j].src_scale;
            bp->tz0 = st[j].y_top;
            bp->sz0 = st[j].src_y_top;
            bp->box.lo = {-st[j].body_w / 2, -st[j].body_d / 2, st[j].y_bottom};
            bp->box.hi = {st[j].body_w / 2, st[j].body_d / 2, st[j].y_top};
            bp->feature = st[j].body_h;
            add_piece(std::move(bp), j, 0, false);
        }
    }
    for (int j = 1; j < J; ++j) {
        if (planar) {
            PlanarStageParams pp = planar_stage_params(cfg.family, cfg.s, j);
            for (const LegPlacement& lp : st[j].legs) {
                auto leg = std::make_shared<PlanarLegPiece>();
                leg->lm = solve_planar_leg(cfg.family, cfg.s, j, lp.i);
                leg->mirror = lp.mirror;
                leg->L = planar_leg_left(pp, lp.i);
                leg->t_bottom = st[j].leg_bottom;
                leg->anchor_x = leg->L / (j + 1);
                leg->anchor_y = st[j + 1].src_y_top;
                leg->h_B = leg->lm.leg_height - leg->lm.y_split;
                leg->nu = (leg->lm.gap - leg->lm.waist_y) / leg->lm.waist_y;
                leg->TL = leg->lm.m;
                leg->TR = leg->lm.m + leg->lm.top_len;
                leg->feature = std::min(leg->lm.w, leg->lm.leg_height);
                leg->is_leg = true;
                add_piece(std::move(leg), j, lp.i, lp.mirror);
            }
        } else {
            for (const LegPlacement& lp : st[j].legs) {
                auto leg = std::make_shared<VolumetricLegPiece>();
                leg->lay = volumetric_leg_layout(cfg, j, lp.i);
                leg->zmid = (leg->lay.z_bottom + leg->lay.z_top) / 2.0;
                double h_half = leg->zmid - leg->lay.z_bottom;
                leg->p_lo = solve_exp_profile(st[j + 1].src_scale, h_half,
                                              leg->lay.lower.z1 - leg->lay.lower.z0);
                leg->p_up = solve_exp_profile(st[j].src_scale, h_half,
                                              leg->lay.upper.z1 - leg->lay.upper.z0);
                leg->feature = std::min(leg->lay.radius, h_half);
                leg->is_leg = true;
                add_piece(std::move(leg), j, lp.i, false);
            }
        }
    }

    auto lookup = [&](const Cell& c) -> int {
        int leg = (c.kind == CellKind::Body) ? 0 : c.leg_i;
        auto it = key_to_piece.find({c.stage, leg, c.mirror ? 1 : 0});
        return it == key_to_piece.end() ? -1 : it->second;
    };
    model.piece_of_source_cell.resize(source.cells.size());
    for (size_t i = 0; i < source.cells.size(); ++i) {
        int p = lookup(source.cells[i]);
        if (p < 0)
            throw BuildError("assemble_global_map: uncovered source cell " + std::to_string(i));
        model.piece_of_source_cell[i] = p;
    }
    model.piece_of_target_cell.resize(target.cells.size());
    for (size_t i = 0; i < target.cells.size(); ++i)
        model.piece_of_target_cell[i] = lookup(target.cells[i]);

    // Gluing consistency over source interfaces.
    double mismatch = 0;
    for (const Interface& itf : source.interfaces) {
        int pa = model.piece_of_source_cell[itf.cell_a];
        int pb = model.piece_of_source_cell[itf.cell_b];
        if (pa == pb) continue;
        std::vector<Point> probes = itf.patch;
        probes.push_back(itf.centroid);
        for (const Point& q : probes) {
            Point ia = model.pieces[pa]->s2t(q);
            Point ib = model.pieces[pb]->s2t(q);
            mismatch = std::max(mismatch, dist(ia, ib));
        }
    }
    model.interface_mismatch = mismatch;
    if (mismatch > 1e-9)
        throw BuildError("assemble_global_map: interface mismatch " +
                         format_double(mismatch) + " exceeds tolerance");
    return model;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

Point eval_forward(const PiecewiseMapModel& map, const Point& x) {
    int p = map.piece_at_source(x);
    if (p < 0) throw QueryError("eval: point is outside the source domain");
    Point img = map.pieces[p]->s2t(x);
    if (map.target->find_cell(img) < 0)
        throw QueryError("eval: image escaped the target domain");
    return img;
}

Point eval_inverse(const PiecewiseMapModel& map, const Point& x) {
    int p = map.piece_at_target(x);
    if (p < 0)
        throw QueryError("eval: point is outside the glued map's pieces");
    Point img = map.pieces[p]->t2s(x);
    if (map.source->find_cell(img) < 0)
        throw QueryError("eval: image escaped the source domain");
    return img;
}

Point eval_map(const PiecewiseMapModel& map, const Point& x) {
    return map.direction == MapDirection::Forward ? eval_forward(map, x)
                                                  : eval_inverse(map, x);
}

Jacobian jacobian_t2s(const PiecewiseMapModel& map, const Point& x, double seam_tol) {
    int p = map.piece_at_target(x);
    if (p < 0) throw QueryError("jacobian: point is outside the glued map's pieces");
    const MapPiece& piece = *map.pieces[p];
    if (piece.seam_distance(x) < seam_tol * piece.feature)
        throw QueryError("jacobian: point lies on a piece interface; offset the sample");
    return piece.jac(x);
}

Jacobian jacobian_forward(const PiecewiseMapModel& map, const Point& x, double seam_tol) {
    Point tx;
    {
        int p = map.piece_at_source(x);
        if (p < 0) throw QueryError("jacobian: point is outside the source domain");
        tx = map.pieces[p]->s2t(x);
    }
    Jacobian J = jacobian_t2s(map, tx, seam_tol);
    Jacobian inv;
    inv.dim = J.dim;
    if (J.dim == 2) {
        double d = J.det();
        inv.m[0] = J.m[3] / d;
        inv.m[1] = -J.m[1] / d;
        inv.m[2] = -J.m[2] / d;
        inv.m[3] = J.m[0] / d;
    } else {
        double d = J.det();
        auto c = [&](int r0, int c0, int r1, int c1) {
            return J.m[r0 * 3 + c0] * J.m[r1 * 3 + c1] - J.m[r0 * 3 + c1] * J.m[r1 * 3 + c0];
        };
        inv.m[0] = c(1, 1, 2, 2) / d;
        inv.m[1] = -c(0, 1, 2, 2) / d;
        inv.m[2] = c(0, 1, 1, 2) / d;
        inv.m[3] = -c(1, 0, 2, 2) / d;
        inv.m[4] = c(0, 0, 2, 2) / d;
        inv.m[5] = -c(0, 0, 1, 2) / d;
        inv.m[6] = c(1, 0, 2, 1) / d;
        inv.m[7] = -c(0, 0, 2, 1) / d;
        inv.m[8] = c(0, 0, 1, 1) / d;
    }
    return inv;
}

Jacobian fd_jacobian_t2s(const PiecewiseMapModel& map, const Point& x, double step) {
    int p = map.piece_at_target(x);
    if (p < 0) throw QueryError("fd_jacobian: point is outside the glued map's pieces");
    const MapPiece& piece = *map.pieces[p];
    Jacobian J;
    J.dim = map.target->dim;
    for (int k = 0; k < J.dim; ++k) {
        Point hi = x, lo = x;
        (k == 0 ? hi.x : k == 1 ? hi.y : hi.z) += step;
        (k == 0 ? lo.x : k == 1 ? lo.y : lo.z) -= step;
        Point fhi = piece.t2s(hi), flo = piece.t2s(lo);
        double inv = 1.0 / (2 * step);
        if (J.dim == 2) {
            J.m[k] = (fhi.x - flo.x) * inv;
            J.m[2 + k] = (fhi.y - flo.y) * inv;
        } else {
            J.m[k] = (fhi.x - flo.x) * inv;
            J.m[3 + k] = (fhi.y - flo.y) * inv;
            J.m[6 + k] = (fhi.z - flo.z) * inv;
        }
    }
    return J;
}

// ---------------------------------------------------------------------------
// Distortion scan
// ---------------------------------------------------------------------------

DistortionReport distortion_scan(const PiecewiseMapModel& map, const DistortionScanSpec& spec) {
    DistortionReport rep;
    Rng rng(spec.seed);
    const int dim = map.target->dim;
    long fd_countdown = 0;

    auto consider = [&](const MapPiece& piece, const Point& x) {
        Jacobian J = piece.jac(x);
        double K = J.distortion();
        double det = J.det();
        rep.det_min = std::min(rep.det_min, det);
        ++rep.samples;
        if (K > rep.K_sup) {
            rep.K_sup = K;
            rep.argmax = {x, piece.stage, K, det};
        }
        auto& sk = rep.per_stage_K_sup[piece.stage];
        sk = std::max(sk, K);
        if (piece.is_leg && dim == 2) {
            const auto& leg = static_cast<const PlanarLegPiece&>(piece);
            double y = x.y - leg.t_bottom;
            if (y <= leg.lm.y_split) {
                double ratio = std::abs(J.m[1]) / (leg.lm.k1 * leg.lm.gp(y));
                rep.offdiag_ratio_max = std::max(rep.offdiag_ratio_max, ratio);
            }
        }
        if (fd_countdown-- <= 0) {
            fd_countdown = spec.fd_every - 1;
            double step = 1e-6 * piece.feature;
            if (piece.seam_distance(x) > 4 * step) {
                Jacobian F = fd_jacobian_t2s(map, x, step);
                double max_entry = 0;
                for (int k = 0; k < dim * dim; ++k)
                    max_entry = std::max(max_entry,
                                         std::max(std::abs(J.m[k]), std::abs(F.m[k])));
                for (int k = 0; k < dim * dim; ++k) {
                    double denom = std::max({std::abs(J.m[k]), std::abs(F.m[k]),
                                             1e-9 * max_entry});
                    if (denom <= 0) continue;
                    double rel = std::abs(J.m[k] - F.m[k]) / denom;
                    rep.fd_residual_max = std::max(rep.fd_residual_max, rel);
                }
            }
        }
        if (rep.kept.size() < spec.keep)
            rep.kept.push_back({x, piece.stage, K, det});
    };

    for (const auto& pp : map.pieces) {
        const MapPiece& piece = *pp;
        if (dim == 2 && !piece.is_leg) {
            // Body rectangle or identity.
            const auto* body = dynamic_cast<const PlanarBodyPiece*>(&piece);
            if (!body) continue;
            int nx = std::max(2, int(std::sqrt(double(spec.samples_per_body)) * 4));
            int ny = std::max(2, spec.samples_per_body / nx + 1);
            double ix = (body->x1 - body->x0) * 1e-3, iy = (body->yt - body->yb) * 1e-3;
            for (int a = 0; a < nx; ++a)
                for (int b = 0; b < ny; ++b) {
                    double fx = (a + 0.2 + 0.6 * rng.uniform()) / nx;
                    double fy = (b + 0.2 + 0.6 * rng.uniform()) / ny;
                    consider(piece, {body->x0 + ix + fx * (body->x1 - body->x0 - 2 * ix),
                                     body->yb + iy + fy * (body->yt - body->yb - 2 * iy), 0});
                }
        } else if (dim == 2) {
            const auto& leg = static_cast<const PlanarLegPiece&>(piece);
            int ny = std::max(4, int(std::sqrt(spec.samples_per_leg * 4.0)));
            int nx = std::max(2, spec.samples_per_leg / ny + 1);
            double w = leg.lm.w, H = leg.lm.leg_height;
            for (int a = 0; a < nx; ++a)
                for (int b = 0; b < ny; ++b) {
                    double fx = (a + 0.2 + 0.6 * rng.uniform()) / nx;
                    double fy = (b + 0.2 + 0.6 * rng.uniform()) / ny;
                    double xl = 1e-3 * w + fx * w * 0.998;
                    double yl = 1e-3 * H + fy * H * 0.998;
                    if (std::abs(yl - leg.lm.y_split) < 2e-3 * H) continue;
                    double xg = leg.mirror ? -(leg.L + xl) : leg.L + xl;
                    consider(piece, {xg, leg.t_bottom + yl, 0});
                }
        } else if (piece.is_leg) {
            const auto& leg = static_cast<const VolumetricLegPiece&>(piece);
            int nz = std::max(4, int(std::cbrt(spec.samples_per_leg * 16.0)));
            int nr = std::max(2, spec.samples_per_leg / (nz * 4));
            double H = leg.lay.z_top - leg.lay.z_bottom, R = leg.lay.radius;
            for (int a = 0; a < nz; ++a)
                for (int b = 0; b < nr; ++b)
                    for (int t = 0; t < 4; ++t) {
                        double fz = (a + 0.2 + 0.6 * rng.uniform()) / nz;
                        double z = leg.lay.z_bottom + 1e-3 * H + fz * H * 0.998;
                        if (std::abs(z - leg.zmid) < 2e-3 * H) continue;
                        double rr = R * 0.9 * (b + rng.uniform()) / nr;
                        double th = 2 * M_PI * (t + rng.uniform()) / 4;
                        consider(piece, {leg.lay.axis.x + rr * std::cos(th),
                                         leg.lay.axis.y + rr * std::sin(th), z});
                    }
        } else {
            const auto* body = dynamic_cast<const VolumetricBodyPiece*>(&piece);
            if (!body) continue;
            int n = std::max(2, int(std::cbrt(double(spec.samples_per_body))));
            Point ext = body->box.hi - body->box.lo;
            for (int a = 0; a < 4 * n; ++a)
                for (int b = 0; b < n; ++b)
                    for (int c = 0; c < n; ++c) {
                        double fx = (a + 0.2 + 0.6 * rng.uniform()) / (4 * n);
                        double fy = (b + 0.2 + 0.6 * rng.uniform()) / n;
                        double fz = (c + 0.2 + 0.6 * rng.uniform()) / n;
                        consider(piece,
                                 {body->box.lo.x + ext.x * (0.001 + 0.998 * fx),
                                  body->box.lo.y + ext.y * (0.001 + 0.998 * fy),
                                  body->box.lo.z + ext.z * (0.001 + 0.998 * fz)});
                    }
        }
    }
    if (rep.samples == 0) rep.det_min = 0;
    return rep;
}

}  // namespace qclab
