#include "qclab/domain.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>

namespace qclab {

namespace {

std::string family_name(Family f) {
    switch (f) {
        case Family::Planar2John: return "planar2john";
        case Family::NDimensional: return "ndimensional";
        case Family::SJohnGH: return "sjohngh";
        case Family::UnitSquare: return "unitsquare";
    }
    return "?";
}

// Cylinder radii of the volumetric families, reduced at shallow stages so
// leg caps stay interior to the next box's cross-section.
double nd_leg_radius(const ConstructionConfig& cfg, int j) {
    if (cfg.family == Family::NDimensional) {
        double stated = std::pow(2.0, -cfg.n * j);
        double next_halfwidth = std::pow(2.0, -(cfg.n - 1) * (j + 1)) / 2.0;
        return std::min(stated, next_halfwidth / 2.0);
    }
    double stated = std::pow(2.0, -cfg.s * j);
    double next_halfwidth = std::ldexp(1.0, -(j + 1)) / 2.0;
    return std::min(stated, next_halfwidth / 2.0);
}

}  // namespace

void ConstructionConfig::validate() const {
    if (depth < 1) throw ConfigError("depth must be >= 1");
    if (frustum_sides < 8) throw ConfigError("frustum_sides must be >= 8");
    switch (family) {
        case Family::Planar2John:
            if (n != 2) throw ConfigError("planar2john requires n = 2");
            break;
        case Family::SJohnGH:
            if (!(s > 2.0)) throw ConfigError("sjohngh requires s > 2");
            if (n != 2 && n != 3)
                throw ConfigError("sjohngh assembly supports n = 2 or n = 3");
            break;
        case Family::NDimensional:
            if (n < 3) throw ConfigError("ndimensional requires n >= 3");
            break;
        case Family::UnitSquare:
            break;
    }
}

std::string ConstructionConfig::describe() const {
    std::ostringstream os;
    os << "family=" << family_name(family)
       << ";side=" << (side == Side::Target ? "target" : "source") << ";n=" << n
       << ";s=" << format_double(s) << ";depth=" << depth
       << ";frustum_sides=" << frustum_sides;
    return os.str();
}

// ---------------------------------------------------------------------------
// make_stage_spec
// ---------------------------------------------------------------------------

StageSpec make_stage_spec(const ConstructionConfig& config, int j) {
    config.validate();
    const bool planar = config.family == Family::Planar2John ||
                        (config.family == Family::SJohnGH && config.n == 2);
    int j_min = planar && config.side == Side::Target ? 0 : 1;
    if (config.family == Family::UnitSquare)
        throw ConfigError("unitsquare has no staged structure");
    if (j < j_min || j > config.depth)
        throw ConfigError("stage index out of range for this family/side");

    StageSpec st;
    st.j = j;
    st.family = config.family;
    st.n = config.n;
    st.s = config.s;

    if (planar) {
        PlanarStageParams p = planar_stage_params(config.family, config.s, j);
        st.a = p.a;
        st.b = p.b;
        st.c = p.c;
        st.square_side = p.square_side;
        st.leg_width = p.c;
        st.leg_height = p.leg_height;
        st.body_w = 1.0;
        st.body_h = p.a;
        st.labeled_count = 1 << j;
        st.leg_count = 2 * st.labeled_count;
        for (int i = 1; i <= st.labeled_count; ++i) {
            LegPlacement lp;
            lp.i = i;
            lp.left = planar_leg_left(p, i);
            st.legs.push_back(lp);
        }
        for (int i = 1; i <= st.labeled_count; ++i) {
            LegPlacement lp;
            lp.i = i;
            lp.mirror = true;
            lp.left = -(planar_leg_left(p, i) + p.c);
            st.legs.push_back(lp);
        }
        st.removed.push_back({-p.square_side / 2.0, p.square_side / 2.0});
        for (int i = 2; i <= st.labeled_count; ++i) {
            double x0 = planar_leg_left(p, i - 1) + p.c;
            st.removed.push_back({x0, x0 + p.square_side});
        }
        double T = 0.0;
        for (int k = 0; k < j; ++k) {
            PlanarStageParams pk = planar_stage_params(config.family, config.s, k);
            T += pk.a + pk.leg_height;
        }
        st.y_top = -T;
        st.y_bottom = -T - p.a;
        st.leg_top = st.y_bottom;
        st.leg_bottom = st.y_bottom - p.leg_height;
        st.src_scale = p.src_scale;
        st.src_gap = p.src_gap;
        if (j >= 1) {
            double S = 0.0;
            for (int k = 1; k < j; ++k) {
                PlanarStageParams pk = planar_stage_params(config.family, config.s, k);
                S += pk.a / k + 2.0 / (double(k) * k);
            }
            st.src_y_top = -S;
            st.src_y_bottom = -S - p.a / j;
        }
        return st;
    }

    // Volumetric families (assembled for n = 3).
    double jj = double(j);
    if (config.family == Family::NDimensional) {
        st.body_w = 1.0;
        st.body_d = std::pow(2.0, -(config.n - 1) * j);
        st.body_h = std::pow(2.0, -config.n * j);
        st.leg_height = jj * std::pow(2.0, -(config.n - 1) * j);
        st.leg_radius = nd_leg_radius(config, j);
        st.leg_count = 1 << ((config.n - 1) * j);
        st.src_scale = 1.0 / (jj * jj);
    } else {  // SJohnGH, n = 3
        st.body_w = 1.0;
        st.body_d = std::ldexp(1.0, -j);
        st.body_h = std::ldexp(1.0, -j);
        st.leg_height = std::ldexp(1.0, -j);
        st.leg_radius = nd_leg_radius(config, j);
        st.leg_count = 1 << j;
        st.src_scale = 1.0 / jj;
    }
    st.labeled_count = st.leg_count;
    st.src_gap = 2.0 / (jj * jj);
    double spacing = st.body_w / st.leg_count;
    for (int i = 1; i <= st.leg_count; ++i) {
        LegPlacement lp;
        lp.i = i;
        lp.axis = {-0.5 + (i - 0.5) * spacing, 0.0};
        st.legs.push_back(lp);
    }
    double U = 0.0, V = 0.0;
    for (int k = 1; k < j; ++k) {
        StageSpec prev;  // minimal recompute of extents
        double bh, lh, sc;
        if (config.family == Family::NDimensional) {
            bh = std::pow(2.0, -config.n * k);
            lh = double(k) * std::pow(2.0, -(config.n - 1) * k);
            sc = 1.0 / (double(k) * k);
        } else {
            bh = std::ldexp(1.0, -k);
            lh = std::ldexp(1.0, -k);
            sc = 1.0 / double(k);
        }
        (void)prev;
        U += bh + lh;
        V += bh * sc + 2.0 / (double(k) * k);
    }
    st.y_top = -U;
    st.y_bottom = -U - st.body_h;
    st.leg_top = st.y_bottom;
    st.leg_bottom = st.y_bottom - st.leg_height;
    st.src_y_top = -V;
    st.src_y_bottom = -V - st.body_h * st.src_scale;
    return st;
}

// ---------------------------------------------------------------------------
// DomainModel queries
// ---------------------------------------------------------------------------

void DomainModel::finalize() {
    bbox = Aabb{};
    min_feature = kInf;
    std::vector<Aabb> cell_boxes;
    cell_boxes.reserve(cells.size());
    for (const Cell& c : cells) {
        Aabb b = shape_bbox(c.shape);
        bbox.merge(b);
        cell_boxes.push_back(b);
        min_feature = std::min(min_feature, shape_min_feature(c.shape));
    }
    cell_bvh_.build(std::move(cell_boxes));

    std::vector<Aabb> facet_boxes;
    facet_boxes.reserve(boundary.size());
    for (Facet& f : boundary) {
        f.index_holes();
        facet_boxes.push_back(f.bbox());
    }
    facet_bvh_.build(std::move(facet_boxes));

    adjacency_.assign(cells.size(), {});
    for (const Interface& itf : interfaces) {
        if (!(itf.measure > 0))
            throw BuildError("degenerate interface between cells " +
                             std::to_string(itf.cell_a) + " and " +
                             std::to_string(itf.cell_b));
        adjacency_[itf.cell_a].push_back(itf.cell_b);
        adjacency_[itf.cell_b].push_back(itf.cell_a);
    }

    if (cells.size() > 1) {
        std::vector<char> seen(cells.size(), 0);
        std::deque<int> queue{0};
        seen[0] = 1;
        size_t reached = 1;
        while (!queue.empty()) {
            int c = queue.front();
            queue.pop_front();
            for (int nb : adjacency_[c])
                if (!seen[nb]) {
                    seen[nb] = 1;
                    ++reached;
                    queue.push_back(nb);
                }
        }
        if (reached != cells.size()) {
            int orphan = -1;
            for (size_t i = 0; i < seen.size(); ++i)
                if (!seen[i]) { orphan = int(i); break; }
            throw BuildError("domain cells are not connected; stage " +
                             std::to_string(cells[orphan].stage) +
                             " cell " + std::to_string(orphan) +
                             " has no interface path to the first cell");
        }
    }
}

int DomainModel::find_cell(const Point& p) const {
    cell_bvh_.containing(p, 0.0, scratch_);
    int best = -1;
    for (int i : scratch_)
        if (shape_contains(cells[i].shape, p) && (best < 0 || i < best)) best = i;
    return best;
}

bool DomainModel::contains(const Point& p) const {
    if (find_cell(p) < 0) return false;
    // Interior means strictly off the union boundary.
    double pad = 1e-12 * (1.0 + std::abs(p.x) + std::abs(p.y) + std::abs(p.z));
    std::vector<int> near;
    facet_bvh_.containing(p, pad, near);
    for (int fi : near)
        if (facet_distance(boundary[fi], p, dim) <= 0.0) return false;
    return true;
}

double DomainModel::boundary_distance_unchecked(const Point& p) const {
    return facet_bvh_.nearest(
        p, [this](int i, const Point& q) { return facet_distance(boundary[i], q, dim); });
}

double DomainModel::boundary_distance(const Point& p) const {
    if (!contains(p)) throw QueryError("boundary_distance: point is not inside the domain");
    return boundary_distance_unchecked(p);
}

const std::vector<int>& DomainModel::cell_neighbors(int cell) const {
    return adjacency_[cell];
}

// ---------------------------------------------------------------------------
// Assemblers
// ---------------------------------------------------------------------------

namespace {

void add_seg_facet(DomainModel& dom, int cell, Vec2 a, Vec2 b) {
    Facet f;
    f.poly = {{a.x, a.y, 0.0}, {b.x, b.y, 0.0}};
    f.cell = cell;
    dom.boundary.push_back(std::move(f));
}

// Subtract sorted open intervals from [x0, x1]; returns remaining pieces.
std::vector<std::array<double, 2>> subtract_intervals(
    double x0, double x1, std::vector<std::array<double, 2>> cuts) {
    std::sort(cuts.begin(), cuts.end());
    std::vector<std::array<double, 2>> out;
    double cur = x0;
    for (const auto& c : cuts) {
        if (c[0] > cur) out.push_back({cur, std::min(c[0], x1)});
        cur = std::max(cur, c[1]);
        if (cur >= x1) break;
    }
    if (cur < x1) out.push_back({cur, x1});
    return out;
}

void add_iface_seg(DomainModel& dom, int a, int b, Vec2 p0, Vec2 p1) {
    Interface itf;
    itf.cell_a = a;
    itf.cell_b = b;
    itf.patch = {{p0.x, p0.y, 0.0}, {p1.x, p1.y, 0.0}};
    itf.measure = dist(p0, p1);
    itf.centroid = {(p0.x + p1.x) / 2, (p0.y + p1.y) / 2, 0.0};
    dom.interfaces.push_back(std::move(itf));
}

void add_iface_poly(DomainModel& dom, int a, int b, const std::vector<Vec2>& ring, double z) {
    Interface itf;
    itf.cell_a = a;
    itf.cell_b = b;
    double area = 0.0;
    Vec2 c{0, 0};
    size_t n = ring.size();
    for (size_t k = 0; k < n; ++k) {
        area += ring[k].cross(ring[(k + 1) % n]);
        c = c + ring[k];
    }
    itf.measure = std::abs(area) / 2.0;
    c = c * (1.0 / double(n));
    itf.centroid = {c.x, c.y, z};
    itf.patch.reserve(n);
    for (const Vec2& v : ring) itf.patch.push_back({v.x, v.y, z});
    dom.interfaces.push_back(std::move(itf));
}

DomainModel assemble_planar_target(const ConstructionConfig& cfg) {
    DomainModel dom;
    dom.config = cfg;
    dom.dim = 2;
    int J = cfg.depth;
    std::vector<StageSpec> st;
    for (int j = 0; j <= J; ++j) st.push_back(make_stage_spec(cfg, j));

    std::vector<int> body_cell(J + 1);
    // stage -> leg ordinal -> cell index
    std::vector<std::vector<int>> leg_cell(J + 1);
    for (int j = 0; j <= J; ++j) {
        Cell body;
        body.shape = make_rect(-0.5, st[j].y_bottom, 0.5, st[j].y_top);
        body.stage = j;
        body.kind = CellKind::Body;
        body_cell[j] = int(dom.cells.size());
        dom.cells.push_back(std::move(body));
        if (j == J) continue;
        leg_cell[j].resize(st[j].legs.size());
        for (size_t li = 0; li < st[j].legs.size(); ++li) {
            const LegPlacement& lp = st[j].legs[li];
            Cell leg;
            leg.shape = make_rect(lp.left, st[j].leg_bottom, lp.left + st[j].leg_width,
                                  st[j].leg_top);
            leg.stage = j;
            leg.kind = CellKind::Leg;
            leg.leg_i = lp.i;
            leg.mirror = lp.mirror;
            leg_cell[j][li] = int(dom.cells.size());
            dom.cells.push_back(std::move(leg));
        }
    }

    for (int j = 0; j <= J; ++j) {
        int bc = body_cell[j];
        // Side walls.
        add_seg_facet(dom, bc, {-0.5, st[j].y_bottom}, {-0.5, st[j].y_top});
        add_seg_facet(dom, bc, {0.5, st[j].y_bottom}, {0.5, st[j].y_top});
        // Top edge: openings are the previous stage's legs.
        std::vector<std::array<double, 2>> cuts;
        if (j > 0)
            for (const LegPlacement& lp : st[j - 1].legs)
                cuts.push_back({lp.left, lp.left + st[j - 1].leg_width});
        for (const auto& seg : subtract_intervals(-0.5, 0.5, cuts))
            add_seg_facet(dom, bc, {seg[0], st[j].y_top}, {seg[1], st[j].y_top});
        // Bottom edge: openings are this stage's legs (none at the cap).
        cuts.clear();
        if (j < J)
            for (const LegPlacement& lp : st[j].legs)
                cuts.push_back({lp.left, lp.left + st[j].leg_width});
        for (const auto& seg : subtract_intervals(-0.5, 0.5, cuts))
            add_seg_facet(dom, bc, {seg[0], st[j].y_bottom}, {seg[1], st[j].y_bottom});
        if (j == J) continue;
        for (size_t li = 0; li < st[j].legs.size(); ++li) {
            const LegPlacement& lp = st[j].legs[li];
            int lc = leg_cell[j][li];
            double x0 = lp.left, x1 = lp.left + st[j].leg_width;
            add_seg_facet(dom, lc, {x0, st[j].leg_bottom}, {x0, st[j].leg_top});
            add_seg_facet(dom, lc, {x1, st[j].leg_bottom}, {x1, st[j].leg_top});
            add_iface_seg(dom, body_cell[j], lc, {x0, st[j].leg_top}, {x1, st[j].leg_top});
            add_iface_seg(dom, lc, body_cell[j + 1], {x0, st[j].leg_bottom},
                          {x1, st[j].leg_bottom});
        }
    }
    dom.center = {0.0, (st[0].y_top + st[0].y_bottom) / 2.0, 0.0};
    dom.finalize();
    return dom;
}

DomainModel assemble_planar_source(const ConstructionConfig& cfg) {
    DomainModel dom;
    dom.config = cfg;
    dom.dim = 2;
    int J = cfg.depth;
    std::vector<StageSpec> st(1);  // stage 0 unused
    for (int j = 1; j <= J; ++j) st.push_back(make_stage_spec(cfg, j));

    std::vector<int> body_cell(J + 1);
    for (int j = 1; j <= J; ++j) {
        Cell body;
        double hx = 0.5 / j;
        body.shape = make_rect(-hx, st[j].src_y_bottom, hx, st[j].src_y_top);
        body.stage = j;
        body.kind = CellKind::Body;
        body_cell[j] = int(dom.cells.size());
        dom.cells.push_back(std::move(body));
    }

    struct LegCells { int lower, upper; LegMapParams2D lm; double anchor_x; bool mirror; };
    std::vector<std::vector<LegCells>> legs(J);
    for (int j = 1; j < J; ++j) {
        for (const LegPlacement& lp : st[j].legs) {
            LegMapParams2D lm = solve_planar_leg(cfg.family, cfg.s, j, lp.i);
            double L = planar_leg_left(planar_stage_params(cfg.family, cfg.s, j), lp.i);
            double anchor_x = lp.mirror ? -L / (j + 1) : L / (j + 1);
            double y0 = st[j + 1].src_y_top;  // gap bottom
            auto X = [&](double xl) { return lp.mirror ? anchor_x - xl : anchor_x + xl; };
            ConvexPoly2 lower, upper;
            double TL = lm.m;
            if (!lp.mirror) {
                lower.pts = {{X(0.0), y0},
                             {X(lm.ax), y0},
                             {X(lm.qx), y0 + lm.waist_y},
                             {X(lm.px), y0 + lm.waist_y}};
                upper.pts = {{X(lm.px), y0 + lm.waist_y},
                             {X(lm.qx), y0 + lm.waist_y},
                             {X(TL + lm.top_len), y0 + lm.gap},
                             {X(TL), y0 + lm.gap}};
            } else {
                lower.pts = {{X(lm.ax), y0},
                             {X(0.0), y0},
                             {X(lm.px), y0 + lm.waist_y},
                             {X(lm.qx), y0 + lm.waist_y}};
                upper.pts = {{X(lm.qx), y0 + lm.waist_y},
                             {X(lm.px), y0 + lm.waist_y},
                             {X(TL), y0 + lm.gap},
                             {X(TL + lm.top_len), y0 + lm.gap}};
            }
            Cell lc;
            lc.shape = lower;
            lc.stage = j;
            lc.kind = CellKind::LegLower;
            lc.leg_i = lp.i;
            lc.mirror = lp.mirror;
            int lci = int(dom.cells.size());
            dom.cells.push_back(std::move(lc));
            Cell uc;
            uc.shape = upper;
            uc.stage = j;
            uc.kind = CellKind::LegUpper;
            uc.leg_i = lp.i;
            uc.mirror = lp.mirror;
            int uci = int(dom.cells.size());
            dom.cells.push_back(std::move(uc));
            legs[j].push_back({lci, uci, lm, anchor_x, lp.mirror});

            // Slanted walls.
            add_seg_facet(dom, lci, {X(0.0), y0}, {X(lm.px), y0 + lm.waist_y});
            add_seg_facet(dom, lci, {X(lm.ax), y0}, {X(lm.qx), y0 + lm.waist_y});
            add_seg_facet(dom, uci, {X(lm.px), y0 + lm.waist_y}, {X(TL), y0 + lm.gap});
            add_seg_facet(dom, uci, {X(lm.qx), y0 + lm.waist_y},
                          {X(TL + lm.top_len), y0 + lm.gap});
            // Waist interface and both attachments.
            add_iface_seg(dom, lci, uci, {X(lm.px), y0 + lm.waist_y},
                          {X(lm.qx), y0 + lm.waist_y});
            add_iface_seg(dom, lci, body_cell[j + 1], {X(0.0), y0}, {X(lm.ax), y0});
            add_iface_seg(dom, uci, body_cell[j], {X(TL), y0 + lm.gap},
                          {X(TL + lm.top_len), y0 + lm.gap});
        }
    }

    for (int j = 1; j <= J; ++j) {
        int bc = body_cell[j];
        double hx = 0.5 / j;
        add_seg_facet(dom, bc, {-hx, st[j].src_y_bottom}, {-hx, st[j].src_y_top});
        add_seg_facet(dom, bc, {hx, st[j].src_y_bottom}, {hx, st[j].src_y_top});
        std::vector<std::array<double, 2>> cuts;
        if (j > 1) {
            for (const LegCells& lg : legs[j - 1]) {
                double a = lg.mirror ? lg.anchor_x - lg.lm.ax : lg.anchor_x;
                double b = lg.mirror ? lg.anchor_x : lg.anchor_x + lg.lm.ax;
                cuts.push_back({a, b});
            }
        }
        for (const auto& seg : subtract_intervals(-hx, hx, cuts))
            add_seg_facet(dom, bc, {seg[0], st[j].src_y_top}, {seg[1], st[j].src_y_top});
        cuts.clear();
        if (j < J) {
            for (const LegCells& lg : legs[j]) {
                double t0 = lg.mirror ? lg.anchor_x - lg.lm.m - lg.lm.top_len
                                      : lg.anchor_x + lg.lm.m;
                cuts.push_back({t0, t0 + lg.lm.top_len});
            }
        }
        for (const auto& seg : subtract_intervals(-hx, hx, cuts))
            add_seg_facet(dom, bc, {seg[0], st[j].src_y_bottom}, {seg[1], st[j].src_y_bottom});
    }
    dom.center = {0.0, (st[1].src_y_top + st[1].src_y_bottom) / 2.0, 0.0};
    dom.finalize();
    return dom;
}

void add_box_facets(DomainModel& dom, int cell, const Box3& b,
                    const std::vector<std::vector<Vec2>>& top_holes,
                    const std::vector<std::vector<Vec2>>& bottom_holes) {
    auto quad = [&](Point p0, Point p1, Point p2, Point p3, bool horizontal,
                    const std::vector<std::vector<Vec2>>* holes) {
        Facet f;
        f.poly = {p0, p1, p2, p3};
        f.cell = cell;
        f.horizontal = horizontal;
        if (holes)
            for (const auto& rim : *holes) f.holes.push_back({rim});
        dom.boundary.push_back(std::move(f));
    };
    quad({b.lo.x, b.lo.y, b.lo.z}, {b.hi.x, b.lo.y, b.lo.z}, {b.hi.x, b.lo.y, b.hi.z},
         {b.lo.x, b.lo.y, b.hi.z}, false, nullptr);
    quad({b.lo.x, b.hi.y, b.lo.z}, {b.hi.x, b.hi.y, b.lo.z}, {b.hi.x, b.hi.y, b.hi.z},
         {b.lo.x, b.hi.y, b.hi.z}, false, nullptr);
    quad({b.lo.x, b.lo.y, b.lo.z}, {b.lo.x, b.hi.y, b.lo.z}, {b.lo.x, b.hi.y, b.hi.z},
         {b.lo.x, b.lo.y, b.hi.z}, false, nullptr);
    quad({b.hi.x, b.lo.y, b.lo.z}, {b.hi.x, b.hi.y, b.lo.z}, {b.hi.x, b.hi.y, b.hi.z},
         {b.hi.x, b.lo.y, b.hi.z}, false, nullptr);
    quad({b.lo.x, b.lo.y, b.hi.z}, {b.hi.x, b.lo.y, b.hi.z}, {b.hi.x, b.hi.y, b.hi.z},
         {b.lo.x, b.hi.y, b.hi.z}, true, &top_holes);
    quad({b.lo.x, b.lo.y, b.lo.z}, {b.hi.x, b.lo.y, b.lo.z}, {b.hi.x, b.hi.y, b.lo.z},
         {b.lo.x, b.hi.y, b.lo.z}, true, &bottom_holes);
}

void add_frustum_side_facets(DomainModel& dom, int cell, const FrustumN& fr) {
    std::vector<Vec2> r0 = fr.ring(fr.z0);
    std::vector<Vec2> r1 = fr.ring(fr.z1);
    for (int k = 0; k < fr.sides; ++k) {
        int k2 = (k + 1) % fr.sides;
        Facet f;
        f.poly = {{r0[k].x, r0[k].y, fr.z0},
                  {r0[k2].x, r0[k2].y, fr.z0},
                  {r1[k2].x, r1[k2].y, fr.z1},
                  {r1[k].x, r1[k].y, fr.z1}};
        f.cell = cell;
        dom.boundary.push_back(std::move(f));
    }
}

DomainModel assemble_volumetric_target(const ConstructionConfig& cfg) {
    if (cfg.n != 3)
        throw BuildError("volumetric assembly supports n = 3 only");
    DomainModel dom;
    dom.config = cfg;
    dom.dim = 3;
    int J = cfg.depth;
    std::vector<StageSpec> st(1);
    for (int j = 1; j <= J; ++j) st.push_back(make_stage_spec(cfg, j));

    std::vector<int> box_cell(J + 1);
    std::vector<std::vector<int>> leg_cell(J + 1);
    std::vector<Box3> boxes(J + 1);
    for (int j = 1; j <= J; ++j) {
        Box3 b;
        b.lo = {-st[j].body_w / 2, -st[j].body_d / 2, st[j].y_bottom};
        b.hi = {st[j].body_w / 2, st[j].body_d / 2, st[j].y_top};
        boxes[j] = b;
        Cell c;
        c.shape = b;
        c.stage = j;
        c.kind = CellKind::Body;
        box_cell[j] = int(dom.cells.size());
        dom.cells.push_back(std::move(c));
        if (j == J) continue;
        leg_cell[j].resize(st[j].legs.size());
        for (size_t li = 0; li < st[j].legs.size(); ++li) {
            FrustumN fr;
            fr.c0 = st[j].legs[li].axis;
            fr.c1 = st[j].legs[li].axis;
            fr.z0 = st[j].leg_bottom;
            fr.z1 = st[j].leg_top;
            fr.r0 = fr.r1 = st[j].leg_radius;
            fr.sides = cfg.frustum_sides;
            Cell c2;
            c2.shape = fr;
            c2.stage = j;
            c2.kind = CellKind::Leg;
            c2.leg_i = st[j].legs[li].i;
            leg_cell[j][li] = int(dom.cells.size());
            dom.cells.push_back(std::move(c2));
        }
    }
    for (int j = 1; j <= J; ++j) {
        std::vector<std::vector<Vec2>> top_holes, bottom_holes;
        if (j > 1)
            for (size_t li = 0; li < st[j - 1].legs.size(); ++li) {
                const FrustumN& fr = std::get<FrustumN>(dom.cells[leg_cell[j - 1][li]].shape);
                top_holes.push_back(fr.ring(fr.z0));
            }
        if (j < J)
            for (size_t li = 0; li < st[j].legs.size(); ++li) {
                const FrustumN& fr = std::get<FrustumN>(dom.cells[leg_cell[j][li]].shape);
                bottom_holes.push_back(fr.ring(fr.z1));
            }
        add_box_facets(dom, box_cell[j], boxes[j], top_holes, bottom_holes);
        if (j == J) continue;
        for (size_t li = 0; li < st[j].legs.size(); ++li) {
            const FrustumN& fr = std::get<FrustumN>(dom.cells[leg_cell[j][li]].shape);
            add_frustum_side_facets(dom, leg_cell[j][li], fr);
            add_iface_poly(dom, box_cell[j], leg_cell[j][li], fr.ring(fr.z1), fr.z1);
            add_iface_poly(dom, leg_cell[j][li], box_cell[j + 1], fr.ring(fr.z0), fr.z0);
        }
    }
    dom.center = {0.0, 0.0, (st[1].y_top + st[1].y_bottom) / 2.0};
    dom.finalize();
    return dom;
}

DomainModel assemble_volumetric_source(const ConstructionConfig& cfg) {
    if (cfg.n != 3)
        throw BuildError("volumetric assembly supports n = 3 only");
    DomainModel dom;
    dom.config = cfg;
    dom.dim = 3;
    int J = cfg.depth;
    std::vector<StageSpec> st(1);
    for (int j = 1; j <= J; ++j) st.push_back(make_stage_spec(cfg, j));

    std::vector<int> box_cell(J + 1);
    std::vector<Box3> boxes(J + 1);
    for (int j = 1; j <= J; ++j) {
        double sc = st[j].src_scale;
        Box3 b;
        b.lo = {-st[j].body_w * sc / 2, -st[j].body_d * sc / 2, st[j].src_y_bottom};
        b.hi = {st[j].body_w * sc / 2, st[j].body_d * sc / 2, st[j].src_y_top};
        boxes[j] = b;
        Cell c;
        c.shape = b;
        c.stage = j;
        c.kind = CellKind::Body;
        box_cell[j] = int(dom.cells.size());
        dom.cells.push_back(std::move(c));
    }

    struct LegPair { int lower, upper; };
    std::vector<std::vector<LegPair>> legs(J);
    for (int j = 1; j < J; ++j) {
        int count = st[j].leg_count;
        for (int i = 1; i <= count; ++i) {
            VolumetricLegLayout lay = volumetric_leg_layout(cfg, j, i);
            const FrustumN& lower = lay.lower;
            const FrustumN& upper = lay.upper;
            double z_waist = lower.z1;
            double z_bot = lower.z0;
            double z_top = upper.z1;
            Cell cl;
            cl.shape = lower;
            cl.stage = j;
            cl.kind = CellKind::LegLower;
            cl.leg_i = i;
            int lci = int(dom.cells.size());
            dom.cells.push_back(std::move(cl));
            Cell cu;
            cu.shape = upper;
            cu.stage = j;
            cu.kind = CellKind::LegUpper;
            cu.leg_i = i;
            int uci = int(dom.cells.size());
            dom.cells.push_back(std::move(cu));
            legs[j].push_back({lci, uci});
            add_frustum_side_facets(dom, lci, lower);
            add_frustum_side_facets(dom, uci, upper);
            add_iface_poly(dom, lci, uci, lower.ring(z_waist), z_waist);
            add_iface_poly(dom, lci, box_cell[j + 1], lower.ring(z_bot), z_bot);
            add_iface_poly(dom, uci, box_cell[j], upper.ring(z_top), z_top);
        }
    }
    for (int j = 1; j <= J; ++j) {
        std::vector<std::vector<Vec2>> top_holes, bottom_holes;
        if (j > 1)
            for (const LegPair& lp : legs[j - 1]) {
                const FrustumN& fr = std::get<FrustumN>(dom.cells[lp.lower].shape);
                top_holes.push_back(fr.ring(fr.z0));
            }
        if (j < J)
            for (const LegPair& lp : legs[j]) {
                const FrustumN& fr = std::get<FrustumN>(dom.cells[lp.upper].shape);
                bottom_holes.push_back(fr.ring(fr.z1));
            }
        add_box_facets(dom, box_cell[j], boxes[j], top_holes, bottom_holes);
    }
    dom.center = {0.0, 0.0, (st[1].src_y_top + st[1].src_y_bottom) / 2.0};
    dom.finalize();
    return dom;
}

}  // namespace

DomainModel domain_from_cells(std::vector<Shape> shapes, Point center) {
    DomainModel dom;
    dom.config.family = Family::UnitSquare;
    dom.dim = std::holds_alternative<ConvexPoly2>(shapes[0]) ? 2 : 3;
    for (size_t i = 0; i < shapes.size(); ++i) {
        Cell c;
        c.shape = std::move(shapes[i]);
        c.stage = 0;
        c.kind = CellKind::Body;
        dom.cells.push_back(std::move(c));
    }
    // Boundary: clip each cell's edges against the other cells. Ad-hoc
    // domains are small, so sampling-based clipping is fine: split each
    // polygon edge at intersections with other cells and keep pieces whose
    // midpoints are not strictly interior to a neighbor.
    if (dom.dim == 2) {
        for (size_t ci = 0; ci < dom.cells.size(); ++ci) {
            const ConvexPoly2& poly = std::get<ConvexPoly2>(dom.cells[ci].shape);
            size_t n = poly.pts.size();
            for (size_t e = 0; e < n; ++e) {
                Vec2 a = poly.pts[e], b = poly.pts[(e + 1) % n];
                // Collect cut parameters against every other cell edge.
                std::vector<double> ts{0.0, 1.0};
                for (size_t cj = 0; cj < dom.cells.size(); ++cj) {
                    if (cj == ci) continue;
                    const ConvexPoly2& q = std::get<ConvexPoly2>(dom.cells[cj].shape);
                    size_t m = q.pts.size();
                    for (size_t f = 0; f < m; ++f) {
                        Vec2 c0 = q.pts[f], c1 = q.pts[(f + 1) % m];
                        Vec2 r = b - a, s = c1 - c0;
                        double den = r.cross(s);
                        if (std::abs(den) < 1e-300) continue;
                        double t = (c0 - a).cross(s) / den;
                        double u = (c0 - a).cross(r) / den;
                        if (t > 0 && t < 1 && u >= 0 && u <= 1) ts.push_back(t);
                    }
                }
                std::sort(ts.begin(), ts.end());
                for (size_t k = 0; k + 1 < ts.size(); ++k) {
                    if (ts[k + 1] - ts[k] < 1e-12) continue;
                    double tm = (ts[k] + ts[k + 1]) / 2;
                    Vec2 mid = a + (b - a) * tm;
                    bool interior = false;
                    for (size_t cj = 0; cj < dom.cells.size() && !interior; ++cj) {
                        if (cj == ci) continue;
                        const ConvexPoly2& q = std::get<ConvexPoly2>(dom.cells[cj].shape);
                        if (q.contains_closed(mid, -1e-12)) interior = true;
                    }
                    if (!interior)
                        add_seg_facet(dom, int(ci), a + (b - a) * ts[k],
                                      a + (b - a) * ts[k + 1]);
                }
            }
        }
        // Interfaces between overlapping cells: segment through the overlap.
        for (size_t ci = 0; ci < dom.cells.size(); ++ci)
            for (size_t cj = ci + 1; cj < dom.cells.size(); ++cj) {
                const ConvexPoly2& p = std::get<ConvexPoly2>(dom.cells[ci].shape);
                const ConvexPoly2& q = std::get<ConvexPoly2>(dom.cells[cj].shape);
                Aabb bi = p.bbox(), bj = q.bbox();
                double x0 = std::max(bi.lo.x, bj.lo.x), x1 = std::min(bi.hi.x, bj.hi.x);
                double y0 = std::max(bi.lo.y, bj.lo.y), y1 = std::min(bi.hi.y, bj.hi.y);
                if (x0 > x1 || y0 > y1) continue;
                Vec2 c{(x0 + x1) / 2, (y0 + y1) / 2};
                if (p.contains_closed(c) && q.contains_closed(c)) {
                    double len = std::max(x1 - x0, y1 - y0);
                    Interface itf;
                    itf.cell_a = int(ci);
                    itf.cell_b = int(cj);
                    itf.patch = {{c.x, c.y, 0}, {c.x, c.y, 0}};
                    itf.measure = len;
                    itf.centroid = {c.x, c.y, 0};
                    dom.interfaces.push_back(itf);
                }
            }
    } else {
        if (shapes.size() > 1)
            throw BuildError("ad-hoc 3D domains support a single box only");
        const Box3& b = std::get<Box3>(dom.cells[0].shape);
        add_box_facets(dom, 0, b, {}, {});
    }
    dom.center = center;
    dom.finalize();
    return dom;
}

VolumetricLegLayout volumetric_leg_layout(const ConstructionConfig& cfg, int j, int i) {
    StageSpec stj = make_stage_spec(cfg, j);
    StageSpec stn = make_stage_spec(cfg, j + 1);
    const bool nd = cfg.family == Family::NDimensional;
    double jj = double(j);
    double gap = stj.src_gap;
    double z_top = stj.src_y_bottom;   // scaled box_j underside
    double z_bot = stn.src_y_top;      // scaled box_{j+1} top
    double z_waist = z_bot + gap / 2.0;
    Vec2 axis = stj.legs[i - 1].axis;
    Vec2 top_c{axis.x * stj.src_scale, axis.y * stj.src_scale};
    Vec2 bot_c{axis.x * stn.src_scale, axis.y * stn.src_scale};
    Vec2 waist_c;
    double waist_r;
    if (nd) {
        // Arrangement grid in the mid-gap plane: row-major subsquares of an
        // inserted square of side 1/j^2, one per leg.
        int side_cells = 1 << j;
        int r = (i - 1) / side_cells, cdx = (i - 1) % side_cells;
        double side = std::ldexp(1.0, -j) / (jj * jj);
        double half = 0.5 / (jj * jj);
        waist_c = {-half + (cdx + 0.5) * side, -half + (r + 0.5) * side};
        waist_r = side / 2.0;
    } else {
        waist_c = {(top_c.x + bot_c.x) / 2.0, 0.0};
        waist_r = std::pow(2.0, -j * (cfg.s - 1.0)) / (2.0 * jj);
    }
    VolumetricLegLayout lay;
    lay.axis = axis;
    lay.radius = stj.leg_radius;
    lay.z_top = stj.leg_top;
    lay.z_bottom = stj.leg_bottom;
    lay.lower.c0 = bot_c;
    lay.lower.z0 = z_bot;
    lay.lower.r0 = stj.leg_radius * stn.src_scale;
    lay.lower.c1 = waist_c;
    lay.lower.z1 = z_waist;
    lay.lower.r1 = waist_r;
    lay.lower.sides = cfg.frustum_sides;
    lay.upper.c0 = waist_c;
    lay.upper.z0 = z_waist;
    lay.upper.r0 = waist_r;
    lay.upper.c1 = top_c;
    lay.upper.z1 = z_top;
    lay.upper.r1 = stj.leg_radius * stj.src_scale;
    lay.upper.sides = cfg.frustum_sides;
    return lay;
}

DomainModel assemble_domain(const ConstructionConfig& cfg) {
    cfg.validate();
    if (cfg.family == Family::UnitSquare) {
        std::vector<Shape> cells{make_rect(0, 0, 1, 1)};
        return domain_from_cells(std::move(cells), {0.5, 0.5, 0.0});
    }
    const bool planar = cfg.family == Family::Planar2John ||
                        (cfg.family == Family::SJohnGH && cfg.n == 2);
    if (planar)
        return cfg.side == Side::Target ? assemble_planar_target(cfg)
                                        : assemble_planar_source(cfg);
    return cfg.side == Side::Target ? assemble_volumetric_target(cfg)
                                    : assemble_volumetric_source(cfg);
}

// ---------------------------------------------------------------------------
// john_curve
// ---------------------------------------------------------------------------

namespace {

void push_vertex(std::vector<Point>& pts, const Point& p) {
    if (!pts.empty()) {
        const Point& q = pts.back();
        if (std::abs(p.x - q.x) + std::abs(p.y - q.y) + std::abs(p.z - q.z) < 1e-300)
            return;
    }
    pts.push_back(p);
}

std::vector<Point> planar_target_route(const DomainModel& dom, const Point& x, int cell) {
    const ConstructionConfig& cfg = dom.config;
    const Cell& c = dom.cells[cell];
    int stage = c.stage;
    std::vector<StageSpec> st;
    for (int k = 0; k <= stage; ++k) st.push_back(make_stage_spec(cfg, k));
    auto core = [&](int k) { return (st[k].y_top + st[k].y_bottom) / 2.0; };

    std::vector<Point> pts{x};
    double cur_x;
    if (c.kind == CellKind::Leg) {
        Aabb b = shape_bbox(c.shape);
        cur_x = (b.lo.x + b.hi.x) / 2.0;
        push_vertex(pts, {cur_x, x.y, 0});
        push_vertex(pts, {cur_x, core(stage), 0});
    } else {
        cur_x = x.x;
        push_vertex(pts, {cur_x, core(stage), 0});
    }
    for (int k = stage; k >= 1; --k) {
        // Nearest leg axis of the stage above.
        double best = kInf, axis = 0;
        for (const LegPlacement& lp : st[k - 1].legs) {
            double a = lp.left + st[k - 1].leg_width / 2.0;
            if (std::abs(a - cur_x) < best) {
                best = std::abs(a - cur_x);
                axis = a;
            }
        }
        push_vertex(pts, {axis, core(k), 0});
        push_vertex(pts, {axis, core(k - 1), 0});
        cur_x = axis;
    }
    push_vertex(pts, dom.center);
    return pts;
}

std::vector<Point> volumetric_target_route(const DomainModel& dom, const Point& x, int cell) {
    const ConstructionConfig& cfg = dom.config;
    const Cell& c = dom.cells[cell];
    int stage = c.stage;
    std::vector<StageSpec> st(1);
    for (int k = 1; k <= stage; ++k) st.push_back(make_stage_spec(cfg, k));
    auto core = [&](int k) { return (st[k].y_top + st[k].y_bottom) / 2.0; };

    std::vector<Point> pts{x};
    double cur_x;
    if (c.kind == CellKind::Leg) {
        const FrustumN& fr = std::get<FrustumN>(c.shape);
        Vec2 a = fr.center_at(std::clamp(x.z, fr.z0, fr.z1));
        push_vertex(pts, {a.x, a.y, x.z});
        push_vertex(pts, {a.x, a.y, core(stage)});
        cur_x = a.x;
    } else {
        push_vertex(pts, {x.x, x.y, core(stage)});
        push_vertex(pts, {x.x, 0.0, core(stage)});
        cur_x = x.x;
    }
    for (int k = stage; k >= 2; --k) {
        double best = kInf, axis = 0;
        for (const LegPlacement& lp : st[k - 1].legs) {
            if (std::abs(lp.axis.x - cur_x) < best) {
                best = std::abs(lp.axis.x - cur_x);
                axis = lp.axis.x;
            }
        }
        push_vertex(pts, {axis, 0.0, core(k)});
        push_vertex(pts, {axis, 0.0, core(k - 1)});
        cur_x = axis;
    }
    push_vertex(pts, dom.center);
    return pts;
}

std::vector<Point> cell_route(const DomainModel& dom, const Point& x, int from) {
    int to = dom.find_cell(dom.center);
    if (to < 0) throw BuildError("john_curve: center is outside the domain");
    std::vector<int> parent(dom.cells.size(), -2);
    std::deque<int> queue{from};
    parent[from] = -1;
    while (!queue.empty()) {
        int c = queue.front();
        queue.pop_front();
        if (c == to) break;
        for (int nb : dom.cell_neighbors(c))
            if (parent[nb] == -2) {
                parent[nb] = c;
                queue.push_back(nb);
            }
    }
    if (parent[to] == -2) throw BuildError("john_curve: no cell route to the center");
    std::vector<int> chain{to};
    while (parent[chain.back()] >= 0) chain.push_back(parent[chain.back()]);
    std::reverse(chain.begin(), chain.end());  // from -> to
    std::vector<Point> pts{x};
    for (size_t k = 0; k + 1 < chain.size(); ++k) {
        // Interface centroid between consecutive cells.
        for (const Interface& itf : dom.interfaces) {
            if ((itf.cell_a == chain[k] && itf.cell_b == chain[k + 1]) ||
                (itf.cell_b == chain[k] && itf.cell_a == chain[k + 1])) {
                push_vertex(pts, itf.centroid);
                break;
            }
        }
    }
    push_vertex(pts, dom.center);
    return pts;
}

}  // namespace

JohnCurve john_curve(const DomainModel& dom, const Point& x) {
    int cell = dom.find_cell(x);
    if (cell < 0 || !dom.contains(x))
        throw QueryError("john_curve: point is not inside the domain");

    std::vector<Point> pts;
    if (dist(x, dom.center) < 1e-300) {
        pts = {x};
    } else if (dom.cells.size() == 1) {
        pts = {x, dom.center};
    } else if (dom.config.side == Side::Target &&
               dom.config.family != Family::UnitSquare) {
        const bool planar = dom.dim == 2;
        pts = planar ? planar_target_route(dom, x, cell)
                     : volumetric_target_route(dom, x, cell);
    } else {
        pts = cell_route(dom, x, cell);
    }

    JohnCurve jc;
    jc.polyline = std::move(pts);
    jc.clearance.resize(jc.polyline.size());
    jc.cum_length.resize(jc.polyline.size());
    double acc = 0.0;
    for (size_t k = 0; k < jc.polyline.size(); ++k) {
        jc.clearance[k] = dom.boundary_distance_unchecked(jc.polyline[k]);
        if (k > 0) acc += dist(jc.polyline[k - 1], jc.polyline[k]);
        jc.cum_length[k] = acc;
    }
    return jc;
}

}  // namespace qclab
