#include "qclab/cells.hpp"

#include <algorithm>
#include <numeric>

namespace qclab {

// ---------------------------------------------------------------------------
// ConvexPoly2
// ---------------------------------------------------------------------------

bool ConvexPoly2::contains_closed(const Vec2& p, double tol) const {
    size_t n = pts.size();
    for (size_t i = 0; i < n; ++i) {
        Vec2 a = pts[i], b = pts[(i + 1) % n];
        if ((b - a).cross(p - a) < -tol) return false;
    }
    return true;
}

Aabb ConvexPoly2::bbox() const {
    Aabb box;
    for (const Vec2& p : pts) box.expand({p.x, p.y, 0.0});
    return box;
}

Vec2 ConvexPoly2::centroid() const {
    Vec2 c{0, 0};
    for (const Vec2& p : pts) c = c + p;
    return c * (1.0 / double(pts.size()));
}

double ConvexPoly2::min_feature() const {
    // Width proxy: smallest distance from the centroid to an edge, doubled.
    Vec2 c = centroid();
    double best = kInf;
    size_t n = pts.size();
    for (size_t i = 0; i < n; ++i) {
        Vec2 a = pts[i], b = pts[(i + 1) % n];
        double len = (b - a).norm();
        if (len < 1e-300) continue;
        best = std::min(best, std::abs((b - a).cross(c - a)) / len);
    }
    return 2.0 * best;
}

ConvexPoly2 make_rect(double x0, double y0, double x1, double y1) {
    return ConvexPoly2{{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}};
}

// ---------------------------------------------------------------------------
// Box3
// ---------------------------------------------------------------------------

bool Box3::contains_closed(const Point& p, double tol) const {
    return p.x >= lo.x - tol && p.x <= hi.x + tol && p.y >= lo.y - tol &&
           p.y <= hi.y + tol && p.z >= lo.z - tol && p.z <= hi.z + tol;
}

// ---------------------------------------------------------------------------
// FrustumN
// ---------------------------------------------------------------------------

Vec2 FrustumN::center_at(double z) const {
    double t = (z - z0) / (z1 - z0);
    return c0 + (c1 - c0) * t;
}

double FrustumN::radius_at(double z) const {
    double t = (z - z0) / (z1 - z0);
    return r0 + (r1 - r0) * t;
}

double FrustumN::apothem_at(double z) const {
    return radius_at(z) * std::cos(M_PI / sides);
}

bool FrustumN::contains_closed(const Point& p, double tol) const {
    if (p.z < z0 - tol || p.z > z1 + tol) return false;
    double z = std::clamp(p.z, z0, z1);
    Vec2 c = center_at(z);
    double r = radius_at(z);
    Vec2 d = Vec2{p.x, p.y} - c;
    // Inside the slice N-gon: dot with each mid-edge normal at most apothem.
    double apothem = r * std::cos(M_PI / sides);
    if (d.norm() <= apothem + tol) return true;  // fast accept
    if (d.norm() > r + tol) return false;        // fast reject
    for (int k = 0; k < sides; ++k) {
        double ang = 2.0 * M_PI * (k + 0.5) / sides;
        Vec2 n{std::cos(ang), std::sin(ang)};
        if (d.dot(n) > apothem + tol) return false;
    }
    return true;
}

Aabb FrustumN::bbox() const {
    Aabb box;
    box.expand({c0.x - r0, c0.y - r0, z0});
    box.expand({c0.x + r0, c0.y + r0, z0});
    box.expand({c1.x - r1, c1.y - r1, z1});
    box.expand({c1.x + r1, c1.y + r1, z1});
    return box;
}

double FrustumN::min_feature() const {
    return std::min({2.0 * std::min(r0, r1) * std::cos(M_PI / sides), z1 - z0});
}

std::vector<Vec2> FrustumN::ring(double z) const {
    Vec2 c = center_at(z);
    double r = radius_at(z);
    std::vector<Vec2> out(sides);
    for (int k = 0; k < sides; ++k) {
        double ang = 2.0 * M_PI * k / sides;
        out[k] = {c.x + r * std::cos(ang), c.y + r * std::sin(ang)};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape dispatch
// ---------------------------------------------------------------------------

bool shape_contains(const Shape& s, const Point& p, double tol) {
    return std::visit(
        [&](const auto& sh) -> bool {
            using T = std::decay_t<decltype(sh)>;
            if constexpr (std::is_same_v<T, ConvexPoly2>)
                return sh.contains_closed({p.x, p.y}, tol);
            else
                return sh.contains_closed(p, tol);
        },
        s);
}

Aabb shape_bbox(const Shape& s) {
    return std::visit([](const auto& sh) { return sh.bbox(); }, s);
}

double shape_min_feature(const Shape& s) {
    return std::visit([](const auto& sh) { return sh.min_feature(); }, s);
}

// ---------------------------------------------------------------------------
// Facets
// ---------------------------------------------------------------------------

Aabb Facet::bbox() const {
    Aabb box;
    for (const Point& p : poly) box.expand(p);
    return box;
}

double point_segment_dist2(const Vec2& p, const Vec2& a, const Vec2& b) {
    Vec2 ab = b - a;
    double len2 = ab.dot(ab);
    double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    Vec2 q = a + ab * t;
    Vec2 d = p - q;
    return d.dot(d);
}

namespace {

double poly2_boundary_dist2(const Vec2& p, const std::vector<Vec2>& poly) {
    double best = kInf;
    size_t n = poly.size();
    for (size_t i = 0; i < n; ++i)
        best = std::min(best, point_segment_dist2(p, poly[i], poly[(i + 1) % n]));
    return best;
}

bool poly2_contains(const Vec2& p, const std::vector<Vec2>& poly) {
    size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        Vec2 a = poly[i], b = poly[(i + 1) % n];
        if ((b - a).cross(p - a) < 0) return false;
    }
    return true;
}

}  // namespace

void Facet::index_holes() {
    hole_order.clear();
    hole_reach = 0;
    for (size_t h = 0; h < holes.size(); ++h) {
        Vec2 c{0, 0};
        for (const Vec2& v : holes[h].rim) c = c + v;
        c = c * (1.0 / double(holes[h].rim.size()));
        double r = 0;
        for (const Vec2& v : holes[h].rim) r = std::max(r, (v - c).norm());
        hole_order.push_back({c.x, int(h)});
        hole_reach = std::max(hole_reach, r);
    }
    std::sort(hole_order.begin(), hole_order.end());
}

double facet_distance(const Facet& f, const Point& p, int dim) {
    if (dim == 2) {
        return std::sqrt(point_segment_dist2({p.x, p.y}, {f.poly[0].x, f.poly[0].y},
                                             {f.poly[1].x, f.poly[1].y}));
    }
    if (f.horizontal) {
        double zf = f.poly[0].z;
        double dz = p.z - zf;
        Vec2 q{p.x, p.y};
        std::vector<Vec2> outer(f.poly.size());
        for (size_t i = 0; i < f.poly.size(); ++i) outer[i] = {f.poly[i].x, f.poly[i].y};
        if (!poly2_contains(q, outer))
            return std::sqrt(poly2_boundary_dist2(q, outer) + dz * dz);
        if (!f.hole_order.empty()) {
            auto lo = std::lower_bound(f.hole_order.begin(), f.hole_order.end(),
                                       std::make_pair(q.x - f.hole_reach * 1.01, -1));
            for (auto it = lo; it != f.hole_order.end() && it->first <= q.x + f.hole_reach * 1.01;
                 ++it) {
                const FacetHole& h = f.holes[it->second];
                if (poly2_contains(q, h.rim))
                    return std::sqrt(poly2_boundary_dist2(q, h.rim) + dz * dz);
            }
        }
        return std::abs(dz);
    }
    // General planar convex polygon (frustum side quads, vertical box faces).
    Vec3 n = (f.poly[1] - f.poly[0]).cross(f.poly[2] - f.poly[0]);
    double nn = n.norm();
    if (nn < 1e-300) return kInf;
    n = n * (1.0 / nn);
    double off = (p - f.poly[0]).dot(n);
    Point proj = p - n * off;
    // In-plane containment: check against each edge's inward direction.
    bool inside = true;
    size_t m = f.poly.size();
    for (size_t i = 0; i < m && inside; ++i) {
        Vec3 e = f.poly[(i + 1) % m] - f.poly[i];
        Vec3 inward = n.cross(e);
        if ((proj - f.poly[i]).dot(inward) < 0) inside = false;
    }
    if (inside) return std::abs(off);
    double best2 = kInf;
    for (size_t i = 0; i < m; ++i) {
        const Point& a = f.poly[i];
        const Point& b = f.poly[(i + 1) % m];
        Vec3 ab = b - a;
        double len2 = ab.dot(ab);
        double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
        Point q = a + ab * t;
        Vec3 d = p - q;
        best2 = std::min(best2, d.dot(d));
    }
    return std::sqrt(best2);
}

// ---------------------------------------------------------------------------
// Bvh
// ---------------------------------------------------------------------------

void Bvh::build(std::vector<Aabb> boxes) {
    boxes_ = std::move(boxes);
    order_.resize(boxes_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.clear();
    nodes_.reserve(boxes_.size() * 2 + 1);
    if (!boxes_.empty()) root_ = build_rec(0, int(boxes_.size()));
}

int Bvh::build_rec(int begin, int end) {
    Node nd;
    for (int i = begin; i < end; ++i) nd.box.merge(boxes_[order_[i]]);
    int idx = int(nodes_.size());
    nodes_.push_back(nd);
    if (end - begin <= 4) {
        nodes_[idx].begin = begin;
        nodes_[idx].end = end;
        return idx;
    }
    Point ext = nd.box.hi - nd.box.lo;
    int axis = 0;
    if (ext.y > ext.x) axis = 1;
    if (ext.z > (axis == 0 ? ext.x : ext.y)) axis = 2;
    int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](int a, int b) {
                         Point ca = boxes_[a].center(), cb = boxes_[b].center();
                         return axis == 0 ? ca.x < cb.x : axis == 1 ? ca.y < cb.y : ca.z < cb.z;
                     });
    int l = build_rec(begin, mid);
    int r = build_rec(mid, end);
    nodes_[idx].left = l;
    nodes_[idx].right = r;
    return idx;
}

void Bvh::within(const Point& p, double r, std::vector<int>& out) const {
    out.clear();
    if (root_ < 0) return;
    double r2 = r * r;
    std::vector<int> stack{root_};
    while (!stack.empty()) {
        int ni = stack.back();
        stack.pop_back();
        const Node& nd = nodes_[ni];
        if (nd.box.dist2(p) > r2) continue;
        if (nd.left < 0) {
            for (int i = nd.begin; i < nd.end; ++i)
                if (boxes_[order_[i]].dist2(p) <= r2) out.push_back(order_[i]);
        } else {
            stack.push_back(nd.left);
            stack.push_back(nd.right);
        }
    }
}

void Bvh::containing(const Point& p, double pad, std::vector<int>& out) const {
    out.clear();
    if (root_ < 0) return;
    std::vector<int> stack{root_};
    while (!stack.empty()) {
        int ni = stack.back();
        stack.pop_back();
        const Node& nd = nodes_[ni];
        if (!nd.box.contains(p, pad)) continue;
        if (nd.left < 0) {
            for (int i = nd.begin; i < nd.end; ++i)
                if (boxes_[order_[i]].contains(p, pad)) out.push_back(order_[i]);
        } else {
            stack.push_back(nd.left);
            stack.push_back(nd.right);
        }
    }
}

double Bvh::nearest(const Point& p,
                    const std::function<double(int, const Point&)>& dist) const {
    if (root_ < 0) return kInf;
    double best = kInf;
    // Depth-first with box lower bounds; nearer child first.
    struct Entry { int node; double bound; };
    std::vector<Entry> stack{{root_, 0.0}};
    while (!stack.empty()) {
        Entry e = stack.back();
        stack.pop_back();
        if (e.bound >= best) continue;
        const Node& nd = nodes_[e.node];
        if (nd.left < 0) {
            for (int i = nd.begin; i < nd.end; ++i)
                best = std::min(best, dist(order_[i], p));
        } else {
            double bl = std::sqrt(nodes_[nd.left].box.dist2(p));
            double br = std::sqrt(nodes_[nd.right].box.dist2(p));
            if (bl < br) {
                if (br < best) stack.push_back({nd.right, br});
                if (bl < best) stack.push_back({nd.left, bl});
            } else {
                if (bl < best) stack.push_back({nd.left, bl});
                if (br < best) stack.push_back({nd.right, br});
            }
        }
    }
    return best;
}

}  // namespace qclab
