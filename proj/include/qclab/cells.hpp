#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "qclab/core.hpp"

namespace qclab {

// ---------------------------------------------------------------------------
// Convex cell shapes. Planar cells live in the z = 0 plane.
// ---------------------------------------------------------------------------

struct ConvexPoly2 {
    std::vector<Vec2> pts;  // CCW

    bool contains_closed(const Vec2& p, double tol = 0.0) const;
    Aabb bbox() const;
    Vec2 centroid() const;
    double min_feature() const;  // smallest edge length / width proxy
};

ConvexPoly2 make_rect(double x0, double y0, double x1, double y1);

struct Box3 {
    Point lo, hi;

    bool contains_closed(const Point& p, double tol = 0.0) const;
    Aabb bbox() const { return {lo, hi}; }
    double min_feature() const {
        return std::min({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
    }
};

// Hull of two horizontal regular N-gons with aligned vertex directions.
// r0 == r1 gives a prism (cylinder approximation); c0 != c1 an oblique
// frustum. Side quads of aligned N-gons are planar, so membership reduces
// to per-slice polygon tests and facets stay flat.
struct FrustumN {
    Vec2 c0; double z0 = 0.0; double r0 = 0.0;  // lower disk
    Vec2 c1; double z1 = 0.0; double r1 = 0.0;  // upper disk
    int sides = 32;

    bool contains_closed(const Point& p, double tol = 0.0) const;
    Aabb bbox() const;
    Vec2 center_at(double z) const;
    double radius_at(double z) const;   // circumradius of the slice N-gon
    double apothem_at(double z) const;  // inscribed radius of the slice
    double min_feature() const;
    std::vector<Vec2> ring(double z) const;  // slice N-gon vertices
};

using Shape = std::variant<ConvexPoly2, Box3, FrustumN>;

bool shape_contains(const Shape& s, const Point& p, double tol = 0.0);
Aabb shape_bbox(const Shape& s);
double shape_min_feature(const Shape& s);

// ---------------------------------------------------------------------------
// Boundary facets. 2D facets are segments (a == b allowed never). 3D facets
// are planar convex polygons, optionally with convex polygonal holes (leg
// openings on box faces).
// ---------------------------------------------------------------------------

struct FacetHole {
    std::vector<Vec2> rim;  // CCW, in facet plane coordinates (see Facet)
};

struct Facet {
    // 2D: poly has 2 points (segment), normal unused.
    // 3D: poly is a convex CCW polygon; holes cut out of it.
    std::vector<Point> poly;
    std::vector<FacetHole> holes;  // only for horizontal 3D faces
    bool horizontal = false;       // true: plane z = poly[0].z, holes allowed
    int cell = -1;                 // owning cell index

    // Hole lookup index: centers sorted by x with the largest radius, so a
    // point query only tests rims inside its x-window.
    std::vector<std::pair<double, int>> hole_order;
    double hole_reach = 0;
    void index_holes();

    Aabb bbox() const;
};

double point_segment_dist2(const Vec2& p, const Vec2& a, const Vec2& b);
double facet_distance(const Facet& f, const Point& p, int dim);

// ---------------------------------------------------------------------------
// Bounding-volume tree for nearest-facet and point-location queries.
// ---------------------------------------------------------------------------

class Bvh {
  public:
    void build(std::vector<Aabb> boxes);
    bool empty() const { return nodes_.empty(); }

    // Indices of items whose box contains p (within pad).
    void containing(const Point& p, double pad, std::vector<int>& out) const;

    // Indices of items whose box lies within distance r of p.
    void within(const Point& p, double r, std::vector<int>& out) const;

    // Branch-and-bound nearest distance; dist(i, p) must return the exact
    // distance from p to item i.
    double nearest(const Point& p,
                   const std::function<double(int, const Point&)>& dist) const;

  private:
    struct Node {
        Aabb box;
        int left = -1, right = -1;  // children, or
        int begin = 0, end = 0;     // leaf range into order_
    };
    int build_rec(int begin, int end);

    std::vector<Aabb> boxes_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace qclab
