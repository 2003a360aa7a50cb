#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "qclab/cells.hpp"
#include "qclab/legmap.hpp"

namespace qclab {

struct ConstructionConfig {
    Family family = Family::Planar2John;
    Side side = Side::Target;
    int n = 2;
    double s = 2.0;
    int depth = 10;          // truncation J
    int frustum_sides = 32;  // N-gon resolution for cylinders/frusta

    void validate() const;  // throws ConfigError
    std::string describe() const;
};

struct LegPlacement {
    int i = 0;        // labeled index (1-based)
    bool mirror = false;
    double left = 0;  // 2D: left x of the leg rectangle
    Vec2 axis{};      // 3D: axis position at the upper attachment
};

struct StageSpec {
    int j = 0;
    Family family = Family::Planar2John;
    int n = 2;
    double s = 2.0;

    // Stated stage parameters (planar families).
    double a = 0, b = 0, c = 0;
    double square_side = 0;

    // Body extents: x, y(depth, 3D only), vertical.
    double body_w = 1, body_d = 0, body_h = 0;

    double leg_width = 0;   // 2D
    double leg_radius = 0;  // 3D
    double leg_height = 0;
    int leg_count = 0;      // total legs below this stage's body
    int labeled_count = 0;

    // Target-side vertical placement (stages descend; stage-0/1 top at 0).
    double y_top = 0, y_bottom = 0;        // body span
    double leg_top = 0, leg_bottom = 0;    // leg strip span

    std::vector<LegPlacement> legs;
    std::vector<std::array<double, 2>> removed;  // labeled removed blocks, x-ranges

    // Source-side placement.
    double src_scale = 1;
    double src_gap = 0;
    double src_y_top = 0, src_y_bottom = 0;
};

enum class CellKind { Body, Leg, LegLower, LegUpper };

struct Cell {
    Shape shape;
    int stage = 0;
    CellKind kind = CellKind::Body;
    int leg_i = 0;       // labeled leg index (1-based), 0 for bodies
    bool mirror = false;
};

struct Interface {
    int cell_a = -1, cell_b = -1;
    std::vector<Point> patch;  // 2D: 2-point segment; 3D: horizontal polygon
    double measure = 0;
    Point centroid{};
};

struct JohnCurve {
    std::vector<Point> polyline;
    std::vector<double> clearance;
    std::vector<double> cum_length;
    double length() const { return cum_length.empty() ? 0.0 : cum_length.back(); }
};

class DomainModel {
  public:
    ConstructionConfig config;
    int dim = 2;
    std::vector<Cell> cells;
    std::vector<Interface> interfaces;
    std::vector<Facet> boundary;
    Aabb bbox;
    Point center{};  // the John center x_0
    double min_feature = 0;

    bool contains(const Point& p) const;
    double boundary_distance(const Point& p) const;  // throws QueryError outside
    double boundary_distance_unchecked(const Point& p) const;
    int find_cell(const Point& p) const;  // -1 if outside every closed cell
    const std::vector<int>& cell_neighbors(int cell) const;

    void finalize();  // builds search structures; called by assemblers

  private:
    Bvh cell_bvh_;
    Bvh facet_bvh_;
    std::vector<std::vector<int>> adjacency_;
    mutable std::vector<int> scratch_;
};

StageSpec make_stage_spec(const ConstructionConfig& config, int j);
DomainModel assemble_domain(const ConstructionConfig& config);

// Source-side leg geometry of the volumetric families: a double cone made of
// two frusta meeting at a waist disk in the mid-gap plane. Shared between
// the domain assembler and the map assembler so both see identical numbers.
struct VolumetricLegLayout {
    FrustumN lower, upper;   // source cells (lower: box below -> waist)
    Vec2 axis{};             // target cylinder axis
    double radius = 0;       // target cylinder radius
    double z_top = 0, z_bottom = 0;  // target cylinder span
};
VolumetricLegLayout volumetric_leg_layout(const ConstructionConfig& cfg, int j, int i);

// Single-box and ad-hoc domains for smoke tests and oracles.
DomainModel domain_from_cells(std::vector<Shape> shapes, Point center);

JohnCurve john_curve(const DomainModel& dom, const Point& x);

}  // namespace qclab
