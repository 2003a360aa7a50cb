#pragma once

#include "qclab/domain.hpp"

namespace qclab {

struct GraphOptions {
    double resolution = 4;  // nodes per local feature size
    int deep_stage = 7;     // stages from here on get lean per-cell budgets
};

struct GraphStats {
    long nodes = 0;
    long edges = 0;
    double min_clearance = kInf;
};

// Multi-resolution weighted graph over a DomainModel. Nodes are laid out
// per cell (lattices in boxes, axial chains with rings in frusta), plus
// portal nodes on every cell interface. All edges lie inside single closed
// convex cells, so edge validity holds by construction. Per-cell budgets
// are capped so deep stages contribute roughly constant node counts.
class MetricGraph {
  public:
    const DomainModel* dom = nullptr;
    GraphOptions opts;
    std::vector<Point> pos;
    std::vector<double> clearance;
    std::vector<int> node_cell;  // owning cell (portal nodes: one of the two)
    std::vector<int> head;       // CSR offsets, size nodes+1
    std::vector<int> to;
    std::vector<double> elen;
    std::vector<double> qhw;
    GraphStats stats;

    int snap(const Point& p, double* snap_dist = nullptr) const;
    int stage_of_node(int v) const { return dom->cells[node_cell[v]].stage; }

    Bvh node_bvh;  // point tree for snapping
};

MetricGraph build_graph(const DomainModel& dom, const GraphOptions& opts);

struct PathPolyline {
    std::vector<Point> vertices;
    double euclid_length = 0;
    double qh_weight = 0;
    double diameter() const;
};

struct DistResult {
    double value = 0;
    double snap_x = 0, snap_y = 0;  // snap distances of the two endpoints
};

struct IntervalResult {
    double lower = 0, upper = 0;
    double snap_x = 0, snap_y = 0;
};

DistResult internal_distance(const MetricGraph& g, const Point& x, const Point& y);
PathPolyline internal_path(const MetricGraph& g, const Point& x, const Point& y);
DistResult qh_distance(const MetricGraph& g, const Point& x, const Point& y);
PathPolyline qh_geodesic(const MetricGraph& g, const Point& x, const Point& y);
IntervalResult diameter_distance(const MetricGraph& g, const Point& x, const Point& y);
double qh_diameter(const MetricGraph& g, const Point& x, const Point& y);

// Single-source quasihyperbolic distances to every node.
std::vector<double> qh_from(const MetricGraph& g, const Point& x0);

}  // namespace qclab
