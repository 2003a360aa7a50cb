#include "qclab/metric.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <queue>

namespace qclab {

namespace {

int odd_clamp(double v, int cap) {
    int n = int(std::lround(v));
    n = std::clamp(n, 1, cap);
    if (n % 2 == 0) --n;
    return std::max(n, 1);
}

struct Builder {
    const DomainModel& dom;
    const GraphOptions& opts;
    std::vector<Point> pos;
    std::vector<int> node_cell;
    std::vector<std::pair<int, int>> cell_range;
    std::vector<std::pair<int, int>> edges;

    explicit Builder(const DomainModel& d, const GraphOptions& o) : dom(d), opts(o) {}

    int add_node(const Point& p, int cell) {
        pos.push_back(p);
        node_cell.push_back(cell);
        return int(pos.size()) - 1;
    }
    void add_edge(int a, int b) {
        if (a != b) edges.push_back({a, b});
    }

    bool deep(const Cell& c) const {
        return c.stage >= opts.deep_stage && c.kind != CellKind::Body;
    }

    void lattice_rect(int ci, const Aabb& bb, const Cell& cell) {
        double fx = bb.hi.x - bb.lo.x, fy = bb.hi.y - bb.lo.y;
        double feature = std::min(fx, fy);
        double h = feature / opts.resolution;
        int cap = int(12 * opts.resolution);
        int nx = odd_clamp(fx / h, cap);
        int ny = odd_clamp(fy / h, cap);
        if (deep(cell)) {
            if (fx < fy) nx = 1; else ny = 1;
            (fx < fy ? ny : nx) = odd_clamp((fx < fy ? fy : fx) / h, int(4 * opts.resolution));
        } else if (cell.stage >= opts.deep_stage) {
            if (fx < fy) nx = std::min(nx, 3); else ny = std::min(ny, 3);
        }
        const ConvexPoly2* poly = std::get_if<ConvexPoly2>(&cell.shape);
        auto at = [&](int a, int b) {
            return Point{bb.lo.x + (a + 0.5) * fx / nx, bb.lo.y + (b + 0.5) * fy / ny, 0};
        };
        std::vector<int> idx(size_t(nx) * ny, -1);
        for (int a = 0; a < nx; ++a)
            for (int b = 0; b < ny; ++b) {
                Point p = at(a, b);
                if (poly && !poly->contains_closed({p.x, p.y}, -1e-14 * (feature + 1)))
                    continue;
                idx[size_t(a) * ny + b] = add_node(p, ci);
            }
        for (int a = 0; a < nx; ++a)
            for (int b = 0; b < ny; ++b) {
                int v = idx[size_t(a) * ny + b];
                if (v < 0) continue;
                const int dxs[4] = {1, 0, 1, 1};
                const int dys[4] = {0, 1, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    int a2 = a + dxs[k], b2 = b + dys[k];
                    if (a2 < 0 || a2 >= nx || b2 < 0 || b2 >= ny) continue;
                    int w = idx[size_t(a2) * ny + b2];
                    if (w >= 0) add_edge(v, w);
                }
            }
        // Medial chain for slanted cells (source-leg trapezoids): a node line
        // from bottom-edge midpoint to top-edge midpoint.
        if (poly && poly->pts.size() == 4) {
            bool slanted = false;
            for (size_t e = 0; e < 4; ++e) {
                Vec2 d = poly->pts[(e + 1) % 4] - poly->pts[e];
                if (std::abs(d.x) > 1e-15 && std::abs(d.y) > 1e-15) slanted = true;
            }
            if (slanted) {
                Vec2 lo2 = (poly->pts[0] + poly->pts[1]) * 0.5;
                Vec2 hi2 = (poly->pts[2] + poly->pts[3]) * 0.5;
                int m = odd_clamp((hi2 - lo2).norm() / h,
                                  deep(cell) ? int(4 * opts.resolution) : cap);
                m = std::max(m, 3);
                int prev = -1;
                for (int k = 0; k < m; ++k) {
                    double t = (k + 0.5) / m;
                    Vec2 q = lo2 + (hi2 - lo2) * t;
                    int v = add_node({q.x, q.y, 0}, ci);
                    if (prev >= 0) add_edge(prev, v);
                    prev = v;
                }
            }
        }
    }

    void lattice_box3(int ci, const Box3& b) {
        double fx = b.hi.x - b.lo.x, fy = b.hi.y - b.lo.y, fz = b.hi.z - b.lo.z;
        double feature = std::min({fx, fy, fz});
        double h = feature / opts.resolution;
        int cap = int(8 * opts.resolution);
        int nx = odd_clamp(fx / h, cap);
        int ny = odd_clamp(fy / h, cap);
        int nz = odd_clamp(fz / h, cap);
        std::vector<int> idx(size_t(nx) * ny * nz);
        for (int a = 0; a < nx; ++a)
            for (int c = 0; c < ny; ++c)
                for (int d = 0; d < nz; ++d)
                    idx[(size_t(a) * ny + c) * nz + d] =
                        add_node({b.lo.x + (a + 0.5) * fx / nx, b.lo.y + (c + 0.5) * fy / ny,
                                  b.lo.z + (d + 0.5) * fz / nz},
                                 ci);
        for (int a = 0; a < nx; ++a)
            for (int c = 0; c < ny; ++c)
                for (int d = 0; d < nz; ++d) {
                    int v = idx[(size_t(a) * ny + c) * nz + d];
                    for (int da = 0; da <= 1; ++da)
                        for (int dc = -1; dc <= 1; ++dc)
                            for (int dd = -1; dd <= 1; ++dd) {
                                if (da == 0 && (dc < 0 || (dc == 0 && dd <= 0))) continue;
                                int a2 = a + da, c2 = c + dc, d2 = d + dd;
                                if (a2 < 0 || a2 >= nx || c2 < 0 || c2 >= ny || d2 < 0 ||
                                    d2 >= nz)
                                    continue;
                                add_edge(v, idx[(size_t(a2) * ny + c2) * nz + d2]);
                            }
                }
    }

    void chain_frustum(int ci, const FrustumN& fr, const Cell& cell) {
        double H = fr.z1 - fr.z0;
        double rmin = std::min(fr.r0, fr.r1);
        double h = std::min(H, 2 * rmin) / opts.resolution;
        int cap = deep(cell) ? int(4 * opts.resolution) : int(12 * opts.resolution);
        int m = odd_clamp(H / h, cap);
        bool rings = !deep(cell);
        int prev = -1;
        std::vector<int> prev_ring(4, -1);
        for (int k = 0; k < m; ++k) {
            double z = fr.z0 + (k + 0.5) * H / m;
            Vec2 c = fr.center_at(z);
            int v = add_node({c.x, c.y, z}, ci);
            if (prev >= 0) add_edge(prev, v);
            std::vector<int> ring(4, -1);
            if (rings) {
                double rr = 0.45 * fr.apothem_at(z);
                if (rr > 1e-13) {
                    for (int t = 0; t < 4; ++t) {
                        double ang = M_PI / 4 + t * M_PI / 2;
                        int w = add_node({c.x + rr * std::cos(ang), c.y + rr * std::sin(ang), z},
                                         ci);
                        ring[t] = w;
                        add_edge(v, w);
                        if (prev_ring[t] >= 0) add_edge(prev_ring[t], w);
                    }
                }
            }
            prev = v;
            prev_ring = ring;
        }
    }

    void connect_cell_components(int ci) {
        // Any two nodes of a convex cell may be linked directly; stitch
        // whatever the lattice left disconnected.
        int b = cell_range[ci].first, e = cell_range[ci].second;
        int n = e - b;
        if (n <= 1) return;
        std::vector<int> comp(n);
        std::iota(comp.begin(), comp.end(), 0);
        std::function<int(int)> find = [&](int v) {
            while (comp[v] != v) v = comp[v] = comp[comp[v]];
            return v;
        };
        for (const auto& [u, v] : edges)
            if (u >= b && u < e && v >= b && v < e) comp[find(u - b)] = find(v - b);
        // Link each non-root component to the nearest node outside it.
        for (int round = 0; round < n; ++round) {
            int lead = find(0);
            int off = -1;
            for (int k = 0; k < n; ++k)
                if (find(k) != lead) { off = k; break; }
            if (off < 0) break;
            double best = kInf;
            int bi = -1;
            for (int k = 0; k < n; ++k) {
                if (find(k) == find(off)) continue;
                double d = dist(pos[b + k], pos[b + off]);
                if (d < best) { best = d; bi = k; }
            }
            add_edge(b + off, b + bi);
            comp[find(off)] = find(bi);
        }
    }
};

struct HeapEntry {
    double d;
    int v;
    bool operator>(const HeapEntry& o) const { return d > o.d; }
};

std::vector<double> dijkstra(const MetricGraph& g, int src, const std::vector<double>& w,
                             int stop_at = -1, std::vector<int>* parent = nullptr) {
    std::vector<double> dist(g.pos.size(), kInf);
    if (parent) parent->assign(g.pos.size(), -1);
    std::priority_queue<HeapEntry, std::vector<HeapEntry>, std::greater<>> pq;
    dist[src] = 0;
    pq.push({0, src});
    while (!pq.empty()) {
        auto [d, v] = pq.top();
        pq.pop();
        if (d > dist[v]) continue;
        if (v == stop_at) break;
        for (int e = g.head[v]; e < g.head[v + 1]; ++e) {
            int u = g.to[e];
            double nd = d + w[e];
            if (nd < dist[u]) {
                dist[u] = nd;
                if (parent) (*parent)[u] = v;
                pq.push({nd, u});
            }
        }
    }
    return dist;
}

std::vector<int> extract_path(const std::vector<int>& parent, int src, int dst) {
    std::vector<int> path{dst};
    while (path.back() != src) {
        int p = parent[path.back()];
        if (p < 0) throw QueryError("metric query: nodes are unreachable");
        path.push_back(p);
    }
    std::reverse(path.begin(), path.end());
    return path;
}

// Quadrature of 1/boundary_distance along a segment; composite Simpson with
// panel count driven by segment length over local clearance, because the
// integrand varies fastest near the boundary.
double qh_segment_weight(const DomainModel& dom, const Point& a, const Point& b,
                         double da, double db) {
    double L = dist(a, b);
    if (L == 0) return 0;
    double dmin = std::min(da, db);
    int panels = std::clamp(int(std::ceil(2.0 * L / std::max(dmin, 1e-300))), 1, 24);
    double acc = 0;
    double prev_f = 1.0 / da;
    for (int k = 0; k < panels; ++k) {
        double t1 = double(k + 1) / panels;
        Point pm = a + (b - a) * ((double(k) / panels + t1) / 2);
        Point pe = a + (b - a) * t1;
        double fm = 1.0 / dom.boundary_distance_unchecked(pm);
        double fe = (k == panels - 1) ? 1.0 / db : 1.0 / dom.boundary_distance_unchecked(pe);
        acc += (L / panels) * (prev_f + 4 * fm + fe) / 6.0;
        prev_f = fe;
    }
    return acc;
}

bool segment_inside(const DomainModel& dom, const Point& a, const Point& b, double step) {
    double L = dist(a, b);
    int n = std::clamp(int(std::ceil(L / std::max(step, 1e-14))), 2, 512);
    for (int k = 1; k < n; ++k) {
        Point p = a + (b - a) * (double(k) / n);
        if (dom.find_cell(p) < 0) return false;
    }
    return true;
}

}  // namespace

int MetricGraph::snap(const Point& p, double* snap_dist) const {
    int best = -1;
    double bd = kInf;
    node_bvh.nearest(p, [&](int i, const Point& q) {
        double d = dist(pos[i], q);
        if (d < bd) { bd = d; best = i; }
        return d;
    });
    if (best < 0) throw QueryError("snap: empty graph");
    if (snap_dist) *snap_dist = bd;
    return best;
}

MetricGraph build_graph(const DomainModel& dom, const GraphOptions& opts) {
    if (opts.resolution < 2)
        throw BuildError("metric graph: resolution " + format_double(opts.resolution) +
                         " cannot resolve leg cross-sections (need at least 2); "
                         "thin legs would be undersampled");
    Builder b(dom, opts);
    for (size_t ci = 0; ci < dom.cells.size(); ++ci) {
        int begin = int(b.pos.size());
        const Cell& cell = dom.cells[ci];
        if (const auto* poly = std::get_if<ConvexPoly2>(&cell.shape))
            b.lattice_rect(int(ci), poly->bbox(), cell);
        else if (const auto* box = std::get_if<Box3>(&cell.shape))
            b.lattice_box3(int(ci), *box);
        else
            b.chain_frustum(int(ci), std::get<FrustumN>(cell.shape), cell);
        if (b.pos.size() == size_t(begin)) {
            // Never leave a cell empty; fall back to its reference point.
            Aabb bb = shape_bbox(cell.shape);
            b.add_node(bb.center(), int(ci));
        }
        b.cell_range.push_back({begin, int(b.pos.size())});
        b.connect_cell_components(int(ci));
    }

    // Portals: nodes on each interface patch, linked to the nearest nodes of
    // both incident cells. Segments stay inside the closed convex cells.
    for (const Interface& itf : dom.interfaces) {
        std::vector<Point> pts;
        if (dom.dim == 2 && itf.patch.size() == 2) {
            double len = dist(itf.patch[0], itf.patch[1]);
            double href = std::max(len / 7.0, 1e-14);
            int n = odd_clamp(len / href, 7);
            for (int k = 0; k < n; ++k) {
                double t = (k + 0.5) / n;
                pts.push_back(itf.patch[0] + (itf.patch[1] - itf.patch[0]) * t);
            }
        } else {
            pts.push_back(itf.centroid);
            for (size_t k = 0; k < itf.patch.size(); k += std::max<size_t>(1, itf.patch.size() / 6))
                pts.push_back(itf.centroid + (itf.patch[k] - itf.centroid) * 0.5);
        }
        int prev = -1;
        for (const Point& p : pts) {
            int v = b.add_node(p, itf.cell_a);
            if (prev >= 0) b.add_edge(prev, v);
            prev = v;
            for (int cell : {itf.cell_a, itf.cell_b}) {
                auto [cb, ce] = b.cell_range[cell];
                // Link to the closest few cell nodes.
                std::vector<std::pair<double, int>> near;
                for (int u = cb; u < ce; ++u) near.push_back({dist(b.pos[u], p), u});
                std::partial_sort(near.begin(), near.begin() + std::min<size_t>(3, near.size()),
                                  near.end());
                for (size_t k = 0; k < std::min<size_t>(3, near.size()); ++k)
                    b.add_edge(v, near[k].second);
            }
        }
    }

    MetricGraph g;
    g.dom = &dom;
    g.opts = opts;
    g.pos = std::move(b.pos);
    g.node_cell = std::move(b.node_cell);

    // CSR
    size_t n = g.pos.size();
    std::vector<std::pair<int, int>> sym;
    sym.reserve(b.edges.size() * 2);
    for (auto [u, v] : b.edges) {
        sym.push_back({u, v});
        sym.push_back({v, u});
    }
    std::sort(sym.begin(), sym.end());
    sym.erase(std::unique(sym.begin(), sym.end()), sym.end());
    g.head.assign(n + 1, 0);
    for (auto& e : sym) g.head[e.first + 1]++;
    for (size_t i = 0; i < n; ++i) g.head[i + 1] += g.head[i];
    g.to.resize(sym.size());
    for (size_t i = 0; i < sym.size(); ++i) g.to[i] = sym[i].second;

    g.clearance.resize(n);
    for (size_t i = 0; i < n; ++i) {
        g.clearance[i] = dom.boundary_distance_unchecked(g.pos[i]);
        g.stats.min_clearance = std::min(g.stats.min_clearance, g.clearance[i]);
    }
    if (!(g.stats.min_clearance > 0))
        throw BuildError("metric graph: a node landed on the boundary");

    g.elen.resize(sym.size());
    g.qhw.resize(sym.size());
    {
        std::map<std::pair<int, int>, double> once;
        for (size_t i = 0; i < sym.size(); ++i) {
            int u = sym[i].first, v = sym[i].second;
            g.elen[i] = dist(g.pos[u], g.pos[v]);
            if (u < v)
                once[{u, v}] = g.qhw[i] = qh_segment_weight(dom, g.pos[u], g.pos[v],
                                                            g.clearance[u], g.clearance[v]);
        }
        for (size_t i = 0; i < sym.size(); ++i)
            if (sym[i].first > sym[i].second) g.qhw[i] = once[{sym[i].second, sym[i].first}];
    }

    g.stats.nodes = long(n);
    g.stats.edges = long(sym.size()) / 2;

    // Connectivity.
    std::vector<char> seen(n, 0);
    std::deque<int> queue{0};
    seen[0] = 1;
    size_t reached = 1;
    while (!queue.empty()) {
        int v = queue.front();
        queue.pop_front();
        for (int e = g.head[v]; e < g.head[v + 1]; ++e)
            if (!seen[g.to[e]]) {
                seen[g.to[e]] = 1;
                ++reached;
                queue.push_back(g.to[e]);
            }
    }
    if (reached != n)
        throw BuildError("metric graph: disconnected (" + std::to_string(n - reached) +
                         " of " + std::to_string(n) + " nodes unreachable); increase resolution");

    std::vector<Aabb> boxes(n);
    for (size_t i = 0; i < n; ++i) boxes[i] = Aabb{g.pos[i], g.pos[i]};
    g.node_bvh.build(std::move(boxes));
    return g;
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

double PathPolyline::diameter() const {
    double best = 0;
    for (size_t i = 0; i < vertices.size(); ++i)
        for (size_t j = i + 1; j < vertices.size(); ++j)
            best = std::max(best, dist(vertices[i], vertices[j]));
    return best;
}

namespace {

// Query endpoints enter the search as virtual nodes linked to nearby graph
// nodes (and directly to each other when visible), so distances are taken
// between the exact points. The nearest-node snap distance is still
// reported as the resolution diagnostic.
struct EndLinks {
    Point p;
    double clear = 0;
    int cell = -1;
    double snap = 0;
    std::vector<std::pair<int, double>> links;  // (node, Euclidean length)
};

EndLinks make_links(const MetricGraph& g, const Point& p) {
    const DomainModel& dom = *g.dom;
    EndLinks el;
    el.p = p;
    el.cell = dom.find_cell(p);
    if (el.cell < 0) throw QueryError("metric query: point is not inside the domain");
    el.clear = dom.boundary_distance_unchecked(p);
    int nearest = g.snap(p, &el.snap);
    double radius = std::max(el.snap * 3.0, 1e-14);
    std::vector<int> cand;
    for (int attempt = 0; attempt < 8 && el.links.empty(); ++attempt) {
        g.node_bvh.within(p, radius, cand);
        for (int v : cand) {
            bool ok = g.node_cell[v] == el.cell;
            if (!ok) {
                double feat = std::min(shape_min_feature(dom.cells[el.cell].shape),
                                       shape_min_feature(dom.cells[g.node_cell[v]].shape));
                ok = segment_inside(dom, p, g.pos[v], feat / 4);
            }
            if (ok) el.links.push_back({v, dist(p, g.pos[v])});
        }
        radius *= 2;
    }
    if (el.links.empty()) el.links.push_back({nearest, dist(p, g.pos[nearest])});
    if (el.links.size() > 12) {
        std::partial_sort(el.links.begin(), el.links.begin() + 12, el.links.end(),
                          [](const auto& a, const auto& b) { return a.second < b.second; });
        el.links.resize(12);
    }
    return el;
}

struct VirtualPath {
    double value = kInf;
    std::vector<Point> vertices;  // full polyline including both endpoints
};

// Shortest path between two exact points through the graph, under either
// the Euclidean or the quasihyperbolic weights.
VirtualPath virtual_shortest(const MetricGraph& g, const EndLinks& ex, const EndLinks& ey,
                             bool quasihyperbolic) {
    const DomainModel& dom = *g.dom;
    const std::vector<double>& w = quasihyperbolic ? g.qhw : g.elen;
    auto link_w = [&](const EndLinks& e, int v, double elen) {
        return quasihyperbolic
                   ? qh_segment_weight(dom, e.p, g.pos[v], e.clear, g.clearance[v])
                   : elen;
    };

    VirtualPath out;
    // Direct candidate.
    bool direct_ok = ex.cell == ey.cell;
    if (!direct_ok) {
        double feat = std::min(shape_min_feature(dom.cells[ex.cell].shape),
                               shape_min_feature(dom.cells[ey.cell].shape));
        direct_ok = segment_inside(dom, ex.p, ey.p, feat / 4);
    }
    if (direct_ok) {
        out.value = quasihyperbolic
                        ? qh_segment_weight(dom, ex.p, ey.p, ex.clear, ey.clear)
                        : dist(ex.p, ey.p);
        out.vertices = {ex.p, ey.p};
    }
    if (dist(ex.p, ey.p) == 0.0) {
        out.value = 0;
        out.vertices = {ex.p};
        return out;
    }

    std::vector<double> dist_(g.pos.size(), kInf);
    std::vector<int> parent(g.pos.size(), -1);
    std::priority_queue<HeapEntry, std::vector<HeapEntry>, std::greater<>> pq;
    for (const auto& [v, elen] : ex.links) {
        double lw = link_w(ex, v, elen);
        if (lw < dist_[v]) {
            dist_[v] = lw;
            pq.push({lw, v});
        }
    }
    while (!pq.empty()) {
        auto [d, v] = pq.top();
        pq.pop();
        if (d > dist_[v]) continue;
        for (int e = g.head[v]; e < g.head[v + 1]; ++e) {
            int u = g.to[e];
            double nd = d + w[e];
            if (nd < dist_[u]) {
                dist_[u] = nd;
                parent[u] = v;
                pq.push({nd, u});
            }
        }
    }
    int best_v = -1;
    double best = out.value;
    for (const auto& [v, elen] : ey.links) {
        if (!(dist_[v] < kInf)) continue;
        double total = dist_[v] + link_w(ey, v, elen);
        if (total < best) {
            best = total;
            best_v = v;
        }
    }
    if (best_v >= 0) {
        std::vector<int> chain{best_v};
        while (parent[chain.back()] >= 0) chain.push_back(parent[chain.back()]);
        std::reverse(chain.begin(), chain.end());
        out.value = best;
        out.vertices.clear();
        out.vertices.push_back(ex.p);
        for (int v : chain) out.vertices.push_back(g.pos[v]);
        out.vertices.push_back(ey.p);
    }
    if (!(out.value < kInf)) throw QueryError("metric query: unreachable pair");
    return out;
}

// Straighten a polyline where line-of-sight holds. Same-cell hops are free
// by convexity; cross-cell hops are membership-sampled at the local feature
// scale to avoid tunnelling through thin voids.
std::vector<Point> smooth_polyline(const DomainModel& dom, const std::vector<Point>& pts) {
    if (pts.size() <= 2) return pts;
    std::vector<int> cell(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) cell[i] = dom.find_cell(pts[i]);
    std::vector<Point> out{pts[0]};
    size_t i = 0;
    while (i + 1 < pts.size()) {
        size_t best = i + 1;
        for (size_t k = pts.size() - 1; k > i + 1; --k) {
            if (cell[i] >= 0 && cell[i] == cell[k]) { best = k; break; }
            if (cell[i] < 0 || cell[k] < 0) continue;
            double feat = std::min(shape_min_feature(dom.cells[cell[i]].shape),
                                   shape_min_feature(dom.cells[cell[k]].shape));
            if (segment_inside(dom, pts[i], pts[k], feat / 4)) {
                best = k;
                break;
            }
        }
        out.push_back(pts[best]);
        i = best;
    }
    return out;
}

}  // namespace

PathPolyline internal_path(const MetricGraph& g, const Point& x, const Point& y) {
    EndLinks ex = make_links(g, x), ey = make_links(g, y);
    VirtualPath vp = virtual_shortest(g, ex, ey, false);
    PathPolyline p;
    p.vertices = smooth_polyline(*g.dom, vp.vertices);
    for (size_t i = 0; i + 1 < p.vertices.size(); ++i)
        p.euclid_length += dist(p.vertices[i], p.vertices[i + 1]);
    return p;
}

DistResult internal_distance(const MetricGraph& g, const Point& x, const Point& y) {
    EndLinks ex = make_links(g, x), ey = make_links(g, y);
    VirtualPath vp = virtual_shortest(g, ex, ey, false);
    std::vector<Point> sm = smooth_polyline(*g.dom, vp.vertices);
    double len = 0;
    for (size_t i = 0; i + 1 < sm.size(); ++i) len += dist(sm[i], sm[i + 1]);
    return {len, ex.snap, ey.snap};
}

PathPolyline qh_geodesic(const MetricGraph& g, const Point& x, const Point& y) {
    EndLinks ex = make_links(g, x), ey = make_links(g, y);
    VirtualPath vp = virtual_shortest(g, ex, ey, true);
    PathPolyline p;
    p.vertices = std::move(vp.vertices);
    p.qh_weight = vp.value;
    for (size_t i = 0; i + 1 < p.vertices.size(); ++i)
        p.euclid_length += dist(p.vertices[i], p.vertices[i + 1]);
    return p;
}

DistResult qh_distance(const MetricGraph& g, const Point& x, const Point& y) {
    EndLinks ex = make_links(g, x), ey = make_links(g, y);
    VirtualPath vp = virtual_shortest(g, ex, ey, true);
    return {vp.value, ex.snap, ey.snap};
}

IntervalResult diameter_distance(const MetricGraph& g, const Point& x, const Point& y) {
    double sx, sy;
    int a = g.snap(x, &sx), b = g.snap(y, &sy);
    if (a == b) return {0, 0, sx, sy};
    Point px = g.pos[a], py = g.pos[b];
    double base = dist(px, py);

    auto connected_in_lens = [&](double d, std::vector<int>* parent) {
        if (dist(px, py) > d + 1e-15) return false;
        std::vector<char> seen(g.pos.size(), 0);
        if (parent) parent->assign(g.pos.size(), -1);
        std::deque<int> queue{a};
        seen[a] = 1;
        auto in_lens = [&](int v) {
            return dist(g.pos[v], px) <= d && dist(g.pos[v], py) <= d;
        };
        if (!in_lens(a)) return false;
        while (!queue.empty()) {
            int v = queue.front();
            queue.pop_front();
            if (v == b) return true;
            for (int e = g.head[v]; e < g.head[v + 1]; ++e) {
                int u = g.to[e];
                if (!seen[u] && in_lens(u)) {
                    seen[u] = 1;
                    if (parent) (*parent)[u] = v;
                    queue.push_back(u);
                }
            }
        }
        return false;
    };

    auto lens_polyline = [&](double d) {
        std::vector<int> parent;
        connected_in_lens(d, &parent);
        auto nodes = extract_path(parent, a, b);
        PathPolyline p;
        p.vertices.reserve(nodes.size());
        for (int v : nodes) p.vertices.push_back(g.pos[v]);
        for (size_t i = 0; i + 1 < p.vertices.size(); ++i)
            p.euclid_length += dist(p.vertices[i], p.vertices[i + 1]);
        return p;
    };

    double hi = dist(g.dom->bbox.lo, g.dom->bbox.hi);
    double lo = base * (1 - 1e-12);
    if (!connected_in_lens(hi, nullptr))
        throw QueryError("diameter_distance: unreachable pair");
    if (connected_in_lens(lo, nullptr)) {
        // Already connected at the Euclidean floor; straight-ish route.
        return {base, lens_polyline(lo).diameter(), sx, sy};
    }
    for (int it = 0; it < 40 && hi - lo > 1e-4 * hi; ++it) {
        double mid = 0.5 * (lo + hi);
        if (connected_in_lens(mid, nullptr)) hi = mid; else lo = mid;
    }
    double upper = std::max(lens_polyline(hi).diameter(), lo);
    return {lo, upper, sx, sy};
}

double qh_diameter(const MetricGraph& g, const Point& x, const Point& y) {
    return qh_geodesic(g, x, y).diameter();
}

std::vector<double> qh_from(const MetricGraph& g, const Point& x0) {
    int a = g.snap(x0);
    return dijkstra(g, a, g.qhw);
}

}  // namespace qclab
