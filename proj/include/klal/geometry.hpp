// Exact 2-D geometry for the synthetic tasks: segment intersection with
// orientation predicates, patch-grid mapping and traversal, and the seeded
// scene generators. Generators snap every vertex to a quarter-pixel lattice,
// which makes the orientation cross products exactly representable in f64.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "klal/common.hpp"

namespace klal {

struct Vec2 {
    double x = 0, y = 0;
    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend bool operator==(Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }
};

inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }
inline double dist(Vec2 a, Vec2 b) { return norm(a - b); }

// Sign of the signed area of triangle (a, b, c).
inline int orientation(Vec2 a, Vec2 b, Vec2 c) {
    const double v = cross(b - a, c - a);
    return v > 0 ? 1 : (v < 0 ? -1 : 0);
}

enum class StrokeColor { red, blue, black, gray };

struct Polyline {
    std::vector<Vec2> vertices;
    StrokeColor color = StrokeColor::black;

    size_t segment_count() const { return vertices.size() < 2 ? 0 : vertices.size() - 1; }
};

struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DegenerateGeometry : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void validate_polyline(const Polyline& p) {
    if (p.vertices.size() < 2)
        throw std::invalid_argument("polyline: needs at least 2 vertices");
    for (size_t i = 1; i < p.vertices.size(); ++i)
        if (p.vertices[i] == p.vertices[i - 1])
            throw std::invalid_argument("polyline: repeated consecutive vertex");
}

// --- segment pair classification -------------------------------------------

enum class SegContact { none, proper, touch, overlap };

struct SegHit {
    SegContact kind = SegContact::none;
    Vec2 point{};  // valid for proper crossings
};

inline SegHit classify_segments(Vec2 a0, Vec2 a1, Vec2 b0, Vec2 b1) {
    const int o1 = orientation(a0, a1, b0);
    const int o2 = orientation(a0, a1, b1);
    const int o3 = orientation(b0, b1, a0);
    const int o4 = orientation(b0, b1, a1);

    if (o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0) {
        const Vec2 u = a1 - a0, v = b1 - b0;
        const double denom = cross(u, v);
        const double t = cross(b0 - a0, v) / denom;
        return {SegContact::proper, a0 + t * u};
    }

    const auto within = [](double lo, double hi, double v) {
        if (lo > hi) std::swap(lo, hi);
        return lo <= v && v <= hi;
    };
    const auto on_segment = [&](Vec2 p, Vec2 q, Vec2 r) {
        return within(p.x, q.x, r.x) && within(p.y, q.y, r.y);
    };

    if (o1 == 0 && o2 == 0) {
        // collinear: distinguish zero-length contact from shared extent
        const bool horizontal_spread = std::abs(a1.x - a0.x) >= std::abs(a1.y - a0.y);
        const auto key = [&](Vec2 p) { return horizontal_spread ? p.x : p.y; };
        const double alo = std::min(key(a0), key(a1)), ahi = std::max(key(a0), key(a1));
        const double blo = std::min(key(b0), key(b1)), bhi = std::max(key(b0), key(b1));
        const double lo = std::max(alo, blo), hi = std::min(ahi, bhi);
        if (lo > hi) return {SegContact::none, {}};
        if (lo == hi) return {SegContact::touch, {}};
        return {SegContact::overlap, {}};
    }

    if (o1 == 0 && on_segment(a0, a1, b0)) return {SegContact::touch, {}};
    if (o2 == 0 && on_segment(a0, a1, b1)) return {SegContact::touch, {}};
    if (o3 == 0 && on_segment(b0, b1, a0)) return {SegContact::touch, {}};
    if (o4 == 0 && on_segment(b0, b1, a1)) return {SegContact::touch, {}};
    return {SegContact::none, {}};
}

// --- polyline pair intersections -------------------------------------------

constexpr double kIntersectionMergeTol = 1e-9;

struct IntersectionResult {
    int count = 0;
    std::vector<Vec2> points;
    int touch_contacts = 0;  // grazing contacts, not counted as crossings
};

// Distinct proper crossing points between two polylines. Collinear shared
// extent is degenerate input; grazing touches are reported but not counted.
inline IntersectionResult count_intersections(const Polyline& a, const Polyline& b) {
    validate_polyline(a);
    validate_polyline(b);
    IntersectionResult res;
    for (size_t i = 0; i + 1 < a.vertices.size(); ++i) {
        for (size_t j = 0; j + 1 < b.vertices.size(); ++j) {
            const SegHit hit = classify_segments(a.vertices[i], a.vertices[i + 1],
                                                 b.vertices[j], b.vertices[j + 1]);
            switch (hit.kind) {
                case SegContact::overlap:
                    throw DegenerateGeometry("count_intersections: collinear overlapping segments");
                case SegContact::touch:
                    ++res.touch_contacts;
                    break;
                case SegContact::proper: {
                    bool merged = false;
                    for (const Vec2& p : res.points) {
                        if (dist(p, hit.point) <= kIntersectionMergeTol) {
                            merged = true;
                            break;
                        }
                    }
                    if (!merged) res.points.push_back(hit.point);
                    break;
                }
                case SegContact::none:
                    break;
            }
        }
    }
    res.count = static_cast<int>(res.points.size());
    return res;
}

// Closest distance between a point and a segment.
inline double point_segment_dist(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 d = b - a;
    const double len2 = dot(d, d);
    if (len2 == 0) return dist(p, a);
    const double t = std::clamp(dot(p - a, d) / len2, 0.0, 1.0);
    return dist(p, a + t * d);
}

inline double segment_segment_dist(Vec2 a0, Vec2 a1, Vec2 b0, Vec2 b1) {
    if (classify_segments(a0, a1, b0, b1).kind != SegContact::none) return 0.0;
    return std::min(std::min(point_segment_dist(a0, b0, b1), point_segment_dist(a1, b0, b1)),
                    std::min(point_segment_dist(b0, a0, a1), point_segment_dist(b1, a0, a1)));
}

// --- patch grid --------------------------------------------------------------

struct PatchGrid {
    int image_w = 64, image_h = 64;
    int patch = 8;

    PatchGrid() = default;
    PatchGrid(int w, int h, int p) : image_w(w), image_h(h), patch(p) {
        if (p <= 0 || w % p != 0 || h % p != 0)
            throw std::invalid_argument("PatchGrid: patch size must divide image dims, got " +
                                        std::to_string(w) + "x" + std::to_string(h) + " / " +
                                        std::to_string(p));
    }

    int rows() const { return image_h / patch; }
    int cols() const { return image_w / patch; }
    int count() const { return rows() * cols(); }
    int index_of(int row, int col) const { return row * cols() + col; }
    int row_of(int index) const { return index / cols(); }
    int col_of(int index) const { return index % cols(); }
    Vec2 patch_center(int index) const {
        return {(col_of(index) + 0.5) * patch, (row_of(index) + 0.5) * patch};
    }
};

// Floor mapping; a point on a patch boundary belongs to the higher-coordinate
// patch. The image domain is the half-open box [0, W) x [0, H).
inline int point_to_patch(Vec2 p, const PatchGrid& grid) {
    if (!(p.x >= 0 && p.x < grid.image_w && p.y >= 0 && p.y < grid.image_h))
        throw std::invalid_argument("point_to_patch: point outside image");
    const int col = static_cast<int>(std::floor(p.x / grid.patch));
    const int row = static_cast<int>(std::floor(p.y / grid.patch));
    return grid.index_of(row, col);
}

// Patches whose (half-open) area the polyline passes through, in first-visit
// order along the curve. Implemented by splitting each segment at every
// gridline crossing and classifying the midpoint of each piece.
inline std::vector<int> trace_polyline_patches(const Polyline& poly, const PatchGrid& grid) {
    validate_polyline(poly);
    std::vector<int> order;
    std::vector<char> seen(static_cast<size_t>(grid.count()), 0);
    const auto visit = [&](Vec2 p) {
        const int idx = point_to_patch(p, grid);
        if (!seen[static_cast<size_t>(idx)]) {
            seen[static_cast<size_t>(idx)] = 1;
            order.push_back(idx);
        }
    };

    for (size_t s = 0; s + 1 < poly.vertices.size(); ++s) {
        const Vec2 p0 = poly.vertices[s], p1 = poly.vertices[s + 1];
        const Vec2 d = p1 - p0;
        std::vector<double> ts{0.0, 1.0};
        if (d.x != 0) {
            const int klo = static_cast<int>(std::ceil(std::min(p0.x, p1.x) / grid.patch));
            const int khi = static_cast<int>(std::floor(std::max(p0.x, p1.x) / grid.patch));
            for (int k = klo; k <= khi; ++k) {
                const double t = (k * grid.patch - p0.x) / d.x;
                if (t > 0 && t < 1) ts.push_back(t);
            }
        }
        if (d.y != 0) {
            const int klo = static_cast<int>(std::ceil(std::min(p0.y, p1.y) / grid.patch));
            const int khi = static_cast<int>(std::floor(std::max(p0.y, p1.y) / grid.patch));
            for (int k = klo; k <= khi; ++k) {
                const double t = (k * grid.patch - p0.y) / d.y;
                if (t > 0 && t < 1) ts.push_back(t);
            }
        }
        std::sort(ts.begin(), ts.end());
        // collapse corner-crossing slivers produced by rounding
        std::vector<double> events;
        for (double t : ts)
            if (events.empty() || t - events.back() > 1e-12) events.push_back(t);

        visit(p0);
        for (size_t i = 0; i + 1 < events.size(); ++i) {
            const double mid = 0.5 * (events[i] + events[i + 1]);
            visit(p0 + mid * d);
        }
        visit(p1);
    }
    return order;
}

// --- line-pair generator ------------------------------------------------------

constexpr double kVertexLattice = 0.25;

inline double snap_to_lattice(double v) { return std::round(v / kVertexLattice) * kVertexLattice; }

struct PolylinePairConfig {
    int width = 64, height = 64;
    double margin = 3.0;
    int min_segments = 3, max_segments = 5;
    int max_count = 5;               // largest crossing count the generator serves
    double min_crossing_sep = 6.0;   // pairwise distance between crossing points
    int max_attempts = 10000;
};

namespace detail {

// Monotone chain along x spanning the drawable box.
inline std::vector<Vec2> monotone_chain(Rng& rng, const PolylinePairConfig& cfg) {
    const int nseg = static_cast<int>(rng.uniform_int(cfg.min_segments, cfg.max_segments));
    const double lo = cfg.margin, hi = cfg.width - cfg.margin;
    const double span = hi - lo;
    std::vector<Vec2> v(static_cast<size_t>(nseg) + 1);
    for (int i = 0; i <= nseg; ++i) {
        const double base = lo + span * i / nseg;
        const double jitter = (i == 0 || i == nseg) ? 0.0 : rng.uniform(-0.3, 0.3) * span / nseg;
        v[static_cast<size_t>(i)].x = snap_to_lattice(std::clamp(base + jitter, lo, hi));
        v[static_cast<size_t>(i)].y =
            snap_to_lattice(rng.uniform(cfg.margin, cfg.height - cfg.margin));
    }
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i].x <= v[i - 1].x) v[i].x = v[i - 1].x + kVertexLattice;
    return v;
}

}  // namespace detail

// Deterministic rejection sampler: returns a (red, blue) pair whose verified
// proper-crossing count equals target_count, with no grazing contacts.
inline std::pair<Polyline, Polyline> gen_polyline_pair(uint64_t seed, int target_count,
                                                       const PolylinePairConfig& cfg = {}) {
    if (target_count < 0 || target_count > cfg.max_count)
        throw std::invalid_argument("gen_polyline_pair: target count " +
                                    std::to_string(target_count) + " outside 0..=" +
                                    std::to_string(cfg.max_count));
    Rng rng(mix_seed(seed, 0x11e5ec7 + static_cast<uint64_t>(target_count)));
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        Polyline red{detail::monotone_chain(rng, cfg), StrokeColor::red};
        Polyline blue{detail::monotone_chain(rng, cfg), StrokeColor::blue};
        if (cfg.width == cfg.height && rng.coin()) {
            for (auto& p : red.vertices) std::swap(p.x, p.y);
            for (auto& p : blue.vertices) std::swap(p.x, p.y);
        }
        IntersectionResult r;
        try {
            r = count_intersections(red, blue);
        } catch (const DegenerateGeometry&) {
            continue;
        }
        if (r.touch_contacts > 0 || r.count != target_count) continue;
        bool separated = true;
        for (size_t i = 0; i < r.points.size() && separated; ++i)
            for (size_t j = i + 1; j < r.points.size(); ++j)
                if (dist(r.points[i], r.points[j]) < cfg.min_crossing_sep) {
                    separated = false;
                    break;
                }
        if (!separated) continue;
        return {std::move(red), std::move(blue)};
    }
    throw GenerationError("gen_polyline_pair: retry budget exhausted for count " +
                          std::to_string(target_count));
}

// --- labeled graph scenes ------------------------------------------------------

struct GraphNode {
    char label = 'A';
    Vec2 center{};
    bool central = false;
};

struct GraphScene {
    int width = 64, height = 64;
    std::vector<GraphNode> nodes;                    // nodes[0] is the central node
    std::vector<std::pair<int, int>> edge_endpoints;  // node indices, disjoint pairs
    std::vector<Polyline> edges;                      // edges[k] joins edge_endpoints[k]
};

inline bool nodes_connected(const GraphScene& scene, int a, int b) {
    for (const auto& [u, v] : scene.edge_endpoints)
        if ((u == a && v == b) || (u == b && v == a)) return true;
    return false;
}

struct GraphSceneConfig {
    int width = 64, height = 64;
    int min_outer = 3, max_outer = 6;   // nodes besides the central one
    int edge_count = 0;                 // 0 = auto (2, or 2-3 when 6+ nodes)
    double min_node_dist = 13.0;
    double edge_clearance = 10.0;       // edge distance to non-endpoint nodes
    double edge_separation = 2.5;       // min distance between distinct edges
    double long_edge_len = 30.0;        // "long-range" threshold
    int max_attempts = 20000;
};

namespace detail {

inline bool route_edge(Rng& rng, const GraphScene& scene, const GraphSceneConfig& cfg,
                       int from, int to, Polyline& out) {
    const Vec2 a = scene.nodes[static_cast<size_t>(from)].center;
    const Vec2 b = scene.nodes[static_cast<size_t>(to)].center;
    const int n_way = static_cast<int>(rng.uniform_int(1, 2));
    std::vector<Vec2> pts{a};
    const Vec2 d = b - a;
    const double len = norm(d);
    const Vec2 perp{-d.y / len, d.x / len};
    for (int w = 1; w <= n_way; ++w) {
        const double t = static_cast<double>(w) / (n_way + 1) + rng.uniform(-0.08, 0.08);
        const double off = rng.uniform(-7.0, 7.0);
        Vec2 p = a + t * d + off * perp;
        p.x = snap_to_lattice(std::clamp(p.x, 2.0, cfg.width - 2.0));
        p.y = snap_to_lattice(std::clamp(p.y, 2.0, cfg.height - 2.0));
        pts.push_back(p);
    }
    pts.push_back(b);
    for (size_t i = 1; i < pts.size(); ++i)
        if (pts[i] == pts[i - 1]) return false;

    // self-contact: non-adjacent segments must stay apart; adjacent ones must
    // not fold back onto each other
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
        for (size_t j = i + 1; j + 1 < pts.size(); ++j) {
            const SegHit hit = classify_segments(pts[i], pts[i + 1], pts[j], pts[j + 1]);
            if (j == i + 1) {
                if (hit.kind == SegContact::overlap) return false;
            } else if (hit.kind != SegContact::none) {
                return false;
            }
        }
    }
    // clearance from every node that is not an endpoint of this edge
    for (size_t k = 0; k < scene.nodes.size(); ++k) {
        if (static_cast<int>(k) == from || static_cast<int>(k) == to) continue;
        for (size_t i = 0; i + 1 < pts.size(); ++i)
            if (point_segment_dist(scene.nodes[k].center, pts[i], pts[i + 1]) <
                cfg.edge_clearance)
                return false;
    }
    out.vertices = std::move(pts);
    out.color = StrokeColor::black;
    return true;
}

}  // namespace detail

// Scene with a central node, 3-6 outer nodes and 2-3 pairwise disjoint,
// mutually non-intersecting polygonal edges. Deterministic per seed.
inline GraphScene gen_graph(uint64_t seed, const GraphSceneConfig& cfg = {}) {
    if (cfg.min_outer < 3 || cfg.max_outer > 6 || cfg.min_outer > cfg.max_outer)
        throw std::invalid_argument("gen_graph: outer node count must stay within 3..6");
    if (cfg.edge_count != 0 && cfg.edge_count != 2 && cfg.edge_count != 3)
        throw std::invalid_argument("gen_graph: edge count must be 2 or 3");
    if (cfg.edge_count == 3 && cfg.min_outer < 5)
        throw std::invalid_argument("gen_graph: 3 edges need at least 5 outer nodes");
    Rng rng(mix_seed(seed, 0x97a9f5));
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        GraphScene scene;
        scene.width = cfg.width;
        scene.height = cfg.height;
        const int outer = static_cast<int>(rng.uniform_int(cfg.min_outer, cfg.max_outer));
        const Vec2 mid{cfg.width / 2.0, cfg.height / 2.0};

        scene.nodes.push_back({'?', {snap_to_lattice(mid.x + rng.uniform(-3, 3)),
                                     snap_to_lattice(mid.y + rng.uniform(-3, 3))},
                               true});
        const double ring = 0.36 * std::min(cfg.width, cfg.height);
        bool placed = true;
        for (int i = 0; i < outer; ++i) {
            const double ang = 2 * M_PI * (i + rng.uniform(-0.22, 0.22)) / outer;
            const double rad = ring * rng.uniform(0.85, 1.12);
            Vec2 p = mid + Vec2{rad * std::cos(ang), rad * std::sin(ang)};
            p.x = snap_to_lattice(std::clamp(p.x, 7.0, cfg.width - 8.0));
            p.y = snap_to_lattice(std::clamp(p.y, 12.0, cfg.height - 8.0));
            for (const GraphNode& other : scene.nodes)
                if (dist(p, other.center) < cfg.min_node_dist) placed = false;
            if (!placed) break;
            scene.nodes.push_back({'?', p, false});
        }
        if (!placed) continue;

        std::vector<int> label_perm(scene.nodes.size());
        for (size_t i = 0; i < label_perm.size(); ++i) label_perm[i] = static_cast<int>(i);
        rng.shuffle(label_perm);
        for (size_t i = 0; i < scene.nodes.size(); ++i)
            scene.nodes[i].label = static_cast<char>('A' + label_perm[i]);

        const int total = outer + 1;
        const int n_edges =
            cfg.edge_count != 0 ? cfg.edge_count
                                : (total >= 6 ? static_cast<int>(rng.uniform_int(2, 3)) : 2);
        std::vector<int> order(static_cast<size_t>(total));
        for (int i = 0; i < total; ++i) order[static_cast<size_t>(i)] = i;
        rng.shuffle(order);

        bool ok = true;
        bool has_long = false;
        for (int e = 0; e < n_edges && ok; ++e) {
            const int from = order[static_cast<size_t>(2 * e)];
            const int to = order[static_cast<size_t>(2 * e + 1)];
            Polyline edge;
            if (!detail::route_edge(rng, scene, cfg, from, to, edge)) {
                ok = false;
                break;
            }
            for (const Polyline& prev : scene.edges) {
                IntersectionResult r;
                try {
                    r = count_intersections(edge, prev);
                } catch (const DegenerateGeometry&) {
                    ok = false;
                    break;
                }
                if (r.count > 0 || r.touch_contacts > 0) {
                    ok = false;
                    break;
                }
                double min_d = 1e30;
                for (size_t i = 0; i + 1 < edge.vertices.size(); ++i)
                    for (size_t j = 0; j + 1 < prev.vertices.size(); ++j)
                        min_d = std::min(min_d, segment_segment_dist(
                                                    edge.vertices[i], edge.vertices[i + 1],
                                                    prev.vertices[j], prev.vertices[j + 1]));
                if (min_d < cfg.edge_separation) {
                    ok = false;
                    break;
                }
            }
            if (!ok) break;
            const double span = dist(scene.nodes[static_cast<size_t>(from)].center,
                                     scene.nodes[static_cast<size_t>(to)].center);
            has_long |= span >= cfg.long_edge_len;
            scene.edge_endpoints.emplace_back(from, to);
            scene.edges.push_back(std::move(edge));
        }
        if (!ok) continue;
        if (n_edges == 3 && !has_long) continue;
        return scene;
    }
    throw GenerationError("gen_graph: retry budget exhausted");
}

}  // namespace klal
