#include "streetbase/streetgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "streetbase/topology.hpp"
#include "streetbase/traffic.hpp"

namespace streetbase::streetgen {

namespace {

using topology::kEdges;
using topology::kNodes;

constexpr double kTiny = 1e-9;
constexpr const char* kRegenerate = "streetgen_regenerate";
constexpr const char* kWidthProbes = "streetgen_width_probes";

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

geom::Point flat(geom::Point p) {
    p.z.reset();
    return p;
}

geom::Polyline flat(geom::Polyline l) {
    for (auto& v : l.vertices) {
        v.z.reset();
    }
    return l;
}

// Offset that never throws: falls back to offsetting the chord.
geom::Polyline safe_offset(const geom::Polyline& line, double d) {
    try {
        return geom::offset_polyline(line, d);
    } catch (const Error&) {
        return geom::offset_polyline(geom::Polyline{{line.vertices.front(), line.vertices.back()}},
                                     d);
    }
}

// Border point of an arm at its limit, computed from the node side only so
// that sections and intersections share it bit for bit.
geom::Point cap(const Arm& a, double s, double side) {
    return flat(geom::point_at(a.axis_out, s, side * a.width / 2.0).point);
}

void push_point(std::vector<geom::Point>& ring, const geom::Point& p) {
    if (ring.empty() || geom::distance(ring.back(), p) > kTiny) {
        ring.push_back(flat(p));
    }
}

// Border vertices walked from the far end back towards the node, stopping
// before abscissa `stop` (exclusive); the far end itself is skipped.
void walk_down(std::vector<geom::Point>& ring, const geom::Polyline& b, double stop) {
    const auto cum = geom::cumulative_lengths(b);
    for (std::size_t k = b.vertices.size() - 1; k-- > 0;) {
        if (cum[k] > stop + 1e-12) {
            push_point(ring, b.vertices[k]);
        }
    }
}

// Border vertices from abscissa `start` (exclusive) outwards, skipping the
// far end.
void walk_up(std::vector<geom::Point>& ring, const geom::Polyline& b, double start) {
    const auto cum = geom::cumulative_lengths(b);
    for (std::size_t k = 0; k + 1 < b.vertices.size(); ++k) {
        if (cum[k] > start + 1e-12) {
            push_point(ring, b.vertices[k]);
        }
    }
}

std::optional<geom::Polygon> close_polygon(std::vector<geom::Point> pts) {
    bool changed = true;
    while (changed && pts.size() >= 3) {
        changed = false;
        if (geom::distance(pts.front(), pts.back()) <= kTiny) {
            pts.pop_back();
            changed = true;
            continue;
        }
        const std::size_t n = pts.size();
        for (std::size_t i = 0; i < n; ++i) {
            const geom::Point& a = pts[(i + n - 1) % n];
            const geom::Point& b = pts[i];
            const geom::Point& c = pts[(i + 1) % n];
            const geom::Point u = b - a;
            const geom::Point v = c - b;
            const double scale = geom::norm(u) * geom::norm(v);
            if (scale <= 0.0 ||
                (std::abs(geom::cross(u, v)) <= 1e-12 * scale && geom::dot(u, v) > 0.0)) {
                pts.erase(pts.begin() + static_cast<std::ptrdiff_t>(i));
                changed = true;
                break;
            }
        }
    }
    if (pts.size() < 3) {
        return std::nullopt;
    }
    geom::Polygon poly;
    poly.exterior = geom::close_ring(std::move(pts));
    if (geom::signed_ring_area(poly.exterior) < 0.0) {
        std::reverse(poly.exterior.begin(), poly.exterior.end());
    }
    if (std::abs(geom::signed_ring_area(poly.exterior)) <= kTiny) {
        return std::nullopt;
    }
    return poly;
}

std::int64_t key_int(const Feature& f, const char* name) { return f.int_or(name, 0); }

} // namespace

// --- model ------------------------------------------------------------------

Arm make_arm(const Feature& edge, bool at_start) {
    Arm a;
    a.edge = edge.id;
    a.at_start = at_start;
    a.axis_out = at_start ? *edge.polyline() : geom::reversed(*edge.polyline());
    a.width = edge.real_or("width", 0.0);
    a.length = geom::length(a.axis_out);
    a.angle = geom::wrap_two_pi(geom::angle_of(a.axis_out.vertices[1] - a.axis_out.vertices[0]));
    return a;
}

Model::Model(const ReadAccess& access) : access_(access) {
    access.scan(kNodes, [&](const Feature& n) { nodes_.emplace(n.id, n); });
    access.scan(kEdges, [&](const Feature& e) {
        edges_.emplace(e.id, e);
        incidence_[key_int(e, "start_node")].push_back(e.id);
        incidence_[key_int(e, "end_node")].push_back(e.id);
    });
    if (access.has_layer(kLimits)) {
        access.scan(kLimits, [&](const Feature& f) {
            if (f.get_bool("overridden").value_or(false)) {
                limit_overrides_[{key_int(f, "edge_id"), key_int(f, "node_id")}] =
                    f.real_or("s", 0.0);
            }
        });
    }
    if (access.has_layer(kRadii)) {
        access.scan(kRadii, [&](const Feature& f) {
            if (f.get_bool("overridden").value_or(false)) {
                radius_overrides_[{key_int(f, "node_id"), key_int(f, "edge_a"),
                                   key_int(f, "edge_b")}] = f.real_or("r", 0.0);
            }
        });
    }
}

const Feature* Model::edge(std::int64_t id) const {
    auto it = edges_.find(id);
    return it == edges_.end() ? nullptr : &it->second;
}

const Feature* Model::node(std::int64_t id) const {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : &it->second;
}

const std::vector<std::int64_t>& Model::incident(std::int64_t node) const {
    static const std::vector<std::int64_t> none;
    auto it = incidence_.find(node);
    return it == incidence_.end() ? none : it->second;
}

void Model::warn_once(const std::string& msg) {
    if (warned_.insert(msg).second) {
        warnings_.push_back(msg);
    }
}

const std::vector<Arm>& Model::arms(std::int64_t node) {
    auto it = arms_.find(node);
    if (it != arms_.end()) {
        return it->second;
    }
    std::vector<Arm> out;
    for (std::int64_t id : incident(node)) {
        const Feature& e = edges_.at(id);
        out.push_back(make_arm(e, key_int(e, "start_node") == node));
    }
    std::sort(out.begin(), out.end(), [](const Arm& a, const Arm& b) {
        return std::tie(a.angle, a.edge) < std::tie(b.angle, b.edge);
    });
    return arms_.emplace(node, std::move(out)).first->second;
}

double Model::corner_radius(std::int64_t node, std::int64_t a, std::int64_t b) const {
    auto it = radius_overrides_.find({node, a, b});
    return it != radius_overrides_.end() ? it->second : config().default_radius_m;
}

bool Model::radius_overridden(std::int64_t node, std::int64_t a, std::int64_t b) const {
    return radius_overrides_.count({node, a, b}) > 0;
}

bool Model::limit_overridden(std::int64_t node, std::int64_t edge) const {
    return limit_overrides_.count({edge, node}) > 0;
}

double Model::default_limit(std::int64_t node, std::int64_t edge) {
    const auto& all = arms(node);
    auto self = std::find_if(all.begin(), all.end(), [&](const Arm& a) { return a.edge == edge; });
    if (self == all.end()) {
        throw Error(ErrorCode::NotFound, "edge is not incident to node", kEdges, edge);
    }
    if (all.size() < 2) {
        return kDeadEndLimit;
    }
    const Arm& me = *self;
    const geom::Polyline mine[2] = {safe_offset(me.axis_out, me.width / 2.0),
                                    safe_offset(me.axis_out, -me.width / 2.0)};
    const std::size_t n = all.size();
    const std::size_t at = static_cast<std::size_t>(self - all.begin());
    // (arm, corner radius) for the CCW successor and the predecessor.
    std::vector<std::pair<const Arm*, double>> neighbours;
    const Arm& next = all[(at + 1) % n];
    const Arm& prev = all[(at + n - 1) % n];
    if (n == 2) {
        neighbours.push_back({&next, std::max(corner_radius(node, edge, next.edge),
                                              corner_radius(node, next.edge, edge))});
    } else {
        neighbours.push_back({&next, corner_radius(node, edge, next.edge)});
        neighbours.push_back({&prev, corner_radius(node, prev.edge, edge)});
    }
    double best = 0.0;
    for (const auto& [adjacent, r] : neighbours) {
        const Arm& other = *adjacent;
        const geom::Polyline theirs[2] = {safe_offset(other.axis_out, other.width / 2.0),
                                          safe_offset(other.axis_out, -other.width / 2.0)};
        bool found = false;
        double s_max = 0.0;
        for (const auto& a : mine) {
            for (const auto& b : theirs) {
                for (std::size_t i = 0; i + 1 < a.vertices.size(); ++i) {
                    const geom::Point ua = geom::normalized(a.vertices[i + 1] - a.vertices[i]);
                    for (std::size_t j = 0; j + 1 < b.vertices.size(); ++j) {
                        const geom::Point ub = geom::normalized(b.vertices[j + 1] - b.vertices[j]);
                        if (std::abs(geom::cross(ua, ub)) < 1e-9) {
                            continue;
                        }
                        auto hit = geom::segment_intersection(a.vertices[i], a.vertices[i + 1],
                                                              b.vertices[j], b.vertices[j + 1]);
                        if (!hit) {
                            continue;
                        }
                        const double s = geom::project_to_polyline(*hit, me.axis_out).s;
                        s_max = found ? std::max(s_max, s) : s;
                        found = true;
                    }
                }
            }
        }
        const double candidate =
            found ? s_max + r : std::max(me.width, other.width) / 2.0 + r;
        best = std::max(best, candidate);
    }
    return std::min(best, kMaxLimitRatio * me.length);
}

double Model::limit(std::int64_t node, std::int64_t edge) {
    auto memo = limits_.find({node, edge});
    if (memo != limits_.end()) {
        return memo->second;
    }
    double s = 0.0;
    if (auto ov = limit_overrides_.find({edge, node}); ov != limit_overrides_.end()) {
        const double length = geom::length(*edges_.at(edge).polyline());
        s = std::clamp(ov->second, kDeadEndLimit, kMaxLimitRatio * length);
        if (s != ov->second) {
            warn_once("limit of edge " + std::to_string(edge) + " at node " + std::to_string(node) +
                      " clamped to " + fmt(s) + " m");
        }
    } else {
        s = default_limit(node, edge);
    }
    limits_[{node, edge}] = s;
    return s;
}

const SectionGeometry& Model::section(std::int64_t edge) {
    if (auto it = sections_.find(edge); it != sections_.end()) {
        return it->second;
    }
    const Feature& e = edges_.at(edge);
    SectionGeometry g;
    g.s_start = limit(key_int(e, "start_node"), edge);
    g.s_end = limit(key_int(e, "end_node"), edge);
    const geom::Polyline& axis = *e.polyline();
    const double length = geom::length(axis);
    const double w = e.real_or("width", 0.0);
    if (g.s_start + g.s_end >= length - kTiny) {
        warn_once("section of edge " + std::to_string(edge) +
                  " is degenerate: its limits overlap, surface omitted");
    } else {
        try {
            const geom::Polyline piece = geom::sub_polyline(axis, g.s_start, length - g.s_end);
            geom::Polyline left = flat(geom::offset_polyline(piece, w / 2.0));
            geom::Polyline right = flat(geom::offset_polyline(piece, -w / 2.0));
            const Arm head = make_arm(e, true);
            const Arm tail = make_arm(e, false);
            left.vertices.front() = cap(head, g.s_start, 1.0);
            right.vertices.front() = cap(head, g.s_start, -1.0);
            left.vertices.back() = cap(tail, g.s_end, -1.0);
            right.vertices.back() = cap(tail, g.s_end, 1.0);
            std::vector<geom::Point> ring = right.vertices;
            ring.insert(ring.end(), left.vertices.rbegin(), left.vertices.rend());
            geom::Polygon poly;
            poly.exterior = geom::close_ring(std::move(ring));
            g.polygon = std::move(poly);
            g.left = std::move(left);
            g.right = std::move(right);
        } catch (const Error& err) {
            warn_once("section of edge " + std::to_string(edge) + " omitted: " + err.what());
        }
    }
    return sections_.emplace(edge, std::move(g)).first->second;
}

const NodeGeometry& Model::intersection(std::int64_t node) {
    if (auto it = intersections_.find(node); it != intersections_.end()) {
        return it->second;
    }
    NodeGeometry out;
    const auto all = arms(node);
    const std::size_t n = all.size();
    if (n < 2) {
        return intersections_.emplace(node, std::move(out)).first->second;
    }
    const geom::Point centre = flat(*nodes_.at(node).point());

    struct Borders {
        geom::Point left_cap;
        geom::Point right_cap;
        geom::Polyline left;
        geom::Polyline right;
    };
    std::vector<Borders> borders;
    for (const Arm& a : all) {
        Borders b;
        const double s = limit(node, a.edge);
        b.left_cap = cap(a, s, 1.0);
        b.right_cap = cap(a, s, -1.0);
        const geom::Polyline piece = geom::sub_polyline(a.axis_out, 0.0, s);
        b.left = flat(safe_offset(piece, a.width / 2.0));
        b.right = flat(safe_offset(piece, -a.width / 2.0));
        b.left.vertices.back() = b.left_cap;
        b.right.vertices.back() = b.right_cap;
        borders.push_back(std::move(b));
    }

    std::vector<geom::Point> ring;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = (i + 1) % n;
        const Arm& ai = all[i];
        const Arm& aj = all[j];
        const Borders& bi = borders[i];
        const Borders& bj = borders[j];
        push_point(ring, bi.right_cap);
        push_point(ring, bi.left_cap);

        const double gap = geom::wrap_two_pi(aj.angle - ai.angle);
        const bool convex = gap < geom::kPi - 1e-9 && gap > 1e-12;
        if (!convex) {
            walk_down(ring, bi.left, -1.0);
            push_point(ring, bi.left.vertices.front());
            const geom::Point da = geom::normalized(bi.left.vertices[1] - bi.left.vertices[0]);
            const geom::Point db = geom::normalized(bj.right.vertices[1] - bj.right.vertices[0]);
            if (auto m = geom::line_intersection(bi.left.vertices.front(), da,
                                                 bj.right.vertices.front(), db)) {
                const bool behind = geom::dot(*m - bi.left.vertices.front(), da) < -kTiny &&
                                    geom::dot(*m - bj.right.vertices.front(), db) < -kTiny;
                const double reach =
                    geom::kMiterLimit * std::max(ai.width, aj.width) / 2.0;
                if (behind && geom::distance(*m, centre) <= reach) {
                    push_point(ring, *m);
                }
            }
            push_point(ring, bj.right.vertices.front());
            walk_up(ring, bj.right, 0.0);
            continue;
        }

        CornerGeometry cg;
        cg.edge_a = ai.edge;
        cg.edge_b = aj.edge;
        cg.convex = true;
        cg.r = corner_radius(node, ai.edge, aj.edge);
        cg.border_a = bi.left;
        cg.border_b = bj.right;
        const auto corner = geom::find_corner(bi.left, bj.right);
        if (!corner || corner->s_a < 0.0 || corner->s_b < 0.0) {
            warn_once("corner between edges " + std::to_string(ai.edge) + " and " +
                      std::to_string(aj.edge) + " at node " + std::to_string(node) +
                      " is beveled: the borders do not meet before the limits");
            cg.r_effective = 0.0;
            cg.controller = centre;
            walk_down(ring, bi.left, -1.0);
            push_point(ring, bi.left.vertices.front());
            push_point(ring, bj.right.vertices.front());
            walk_up(ring, bj.right, 0.0);
            out.corners.push_back(std::move(cg));
            continue;
        }
        const double max_r = geom::max_fillet_radius(bi.left, bj.right);
        cg.r_effective = cg.r <= max_r * (1.0 + 1e-9) ? cg.r : max_r;
        if (cg.r_effective < cg.r) {
            warn_once("corner radius " + fmt(cg.r) + " m between edges " +
                      std::to_string(ai.edge) + " and " + std::to_string(aj.edge) + " at node " +
                      std::to_string(node) + " clamped to " + fmt(cg.r_effective) + " m");
        }
        std::optional<geom::Fillet> fillet;
        if (cg.r_effective > kTiny) {
            for (int attempt = 0; attempt < 3 && !fillet; ++attempt) {
                try {
                    fillet = geom::fillet_corner(bi.left, bj.right, cg.r_effective);
                } catch (const Error& err) {
                    if (err.code() != ErrorCode::FilletTooLarge) {
                        break;
                    }
                    cg.r_effective *= 1.0 - 1e-9;
                }
            }
        }
        if (!fillet) {
            cg.r_effective = 0.0;
            cg.controller = flat(corner->point);
            walk_down(ring, bi.left, corner->s_a);
            push_point(ring, corner->point);
            walk_up(ring, bj.right, corner->s_b);
        } else {
            cg.controller = flat(fillet->center);
            const double sa = geom::project_to_polyline(fillet->tangent_a, bi.left).s;
            const double sb = geom::project_to_polyline(fillet->tangent_b, bj.right).s;
            walk_down(ring, bi.left, sa);
            push_point(ring, fillet->tangent_a);
            auto arc = geom::discretize_arc(fillet->arc);
            for (std::size_t k = 1; k + 1 < arc.size(); ++k) {
                push_point(ring, arc[k]);
            }
            push_point(ring, fillet->tangent_b);
            walk_up(ring, bj.right, sb);
        }
        out.corners.push_back(std::move(cg));
    }
    out.polygon = close_polygon(std::move(ring));
    if (!out.polygon) {
        warn_once("intersection surface of node " + std::to_string(node) + " is empty");
    }
    return intersections_.emplace(node, std::move(out)).first->second;
}

// --- generation ---------------------------------------------------------------

bool Scope::owns(const std::string& layer, const Feature& f) const {
    if (full) {
        return true;
    }
    auto in = [](const std::set<std::int64_t>& s, std::int64_t v) { return s.count(v) > 0; };
    if (layer == kLimits || layer == kRadii || layer == kIntersections) {
        return in(nodes, key_int(f, "node_id"));
    }
    if (layer == kSections || layer == traffic::kLanes || layer == traffic::kLaneOverrides) {
        return in(edges, key_int(f, "edge_id"));
    }
    if (layer == traffic::kInterconnections || layer == traffic::kInterconnectionOverrides) {
        return in(ic_nodes, key_int(f, "node_id"));
    }
    return false;
}

Scope closure(const Model& model, const std::set<std::int64_t>& nodes,
              const std::set<std::int64_t>& edges) {
    Scope s;
    s.nodes = nodes;
    s.edges = edges;
    for (std::int64_t e : edges) {
        if (const Feature* f = model.edge(e)) {
            s.nodes.insert(key_int(*f, "start_node"));
            s.nodes.insert(key_int(*f, "end_node"));
        }
    }
    for (std::int64_t n : s.nodes) {
        for (std::int64_t e : model.incident(n)) {
            s.edges.insert(e);
        }
    }
    s.ic_nodes = s.nodes;
    for (std::int64_t e : s.edges) {
        if (const Feature* f = model.edge(e)) {
            s.ic_nodes.insert(key_int(*f, "start_node"));
            s.ic_nodes.insert(key_int(*f, "end_node"));
        }
    }
    return s;
}

Scope whole(const Model& model) {
    Scope s;
    s.full = true;
    for (const auto& [id, _] : model.nodes()) {
        s.nodes.insert(id);
    }
    for (const auto& [id, _] : model.edges()) {
        s.edges.insert(id);
    }
    s.ic_nodes = s.nodes;
    return s;
}

const std::vector<std::string>& generated_layers() {
    static const std::vector<std::string> layers = {kLimits,         kRadii,
                                                    kSections,       kIntersections,
                                                    traffic::kLanes, traffic::kInterconnections};
    return layers;
}

std::vector<Value> feature_key(const std::string& layer, const Feature& f) {
    auto pick = [&](std::initializer_list<const char*> names) {
        std::vector<Value> key;
        for (const char* n : names) {
            const Value* v = f.value(n);
            key.push_back(v ? *v : Value{});
        }
        return key;
    };
    if (layer == kLimits) {
        return pick({"edge_id", "node_id"});
    }
    if (layer == kRadii) {
        return pick({"node_id", "edge_a", "edge_b"});
    }
    if (layer == kSections) {
        return pick({"edge_id"});
    }
    if (layer == kIntersections) {
        return pick({"node_id"});
    }
    if (layer == traffic::kLanes || layer == traffic::kLaneOverrides) {
        return pick({"edge_id", "lane_index"});
    }
    if (layer == traffic::kInterconnections || layer == traffic::kInterconnectionOverrides) {
        return pick({"node_id", "from_edge", "from_lane", "to_edge", "to_lane"});
    }
    throw Error(ErrorCode::Misconfigured, "layer '" + layer + "' is not generated", layer);
}

LayerSet generate(Model& model, const Scope& scope) {
    LayerSet out;
    for (const auto& name : generated_layers()) {
        out[name];
    }
    for (std::int64_t n : scope.nodes) {
        if (!model.node(n)) {
            continue;
        }
        for (const Arm& arm : model.arms(n)) {
            const double s = model.limit(n, arm.edge);
            const Feature& e = *model.edge(arm.edge);
            const double length = geom::length(*e.polyline());
            Feature f;
            f.geometry = flat(geom::point_at(*e.polyline(), arm.at_start ? s : length - s).point);
            f.set("edge_id", arm.edge);
            f.set("node_id", n);
            f.set("s", s);
            f.set("overridden", model.limit_overridden(n, arm.edge));
            out[kLimits].push_back(std::move(f));
        }
        const NodeGeometry& g = model.intersection(n);
        for (const auto& c : g.corners) {
            Feature f;
            f.geometry = c.controller;
            f.set("node_id", n);
            f.set("edge_a", c.edge_a);
            f.set("edge_b", c.edge_b);
            f.set("r", c.r);
            f.set("r_effective", c.r_effective);
            f.set("overridden", model.radius_overridden(n, c.edge_a, c.edge_b));
            out[kRadii].push_back(std::move(f));
        }
        if (g.polygon) {
            Feature f;
            f.geometry = *g.polygon;
            f.set("node_id", n);
            out[kIntersections].push_back(std::move(f));
        }
    }
    traffic::Context traffic(model);
    for (std::int64_t e : scope.edges) {
        if (!model.edge(e)) {
            continue;
        }
        const SectionGeometry& sec = model.section(e);
        if (sec.polygon) {
            Feature f;
            f.geometry = *sec.polygon;
            f.set("edge_id", e);
            out[kSections].push_back(std::move(f));
        }
        for (auto& lane : traffic.lanes(e)) {
            out[traffic::kLanes].push_back(std::move(lane));
        }
    }
    for (std::int64_t n : scope.ic_nodes) {
        if (!model.node(n)) {
            continue;
        }
        for (auto& ic : traffic.interconnections(n)) {
            out[traffic::kInterconnections].push_back(std::move(ic));
        }
    }
    return out;
}

LayerSet compute_all(const ReadAccess& access) {
    Model model(access);
    return generate(model, whole(model));
}

// --- dirty tracking and regeneration -------------------------------------------

Dirty& dirty(Transaction& tx) { return tx.scratch<Dirty>("streetgen.dirty"); }

void mark_node(Transaction& tx, std::int64_t node) {
    dirty(tx).nodes.insert(node);
    tx.schedule(kRegenerate);
}

void mark_edge(Transaction& tx, std::int64_t edge) {
    dirty(tx).edges.insert(edge);
    tx.schedule(kRegenerate);
}

std::size_t regenerate(Transaction& tx, const Dirty& d, bool full) {
    Model model(tx);
    const Scope scope = full ? whole(model) : closure(model, d.nodes, d.edges);
    const LayerSet desired = generate(model, scope);
    std::size_t written = 0;
    for (const auto& layer : generated_layers()) {
        std::map<std::vector<Value>, Feature> existing;
        std::vector<std::int64_t> doomed;
        tx.scan(layer, [&](const Feature& f) {
            if (!scope.owns(layer, f)) {
                return;
            }
            if (!existing.emplace(feature_key(layer, f), f).second) {
                doomed.push_back(f.id);
            }
        });
        std::vector<Feature> updates;
        std::vector<Feature> inserts;
        for (const Feature& want : desired.at(layer)) {
            auto it = existing.find(feature_key(layer, want));
            if (it == existing.end()) {
                inserts.push_back(want);
                continue;
            }
            Feature f = want;
            f.id = it->second.id;
            if (!(f == it->second)) {
                updates.push_back(std::move(f));
            }
            existing.erase(it);
        }
        for (const auto& [_, f] : existing) {
            doomed.push_back(f.id);
        }
        std::sort(doomed.begin(), doomed.end());
        for (std::int64_t id : doomed) {
            tx.remove(layer, id);
        }
        for (auto& f : updates) {
            tx.update(layer, std::move(f));
        }
        for (auto& f : inserts) {
            tx.insert(layer, std::move(f));
        }
        written += doomed.size() + updates.size() + inserts.size();
    }
    traffic::collect_garbage(tx, scope, desired);
    for (const auto& w : model.warnings()) {
        tx.warn(w);
    }
    return written;
}

double width_from_probes(std::vector<double> distances) {
    if (distances.empty()) {
        throw Error(ErrorCode::EmptyVote, "no probe distances");
    }
    std::sort(distances.begin(), distances.end());
    const std::size_t n = distances.size();
    const double median =
        n % 2 ? distances[n / 2] : (distances[n / 2 - 1] + distances[n / 2]) / 2.0;
    return 2.0 * median;
}

// --- handlers ---------------------------------------------------------------------

namespace {

void on_node(Transaction& tx, ChangeRecord& rec) { mark_node(tx, rec.id); }

void on_edge(Transaction& tx, ChangeRecord& rec) {
    mark_edge(tx, rec.id);
    for (const auto* f : {rec.old_value ? &*rec.old_value : nullptr,
                          rec.new_value ? &*rec.new_value : nullptr}) {
        if (f) {
            mark_node(tx, key_int(*f, "start_node"));
            mark_node(tx, key_int(*f, "end_node"));
        }
    }
    if (rec.kind != ChangeKind::Insert) {
        return;
    }
    const topology::SplitInfo* split = topology::pending_split(tx);
    if (!split || split->second != 0 || key_int(*rec.new_value, "start_node") != split->node) {
        return;
    }
    // Overrides stored at the far end now belong to the second half.
    const std::int64_t old_edge = split->edge;
    const std::int64_t far = split->old_end;
    for (const Feature& f :
         tx.features(kLimits, std::nullopt, [&](const Feature& f) {
             return key_int(f, "edge_id") == old_edge && key_int(f, "node_id") == far;
         })) {
        Feature moved = f;
        moved.set("edge_id", rec.id);
        tx.update(kLimits, moved);
    }
    for (const Feature& f : tx.features(kRadii, std::nullopt, [&](const Feature& f) {
             return key_int(f, "node_id") == far &&
                    (key_int(f, "edge_a") == old_edge || key_int(f, "edge_b") == old_edge);
         })) {
        Feature moved = f;
        for (const char* k : {"edge_a", "edge_b"}) {
            if (key_int(moved, k) == old_edge) {
                moved.set(k, rec.id);
            }
        }
        tx.update(kRadii, moved);
    }
}

void run_regenerate(Transaction& tx) {
    Dirty d = std::move(dirty(tx));
    dirty(tx) = Dirty{};
    if (d.nodes.empty() && d.edges.empty()) {
        return;
    }
    regenerate(tx, d, false);
}

const Feature& edge_of(const ReadAccess& a, const Feature& controller) {
    return a.get(kEdges, key_int(controller, "edge_id"));
}

void limit_update(Transaction& tx, ChangeRecord& rec) {
    const Feature& stored = tx.get(kLimits, rec.id);
    const Feature& edge = edge_of(tx, stored);
    const std::int64_t node = key_int(stored, "node_id");
    const bool at_start = key_int(edge, "start_node") == node;
    const geom::Polyline& axis = *edge.polyline();
    const double length = geom::length(axis);
    double s = stored.real_or("s", 0.0);
    const geom::Point* p = rec.new_value->point();
    if (p && (!stored.point() || !(*p == *stored.point()))) {
        const double along = geom::project_to_polyline(*p, axis).s;
        s = at_start ? along : length - along;
    } else if (auto v = rec.new_value->get_real("s")) {
        s = *v;
    }
    const double clamped = std::clamp(s, kDeadEndLimit, kMaxLimitRatio * length);
    if (clamped != s) {
        tx.warn("limit of edge " + std::to_string(edge.id) + " clamped to " + fmt(clamped) +
                " m (at most " + fmt(kMaxLimitRatio * 100.0) + "% of the edge)");
    }
    Feature f = stored;
    f.set("s", clamped);
    f.set("overridden", true);
    f.geometry = flat(geom::point_at(axis, at_start ? clamped : length - clamped).point);
    tx.update(kLimits, f);
    mark_node(tx, node);
}

void limit_delete(Transaction& tx, ChangeRecord& rec) {
    Feature f = tx.get(kLimits, rec.id);
    f.set("overridden", false);
    tx.update(kLimits, f);
    mark_node(tx, key_int(f, "node_id"));
}

void radius_update(Transaction& tx, ChangeRecord& rec) {
    const Feature& stored = tx.get(kRadii, rec.id);
    const std::int64_t node = key_int(stored, "node_id");
    const std::int64_t ea = key_int(stored, "edge_a");
    const std::int64_t eb = key_int(stored, "edge_b");
    double r = stored.real_or("r", 0.0);
    const geom::Point* p = rec.new_value->point();
    if (p && (!stored.point() || !(*p == *stored.point()))) {
        Model model(tx);
        const Feature* a = model.edge(ea);
        const Feature* b = model.edge(eb);
        if (!a || !b) {
            throw Error(ErrorCode::NotFound, "corner edges no longer exist", kRadiusView, rec.id);
        }
        for (std::int64_t e : {ea, eb}) {
            const auto& sec = model.section(e);
            if (sec.polygon && geom::contains(*sec.polygon, *p)) {
                throw Error(ErrorCode::Rejected,
                            "radius controller dropped inside the section of edge " +
                                std::to_string(e) + "; place it outside the road surface",
                            kRadiusView, rec.id);
            }
        }
        const Arm arm_a = make_arm(*a, key_int(*a, "start_node") == node);
        const Arm arm_b = make_arm(*b, key_int(*b, "start_node") == node);
        const geom::Polyline border_a = safe_offset(arm_a.axis_out, arm_a.width / 2.0);
        const geom::Polyline border_b = safe_offset(arm_b.axis_out, -arm_b.width / 2.0);
        r = std::min(geom::distance_to_polyline(*p, border_a),
                     geom::distance_to_polyline(*p, border_b));
    } else if (auto v = rec.new_value->get_real("r")) {
        r = *v;
    }
    if (!(r > 0.0)) {
        throw Error(ErrorCode::Rejected, "corner radius must be positive", kRadiusView, rec.id);
    }
    Feature f = stored;
    f.set("r", r);
    f.set("overridden", true);
    tx.update(kRadii, f);
    mark_node(tx, node);
}

void radius_delete(Transaction& tx, ChangeRecord& rec) {
    Feature f = tx.get(kRadii, rec.id);
    f.set("r", tx.config().default_radius_m);
    f.set("overridden", false);
    tx.update(kRadii, f);
    mark_node(tx, key_int(f, "node_id"));
}

void probe_insert(Transaction& tx, ChangeRecord& rec) {
    const geom::Point* p = rec.new_value->point();
    if (!p) {
        throw Error(ErrorCode::InvalidGeometry, "a width probe is a point", kProbeView);
    }
    Feature f;
    f.geometry = flat(*p);
    rec.id = tx.insert(kProbes, f);
    tx.schedule(kWidthProbes);
}

void probe_delete(Transaction& tx, ChangeRecord& rec) { tx.remove(kProbes, rec.id); }

void run_width_probes(Transaction& tx) {
    const std::vector<Feature> probes = tx.features(kProbes);
    if (probes.empty()) {
        return;
    }
    const std::vector<Feature> sections = tx.features(kSections);
    std::map<std::int64_t, std::vector<double>> per_edge;
    for (const Feature& probe : probes) {
        const geom::Point& p = *probe.point();
        std::optional<std::int64_t> chosen;
        double best = std::numeric_limits<double>::infinity();
        bool inside = false;
        for (const Feature& sec : sections) {
            const Feature* edge = tx.find(kEdges, key_int(sec, "edge_id"));
            if (!edge) {
                continue;
            }
            const double gap = geom::distance_to_polygon(*sec.polygon(), p);
            const double to_axis = geom::distance_to_polyline(p, *edge->polyline());
            if (gap == 0.0) {
                if (!inside || to_axis < best) {
                    chosen = edge->id;
                    best = to_axis;
                }
                inside = true;
            } else if (!inside && gap <= 2.0 * edge->real_or("width", 0.0) && gap < best) {
                chosen = edge->id;
                best = gap;
            }
        }
        if (!chosen) {
            tx.warn("width probe " + std::to_string(probe.id) + " is near no road and was ignored");
            continue;
        }
        const Feature& edge = tx.get(kEdges, *chosen);
        per_edge[*chosen].push_back(geom::distance_to_polyline(p, *edge.polyline()));
    }
    for (const auto& [id, distances] : per_edge) {
        Feature edge = tx.get(kEdges, id);
        const double w = width_from_probes(distances);
        if (!(w > 0.0)) {
            tx.warn("width probes on edge " + std::to_string(id) + " lie on the axis; ignored");
            continue;
        }
        edge.set("width", w);
        tx.update_if_changed(kEdges, edge);
    }
    for (const Feature& probe : probes) {
        tx.remove(kProbes, probe.id);
    }
}

} // namespace

void install(Store& store) {
    store.create_layer({kLimits,
                        GeometryKind::Point,
                        false,
                        {{"edge_id", AttrType::Integer, false},
                         {"node_id", AttrType::Integer, false},
                         {"s", AttrType::Real, false},
                         {"overridden", AttrType::Boolean, false}},
                        false});
    store.create_layer({kRadii,
                        GeometryKind::Point,
                        false,
                        {{"node_id", AttrType::Integer, false},
                         {"edge_a", AttrType::Integer, false},
                         {"edge_b", AttrType::Integer, false},
                         {"r", AttrType::Real, false},
                         {"r_effective", AttrType::Real, false},
                         {"overridden", AttrType::Boolean, false}},
                        false});
    store.create_layer(
        {kSections, GeometryKind::Polygon, false, {{"edge_id", AttrType::Integer, false}}, false});
    store.create_layer({kIntersections,
                        GeometryKind::Polygon,
                        false,
                        {{"node_id", AttrType::Integer, false}},
                        false});
    store.create_layer({kProbes, GeometryKind::Point, false, {}, false});

    auto& h = store.handlers();
    h.add("streetgen.on_node", on_node);
    h.add("streetgen.on_edge", on_edge);
    h.add_deferred("streetgen.regenerate", run_regenerate);
    h.add_deferred("streetgen.width_probes", run_width_probes);
    h.add("streetgen.limit_update", limit_update);
    h.add("streetgen.limit_delete", limit_delete);
    h.add("streetgen.radius_update", radius_update);
    h.add("streetgen.radius_delete", radius_delete);
    h.add("streetgen.probe_insert", probe_insert);
    h.add("streetgen.probe_delete", probe_delete);

    store.register_trigger({"streetgen_node_dirty", kNodes, Timing::After, OnAny,
                            "streetgen.on_node", 100});
    store.register_trigger({"streetgen_edge_dirty", kEdges, Timing::After, OnAny,
                            "streetgen.on_edge", 100});
    store.register_trigger(
        {kRegenerate, kEdges, Timing::Deferred, 0, "streetgen.regenerate", 100});
    store.register_trigger(
        {kWidthProbes, kProbes, Timing::Deferred, 0, "streetgen.width_probes", 10});

    ProxyView limits;
    limits.name = kLimitView;
    limits.base = kLimits;
    limits.allowed = OnUpdate | OnDelete;
    limits.handlers = {{ChangeKind::Update, "streetgen.limit_update"},
                       {ChangeKind::Delete, "streetgen.limit_delete"}};
    limits.refusals = {{ChangeKind::Insert,
                        "intersection limits are generated from the network; drag an existing "
                        "limit controller instead"}};
    store.register_proxy_view(limits);

    ProxyView radii;
    radii.name = kRadiusView;
    radii.base = kRadii;
    radii.allowed = OnUpdate | OnDelete;
    radii.handlers = {{ChangeKind::Update, "streetgen.radius_update"},
                      {ChangeKind::Delete, "streetgen.radius_delete"}};
    radii.refusals = {{ChangeKind::Insert,
                       "corner radii are generated for each corner; drag an existing radius "
                       "controller instead"}};
    store.register_proxy_view(radii);

    ProxyView probes;
    probes.name = kProbeView;
    probes.base = kProbes;
    probes.allowed = OnInsert | OnDelete;
    probes.handlers = {{ChangeKind::Insert, "streetgen.probe_insert"},
                       {ChangeKind::Delete, "streetgen.probe_delete"}};
    probes.refusals = {{ChangeKind::Update,
                        "width probes are consumed when inserted; click new probes instead"}};
    store.register_proxy_view(probes);
}

} // namespace streetbase::streetgen
