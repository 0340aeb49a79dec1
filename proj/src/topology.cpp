#include "streetbase/topology.hpp"

#include <cmath>
#include <limits>

namespace streetbase::topology {

namespace {

constexpr double kCoincide = 1e-9;

Error ambiguous(const std::string& msg, std::optional<std::int64_t> id = std::nullopt,
                const std::string& layer = kNodeView) {
    return Error(ErrorCode::AmbiguousEdit, msg, layer, id);
}

const geom::Point& node_point(const ReadAccess& a, std::int64_t id) {
    const Feature& n = a.get(kNodes, id);
    return *n.point();
}

geom::Point flat(geom::Point p) {
    p.z.reset();
    return p;
}

std::optional<std::int64_t> nearest_node(const ReadAccess& a, const geom::Point& p, double tol,
                                         std::optional<std::int64_t> exclude = std::nullopt) {
    std::optional<std::int64_t> best;
    double best_d = std::numeric_limits<double>::infinity();
    a.scan(kNodes, [&](const Feature& n) {
        if (exclude && n.id == *exclude) {
            return;
        }
        const double d = geom::distance(*n.point(), p);
        if (d <= tol && d < best_d) {
            best_d = d;
            best = n.id;
        }
    });
    return best;
}

bool near_any(const std::vector<geom::Point>& pts, const geom::Point& p) {
    for (const auto& q : pts) {
        if (geom::distance(p, q) <= kCoincide) {
            return true;
        }
    }
    return false;
}

// First other edge whose interior the line crosses. Contacts at shared
// end nodes are allowed.
std::optional<std::int64_t> find_crossing(const ReadAccess& a, const geom::Polyline& line,
                                          std::int64_t exclude) {
    const geom::BBox box = geom::bbox(line.vertices);
    const std::vector<geom::Point> ends = {line.vertices.front(), line.vertices.back()};
    for (const Feature& e : a.features(kEdges, box)) {
        if (e.id == exclude) {
            continue;
        }
        const auto& other = e.polyline()->vertices;
        const std::vector<geom::Point> other_ends = {other.front(), other.back()};
        for (std::size_t i = 0; i + 1 < line.vertices.size(); ++i) {
            for (std::size_t j = 0; j + 1 < other.size(); ++j) {
                auto hit = geom::segment_intersection(line.vertices[i], line.vertices[i + 1],
                                                      other[j], other[j + 1]);
                if (!hit) {
                    continue;
                }
                if (near_any(ends, *hit) && near_any(other_ends, *hit)) {
                    continue;
                }
                return e.id;
            }
        }
    }
    return std::nullopt;
}

void check_no_crossing(const ReadAccess& a, const geom::Polyline& line, std::int64_t self) {
    if (auto other = find_crossing(a, line, self)) {
        throw Error(ErrorCode::AmbiguousEdit,
                    "edge would cross edge " + std::to_string(*other) +
                        "; this would require splitting edges, split them first",
                    kEdgeView, self ? std::optional(self) : std::nullopt);
    }
}

// Snaps both ends of the line onto nodes; returns (start, end).
std::pair<std::int64_t, std::int64_t> snap_endpoints(const ReadAccess& a, geom::Polyline& line,
                                                     std::optional<std::int64_t> id) {
    const double tol = a.config().snap_tolerance_m;
    auto start = nearest_node(a, line.vertices.front(), tol);
    auto end = nearest_node(a, line.vertices.back(), tol);
    if (!start || !end) {
        throw Error(ErrorCode::AmbiguousEdit,
                    std::string("edge ") + (!start ? "start" : "end") +
                        " endpoint not on a node; create the node first",
                    kEdgeView, id);
    }
    if (*start == *end) {
        throw Error(ErrorCode::Rejected, "edge would start and end on the same node", kEdgeView,
                    id);
    }
    line.vertices.front() = node_point(a, *start);
    line.vertices.back() = node_point(a, *end);
    for (auto& v : line.vertices) {
        v = flat(v);
    }
    geom::validate(line);
    return {*start, *end};
}

// --- trigger and view handlers ---------------------------------------------

void edge_guard(Transaction& tx, ChangeRecord& rec) {
    Feature& f = *rec.new_value;
    if (auto w = f.get_real("width")) {
        if (*w == 0.0) {
            throw Error(ErrorCode::Rejected, "road width must be non-zero", kEdges, rec.id);
        }
        f.set("width", std::abs(*w));
    } else {
        f.set("width", tx.config().default_width_m);
    }
    if (auto n = f.get_int("lane_count")) {
        if (*n < 1) {
            throw Error(ErrorCode::Rejected, "lane_count must be at least 1", kEdges, rec.id);
        }
    } else {
        f.set("lane_count", tx.config().default_lane_count);
    }
    const auto* line = f.polyline();
    const auto start = f.get_int("start_node");
    const auto end = f.get_int("end_node");
    if (!line || !start || !end) {
        throw Error(ErrorCode::Rejected, "edge needs geometry, start_node and end_node", kEdges,
                    rec.id);
    }
    const Feature* a = tx.find(kNodes, *start);
    const Feature* b = tx.find(kNodes, *end);
    if (!a || !b) {
        throw Error(ErrorCode::NotFound, "edge references a missing node", kEdges, rec.id);
    }
    if (geom::distance(*a->point(), line->vertices.front()) > kCoincide ||
        geom::distance(*b->point(), line->vertices.back()) > kCoincide) {
        throw Error(ErrorCode::Rejected, "edge geometry does not end on its nodes", kEdges, rec.id);
    }
}

void view_node_insert(Transaction& tx, ChangeRecord& rec) {
    const auto* p = rec.new_value->point();
    if (!p) {
        throw Error(ErrorCode::InvalidGeometry, "a node needs a point geometry", kNodeView);
    }
    rec.id = insert_node(tx, *p);
}

void view_node_update(Transaction& tx, ChangeRecord& rec) {
    const auto* p = rec.new_value->point();
    if (!p) {
        throw Error(ErrorCode::InvalidGeometry, "a node needs a point geometry", kNodeView, rec.id);
    }
    if (rec.old_value && rec.old_value->point() && *rec.old_value->point() == *p) {
        return;
    }
    move_node(tx, rec.id, *p);
}

void view_node_delete(Transaction& tx, ChangeRecord& rec) { delete_node(tx, rec.id); }

void view_edge_insert(Transaction& tx, ChangeRecord& rec) {
    const auto* line = rec.new_value->polyline();
    if (!line) {
        throw Error(ErrorCode::InvalidGeometry, "an edge needs a polyline geometry", kEdgeView);
    }
    rec.id = insert_edge(tx, *line, rec.new_value->get_real("width"),
                         rec.new_value->get_int("lane_count"));
}

void view_edge_update(Transaction& tx, ChangeRecord& rec) {
    const Feature& old = tx.get(kEdges, rec.id);
    const Feature& nw = *rec.new_value;
    Feature f = old;
    if (const auto* line = nw.polyline(); line && *line != *old.polyline()) {
        geom::Polyline g = *line;
        geom::validate(g);
        auto [start, end] = snap_endpoints(tx, g, rec.id);
        check_no_crossing(tx, g, rec.id);
        f.geometry = g;
        f.set("start_node", start);
        f.set("end_node", end);
    }
    if (const Value* w = nw.value("width")) {
        f.set("width", *w);
    }
    if (const Value* n = nw.value("lane_count")) {
        f.set("lane_count", *n);
    }
    if (nw.attributes.count("name")) {
        f.set("name", *nw.value("name"));
    }
    tx.update_if_changed(kEdges, f);
}

void view_edge_delete(Transaction& tx, ChangeRecord& rec) { delete_edge(tx, rec.id); }

} // namespace

const SplitInfo* pending_split(Transaction& tx) {
    auto& p = tx.scratch<std::optional<SplitInfo>>("topology.pending_split");
    return p ? &*p : nullptr;
}

void install(Store& store) {
    store.create_layer({kNodes, GeometryKind::Point, false, {{"name", AttrType::Text, true}}, false});
    store.create_layer({kEdges,
                        GeometryKind::Polyline,
                        false,
                        {{"start_node", AttrType::Integer, false},
                         {"end_node", AttrType::Integer, false},
                         {"width", AttrType::Real, false},
                         {"lane_count", AttrType::Integer, false},
                         {"name", AttrType::Text, true}},
                        false});

    auto& h = store.handlers();
    h.add("topology.edge_guard", edge_guard);
    h.add("topology.view_node_insert", view_node_insert);
    h.add("topology.view_node_update", view_node_update);
    h.add("topology.view_node_delete", view_node_delete);
    h.add("topology.view_edge_insert", view_edge_insert);
    h.add("topology.view_edge_update", view_edge_update);
    h.add("topology.view_edge_delete", view_edge_delete);

    store.register_trigger({"road_edge_guard", kEdges, Timing::Before, OnInsert | OnUpdate,
                            "topology.edge_guard", 0});

    ProxyView nodes;
    nodes.name = kNodeView;
    nodes.base = kNodes;
    nodes.handlers = {{ChangeKind::Insert, "topology.view_node_insert"},
                      {ChangeKind::Update, "topology.view_node_update"},
                      {ChangeKind::Delete, "topology.view_node_delete"}};
    store.register_proxy_view(nodes);

    ProxyView edges;
    edges.name = kEdgeView;
    edges.base = kEdges;
    edges.handlers = {{ChangeKind::Insert, "topology.view_edge_insert"},
                      {ChangeKind::Update, "topology.view_edge_update"},
                      {ChangeKind::Delete, "topology.view_edge_delete"}};
    store.register_proxy_view(edges);
}

std::vector<std::int64_t> incident_edges(const ReadAccess& a, std::int64_t node) {
    std::vector<std::int64_t> out;
    a.scan(kEdges, [&](const Feature& e) {
        if (e.get_int("start_node") == node || e.get_int("end_node") == node) {
            out.push_back(e.id);
        }
    });
    return out;
}

std::int64_t insert_node(Transaction& tx, geom::Point p) {
    p = flat(p);
    if (!geom::is_finite(p)) {
        throw Error(ErrorCode::InvalidGeometry, "node position must be finite", kNodeView);
    }
    const double tol = tx.config().snap_tolerance_m;
    if (auto n = nearest_node(tx, p, tol)) {
        throw ambiguous("point is near existing node " + std::to_string(*n));
    }
    std::vector<std::pair<std::int64_t, geom::Projection>> candidates;
    const geom::BBox box{p.x - tol, p.y - tol, p.x + tol, p.y + tol};
    for (const Feature& e : tx.features(kEdges, box)) {
        const auto proj = geom::project_to_polyline(p, *e.polyline());
        if (std::abs(proj.d) <= tol && geom::distance_to_polyline(p, *e.polyline()) <= tol) {
            candidates.push_back({e.id, proj});
        }
    }
    if (candidates.size() > 1) {
        throw ambiguous("point is near multiple candidate edges; split one edge explicitly");
    }
    if (candidates.size() == 1) {
        return split_edge(tx, candidates[0].first, candidates[0].second.s).node;
    }
    Feature f;
    f.geometry = p;
    return tx.insert(kNodes, f);
}

std::int64_t insert_edge(Transaction& tx, geom::Polyline line, std::optional<double> width,
                         std::optional<std::int64_t> lane_count) {
    geom::validate(line);
    auto [start, end] = snap_endpoints(tx, line, std::nullopt);
    check_no_crossing(tx, line, 0);
    Feature f;
    f.geometry = line;
    f.set("start_node", start);
    f.set("end_node", end);
    f.set("width", width.value_or(tx.config().default_width_m));
    f.set("lane_count", lane_count.value_or(tx.config().default_lane_count));
    return tx.insert(kEdges, f);
}

SplitResult split_edge(Transaction& tx, std::int64_t edge_id, double s) {
    const Feature edge = tx.get(kEdges, edge_id);
    const geom::Polyline& axis = *edge.polyline();
    const double length = geom::length(axis);
    if (!(s > kCoincide && s < length - kCoincide)) {
        throw Error(ErrorCode::OutOfRange, "split abscissa must lie strictly inside the edge",
                    kEdges, edge_id);
    }
    const geom::Point p = flat(geom::point_at(axis, s).point);
    const double tol = tx.config().snap_tolerance_m;
    if (auto n = nearest_node(tx, p, tol)) {
        throw ambiguous("split point is near existing node " + std::to_string(*n), edge_id, kEdges);
    }
    Feature node;
    node.geometry = p;
    const std::int64_t node_id = tx.insert(kNodes, node);

    geom::Polyline first = geom::sub_polyline(axis, 0.0, s);
    geom::Polyline second = geom::sub_polyline(axis, s, length);
    first.vertices.front() = axis.vertices.front();
    first.vertices.back() = p;
    second.vertices.front() = p;
    second.vertices.back() = axis.vertices.back();

    SplitInfo info;
    info.edge = edge_id;
    info.node = node_id;
    info.s = s;
    info.length = length;
    info.old_end = *edge.get_int("end_node");

    Feature half = edge;
    half.id = 0;
    half.geometry = second;
    half.set("start_node", node_id);
    auto& pending = tx.scratch<std::optional<SplitInfo>>("topology.pending_split");
    pending = info;
    std::int64_t second_id = 0;
    try {
        second_id = tx.insert(kEdges, half);
    } catch (...) {
        pending.reset();
        throw;
    }
    pending.reset();

    Feature head = edge;
    head.geometry = first;
    head.set("end_node", node_id);
    tx.update(kEdges, head);
    return {node_id, edge_id, second_id};
}

void move_node(Transaction& tx, std::int64_t node, geom::Point p) {
    p = flat(p);
    const Feature current = tx.get(kNodes, node);
    const double tol = tx.config().snap_tolerance_m;
    if (auto other = nearest_node(tx, p, tol, node)) {
        throw ambiguous("moved node would be near node " + std::to_string(*other), node);
    }
    Feature moved = current;
    moved.geometry = p;
    tx.update(kNodes, moved);

    std::vector<std::int64_t> touched;
    for (std::int64_t id : incident_edges(tx, node)) {
        Feature e = tx.get(kEdges, id);
        geom::Polyline line = *e.polyline();
        if (e.get_int("start_node") == node) {
            line.vertices.front() = p;
        }
        if (e.get_int("end_node") == node) {
            line.vertices.back() = p;
        }
        try {
            geom::validate(line);
        } catch (const Error& err) {
            throw Error(ErrorCode::AmbiguousEdit,
                        std::string("moving the node collapses edge ") + std::to_string(id) + ": " +
                            err.what(),
                        kNodeView, node);
        }
        e.geometry = line;
        tx.update(kEdges, e);
        touched.push_back(id);
    }
    for (std::int64_t id : touched) {
        if (auto other = find_crossing(tx, *tx.get(kEdges, id).polyline(), id)) {
            throw ambiguous("moving the node makes edge " + std::to_string(id) + " cross edge " +
                                std::to_string(*other),
                            node);
        }
    }
}

void delete_edge(Transaction& tx, std::int64_t edge) {
    tx.get(kEdges, edge);
    tx.remove(kEdges, edge);
}

void delete_node(Transaction& tx, std::int64_t node) {
    tx.get(kNodes, node);
    const auto edges = incident_edges(tx, node);
    if (!edges.empty()) {
        throw ambiguous("node has " + std::to_string(edges.size()) +
                            " incident edges; delete them first",
                        node);
    }
    tx.remove(kNodes, node);
}

std::vector<std::string> check(const ReadAccess& a) {
    std::vector<std::string> out;
    std::vector<Feature> nodes = a.features(kNodes);
    std::vector<Feature> edges = a.features(kEdges);
    const double tol = a.config().snap_tolerance_m;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        for (std::size_t j = i + 1; j < nodes.size(); ++j) {
            if (geom::distance(*nodes[i].point(), *nodes[j].point()) <= tol) {
                out.push_back("nodes " + std::to_string(nodes[i].id) + " and " +
                              std::to_string(nodes[j].id) + " are within snap tolerance");
            }
        }
    }
    for (const auto& e : edges) {
        const std::string tag = "edge " + std::to_string(e.id);
        const auto* line = e.polyline();
        const Feature* a_node = a.find(kNodes, e.int_or("start_node", 0));
        const Feature* b_node = a.find(kNodes, e.int_or("end_node", 0));
        if (!a_node || !b_node) {
            out.push_back(tag + " references a missing node");
            continue;
        }
        if (geom::distance(*a_node->point(), line->vertices.front()) > kCoincide ||
            geom::distance(*b_node->point(), line->vertices.back()) > kCoincide) {
            out.push_back(tag + " does not end on its nodes");
        }
        if (!(e.real_or("width", 0.0) > 0.0)) {
            out.push_back(tag + " has a non-positive width");
        }
        if (e.int_or("lane_count", 0) < 1) {
            out.push_back(tag + " has no lanes");
        }
        if (auto other = find_crossing(a, *line, e.id); other && *other > e.id) {
            out.push_back(tag + " crosses edge " + std::to_string(*other));
        }
    }
    return out;
}

} // namespace streetbase::topology
