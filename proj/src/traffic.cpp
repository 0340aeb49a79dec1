#include "streetbase/traffic.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "streetbase/topology.hpp"

namespace streetbase::traffic {

namespace {

using nlohmann::json;
using streetgen::Model;

std::int64_t key_int(const Feature& f, const char* name) { return f.int_or(name, 0); }

geom::Point unit(const geom::Point& from, const geom::Point& to) {
    return geom::normalized(to - from);
}

std::optional<Feature> find_override(const ReadAccess& a, const std::string& layer,
                                     const std::vector<Value>& key) {
    for (const Feature& f : a.features(layer, std::nullopt, [&](const Feature& f) {
             return streetgen::feature_key(layer, f) == key;
         })) {
        return f;
    }
    return std::nullopt;
}

bool is_empty_override(const Feature& f, std::initializer_list<const char*> fields) {
    if (kind_of(f.geometry) != GeometryKind::None) {
        return false;
    }
    for (const char* c : fields) {
        if (f.has(c)) {
            return false;
        }
    }
    return true;
}

} // namespace

double lane_offset(double width, std::int64_t lane_count, std::int64_t index) {
    const double n = static_cast<double>(lane_count);
    return (static_cast<double>(index) - (n - 1.0) / 2.0) * (width / n);
}

std::string default_direction(double offset, bool right_hand_traffic) {
    const bool forward = right_hand_traffic ? offset < 0.0 : offset >= 0.0;
    return forward ? "forward" : "backward";
}

std::vector<geom::Point> default_controls(const geom::Point& p0, const geom::Point& d0,
                                          const geom::Point& p1, const geom::Point& d1) {
    const double span = geom::distance(p0, p1);
    const double angle = std::acos(std::clamp(geom::dot(d0, d1), -1.0, 1.0));
    if (angle >= kParallelAngle && angle <= geom::kPi - kParallelAngle) {
        if (auto x = geom::line_intersection(p0, d0, p1, d1)) {
            const bool ahead = geom::dot(*x - p0, d0) > 0.0 && geom::dot(p1 - *x, d1) > 0.0;
            if (ahead && geom::distance(*x, p0) <= 3.0 * span &&
                geom::distance(*x, p1) <= 3.0 * span) {
                return {p0, *x, p1};
            }
        }
    }
    return {p0, p0 + d0 * (span / 3.0), p1 - d1 * (span / 3.0), p1};
}

std::vector<geom::Point> discretize(const std::vector<geom::Point>& controls) {
    return geom::discretize_bezier(controls, kBezierSegments);
}

std::string controls_to_text(const std::vector<geom::Point>& controls) {
    json arr = json::array();
    for (const auto& p : controls) {
        arr.push_back({p.x, p.y});
    }
    return arr.dump();
}

std::vector<geom::Point> controls_from_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("controls: ") + e.what());
    }
    if (!j.is_array() || j.size() < 2 || j.size() > 4) {
        throw Error(ErrorCode::ParseError, "controls must be an array of 2 to 4 [x, y] points");
    }
    std::vector<geom::Point> out;
    for (const auto& p : j) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
            throw Error(ErrorCode::ParseError, "each control point must be [x, y]");
        }
        out.push_back({p[0].get<double>(), p[1].get<double>(), {}});
    }
    return out;
}

// --- generation ---------------------------------------------------------------

Context::Context(Model& model) : model_(model) {
    if (!model.access().has_layer(kLaneOverrides)) {
        return;
    }
    model.access().scan(kLaneOverrides, [&](const Feature& f) {
        overrides_.emplace(std::pair{key_int(f, "edge_id"), key_int(f, "lane_index")}, f);
    });
}

std::vector<Feature> Context::lanes(std::int64_t edge_id) {
    if (auto it = lanes_.find(edge_id); it != lanes_.end()) {
        return it->second;
    }
    const Feature& edge = *model_.edge(edge_id);
    const std::int64_t count = edge.int_or("lane_count", 1);
    const double width = edge.real_or("width", 0.0);
    const auto& sec = model_.section(edge_id);
    std::optional<geom::Polyline> piece;
    if (sec.polygon) {
        const geom::Polyline& axis = *edge.polyline();
        piece = geom::sub_polyline(axis, sec.s_start, geom::length(axis) - sec.s_end);
    }
    std::vector<Feature> out;
    for (std::int64_t i = 0; i < count; ++i) {
        const double d = lane_offset(width, count, i);
        Feature f;
        if (piece) {
            try {
                geom::Polyline g = geom::offset_polyline(*piece, d);
                for (auto& v : g.vertices) {
                    v.z.reset();
                }
                f.geometry = std::move(g);
            } catch (const Error&) {
                // A lane that cannot be offset stays without geometry.
            }
        }
        f.set("edge_id", edge_id);
        f.set("lane_index", i);
        f.set("direction", default_direction(d, model_.config().right_hand_traffic));
        f.set("offset", d);
        out.push_back(std::move(f));
    }
    lanes_[edge_id] = out;
    return out;
}

std::vector<Feature> Context::merged_lanes(std::int64_t edge_id) {
    std::vector<Feature> out = lanes(edge_id);
    for (Feature& lane : out) {
        auto it = overrides_.find({edge_id, key_int(lane, "lane_index")});
        if (it == overrides_.end()) {
            continue;
        }
        if (const Value* v = it->second.value("direction")) {
            lane.set("direction", *v);
        }
        if (kind_of(it->second.geometry) != GeometryKind::None) {
            lane.geometry = it->second.geometry;
        }
    }
    return out;
}

std::vector<Feature> Context::interconnections(std::int64_t node) {
    struct End {
        std::int64_t edge;
        std::int64_t lane;
        geom::Point point;
        geom::Point travel; // unit direction of travel at the end
    };
    std::vector<End> incoming;
    std::vector<End> outgoing;
    for (const auto& arm : model_.arms(node)) {
        for (const Feature& lane : merged_lanes(arm.edge)) {
            const geom::Polyline* g = lane.polyline();
            if (!g || g->vertices.size() < 2) {
                continue;
            }
            const auto& v = g->vertices;
            const bool forward = lane.get_text("direction").value_or("forward") == "forward";
            const std::int64_t idx = key_int(lane, "lane_index");
            if (arm.at_start) {
                const geom::Point along = unit(v[0], v[1]);
                if (forward) {
                    outgoing.push_back({arm.edge, idx, v[0], along});
                } else {
                    incoming.push_back({arm.edge, idx, v[0], along * -1.0});
                }
            } else {
                const geom::Point along = unit(v[v.size() - 2], v.back());
                if (forward) {
                    incoming.push_back({arm.edge, idx, v.back(), along});
                } else {
                    outgoing.push_back({arm.edge, idx, v.back(), along * -1.0});
                }
            }
        }
    }
    auto by_key = [](const End& a, const End& b) {
        return std::tie(a.edge, a.lane) < std::tie(b.edge, b.lane);
    };
    std::sort(incoming.begin(), incoming.end(), by_key);
    std::sort(outgoing.begin(), outgoing.end(), by_key);
    std::vector<Feature> out;
    for (const End& in : incoming) {
        for (const End& to : outgoing) {
            if (in.edge == to.edge || geom::distance(in.point, to.point) <= 1e-9) {
                continue;
            }
            const auto controls = default_controls(in.point, in.travel, to.point, to.travel);
            Feature f;
            f.geometry = geom::Polyline{discretize(controls)};
            f.set("node_id", node);
            f.set("from_edge", in.edge);
            f.set("from_lane", in.lane);
            f.set("to_edge", to.edge);
            f.set("to_lane", to.lane);
            f.set("allowed", true);
            f.set("controls", controls_to_text(controls));
            out.push_back(std::move(f));
        }
    }
    return out;
}

void collect_garbage(Transaction& tx, const streetgen::Scope& scope,
                     const streetgen::LayerSet& generated) {
    for (const auto& [overrides, auto_layer] :
         {std::pair{kLaneOverrides, kLanes},
          std::pair{kInterconnectionOverrides, kInterconnections}}) {
        std::set<std::vector<Value>> live;
        for (const Feature& f : generated.at(auto_layer)) {
            live.insert(streetgen::feature_key(auto_layer, f));
        }
        std::vector<std::int64_t> doomed;
        tx.scan(overrides, [&](const Feature& f) {
            if (scope.owns(overrides, f) && !live.count(streetgen::feature_key(overrides, f))) {
                doomed.push_back(f.id);
            }
        });
        for (std::int64_t id : doomed) {
            tx.remove(overrides, id);
        }
    }
}

// --- handlers -------------------------------------------------------------------

namespace {

void on_lane_override(Transaction& tx, ChangeRecord& rec) {
    for (const auto* f : {rec.old_value ? &*rec.old_value : nullptr,
                          rec.new_value ? &*rec.new_value : nullptr}) {
        if (f && tx.find(topology::kEdges, key_int(*f, "edge_id"))) {
            streetgen::mark_edge(tx, key_int(*f, "edge_id"));
        }
    }
}

void on_split(Transaction& tx, ChangeRecord& rec) {
    const topology::SplitInfo* split = topology::pending_split(tx);
    if (!split || split->second != 0 || key_int(*rec.new_value, "start_node") != split->node) {
        return;
    }
    const std::int64_t old_edge = split->edge;
    const std::int64_t far = split->old_end;
    for (const Feature& f : tx.features(kLaneOverrides, std::nullopt, [&](const Feature& f) {
             return key_int(f, "edge_id") == old_edge;
         })) {
        if (const Value* dir = f.value("direction")) {
            Feature copy;
            copy.set("edge_id", rec.id);
            copy.set("lane_index", key_int(f, "lane_index"));
            copy.set("direction", *dir);
            tx.insert(kLaneOverrides, copy);
        }
        // A customised geometry no longer matches either half.
        if (kind_of(f.geometry) != GeometryKind::None) {
            Feature trimmed = f;
            trimmed.geometry = std::monostate{};
            if (is_empty_override(trimmed, {"direction"})) {
                tx.remove(kLaneOverrides, f.id);
            } else {
                tx.update(kLaneOverrides, trimmed);
            }
        }
    }
    for (const Feature& f :
         tx.features(kInterconnectionOverrides, std::nullopt, [&](const Feature& f) {
             return key_int(f, "node_id") == far &&
                    (key_int(f, "from_edge") == old_edge || key_int(f, "to_edge") == old_edge);
         })) {
        Feature moved = f;
        for (const char* k : {"from_edge", "to_edge"}) {
            if (key_int(moved, k) == old_edge) {
                moved.set(k, rec.id);
            }
        }
        tx.update(kInterconnectionOverrides, moved);
    }
}

void lane_update(Transaction& tx, ChangeRecord& rec) {
    const Feature& old = *rec.old_value;
    const Feature& now = *rec.new_value;
    const std::vector<Value> key = streetgen::feature_key(kLanes, old);
    std::optional<Feature> ov = find_override(tx, kLaneOverrides, key);
    Feature row = ov.value_or(Feature{});
    row.set("edge_id", key[0]);
    row.set("lane_index", key[1]);
    bool changed = false;
    if (auto dir = now.get_text("direction"); dir && dir != old.get_text("direction")) {
        if (*dir != "forward" && *dir != "backward") {
            throw Error(ErrorCode::Rejected, "lane direction must be 'forward' or 'backward'",
                        kLaneView, rec.id);
        }
        row.set("direction", *dir);
        changed = true;
    }
    if (const auto* g = now.polyline(); g && (!old.polyline() || !(*g == *old.polyline()))) {
        geom::validate(*g);
        row.geometry = *g;
        changed = true;
    }
    if (!changed) {
        return;
    }
    if (ov) {
        tx.update(kLaneOverrides, row);
    } else {
        tx.insert(kLaneOverrides, row);
    }
}

void lane_delete(Transaction& tx, ChangeRecord& rec) {
    if (auto ov = find_override(tx, kLaneOverrides, streetgen::feature_key(kLanes, *rec.old_value))) {
        tx.remove(kLaneOverrides, ov->id);
    }
}

void interconnection_update(Transaction& tx, ChangeRecord& rec) {
    const Feature& old = *rec.old_value;
    const Feature& now = *rec.new_value;
    const std::vector<Value> key = streetgen::feature_key(kInterconnections, old);
    std::optional<Feature> ov = find_override(tx, kInterconnectionOverrides, key);
    Feature row = ov.value_or(Feature{});
    static const char* names[] = {"node_id", "from_edge", "from_lane", "to_edge", "to_lane"};
    for (std::size_t i = 0; i < key.size(); ++i) {
        row.set(names[i], key[i]);
    }
    bool changed = false;
    if (auto allowed = now.get_bool("allowed"); allowed && allowed != old.get_bool("allowed")) {
        row.set("allowed", *allowed);
        changed = true;
    }
    if (auto text = now.get_text("controls"); text && text != old.get_text("controls")) {
        auto controls = controls_from_text(*text);
        const Feature& base = tx.get(kInterconnections, rec.id);
        const auto defaults = controls_from_text(*base.get_text("controls"));
        controls.front() = defaults.front();
        controls.back() = defaults.back();
        row.set("controls", controls_to_text(controls));
        changed = true;
    }
    if (!changed) {
        return;
    }
    if (ov) {
        tx.update(kInterconnectionOverrides, row);
    } else {
        tx.insert(kInterconnectionOverrides, row);
    }
}

void interconnection_delete(Transaction& tx, ChangeRecord& rec) {
    const std::vector<Value> key = streetgen::feature_key(kInterconnections, *rec.old_value);
    if (auto ov = find_override(tx, kInterconnectionOverrides, key)) {
        tx.remove(kInterconnectionOverrides, ov->id);
        return;
    }
    Feature row;
    static const char* names[] = {"node_id", "from_edge", "from_lane", "to_edge", "to_lane"};
    for (std::size_t i = 0; i < key.size(); ++i) {
        row.set(names[i], key[i]);
    }
    row.set("allowed", false);
    tx.insert(kInterconnectionOverrides, row);
}

void merge_interconnection(const ReadAccess&, Feature& merged, const Feature* override_row) {
    if (!merged.get_bool("allowed").value_or(true)) {
        merged.geometry = std::monostate{};
        return;
    }
    if (override_row && override_row->has("controls")) {
        try {
            merged.geometry = geom::Polyline{discretize(controls_from_text(*merged.get_text("controls")))};
        } catch (const Error&) {
            // Stored controls are validated on write; keep the default curve otherwise.
        }
    }
}

} // namespace

void install(Store& store) {
    store.create_layer({kLanes,
                        GeometryKind::Polyline,
                        true,
                        {{"edge_id", AttrType::Integer, false},
                         {"lane_index", AttrType::Integer, false},
                         {"direction", AttrType::Text, false},
                         {"offset", AttrType::Real, false}},
                        false});
    store.create_layer({kLaneOverrides,
                        GeometryKind::Polyline,
                        true,
                        {{"edge_id", AttrType::Integer, false},
                         {"lane_index", AttrType::Integer, false},
                         {"direction", AttrType::Text, true}},
                        false});
    store.create_layer({kInterconnections,
                        GeometryKind::Polyline,
                        true,
                        {{"node_id", AttrType::Integer, false},
                         {"from_edge", AttrType::Integer, false},
                         {"from_lane", AttrType::Integer, false},
                         {"to_edge", AttrType::Integer, false},
                         {"to_lane", AttrType::Integer, false},
                         {"allowed", AttrType::Boolean, false},
                         {"controls", AttrType::Text, false}},
                        false});
    store.create_layer({kInterconnectionOverrides,
                        GeometryKind::None,
                        false,
                        {{"node_id", AttrType::Integer, false},
                         {"from_edge", AttrType::Integer, false},
                         {"from_lane", AttrType::Integer, false},
                         {"to_edge", AttrType::Integer, false},
                         {"to_lane", AttrType::Integer, false},
                         {"allowed", AttrType::Boolean, true},
                         {"controls", AttrType::Text, true}},
                        false});

    auto& h = store.handlers();
    h.add("traffic.on_lane_override", on_lane_override);
    h.add("traffic.on_split", on_split);
    h.add("traffic.lane_update", lane_update);
    h.add("traffic.lane_delete", lane_delete);
    h.add("traffic.interconnection_update", interconnection_update);
    h.add("traffic.interconnection_delete", interconnection_delete);
    h.add_merge_hook("traffic.merge_interconnection", merge_interconnection);

    store.register_trigger({"traffic_lane_override_dirty", kLaneOverrides, Timing::After, OnAny,
                            "traffic.on_lane_override", 100});
    store.register_trigger(
        {"traffic_split", topology::kEdges, Timing::After, OnInsert, "traffic.on_split", 50});

    store.register_override_binding({kLanesMerged,
                                     kLanes,
                                     kLaneOverrides,
                                     {"edge_id", "lane_index"},
                                     {"direction", "geometry"},
                                     ""});
    store.register_override_binding(
        {kInterconnectionsMerged,
         kInterconnections,
         kInterconnectionOverrides,
         {"node_id", "from_edge", "from_lane", "to_edge", "to_lane"},
         {"allowed", "controls"},
         "traffic.merge_interconnection"});

    ProxyView lanes;
    lanes.name = kLaneView;
    lanes.base = kLanesMerged;
    lanes.allowed = OnUpdate | OnDelete;
    lanes.handlers = {{ChangeKind::Update, "traffic.lane_update"},
                      {ChangeKind::Delete, "traffic.lane_delete"}};
    lanes.refusals = {{ChangeKind::Insert,
                       "lanes follow the lane_count of their road; change lane_count on " +
                           topology::kEdgeView + " instead"}};
    store.register_proxy_view(lanes);

    ProxyView ics;
    ics.name = kInterconnectionView;
    ics.base = kInterconnectionsMerged;
    ics.allowed = OnUpdate | OnDelete;
    ics.handlers = {{ChangeKind::Update, "traffic.interconnection_update"},
                    {ChangeKind::Delete, "traffic.interconnection_delete"}};
    ics.refusals = {{ChangeKind::Insert,
                     "interconnections are generated between lanes; delete one to forbid it"}};
    store.register_proxy_view(ics);
}

} // namespace streetbase::traffic
