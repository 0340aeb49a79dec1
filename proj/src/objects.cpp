#include "streetbase/objects.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "streetbase/streetgen.hpp"
#include "streetbase/topology.hpp"

namespace streetbase::objects {

namespace {

using topology::kEdges;

constexpr double kCoherence = 1e-9;
// Crossings closer than this to the axis direction cannot span the road.
constexpr double kMinCrossingSine = 0.1;

std::int64_t key_int(const Feature& f, const char* name) { return f.int_or(name, 0); }

geom::Point flat(geom::Point p) {
    p.z.reset();
    return p;
}

double wrap_pi(double a) {
    double r = std::fmod(a, geom::kPi);
    if (r < 0.0) {
        r += geom::kPi;
    }
    return r >= geom::kPi ? 0.0 : r;
}

bool is_relative(PositionMode m) { return m != PositionMode::Absolute; }

PositionMode mode_of(const Feature& f) {
    return parse_position_mode(f.get_text("position_mode").value_or("absolute"));
}

bool orientation_relative(const Feature& f) {
    return f.get_text("orientation_mode").value_or("absolute") == "relative";
}

void check_orientation_mode(const std::string& m) {
    if (m != "absolute" && m != "relative") {
        throw Error(ErrorCode::Rejected, "orientation_mode must be 'absolute' or 'relative'",
                    kObjectView);
    }
}

void clear_reference(Feature& f) {
    for (const char* k : {"edge_id", "s", "d", "side", "theta_rel"}) {
        f.set(k, std::monostate{});
    }
    f.set("position_mode", std::string(to_string(PositionMode::Absolute)));
    f.set("orientation_mode", std::string("absolute"));
}

// Re-derives the absolute point and orientation of a relative object from
// its stored (edge, s, d, side, theta_rel). Returns false when s had to be
// clamped to the axis.
bool derive(const Feature& edge, Feature& obj) {
    const geom::Polyline& axis = *edge.polyline();
    const double length = geom::length(axis);
    const double s_raw = obj.real_or("s", 0.0);
    const double s = std::clamp(s_raw, 0.0, length);
    const PositionMode mode = mode_of(obj);
    const double offset = axis_offset(mode, obj.real_or("d", 0.0),
                                      static_cast<int>(obj.int_or("side", 1)),
                                      edge.real_or("width", 0.0));
    const geom::Station st = geom::point_at(axis, s, offset);
    obj.set("s", s);
    obj.geometry = flat(st.point);
    if (orientation_relative(obj)) {
        obj.set("theta_abs", geom::point_at(axis, s).tangent + obj.real_or("theta_rel", 0.0));
    }
    return s == s_raw;
}

// Attaches an object to an edge from its absolute point.
void attach(const Feature& edge, Feature& obj, PositionMode mode) {
    const geom::Polyline& axis = *edge.polyline();
    const geom::Point p = *obj.point();
    const geom::Projection pr = geom::project_to_polyline(p, axis);
    obj.set("edge_id", edge.id);
    obj.set("position_mode", std::string(to_string(mode)));
    obj.set("s", pr.s);
    if (mode == PositionMode::Sidewalk) {
        const int side = pr.d >= 0.0 ? 1 : -1;
        obj.set("side", static_cast<std::int64_t>(side));
        obj.set("d", std::abs(pr.d) - edge.real_or("width", 0.0) / 2.0);
    } else {
        obj.set("side", std::monostate{});
        obj.set("d", pr.d);
    }
}

void set_relative_orientation(const Feature& edge, Feature& obj, std::optional<double> theta_abs) {
    const double tangent = geom::point_at(*edge.polyline(), obj.real_or("s", 0.0)).tangent;
    if (theta_abs) {
        obj.set("theta_rel", *theta_abs - tangent);
    } else if (!obj.has("theta_rel")) {
        obj.set("theta_rel", obj.real_or("theta_abs", 0.0) - tangent);
    }
}

const Feature& nearest_or_fail(const ReadAccess& a, const geom::Point& p) {
    auto id = nearest_edge(a, p);
    if (!id) {
        throw Error(ErrorCode::Misconfigured,
                    "relative positioning needs a road axis, and the project has none",
                    kObjectView);
    }
    return a.get(kEdges, *id);
}

// --- object view ------------------------------------------------------------

void object_insert(Transaction& tx, ChangeRecord& rec) {
    const Feature& in = *rec.new_value;
    if (!in.point()) {
        throw Error(ErrorCode::InvalidGeometry, "a street object is a point", kObjectView);
    }
    Feature obj;
    obj.geometry = flat(*in.point());
    obj.set("class", in.get_text("class").value_or("object"));
    const PositionMode mode = parse_position_mode(in.get_text("position_mode").value_or("axis"));
    const std::string omode =
        in.get_text("orientation_mode").value_or(is_relative(mode) ? "relative" : "absolute");
    check_orientation_mode(omode);
    obj.set("orientation_mode", omode);
    obj.set("theta_abs", in.real_or("theta_abs", 0.0));
    if (!is_relative(mode)) {
        if (omode == "relative") {
            throw Error(ErrorCode::Rejected,
                        "relative orientation needs a relative position", kObjectView);
        }
        clear_reference(obj);
        rec.id = tx.insert(kObjects, obj);
        return;
    }
    const Feature& edge = nearest_or_fail(tx, *obj.point());
    attach(edge, obj, mode);
    if (omode == "relative") {
        if (auto rel = in.get_real("theta_rel")) {
            obj.set("theta_rel", *rel);
        }
        set_relative_orientation(edge, obj, std::nullopt);
    }
    derive(edge, obj);
    rec.id = tx.insert(kObjects, obj);
}

void object_update(Transaction& tx, ChangeRecord& rec) {
    const Feature stored = tx.get(kObjects, rec.id);
    const Feature& in = *rec.new_value;
    Feature obj = stored;
    if (auto c = in.get_text("class")) {
        obj.set("class", *c);
    }
    const PositionMode old_mode = mode_of(stored);
    const PositionMode mode =
        parse_position_mode(in.get_text("position_mode").value_or(std::string(to_string(old_mode))));
    std::string omode = in.get_text("orientation_mode")
                            .value_or(stored.get_text("orientation_mode").value_or("absolute"));
    check_orientation_mode(omode);
    const bool moved = in.point() && stored.point() && !(flat(*in.point()) == *stored.point());
    if (moved) {
        obj.geometry = flat(*in.point());
    }
    const auto theta_abs_in = in.get_real("theta_abs");
    const auto theta_rel_in = in.get_real("theta_rel");
    const bool abs_changed = theta_abs_in && theta_abs_in != stored.get_real("theta_abs");
    const bool rel_changed = theta_rel_in && theta_rel_in != stored.get_real("theta_rel");

    if (!is_relative(mode)) {
        const double theta = abs_changed ? *theta_abs_in : stored.real_or("theta_abs", 0.0);
        clear_reference(obj);
        obj.set("theta_abs", theta);
        tx.update(kObjects, obj);
        return;
    }

    const Feature* edge = nullptr;
    const bool manual = !moved && mode == old_mode &&
                        (in.get_int("edge_id") != stored.get_int("edge_id") ||
                         in.get_real("s") != stored.get_real("s") ||
                         in.get_real("d") != stored.get_real("d") ||
                         in.get_int("side") != stored.get_int("side")) &&
                        (in.has("edge_id") || in.has("s") || in.has("d") || in.has("side"));
    if (manual) {
        const std::int64_t id = in.get_int("edge_id").value_or(key_int(stored, "edge_id"));
        edge = &tx.get(kEdges, id);
        obj.set("edge_id", id);
        for (const char* k : {"s", "d"}) {
            if (auto v = in.get_real(k)) {
                obj.set(k, *v);
            }
        }
        if (auto side = in.get_int("side")) {
            obj.set("side", *side >= 0 ? std::int64_t{1} : std::int64_t{-1});
        }
    } else if (moved || mode != old_mode || !stored.has("edge_id")) {
        // The object is its own controller: re-attach to the closest axis.
        edge = &nearest_or_fail(tx, *obj.point());
        attach(*edge, obj, mode);
    } else {
        edge = &tx.get(kEdges, key_int(stored, "edge_id"));
    }

    obj.set("orientation_mode", omode);
    if (omode == "relative") {
        if (rel_changed) {
            obj.set("theta_rel", *theta_rel_in);
        } else {
            const bool was_relative = orientation_relative(stored) && stored.has("theta_rel");
            set_relative_orientation(
                *edge, obj,
                abs_changed ? theta_abs_in
                            : (was_relative && !moved && !manual
                                   ? std::nullopt
                                   : std::optional(stored.real_or("theta_abs", 0.0))));
        }
    } else {
        obj.set("theta_rel", std::monostate{});
        obj.set("theta_abs", abs_changed ? *theta_abs_in : stored.real_or("theta_abs", 0.0));
    }
    if (!derive(*edge, obj)) {
        tx.warn("object " + std::to_string(rec.id) + " abscissa clamped to its axis");
    }
    tx.update(kObjects, obj);
}

void object_delete(Transaction& tx, ChangeRecord& rec) { tx.remove(kObjects, rec.id); }

// --- crossing view -------------------------------------------------------------

struct Placed {
    const Feature* edge = nullptr;
    CrossingFit fit;
};

Placed place_crossing(const ReadAccess& a, const geom::Polygon& rough,
                      std::optional<std::int64_t> id) {
    try {
        geom::validate(rough);
    } catch (const Error& e) {
        throw Error(ErrorCode::InvalidGeometry,
                    std::string("crossing sketch is not a valid polygon: ") + e.what(),
                    kCrossingView, id);
    }
    std::optional<std::int64_t> best;
    double best_area = 0.0;
    const geom::BBox box = geom::bbox(rough);
    for (const Feature& sec : a.features(streetgen::kSections, box)) {
        const double overlap = geom::polygon_intersection_area(*sec.polygon(), rough);
        if (overlap > best_area + 1e-12) {
            best_area = overlap;
            best = key_int(sec, "edge_id");
        }
    }
    if (!best) {
        const geom::Point c = geom::centroid(rough);
        double best_gap = a.config().snap_tolerance_m;
        for (const Feature& sec : a.features(streetgen::kSections)) {
            const double gap = geom::distance_to_polygon(*sec.polygon(), c);
            if (gap <= best_gap) {
                best_gap = gap;
                best = key_int(sec, "edge_id");
            }
        }
    }
    if (!best) {
        throw Error(ErrorCode::NotOnRoad, "the crossing sketch does not overlap any road section",
                    kCrossingView, id);
    }
    Placed out;
    out.edge = &a.get(kEdges, *best);
    out.fit = fit_crossing(rough, *out.edge->polyline());
    return out;
}

Feature crossing_feature(const Feature& edge, const CrossingFit& fit) {
    const geom::Polyline& axis = *edge.polyline();
    Feature f;
    f.geometry = canonical_crossing(axis, edge.real_or("width", 0.0), fit);
    f.set("edge_id", edge.id);
    f.set("s", fit.s);
    f.set("width", fit.width);
    f.set("orientation", fit.orientation);
    f.set("orientation_rel", fit.orientation - geom::point_at(axis, fit.s).tangent);
    return f;
}

void crossing_insert(Transaction& tx, ChangeRecord& rec) {
    const geom::Polygon* rough = rec.new_value->polygon();
    if (!rough) {
        throw Error(ErrorCode::InvalidGeometry, "a crossing sketch is a polygon", kCrossingView);
    }
    const Placed p = place_crossing(tx, *rough, std::nullopt);
    rec.id = tx.insert(kCrossings, crossing_feature(*p.edge, p.fit));
}

void crossing_update(Transaction& tx, ChangeRecord& rec) {
    const Feature stored = tx.get(kCrossings, rec.id);
    const Feature& in = *rec.new_value;
    Feature f;
    if (const geom::Polygon* g = in.polygon(); g && !(*g == *stored.polygon())) {
        const Placed p = place_crossing(tx, *g, rec.id);
        f = crossing_feature(*p.edge, p.fit);
    } else {
        const Feature& edge = tx.get(kEdges, key_int(stored, "edge_id"));
        CrossingFit fit;
        fit.s = in.get_real("s").value_or(stored.real_or("s", 0.0));
        fit.width = in.get_real("width").value_or(stored.real_or("width", 0.0));
        fit.orientation = wrap_pi(in.get_real("orientation").value_or(stored.real_or("orientation", 0.0)));
        fit.s = std::clamp(fit.s, 0.0, geom::length(*edge.polyline()));
        if (!(fit.width > 0.0)) {
            throw Error(ErrorCode::Rejected, "crossing width must be positive", kCrossingView,
                        rec.id);
        }
        f = crossing_feature(edge, fit);
    }
    f.id = rec.id;
    tx.update_if_changed(kCrossings, f);
}

void crossing_delete(Transaction& tx, ChangeRecord& rec) { tx.remove(kCrossings, rec.id); }

// --- axis triggers ----------------------------------------------------------------

std::vector<Feature> on_edge(const ReadAccess& a, const std::string& layer, std::int64_t edge) {
    return a.features(layer, std::nullopt,
                      [&](const Feature& f) { return f.get_int("edge_id") == edge; });
}

void resync_crossing(Transaction& tx, const Feature& edge, Feature c) {
    const geom::Polyline& axis = *edge.polyline();
    CrossingFit fit;
    fit.s = std::clamp(c.real_or("s", 0.0), 0.0, geom::length(axis));
    fit.width = c.real_or("width", 0.0);
    const double rel = c.real_or("orientation_rel", 0.0);
    fit.orientation = wrap_pi(geom::point_at(axis, fit.s).tangent + rel);
    Feature f;
    try {
        f = crossing_feature(edge, fit);
    } catch (const Error& e) {
        tx.warn("crossing " + std::to_string(c.id) + " removed: " + e.what());
        tx.remove(kCrossings, c.id);
        return;
    }
    f.set("orientation_rel", rel);
    f.id = c.id;
    tx.update_if_changed(kCrossings, f);
}

void edge_updated(Transaction& tx, ChangeRecord& rec) {
    const Feature& edge = *rec.new_value;
    for (Feature obj : on_edge(tx, kObjects, rec.id)) {
        if (!derive(edge, obj)) {
            tx.warn("object " + std::to_string(obj.id) + " abscissa clamped to the shortened axis");
        }
        tx.update_if_changed(kObjects, obj);
    }
    for (const Feature& c : on_edge(tx, kCrossings, rec.id)) {
        resync_crossing(tx, edge, c);
    }
}

void edge_deleted(Transaction& tx, ChangeRecord& rec) {
    for (Feature obj : on_edge(tx, kObjects, rec.id)) {
        clear_reference(obj);
        tx.update(kObjects, obj);
    }
    for (const Feature& c : on_edge(tx, kCrossings, rec.id)) {
        tx.remove(kCrossings, c.id);
    }
}

void edge_split(Transaction& tx, ChangeRecord& rec) {
    const topology::SplitInfo* split = topology::pending_split(tx);
    if (!split || split->second != 0 || key_int(*rec.new_value, "start_node") != split->node) {
        return;
    }
    const Feature& second = *rec.new_value;
    const double cut = split->s;
    for (Feature obj : on_edge(tx, kObjects, split->edge)) {
        if (obj.real_or("s", 0.0) < cut) {
            continue;
        }
        obj.set("edge_id", second.id);
        obj.set("s", obj.real_or("s", 0.0) - cut);
        derive(second, obj);
        tx.update(kObjects, obj);
    }
    for (Feature c : on_edge(tx, kCrossings, split->edge)) {
        if (c.real_or("s", 0.0) < cut) {
            continue;
        }
        c.set("edge_id", second.id);
        c.set("s", c.real_or("s", 0.0) - cut);
        resync_crossing(tx, second, c);
    }
}

} // namespace

std::string_view to_string(PositionMode m) {
    switch (m) {
    case PositionMode::Absolute:
        return "absolute";
    case PositionMode::Axis:
        return "axis";
    case PositionMode::Sidewalk:
        return "sidewalk";
    }
    return "absolute";
}

PositionMode parse_position_mode(std::string_view text) {
    if (text == "absolute") {
        return PositionMode::Absolute;
    }
    if (text == "axis") {
        return PositionMode::Axis;
    }
    if (text == "sidewalk") {
        return PositionMode::Sidewalk;
    }
    throw Error(ErrorCode::Rejected,
                "position_mode must be 'absolute', 'axis' or 'sidewalk', not '" +
                    std::string(text) + "'");
}

std::optional<std::int64_t> nearest_edge(const ReadAccess& a, const geom::Point& p) {
    std::optional<std::int64_t> best;
    double best_d = std::numeric_limits<double>::infinity();
    a.scan(kEdges, [&](const Feature& e) {
        const double d = geom::distance_to_polyline(p, *e.polyline());
        if (d < best_d) {
            best_d = d;
            best = e.id;
        }
    });
    return best;
}

double axis_offset(PositionMode mode, double d, int side, double road_width) {
    if (mode == PositionMode::Sidewalk) {
        return (side >= 0 ? 1.0 : -1.0) * (road_width / 2.0 + d);
    }
    return d;
}

CrossingFit fit_crossing(const geom::Polygon& rough, const geom::Polyline& axis) {
    const geom::Ring& ring = rough.exterior;
    std::vector<double> angles;
    std::vector<double> weights;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        const geom::Point v = ring[i + 1] - ring[i];
        angles.push_back(geom::angle_of(v));
        weights.push_back(geom::norm(v));
    }
    CrossingFit fit;
    fit.orientation = geom::weighted_orientation_mean(angles, weights);
    const geom::Point across = geom::left_normal(geom::from_angle(fit.orientation));

    struct Extent {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        int count = 0;
        void add(double v) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            ++count;
        }
    };
    Extent left;
    Extent right;
    Extent all;
    const std::size_t n = ring.size() > 1 && ring.front() == ring.back() ? ring.size() - 1
                                                                          : ring.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double proj = geom::dot(ring[i], across);
        (geom::project_to_polyline(ring[i], axis).d >= 0.0 ? left : right).add(proj);
        all.add(proj);
    }
    double sum = 0.0;
    int sides = 0;
    for (const Extent* e : {&left, &right}) {
        if (e->count >= 2) {
            sum += e->hi - e->lo;
            ++sides;
        }
    }
    fit.width = sides ? sum / sides : all.hi - all.lo;
    fit.s = geom::project_to_polyline(geom::centroid(rough), axis).s;
    return fit;
}

geom::Polygon canonical_crossing(const geom::Polyline& axis, double road_width,
                                 const CrossingFit& fit) {
    const geom::Station st = geom::point_at(axis, fit.s);
    const double sine = std::abs(std::sin(fit.orientation - st.tangent));
    if (sine < kMinCrossingSine) {
        throw Error(ErrorCode::Rejected, "a crossing cannot run almost along the road",
                    kCrossingView);
    }
    if (!(fit.width > 0.0)) {
        throw Error(ErrorCode::Rejected, "crossing width must be positive", kCrossingView);
    }
    const double length = road_width / sine;
    const geom::Point u = geom::from_angle(fit.orientation);
    const geom::Point n = geom::left_normal(u);
    const geom::Point c = flat(st.point);
    const geom::Point hu = u * (length / 2.0);
    const geom::Point hn = n * (fit.width / 2.0);
    geom::Polygon poly;
    poly.exterior = geom::close_ring({c - hu - hn, c + hu - hn, c + hu + hn, c - hu + hn});
    return poly;
}

std::vector<std::string> check(const ReadAccess& a) {
    std::vector<std::string> out;
    a.scan(kObjects, [&](const Feature& obj) {
        const std::string tag = "object " + std::to_string(obj.id);
        const PositionMode mode = mode_of(obj);
        if (!is_relative(mode)) {
            if (obj.has("edge_id")) {
                out.push_back(tag + " is absolute but keeps a reference edge");
            }
            return;
        }
        const Feature* edge = a.find(kEdges, key_int(obj, "edge_id"));
        if (!edge) {
            out.push_back(tag + " references missing edge " +
                          std::to_string(key_int(obj, "edge_id")));
            return;
        }
        Feature derived = obj;
        derive(*edge, derived);
        if (geom::distance(*derived.point(), *obj.point()) > kCoherence ||
            derived.real_or("s", 0.0) != obj.real_or("s", 0.0)) {
            out.push_back(tag + " point does not match its relative position");
        }
        if (orientation_relative(obj) &&
            std::abs(derived.real_or("theta_abs", 0.0) - obj.real_or("theta_abs", 0.0)) >
                kCoherence) {
            out.push_back(tag + " orientation does not match its relative orientation");
        }
    });
    a.scan(kCrossings, [&](const Feature& c) {
        const std::string tag = "crossing " + std::to_string(c.id);
        const Feature* edge = a.find(kEdges, key_int(c, "edge_id"));
        if (!edge) {
            out.push_back(tag + " references missing edge " +
                          std::to_string(key_int(c, "edge_id")));
            return;
        }
        CrossingFit fit{c.real_or("orientation", 0.0), c.real_or("width", 0.0),
                        c.real_or("s", 0.0)};
        const double t = geom::point_at(*edge->polyline(), fit.s).tangent;
        const double drift = std::abs(wrap_pi(fit.orientation - t - c.real_or("orientation_rel", 0.0) +
                                              geom::kPi / 2.0) -
                                      geom::kPi / 2.0);
        if (drift > kCoherence) {
            out.push_back(tag + " orientation does not follow its axis");
        }
        try {
            const geom::Polygon want = canonical_crossing(*edge->polyline(),
                                                          edge->real_or("width", 0.0), fit);
            const auto& have = c.polygon()->exterior;
            bool same = have.size() == want.exterior.size();
            for (std::size_t i = 0; same && i < have.size(); ++i) {
                same = geom::distance(have[i], want.exterior[i]) <= kCoherence;
            }
            if (!same) {
                out.push_back(tag + " polygon does not match its parameters");
            }
        } catch (const Error& e) {
            out.push_back(tag + ": " + e.what());
        }
    });
    return out;
}

void install(Store& store) {
    store.create_layer({kObjects,
                        GeometryKind::Point,
                        false,
                        {{"class", AttrType::Text, false},
                         {"position_mode", AttrType::Text, false},
                         {"edge_id", AttrType::Integer, true},
                         {"s", AttrType::Real, true},
                         {"d", AttrType::Real, true},
                         {"side", AttrType::Integer, true},
                         {"orientation_mode", AttrType::Text, false},
                         {"theta_abs", AttrType::Real, false},
                         {"theta_rel", AttrType::Real, true}},
                        false});
    store.create_layer({kCrossings,
                        GeometryKind::Polygon,
                        false,
                        {{"edge_id", AttrType::Integer, false},
                         {"s", AttrType::Real, false},
                         {"width", AttrType::Real, false},
                         {"orientation", AttrType::Real, false},
                         {"orientation_rel", AttrType::Real, false}},
                        false});

    auto& h = store.handlers();
    h.add("objects.object_insert", object_insert);
    h.add("objects.object_update", object_update);
    h.add("objects.object_delete", object_delete);
    h.add("objects.crossing_insert", crossing_insert);
    h.add("objects.crossing_update", crossing_update);
    h.add("objects.crossing_delete", crossing_delete);
    h.add("objects.edge_updated", edge_updated);
    h.add("objects.edge_deleted", edge_deleted);
    h.add("objects.edge_split", edge_split);

    store.register_trigger(
        {"objects_resync", kEdges, Timing::After, OnUpdate, "objects.edge_updated", 20});
    store.register_trigger(
        {"objects_detach", kEdges, Timing::After, OnDelete, "objects.edge_deleted", 20});
    store.register_trigger(
        {"objects_split", kEdges, Timing::After, OnInsert, "objects.edge_split", 20});

    ProxyView objects;
    objects.name = kObjectView;
    objects.base = kObjects;
    objects.handlers = {{ChangeKind::Insert, "objects.object_insert"},
                        {ChangeKind::Update, "objects.object_update"},
                        {ChangeKind::Delete, "objects.object_delete"}};
    store.register_proxy_view(objects);

    ProxyView crossings;
    crossings.name = kCrossingView;
    crossings.base = kCrossings;
    crossings.handlers = {{ChangeKind::Insert, "objects.crossing_insert"},
                          {ChangeKind::Update, "objects.crossing_update"},
                          {ChangeKind::Delete, "objects.crossing_delete"}};
    store.register_proxy_view(crossings);
}

} // namespace streetbase::objects
