#include "streetbase/aux.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "streetbase/geojson.hpp"

namespace streetbase::aux {

namespace {

constexpr double kCoherence = 1e-9;

geom::Point flat(const geom::Point& p) { return {p.x, p.y, {}}; }

// Unit tangent at vertex i: the bisector of the adjacent segments.
geom::Point tangent_at(const std::vector<geom::Point>& v, std::size_t i) {
    const std::size_t n = v.size();
    const geom::Point in = i > 0 ? geom::normalized(v[i] - v[i - 1]) : geom::Point{};
    const geom::Point out = i + 1 < n ? geom::normalized(v[i + 1] - v[i]) : geom::Point{};
    if (i == 0) {
        return out;
    }
    if (i + 1 == n) {
        return in;
    }
    const geom::Point sum = in + out;
    return geom::norm(sum) < 1e-12 ? in : geom::normalized(sum);
}

std::int64_t stride(std::int64_t lod) {
    std::int64_t k = 1;
    for (std::int64_t i = 0; i < lod && k < (std::int64_t{1} << 40); ++i) {
        k *= 4;
    }
    return k;
}

void lens_guard(Transaction&, ChangeRecord& rec) {
    Feature& f = *rec.new_value;
    if (f.int_or("lod", 0) < 0) {
        throw Error(ErrorCode::Rejected, "lens lod must be >= 0", kLenses, rec.id);
    }
    if (!f.has("lod")) {
        f.set("lod", std::int64_t{0});
    }
}

std::vector<Feature> read_display(const ReadAccess& a) {
    const std::vector<Feature> points = a.features(kPoints);
    std::map<std::int64_t, Feature> shown;
    a.scan(kLenses, [&](const Feature& lens) {
        for (Feature& p : lens_filter(*lens.polygon(), lens.int_or("lod", 0),
                                      lens.get_int("pass"), points)) {
            shown.emplace(p.id, std::move(p));
        }
    });
    std::vector<Feature> out;
    out.reserve(shown.size());
    for (auto& [id, f] : shown) {
        out.push_back(std::move(f));
    }
    return out;
}

void line_guard(Transaction&, ChangeRecord& rec) {
    const geom::Polyline* line = rec.new_value->polyline();
    for (const geom::Point& p : line->vertices) {
        if (!p.z) {
            throw Error(ErrorCode::InvalidGeometry, "altimetry lines need a z on every vertex",
                        kAltiLines, rec.id);
        }
    }
}

std::set<std::int64_t>& interpreting(Transaction& tx) {
    return tx.scratch<std::set<std::int64_t>>("aux.interpreting");
}

std::optional<Feature> profile_of(const ReadAccess& a, std::int64_t source) {
    auto rows = a.features(kAltiProfiles, std::nullopt, [&](const Feature& f) {
        return f.get_int("source_id") == source;
    });
    if (rows.empty()) {
        return std::nullopt;
    }
    return rows.front();
}

void line_changed(Transaction& tx, ChangeRecord& rec) {
    std::optional<Feature> existing = profile_of(tx, rec.id);
    if (rec.kind == ChangeKind::Delete) {
        if (existing) {
            tx.remove(kAltiProfiles, existing->id);
        }
        return;
    }
    const geom::Polyline& line = *rec.new_value->polyline();
    Profile profile;
    if (existing && interpreting(tx).erase(rec.id)) {
        profile = altimetry_profile(line, existing->real_or("z_min", 0.0));
    } else {
        profile = altimetry_profile(line);
    }
    Feature f;
    f.geometry = profile.line;
    f.set("source_id", rec.id);
    f.set("z_min", profile.z_min);
    if (existing) {
        f.id = existing->id;
        tx.update_if_changed(kAltiProfiles, f);
    } else {
        tx.insert(kAltiProfiles, f);
    }
}

void profile_update(Transaction& tx, ChangeRecord& rec) {
    const Feature stored = tx.get(kAltiProfiles, rec.id);
    const std::int64_t source = stored.int_or("source_id", 0);
    Feature line = tx.get(kAltiLines, source);
    const geom::Polyline* edited = rec.new_value->polyline();
    if (!edited) {
        throw Error(ErrorCode::InvalidGeometry, "a profile edit must keep a line geometry",
                    kAltiProfileView, rec.id);
    }
    line.geometry = altimetry_interpret(*edited, *line.polyline(), stored.real_or("z_min", 0.0));
    interpreting(tx).insert(source);
    tx.update(kAltiLines, line);
}

} // namespace

std::vector<Feature> lens_filter(const geom::Polygon& polygon, std::int64_t lod,
                                 std::optional<std::int64_t> pass, std::vector<Feature> points) {
    std::sort(points.begin(), points.end(),
              [](const Feature& a, const Feature& b) { return a.id < b.id; });
    const std::int64_t k = stride(std::max<std::int64_t>(lod, 0));
    const geom::BBox box = geom::bbox(polygon);
    std::vector<Feature> out;
    std::int64_t rank = 0;
    for (Feature& p : points) {
        if (pass && p.get_int("pass") != pass) {
            continue;
        }
        const bool keep = rank++ % k == 0;
        const geom::Point* pt = p.point();
        if (keep && pt && box.contains(*pt) && geom::contains(polygon, *pt)) {
            out.push_back(std::move(p));
        }
    }
    return out;
}

Profile altimetry_profile(const geom::Polyline& line3d) {
    double z_min = std::numeric_limits<double>::infinity();
    for (const geom::Point& p : line3d.vertices) {
        if (!p.z) {
            throw Error(ErrorCode::InvalidGeometry, "altimetry lines need a z on every vertex");
        }
        z_min = std::min(z_min, *p.z);
    }
    return altimetry_profile(line3d, z_min);
}

Profile altimetry_profile(const geom::Polyline& line3d, double z_min) {
    const auto& v = line3d.vertices;
    Profile out;
    out.z_min = z_min;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].z) {
            throw Error(ErrorCode::InvalidGeometry, "altimetry lines need a z on every vertex");
        }
        const geom::Point n = geom::left_normal(tangent_at(v, i));
        out.line.vertices.push_back(flat(v[i]) + n * (*v[i].z - z_min));
    }
    return out;
}

geom::Polyline altimetry_interpret(const geom::Polyline& profile, const geom::Polyline& line3d,
                                   double z_min) {
    if (profile.vertices.size() != line3d.vertices.size()) {
        throw Error(ErrorCode::AmbiguousEdit,
                    "profile vertices cannot be added or removed: each one encodes the z of a "
                    "source vertex",
                    kAltiProfileView);
    }
    geom::Polyline out = line3d;
    for (std::size_t i = 0; i < out.vertices.size(); ++i) {
        out.vertices[i].z = z_min + geom::distance(profile.vertices[i], flat(line3d.vertices[i]));
    }
    return out;
}

std::size_t load_points(Store& store, const nlohmann::json& collection) {
    if (!collection.is_object() || collection.value("type", "") != "FeatureCollection" ||
        !collection.contains("features") || !collection["features"].is_array()) {
        throw Error(ErrorCode::ParseError, "expected a GeoJSON FeatureCollection", kPoints);
    }
    std::vector<Edit> edits;
    for (const auto& j : collection["features"]) {
        Feature f;
        f.geometry = geojson::geometry_from_json(j.at("geometry"));
        if (!f.point()) {
            continue;
        }
        f.geometry = flat(*f.point());
        if (j.contains("properties") && j["properties"].is_object()) {
            const auto& props = j["properties"];
            if (props.contains("pass") && props["pass"].is_number_integer()) {
                f.set("pass", props["pass"].get<std::int64_t>());
            }
        }
        edits.push_back(Edit::insert(kPoints, std::move(f)));
    }
    const std::size_t n = edits.size();
    store.apply(Origin::system("loader"), std::move(edits));
    return n;
}

std::vector<std::string> check(const ReadAccess& a) {
    std::vector<std::string> out;
    std::set<std::int64_t> covered;
    a.scan(kAltiProfiles, [&](const Feature& prof) {
        const std::int64_t source = prof.int_or("source_id", 0);
        const std::string tag = "altimetry profile " + std::to_string(prof.id);
        const Feature* line = a.find(kAltiLines, source);
        if (!line) {
            out.push_back(tag + " references missing line " + std::to_string(source));
            return;
        }
        covered.insert(source);
        const double z_min = prof.real_or("z_min", 0.0);
        const auto& src = line->polyline()->vertices;
        const auto& pv = prof.polyline()->vertices;
        if (pv.size() != src.size()) {
            out.push_back(tag + " vertex count differs from its line");
            return;
        }
        for (std::size_t i = 0; i < src.size(); ++i) {
            const double want = src[i].z.value_or(z_min) - z_min;
            if (want < -kCoherence ||
                std::abs(geom::distance(pv[i], flat(src[i])) - want) > kCoherence) {
                out.push_back(tag + " vertex " + std::to_string(i) +
                              " displacement does not match z - z_min");
                return;
            }
        }
    });
    a.scan(kAltiLines, [&](const Feature& line) {
        if (!covered.count(line.id)) {
            out.push_back("altimetry line " + std::to_string(line.id) + " has no profile");
        }
    });
    return out;
}

void install(Store& store) {
    store.create_layer({kLenses,
                        GeometryKind::Polygon,
                        false,
                        {{"lod", AttrType::Integer, false}, {"pass", AttrType::Integer, true}},
                        true});
    store.create_layer(
        {kPoints, GeometryKind::Point, false, {{"pass", AttrType::Integer, true}}, true});
    store.create_layer({kAltiLines, GeometryKind::Polyline, false, {}, true});
    store.create_layer({kAltiProfiles,
                        GeometryKind::Polyline,
                        false,
                        {{"source_id", AttrType::Integer, false}, {"z_min", AttrType::Real, false}},
                        false});

    auto& h = store.handlers();
    h.add("aux.lens_guard", lens_guard);
    h.add_reader("aux.lens_display", read_display);
    h.add("aux.line_guard", line_guard);
    h.add("aux.line_changed", line_changed);
    h.add("aux.profile_update", profile_update);

    store.register_trigger(
        {"lens_guard", kLenses, Timing::Before, OnInsert | OnUpdate, "aux.lens_guard", 0});
    store.register_trigger(
        {"alti_line_guard", kAltiLines, Timing::Before, OnInsert | OnUpdate, "aux.line_guard", 0});
    store.register_trigger(
        {"alti_profile_sync", kAltiLines, Timing::After, OnAny, "aux.line_changed", 0});

    store.register_virtual_layer(
        {{kLensDisplay, GeometryKind::Point, false, {{"pass", AttrType::Integer, true}}, false},
         "aux.lens_display"});

    ProxyView profile;
    profile.name = kAltiProfileView;
    profile.base = kAltiProfiles;
    profile.allowed = OnUpdate;
    profile.handlers = {{ChangeKind::Update, "aux.profile_update"}};
    profile.refusals = {
        {ChangeKind::Insert, "profiles are generated from altimetry lines; insert the line instead"},
        {ChangeKind::Delete, "profiles are generated from altimetry lines; delete the line instead"}};
    store.register_proxy_view(profile);
}

} // namespace streetbase::aux
