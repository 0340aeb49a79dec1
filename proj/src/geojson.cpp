#include "streetbase/geojson.hpp"

#include "streetbase/errors.hpp"

namespace streetbase::geojson {

namespace {

Error parse_error(const std::string& msg) { return Error(ErrorCode::ParseError, msg); }

json position(const geom::Point& p) {
    json a = json::array({p.x, p.y});
    if (p.z) {
        a.push_back(*p.z);
    }
    return a;
}

geom::Point point_from(const json& j) {
    if (!j.is_array() || j.size() < 2 || j.size() > 3) {
        throw parse_error("a position must be [x, y] or [x, y, z]");
    }
    for (const auto& c : j) {
        if (!c.is_number()) {
            throw parse_error("position coordinates must be numbers");
        }
    }
    geom::Point p{j[0].get<double>(), j[1].get<double>(), {}};
    if (j.size() == 3) {
        p.z = j[2].get<double>();
    }
    return p;
}

std::vector<geom::Point> points_from(const json& j) {
    if (!j.is_array()) {
        throw parse_error("expected an array of positions");
    }
    std::vector<geom::Point> out;
    out.reserve(j.size());
    for (const auto& p : j) {
        out.push_back(point_from(p));
    }
    return out;
}

json ring_json(const geom::Ring& r) {
    json a = json::array();
    for (const auto& p : r) {
        a.push_back(position(p));
    }
    return a;
}

} // namespace

json geometry_to_json(const Geometry& g) {
    if (const auto* p = std::get_if<geom::Point>(&g)) {
        return {{"type", "Point"}, {"coordinates", position(*p)}};
    }
    if (const auto* l = std::get_if<geom::Polyline>(&g)) {
        return {{"type", "LineString"}, {"coordinates", ring_json(l->vertices)}};
    }
    if (const auto* poly = std::get_if<geom::Polygon>(&g)) {
        json rings = json::array({ring_json(poly->exterior)});
        for (const auto& h : poly->holes) {
            rings.push_back(ring_json(h));
        }
        return {{"type", "Polygon"}, {"coordinates", rings}};
    }
    return nullptr;
}

Geometry geometry_from_json(const json& j) {
    if (j.is_null()) {
        return std::monostate{};
    }
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string() ||
        !j.contains("coordinates")) {
        throw parse_error("geometry must be an object with type and coordinates");
    }
    const std::string type = j["type"].get<std::string>();
    const json& c = j["coordinates"];
    if (type == "Point") {
        return point_from(c);
    }
    if (type == "LineString") {
        return geom::Polyline{points_from(c)};
    }
    if (type == "Polygon") {
        if (!c.is_array() || c.empty()) {
            throw parse_error("polygon needs at least one ring");
        }
        geom::Polygon poly;
        poly.exterior = points_from(c[0]);
        for (std::size_t i = 1; i < c.size(); ++i) {
            poly.holes.push_back(points_from(c[i]));
        }
        return poly;
    }
    throw parse_error("unsupported geometry type '" + type + "'");
}

json value_to_json(const Value& v) {
    return std::visit(
        [](const auto& x) -> json {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, std::monostate>) {
                return nullptr;
            } else if constexpr (std::is_same_v<T, Timestamp>) {
                return x.ms;
            } else {
                return x;
            }
        },
        v);
}

Value value_from_json(const json& j) {
    if (j.is_null()) {
        return std::monostate{};
    }
    if (j.is_boolean()) {
        return j.get<bool>();
    }
    if (j.is_number_integer()) {
        return j.get<std::int64_t>();
    }
    if (j.is_number()) {
        return j.get<double>();
    }
    if (j.is_string()) {
        return j.get<std::string>();
    }
    // Nested structures travel as their JSON text.
    return j.dump();
}

Value value_from_json(const json& j, AttrType type) {
    if (j.is_null()) {
        return std::monostate{};
    }
    switch (type) {
    case AttrType::Integer:
        if (j.is_number_integer()) {
            return j.get<std::int64_t>();
        }
        break;
    case AttrType::Real:
        if (j.is_number()) {
            return j.get<double>();
        }
        break;
    case AttrType::Text:
        if (j.is_string()) {
            return j.get<std::string>();
        }
        if (j.is_object() || j.is_array()) {
            return j.dump();
        }
        break;
    case AttrType::Boolean:
        if (j.is_boolean()) {
            return j.get<bool>();
        }
        break;
    case AttrType::Timestamp:
        if (j.is_number_integer()) {
            return Timestamp{j.get<std::int64_t>()};
        }
        break;
    }
    return value_from_json(j);
}

json feature_to_json(const Feature& f) {
    json props = json::object();
    for (const auto& [k, v] : f.attributes) {
        if (!std::holds_alternative<std::monostate>(v)) {
            props[k] = value_to_json(v);
        }
    }
    return {{"type", "Feature"},
            {"id", f.id},
            {"geometry", geometry_to_json(f.geometry)},
            {"properties", props}};
}

Feature feature_from_json(const json& j, const Schema& schema) {
    if (!j.is_object()) {
        throw parse_error("feature must be a JSON object");
    }
    Feature f;
    if (j.contains("id") && !j["id"].is_null()) {
        if (!j["id"].is_number_integer()) {
            throw parse_error("feature id must be an integer");
        }
        f.id = j["id"].get<std::int64_t>();
    }
    if (j.contains("geometry")) {
        f.geometry = geometry_from_json(j["geometry"]);
    }
    if (j.contains("properties") && !j["properties"].is_null()) {
        if (!j["properties"].is_object()) {
            throw parse_error("properties must be an object");
        }
        for (const auto& [k, v] : j["properties"].items()) {
            const AttributeDef* def = schema.find(k);
            Value value = def ? value_from_json(v, def->type) : value_from_json(v);
            if (!std::holds_alternative<std::monostate>(value)) {
                f.attributes.emplace(k, std::move(value));
            }
        }
    }
    return f;
}

json collection_to_json(const std::vector<Feature>& features) {
    json arr = json::array();
    for (const auto& f : features) {
        arr.push_back(feature_to_json(f));
    }
    return {{"type", "FeatureCollection"}, {"features", arr}};
}

json schema_to_json(const Schema& s) {
    json attrs = json::array();
    for (const auto& a : s.attributes) {
        attrs.push_back({{"name", a.name}, {"type", to_string(a.type)}, {"nullable", a.nullable}});
    }
    return {{"name", s.name},
            {"geometry", to_string(s.geometry)},
            {"geometry_nullable", s.geometry_nullable},
            {"user_writable", s.user_writable},
            {"attributes", attrs}};
}

Schema schema_from_json(const json& j) {
    try {
        Schema s;
        s.name = j.at("name").get<std::string>();
        s.geometry = parse_geometry_kind(j.at("geometry").get<std::string>());
        s.geometry_nullable = j.value("geometry_nullable", false);
        s.user_writable = j.value("user_writable", true);
        for (const auto& a : j.at("attributes")) {
            s.attributes.push_back({a.at("name").get<std::string>(),
                                    parse_attr_type(a.at("type").get<std::string>()),
                                    a.value("nullable", true)});
        }
        return s;
    } catch (const json::exception& e) {
        throw parse_error(std::string("schema: ") + e.what());
    }
}

json record_to_json(const ChangeRecord& r) {
    json j = {{"sequence", r.sequence},
              {"layer", r.layer},
              {"kind", to_string(r.kind)},
              {"id", r.id},
              {"depth", r.depth},
              {"origin", r.origin.is_user() ? "user" : "system"}};
    if (!r.origin.session.empty()) {
        j["session"] = r.origin.session;
    }
    if (r.new_value) {
        j["feature"] = feature_to_json(*r.new_value);
    }
    return j;
}

} // namespace streetbase::geojson
