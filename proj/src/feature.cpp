#include "streetbase/feature.hpp"

#include <cmath>
#include <set>

#include "streetbase/errors.hpp"

namespace streetbase {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidGeometry: return "InvalidGeometry";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::OffsetDegenerate: return "OffsetDegenerate";
    case ErrorCode::FilletTooLarge: return "FilletTooLarge";
    case ErrorCode::EmptyVote: return "EmptyVote";
    case ErrorCode::Conflict: return "Conflict";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::ConcurrentModification: return "ConcurrentModification";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::CyclicTriggerError: return "CyclicTriggerError";
    case ErrorCode::Misconfigured: return "Misconfigured";
    case ErrorCode::Unsupported: return "Unsupported";
    case ErrorCode::AmbiguousEdit: return "AmbiguousEdit";
    case ErrorCode::DegenerateSection: return "DegenerateSection";
    case ErrorCode::NotOnRoad: return "NotOnRoad";
    case ErrorCode::Rejected: return "Rejected";
    }
    return "Unknown";
}

std::string_view to_string(GeometryKind kind) {
    switch (kind) {
    case GeometryKind::None: return "none";
    case GeometryKind::Point: return "point";
    case GeometryKind::Polyline: return "polyline";
    case GeometryKind::Polygon: return "polygon";
    }
    return "none";
}

std::string_view to_string(AttrType type) {
    switch (type) {
    case AttrType::Integer: return "integer";
    case AttrType::Real: return "real";
    case AttrType::Text: return "text";
    case AttrType::Boolean: return "boolean";
    case AttrType::Timestamp: return "timestamp";
    }
    return "text";
}

GeometryKind parse_geometry_kind(std::string_view text) {
    for (auto k : {GeometryKind::None, GeometryKind::Point, GeometryKind::Polyline,
                   GeometryKind::Polygon}) {
        if (to_string(k) == text) {
            return k;
        }
    }
    throw Error(ErrorCode::ParseError, "unknown geometry kind '" + std::string(text) + "'");
}

AttrType parse_attr_type(std::string_view text) {
    for (auto t : {AttrType::Integer, AttrType::Real, AttrType::Text, AttrType::Boolean,
                   AttrType::Timestamp}) {
        if (to_string(t) == text) {
            return t;
        }
    }
    throw Error(ErrorCode::ParseError, "unknown attribute type '" + std::string(text) + "'");
}

GeometryKind kind_of(const Geometry& g) {
    switch (g.index()) {
    case 1: return GeometryKind::Point;
    case 2: return GeometryKind::Polyline;
    case 3: return GeometryKind::Polygon;
    default: return GeometryKind::None;
    }
}

geom::BBox bbox_of(const Geometry& g) {
    if (const auto* p = std::get_if<geom::Point>(&g)) {
        return {p->x, p->y, p->x, p->y};
    }
    if (const auto* l = std::get_if<geom::Polyline>(&g)) {
        return geom::bbox(l->vertices);
    }
    if (const auto* poly = std::get_if<geom::Polygon>(&g)) {
        return geom::bbox(*poly);
    }
    throw Error(ErrorCode::InvalidGeometry, "feature has no geometry");
}

bool Feature::has(std::string_view name) const { return value(name) != nullptr; }

const Value* Feature::value(std::string_view name) const {
    auto it = attributes.find(name);
    if (it == attributes.end() || std::holds_alternative<std::monostate>(it->second)) {
        return nullptr;
    }
    return &it->second;
}

std::optional<std::int64_t> Feature::get_int(std::string_view name) const {
    const Value* v = value(name);
    if (!v) {
        return std::nullopt;
    }
    if (const auto* i = std::get_if<std::int64_t>(v)) {
        return *i;
    }
    if (const auto* t = std::get_if<Timestamp>(v)) {
        return t->ms;
    }
    return std::nullopt;
}

std::optional<double> Feature::get_real(std::string_view name) const {
    const Value* v = value(name);
    if (!v) {
        return std::nullopt;
    }
    if (const auto* d = std::get_if<double>(v)) {
        return *d;
    }
    if (const auto* i = std::get_if<std::int64_t>(v)) {
        return static_cast<double>(*i);
    }
    return std::nullopt;
}

std::optional<std::string> Feature::get_text(std::string_view name) const {
    const Value* v = value(name);
    if (const auto* s = v ? std::get_if<std::string>(v) : nullptr) {
        return *s;
    }
    return std::nullopt;
}

std::optional<bool> Feature::get_bool(std::string_view name) const {
    const Value* v = value(name);
    if (const auto* b = v ? std::get_if<bool>(v) : nullptr) {
        return *b;
    }
    return std::nullopt;
}

std::optional<Timestamp> Feature::get_time(std::string_view name) const {
    const Value* v = value(name);
    if (!v) {
        return std::nullopt;
    }
    if (const auto* t = std::get_if<Timestamp>(v)) {
        return *t;
    }
    if (const auto* i = std::get_if<std::int64_t>(v)) {
        return Timestamp{*i};
    }
    return std::nullopt;
}

std::int64_t Feature::int_or(std::string_view name, std::int64_t fallback) const {
    return get_int(name).value_or(fallback);
}

double Feature::real_or(std::string_view name, double fallback) const {
    return get_real(name).value_or(fallback);
}

void Feature::set(std::string_view name, Value v) {
    if (std::holds_alternative<std::monostate>(v)) {
        auto it = attributes.find(name);
        if (it != attributes.end()) {
            attributes.erase(it);
        }
        return;
    }
    auto it = attributes.find(name);
    if (it == attributes.end()) {
        attributes.emplace(std::string(name), std::move(v));
    } else {
        it->second = std::move(v);
    }
}

const AttributeDef* Schema::find(std::string_view attr) const {
    for (const auto& def : attributes) {
        if (def.name == attr) {
            return &def;
        }
    }
    return nullptr;
}

namespace {

Error rejected(const Schema& schema, const Feature& f, const std::string& msg) {
    return Error(ErrorCode::Rejected, msg, schema.name, f.id ? std::optional(f.id) : std::nullopt);
}

void check_polygon_structure(const geom::Polygon& p) {
    auto ring_ok = [](const geom::Ring& r) {
        if (r.size() < 4) {
            throw Error(ErrorCode::InvalidGeometry, "polygon ring needs at least 4 points");
        }
        for (const auto& v : r) {
            if (!geom::is_finite(v)) {
                throw Error(ErrorCode::InvalidGeometry, "polygon has a non-finite coordinate");
            }
        }
        if (r.front().x != r.back().x || r.front().y != r.back().y) {
            throw Error(ErrorCode::InvalidGeometry, "polygon ring is not closed");
        }
    };
    ring_ok(p.exterior);
    for (const auto& h : p.holes) {
        ring_ok(h);
    }
    if (!(geom::area(p) > 0.0)) {
        throw Error(ErrorCode::InvalidGeometry, "polygon has no area");
    }
}

} // namespace

void conform(const Schema& schema, Feature& f, bool strict_geometry) {
    const GeometryKind kind = kind_of(f.geometry);
    try {
        if (kind == GeometryKind::None) {
            if (schema.geometry != GeometryKind::None && !schema.geometry_nullable) {
                throw Error(ErrorCode::InvalidGeometry,
                            "layer '" + schema.name + "' requires a geometry");
            }
        } else if (kind != schema.geometry) {
            throw Error(ErrorCode::InvalidGeometry,
                        "layer '" + schema.name + "' expects " +
                            std::string(to_string(schema.geometry)) + " geometry, got " +
                            std::string(to_string(kind)));
        } else if (const auto* p = f.point()) {
            if (!geom::is_finite(*p)) {
                throw Error(ErrorCode::InvalidGeometry, "point has a non-finite coordinate");
            }
        } else if (const auto* l = f.polyline()) {
            geom::validate(*l);
        } else if (const auto* poly = f.polygon()) {
            if (strict_geometry) {
                geom::validate(*poly);
            } else {
                check_polygon_structure(*poly);
            }
        }
    } catch (const Error& e) {
        throw e.with_location(schema.name, f.id ? std::optional(f.id) : std::nullopt);
    }

    for (auto it = f.attributes.begin(); it != f.attributes.end();) {
        if (std::holds_alternative<std::monostate>(it->second)) {
            it = f.attributes.erase(it);
            continue;
        }
        const AttributeDef* def = schema.find(it->first);
        if (!def) {
            throw rejected(schema, f, "unknown attribute '" + it->first + "'");
        }
        Value& v = it->second;
        bool ok = false;
        switch (def->type) {
        case AttrType::Integer:
            if (std::holds_alternative<std::int64_t>(v)) {
                ok = true;
            } else if (const auto* d = std::get_if<double>(&v);
                       d && std::isfinite(*d) && std::floor(*d) == *d) {
                v = static_cast<std::int64_t>(*d);
                ok = true;
            }
            break;
        case AttrType::Real:
            if (const auto* d = std::get_if<double>(&v)) {
                ok = std::isfinite(*d);
            } else if (const auto* i = std::get_if<std::int64_t>(&v)) {
                v = static_cast<double>(*i);
                ok = true;
            }
            break;
        case AttrType::Text:
            ok = std::holds_alternative<std::string>(v);
            break;
        case AttrType::Boolean:
            ok = std::holds_alternative<bool>(v);
            break;
        case AttrType::Timestamp:
            if (std::holds_alternative<Timestamp>(v)) {
                ok = true;
            } else if (const auto* i = std::get_if<std::int64_t>(&v)) {
                v = Timestamp{*i};
                ok = true;
            }
            break;
        }
        if (!ok) {
            throw rejected(schema, f,
                           "attribute '" + it->first + "' must be " +
                               std::string(to_string(def->type)));
        }
        ++it;
    }
    for (const auto& def : schema.attributes) {
        if (!def.nullable && !f.has(def.name)) {
            throw rejected(schema, f, "attribute '" + def.name + "' is required");
        }
    }
}

} // namespace streetbase
