#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "streetbase/geom.hpp"

namespace streetbase {

struct Timestamp {
    std::int64_t ms = 0;
    friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

using Value = std::variant<std::monostate, std::int64_t, double, std::string, bool, Timestamp>;
using Attributes = std::map<std::string, Value, std::less<>>;
using Geometry = std::variant<std::monostate, geom::Point, geom::Polyline, geom::Polygon>;

enum class GeometryKind { None, Point, Polyline, Polygon };
enum class AttrType { Integer, Real, Text, Boolean, Timestamp };

std::string_view to_string(GeometryKind kind);
std::string_view to_string(AttrType type);
GeometryKind parse_geometry_kind(std::string_view text);
AttrType parse_attr_type(std::string_view text);
GeometryKind kind_of(const Geometry& g);
// Bounding box of a non-empty geometry.
geom::BBox bbox_of(const Geometry& g);

struct Feature {
    std::int64_t id = 0;
    Geometry geometry;
    Attributes attributes;

    bool has(std::string_view name) const;
    const Value* value(std::string_view name) const;
    std::optional<std::int64_t> get_int(std::string_view name) const;
    // Integers widen to real.
    std::optional<double> get_real(std::string_view name) const;
    std::optional<std::string> get_text(std::string_view name) const;
    std::optional<bool> get_bool(std::string_view name) const;
    std::optional<Timestamp> get_time(std::string_view name) const;

    std::int64_t int_or(std::string_view name, std::int64_t fallback) const;
    double real_or(std::string_view name, double fallback) const;

    // Setting std::monostate removes the attribute.
    void set(std::string_view name, Value v);

    const geom::Point* point() const { return std::get_if<geom::Point>(&geometry); }
    const geom::Polyline* polyline() const { return std::get_if<geom::Polyline>(&geometry); }
    const geom::Polygon* polygon() const { return std::get_if<geom::Polygon>(&geometry); }

    friend bool operator==(const Feature&, const Feature&) = default;
};

struct AttributeDef {
    std::string name;
    AttrType type = AttrType::Text;
    bool nullable = true;
};

struct Schema {
    std::string name;
    GeometryKind geometry = GeometryKind::None;
    bool geometry_nullable = false;
    std::vector<AttributeDef> attributes;
    bool user_writable = true;

    const AttributeDef* find(std::string_view attr) const;
};

// Checks a feature against its schema, coercing numeric values to the
// declared type. Throws Error(Rejected / InvalidGeometry).
void conform(const Schema& schema, Feature& feature, bool strict_geometry);

} // namespace streetbase
