#pragma once

// GeoJSON (RFC 7946) encoding of features plus the JSON forms of schemas
// and change records shared by persistence and the HTTP service.

#include "json.hpp"

#include "streetbase/feature.hpp"
#include "streetbase/store.hpp"

namespace streetbase::geojson {

using json = nlohmann::json;

json geometry_to_json(const Geometry& g);
// Accepts Point, LineString, Polygon and null. Throws ParseError on
// malformed input.
Geometry geometry_from_json(const json& j);

json value_to_json(const Value& v);
Value value_from_json(const json& j, AttrType type);
// Untyped decode: integers, reals, strings, booleans.
Value value_from_json(const json& j);

json feature_to_json(const Feature& f);
// Properties are decoded against the schema; unknown properties are kept
// untyped so that conform() can reject them with a precise message.
Feature feature_from_json(const json& j, const Schema& schema);
json collection_to_json(const std::vector<Feature>& features);

json schema_to_json(const Schema& s);
Schema schema_from_json(const json& j);

json record_to_json(const ChangeRecord& r);

} // namespace streetbase::geojson
