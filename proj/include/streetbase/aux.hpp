#pragma once

// Standalone controllers: a lens polygon choosing which points to display,
// and an altimetry profile whose 2D edits rewrite the z of a 3D line.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "streetbase/store.hpp"

namespace streetbase::aux {

inline const std::string kLenses = "lens";
inline const std::string kPoints = "lidar_point";
inline const std::string kLensDisplay = "lens_display";
inline const std::string kAltiLines = "alti_line";
inline const std::string kAltiProfiles = "altimetry_profile";
inline const std::string kAltiProfileView = "alti_profile";

// Points inside `polygon` whose pass matches (when given), keeping those
// whose rank among all pass-matching points, in id order, is a multiple of 4^lod.
std::vector<Feature> lens_filter(const geom::Polygon& polygon, std::int64_t lod,
                                 std::optional<std::int64_t> pass,
                                 std::vector<Feature> points);

struct Profile {
    geom::Polyline line; // 2D, one vertex per source vertex
    double z_min = 0.0;
};

// Throws InvalidGeometry when a vertex has no z.
Profile altimetry_profile(const geom::Polyline& line3d);
// Same construction against a given datum.
Profile altimetry_profile(const geom::Polyline& line3d, double z_min);
// New z of each source vertex from an edited profile. Throws AmbiguousEdit
// when the vertex count differs.
geom::Polyline altimetry_interpret(const geom::Polyline& profile, const geom::Polyline& line3d,
                                   double z_min);

// Inserts every Point feature of a GeoJSON FeatureCollection into the point
// layer; returns the number inserted.
std::size_t load_points(Store& store, const nlohmann::json& collection);

std::vector<std::string> check(const ReadAccess& access);

void install(Store& store);

} // namespace streetbase::aux
