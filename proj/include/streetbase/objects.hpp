#pragma once

// Street objects positioned absolutely or relative to a road axis
// (abscissa and signed offset), and pedestrian crossings fitted from a
// rough sketch.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "streetbase/store.hpp"

namespace streetbase::objects {

inline const std::string kObjects = "street_object";
inline const std::string kCrossings = "pedestrian_crossing";
inline const std::string kObjectView = "edit_object";
inline const std::string kCrossingView = "edit_pedestrian_crossing";

enum class PositionMode { Absolute, Axis, Sidewalk };
std::string_view to_string(PositionMode m);
PositionMode parse_position_mode(std::string_view text);

// Closest edge by distance to its axis; ties go to the smallest id.
std::optional<std::int64_t> nearest_edge(const ReadAccess& access, const geom::Point& p);

// Offset from the axis: d itself on the axis, or measured outwards from the
// border on `side` (+1 left, -1 right) of a road of the given width.
double axis_offset(PositionMode mode, double d, int side, double road_width);

struct CrossingFit {
    double orientation = 0.0; // crossing direction, radians in [0, pi)
    double width = 0.0;       // stripe width, perpendicular to the crossing direction
    double s = 0.0;           // abscissa of the centre on the axis
};

// Fits crossing parameters from a rough polygon laid over a road axis.
CrossingFit fit_crossing(const geom::Polygon& rough, const geom::Polyline& axis);

// Rectangle centred on the axis at s, spanning a road of width road_width.
geom::Polygon canonical_crossing(const geom::Polyline& axis, double road_width,
                                 const CrossingFit& fit);

// Coherence of every relative object and crossing; one message per problem.
std::vector<std::string> check(const ReadAccess& access);

void install(Store& store);

} // namespace streetbase::objects
