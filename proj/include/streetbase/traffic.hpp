#pragma once

// Lanes offset from the road axis and Bezier interconnections between them
// at nodes, each with a user override table merged first-non-null.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "streetbase/streetgen.hpp"

namespace streetbase::traffic {

inline const std::string kLanes = "lane";
inline const std::string kLaneOverrides = "lane_override";
inline const std::string kLanesMerged = "lane_merged";
inline const std::string kLaneView = "edit_lane";
inline const std::string kInterconnections = "interconnection";
inline const std::string kInterconnectionOverrides = "interconnection_override";
inline const std::string kInterconnectionsMerged = "interconnection_merged";
inline const std::string kInterconnectionView = "edit_interconnection";

inline constexpr int kBezierSegments = 16;
// Below this angle between end tangents the quadratic control is unstable.
inline constexpr double kParallelAngle = 5.0 * geom::kPi / 180.0;

// Signed offset of lane `index` from the axis.
double lane_offset(double width, std::int64_t lane_count, std::int64_t index);
// "forward" or "backward" for a lane at the given offset.
std::string default_direction(double offset, bool right_hand_traffic);

// Controls from p0 (travelling along unit d0) to p1 (arriving along unit d1).
std::vector<geom::Point> default_controls(const geom::Point& p0, const geom::Point& d0,
                                          const geom::Point& p1, const geom::Point& d1);
std::vector<geom::Point> discretize(const std::vector<geom::Point>& controls);

std::string controls_to_text(const std::vector<geom::Point>& controls);
// Throws ParseError unless the text is a JSON array of 2 to 4 [x, y] pairs.
std::vector<geom::Point> controls_from_text(const std::string& text);

// Generation context: the street model plus the lane overrides.
class Context {
public:
    explicit Context(streetgen::Model& model);

    streetgen::Model& model() { return model_; }
    // Auto lanes of an edge, in index order.
    std::vector<Feature> lanes(std::int64_t edge);
    // Lanes of an edge after merging overrides.
    std::vector<Feature> merged_lanes(std::int64_t edge);
    std::vector<Feature> interconnections(std::int64_t node);

private:
    streetgen::Model& model_;
    std::map<std::pair<std::int64_t, std::int64_t>, Feature> overrides_;
    std::map<std::int64_t, std::vector<Feature>> lanes_;
};

// Removes override rows whose key no longer exists among the generated
// features of the scope.
void collect_garbage(Transaction& tx, const streetgen::Scope& scope,
                     const streetgen::LayerSet& generated);

void install(Store& store);

} // namespace streetbase::traffic
