#pragma once

// Street surfaces generated from the axis network: intersection limits,
// corner radii, section and intersection polygons, plus the three road
// controllers (limit, radius, width probes) and partial regeneration.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <string>
#include <vector>

#include "streetbase/store.hpp"

namespace streetbase::streetgen {

inline const std::string kLimits = "intersection_limit";
inline const std::string kRadii = "corner_radius";
inline const std::string kSections = "section";
inline const std::string kIntersections = "intersection";
inline const std::string kProbes = "width_probe";
inline const std::string kLimitView = "ctl_intersection_limit";
inline const std::string kRadiusView = "ctl_corner_radius";
inline const std::string kProbeView = "ctl_width_probe";

inline constexpr double kDeadEndLimit = 1e-3;
inline constexpr double kMaxLimitRatio = 0.45;

// One edge seen from one of its end nodes, oriented away from the node.
struct Arm {
    std::int64_t edge = 0;
    bool at_start = true;
    geom::Polyline axis_out;
    double width = 0.0;
    double length = 0.0;
    double angle = 0.0; // departure direction in [0, 2pi)
};

struct SectionGeometry {
    double s_start = 0.0; // limit abscissa measured from the start node
    double s_end = 0.0;   // limit abscissa measured from the end node
    std::optional<geom::Polyline> left;  // edge-oriented borders between the limits
    std::optional<geom::Polyline> right;
    std::optional<geom::Polygon> polygon;
};

struct CornerGeometry {
    std::int64_t edge_a = 0; // arm whose left border bounds the corner
    std::int64_t edge_b = 0; // next arm counter-clockwise
    bool convex = false;
    double r = 0.0;
    double r_effective = 0.0;
    geom::Point controller;    // fillet centre, raw corner or node when beveled
    std::optional<geom::Polyline> border_a;
    std::optional<geom::Polyline> border_b;
};

struct NodeGeometry {
    std::optional<geom::Polygon> polygon;
    std::vector<CornerGeometry> corners; // convex corners only
};

// Lazily evaluated street model over a consistent read of the store. Every
// value is a pure function of nodes, edges and the stored overrides, so
// partial and full regeneration agree bit for bit.
class Model {
public:
    explicit Model(const ReadAccess& access);

    const ReadAccess& access() const { return access_; }
    const Config& config() const { return access_.config(); }
    const Feature* edge(std::int64_t id) const;
    const Feature* node(std::int64_t id) const;
    const std::map<std::int64_t, Feature>& edges() const { return edges_; }
    const std::map<std::int64_t, Feature>& nodes() const { return nodes_; }
    const std::vector<std::int64_t>& incident(std::int64_t node) const;

    const std::vector<Arm>& arms(std::int64_t node);
    // Stored radius for the corner between a and its CCW successor b, or the
    // configured default.
    double corner_radius(std::int64_t node, std::int64_t a, std::int64_t b) const;
    bool radius_overridden(std::int64_t node, std::int64_t a, std::int64_t b) const;
    double default_limit(std::int64_t node, std::int64_t edge);
    double limit(std::int64_t node, std::int64_t edge);
    bool limit_overridden(std::int64_t node, std::int64_t edge) const;
    const SectionGeometry& section(std::int64_t edge);
    const NodeGeometry& intersection(std::int64_t node);

    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    void warn_once(const std::string& msg);

    const ReadAccess& access_;
    std::map<std::int64_t, Feature> nodes_;
    std::map<std::int64_t, Feature> edges_;
    std::map<std::int64_t, std::vector<std::int64_t>> incidence_;
    std::map<std::pair<std::int64_t, std::int64_t>, double> limit_overrides_; // (edge, node)
    std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, double> radius_overrides_;
    std::map<std::int64_t, std::vector<Arm>> arms_;
    std::map<std::pair<std::int64_t, std::int64_t>, double> limits_;
    std::map<std::int64_t, SectionGeometry> sections_;
    std::map<std::int64_t, NodeGeometry> intersections_;
    std::vector<std::string> warnings_;
    std::set<std::string> warned_;
};

// Outgoing axis of an edge as seen from one of its nodes.
Arm make_arm(const Feature& edge, bool at_start);

// What a regeneration pass owns: limits, radii and intersections at
// `nodes`; sections and lanes of `edges`; interconnections at `ic_nodes`.
struct Scope {
    std::set<std::int64_t> nodes;
    std::set<std::int64_t> edges;
    std::set<std::int64_t> ic_nodes;
    bool full = false;

    bool owns(const std::string& layer, const Feature& f) const;
};

// Scope regenerated after the given nodes and edges changed.
Scope closure(const Model& model, const std::set<std::int64_t>& nodes,
              const std::set<std::int64_t>& edges);
Scope whole(const Model& model);

// Generated features per layer, without ids.
using LayerSet = std::map<std::string, std::vector<Feature>>;
LayerSet generate(Model& model, const Scope& scope);

// Every generated layer for the whole network.
LayerSet compute_all(const ReadAccess& access);

// Identity of a generated feature within its layer.
std::vector<Value> feature_key(const std::string& layer, const Feature& f);

// Layers owned by generation, in write order.
const std::vector<std::string>& generated_layers();

// Dirty set collected during a transaction and consumed by regeneration.
struct Dirty {
    std::set<std::int64_t> nodes;
    std::set<std::int64_t> edges;
};
Dirty& dirty(Transaction& tx);
void mark_node(Transaction& tx, std::int64_t node);
void mark_edge(Transaction& tx, std::int64_t edge);

// Regenerates the closure of the dirty set; with `full`, the whole network
// including orphans. Returns the number of written features.
std::size_t regenerate(Transaction& tx, const Dirty& dirty, bool full);

// Width from probe distances to the axis: twice their median.
double width_from_probes(std::vector<double> distances);

void install(Store& store);

} // namespace streetbase::streetgen
