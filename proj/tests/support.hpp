#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"

#include "streetbase/engine.hpp"
#include "streetbase/store.hpp"
#include "streetbase/streetgen.hpp"
#include "streetbase/topology.hpp"

namespace sbtest {

using namespace streetbase;

inline geom::Point P(double x, double y) { return {x, y, {}}; }

inline Origin user() { return Origin::user("tester@127.0.0.1"); }

inline Feature point_feature(double x, double y) {
    Feature f;
    f.geometry = P(x, y);
    return f;
}

inline Feature line_feature(std::vector<geom::Point> pts) {
    Feature f;
    f.geometry = geom::Polyline{std::move(pts)};
    return f;
}

inline Feature polygon_feature(std::vector<geom::Point> ring) {
    Feature f;
    geom::Polygon poly;
    poly.exterior = geom::close_ring(std::move(ring));
    f.geometry = poly;
    return f;
}

inline std::int64_t add_node(Store& s, double x, double y) {
    return s.apply(user(), {Edit::insert(topology::kNodeView, point_feature(x, y))}).edit_ids.at(0);
}

inline std::int64_t add_edge(Store& s, std::vector<geom::Point> pts,
                             std::optional<double> width = std::nullopt,
                             std::optional<std::int64_t> lanes = std::nullopt) {
    Feature f = line_feature(std::move(pts));
    if (width) {
        f.set("width", *width);
    }
    if (lanes) {
        f.set("lane_count", *lanes);
    }
    return s.apply(user(), {Edit::insert(topology::kEdgeView, std::move(f))}).edit_ids.at(0);
}

inline void move_node(Store& s, std::int64_t node, double x, double y) {
    Feature f = *s.get(topology::kNodeView, node);
    f.geometry = P(x, y);
    s.apply(user(), {Edit::update(topology::kNodeView, std::move(f))});
}

inline std::vector<Feature> where(const Store& s, const std::string& layer, const std::string& attr,
                                  std::int64_t value) {
    return s.query(layer, std::nullopt,
                   [&](const Feature& f) { return f.get_int(attr) == value; });
}

// Centre node plus four arms of `arm` metres along the axes.
struct Cross {
    std::int64_t centre = 0;
    std::vector<std::int64_t> ends;  // east, north, west, south
    std::vector<std::int64_t> edges; // same order, each starting at the centre
};

inline Cross build_cross(Store& s, double arm = 50.0, double width = 8.0) {
    Cross c;
    c.centre = add_node(s, 0, 0);
    const geom::Point dirs[4] = {P(1, 0), P(0, 1), P(-1, 0), P(0, -1)};
    for (const auto& d : dirs) {
        c.ends.push_back(add_node(s, d.x * arm, d.y * arm));
    }
    for (const auto& d : dirs) {
        c.edges.push_back(add_edge(s, {P(0, 0), P(d.x * arm, d.y * arm)}, width));
    }
    return c;
}

inline double shoelace(const geom::Ring& ring) {
    double a = 0.0;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        a += ring[i].x * ring[i + 1].y - ring[i + 1].x * ring[i].y;
    }
    return 0.5 * a;
}

} // namespace sbtest
