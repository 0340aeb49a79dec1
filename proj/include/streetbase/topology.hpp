#pragma once

// Road-axis network: nodes and edges edited conservatively through the
// edit_node / edit_edge proxy views.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "streetbase/store.hpp"

namespace streetbase::topology {

inline const std::string kNodes = "road_node";
inline const std::string kEdges = "road_edge";
inline const std::string kNodeView = "edit_node";
inline const std::string kEdgeView = "edit_edge";

// Bookkeeping for a split in progress, so that dependent modules can move
// their references from the original edge onto the second half.
struct SplitInfo {
    std::int64_t edge = 0;   // original edge, keeps [0, s]
    std::int64_t node = 0;   // inserted node
    std::int64_t second = 0; // new edge covering [s, length]; 0 until inserted
    double s = 0.0;
    double length = 0.0;
    std::int64_t old_end = 0;
};

// The split whose second half is being inserted right now, if any.
const SplitInfo* pending_split(Transaction& tx);

struct SplitResult {
    std::int64_t node = 0;
    std::int64_t first = 0;
    std::int64_t second = 0;
};

void install(Store& store);

std::int64_t insert_node(Transaction& tx, geom::Point p);
std::int64_t insert_edge(Transaction& tx, geom::Polyline line, std::optional<double> width = {},
                         std::optional<std::int64_t> lane_count = {});
SplitResult split_edge(Transaction& tx, std::int64_t edge, double s);
void move_node(Transaction& tx, std::int64_t node, geom::Point p);
void delete_edge(Transaction& tx, std::int64_t edge);
void delete_node(Transaction& tx, std::int64_t node);

std::vector<std::int64_t> incident_edges(const ReadAccess& access, std::int64_t node);

// Planar-network and attribute invariants; one message per violation.
std::vector<std::string> check(const ReadAccess& access);

} // namespace streetbase::topology
