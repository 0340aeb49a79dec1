#pragma once

// Multi-user awareness: screen extents, conflict detection, the hexagonal
// todo/done grid controlled by work areas, and per-cell edit time.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "streetbase/store.hpp"

namespace streetbase::collab {

inline const std::string kExtents = "screen_extent";
inline const std::string kWorkAreas = "work_area";
inline const std::string kHexGrid = "hex_grid";
inline const std::string kConflicts = "conflicts";

inline constexpr int kArcSegments = 8;
inline constexpr double kCornerRatio = 0.25;

// Axis-aligned rectangle with quarter-arc corners. Throws InvalidGeometry
// for a degenerate rectangle.
geom::Polygon round_extent(const geom::BBox& rect);

struct Extent {
    std::int64_t id = 0;
    std::string user;
    std::int64_t t = 0; // ms
    geom::Polygon polygon;
};

enum class ConflictKind { Revisit, Concurrent };
std::string_view to_string(ConflictKind kind);

struct Conflict {
    ConflictKind kind = ConflictKind::Concurrent;
    std::int64_t extent_a = 0; // extent_a < extent_b
    std::int64_t extent_b = 0;
    std::string user_a;
    std::string user_b;
    std::int64_t dt_ms = 0;
    double overlap_area = 0.0;
};

// Pairs of overlapping extents: same user more than `window_ms` apart, or
// different users less than `window_ms` apart. Sorted by extent ids.
std::vector<Conflict> detect_conflicts(const std::vector<Extent>& extents, std::int64_t window_ms);

// Time until the same user's next extent, capped; the last one gets the cap.
std::map<std::int64_t, std::int64_t> durations(const std::vector<Extent>& extents,
                                               std::int64_t cap_ms);
// Sum of the durations of every extent overlapping each cell.
std::vector<std::int64_t> aggregate_edit_time(const std::vector<Extent>& extents,
                                              const std::vector<geom::Polygon>& cells,
                                              std::int64_t cap_ms);

struct HexKey {
    std::int64_t q = 0;
    std::int64_t r = 0;
    auto operator<=>(const HexKey&) const = default;
};

// Flat-top hexagon of circumradius `size` at axial (q, r).
geom::Point hex_center(const HexKey& key, double size);
geom::Polygon hex_polygon(const HexKey& key, double size);
// Lattice cells whose hexagon overlaps the area with positive area.
std::vector<HexKey> hex_cover(const geom::Polygon& area, double size);

std::vector<Extent> read_extents(const ReadAccess& access);

std::vector<std::string> check(const ReadAccess& access);

void install(Store& store);

// Fire-and-forget extent logging: callers enqueue, a worker thread commits
// in per-user time order.
class ExtentRecorder {
public:
    explicit ExtentRecorder(Store& store);
    ~ExtentRecorder();
    ExtentRecorder(const ExtentRecorder&) = delete;
    ExtentRecorder& operator=(const ExtentRecorder&) = delete;

    // Returns false when the scale is outside the configured band.
    bool record(const std::string& user, const geom::BBox& rect, std::int64_t t, double scale);
    // Blocks until everything enqueued so far is committed or dropped.
    void flush();
    std::size_t committed() const;
    std::size_t dropped() const;

private:
    struct Pending {
        std::string user;
        geom::BBox rect;
        std::int64_t t = 0;
        double scale = 0.0;
    };
    void run();

    Store& store_;
    mutable std::mutex mutex_;
    std::condition_variable wake_;
    std::condition_variable idle_;
    std::deque<Pending> queue_;
    bool busy_ = false;
    bool stop_ = false;
    std::size_t committed_ = 0;
    std::size_t dropped_ = 0;
    std::thread worker_;
};

} // namespace streetbase::collab
