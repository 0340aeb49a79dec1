#include "streetbase/collab.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace streetbase::collab {

namespace {

const double kSqrt3 = std::sqrt(3.0);

Extent extent_of(const Feature& f) {
    return {f.id, f.get_text("user_id").value_or(""), f.int_or("t", 0), *f.polygon()};
}

bool fully_inside(const geom::Polygon& cell, const geom::Polygon& extent) {
    for (const geom::Point& p : cell.exterior) {
        if (!geom::contains(extent, p)) {
            return false;
        }
    }
    return true;
}

void add_time(Transaction& tx, const geom::Polygon& extent, std::int64_t delta) {
    if (delta == 0) {
        return;
    }
    for (Feature cell : tx.features(kHexGrid, geom::bbox(extent))) {
        if (geom::polygons_overlap(*cell.polygon(), extent)) {
            cell.set("cumulated_ms", cell.int_or("cumulated_ms", 0) + delta);
            tx.update(kHexGrid, cell);
        }
    }
}

// --- screen extents -----------------------------------------------------------

void extent_guard(Transaction& tx, ChangeRecord& rec) {
    if (rec.kind != ChangeKind::Insert) {
        if (rec.origin.is_user()) {
            throw Error(ErrorCode::Unsupported, "screen extents are an append-only log", kExtents,
                        rec.id);
        }
        return;
    }
    Feature& f = *rec.new_value;
    const geom::Polygon* poly = f.polygon();
    if (!poly) {
        throw Error(ErrorCode::InvalidGeometry, "a screen extent is a rectangle", kExtents);
    }
    const std::string user = f.get_text("user_id").value_or("");
    if (user.empty()) {
        throw Error(ErrorCode::Rejected, "a screen extent needs a user_id", kExtents);
    }
    const std::int64_t t = f.int_or("t", 0);
    for (const Feature& other : tx.features(kExtents, std::nullopt, [&](const Feature& o) {
             return o.get_text("user_id") == user && o.int_or("t", 0) >= t;
         })) {
        throw Error(ErrorCode::Rejected,
                    "extent time " + std::to_string(t) + " is not after " +
                        std::to_string(other.int_or("t", 0)) + " for user " + user,
                    kExtents);
    }
    f.geometry = round_extent(geom::bbox(*poly));
    f.set("duration_ms", tx.config().conflict_window_ms);
}

void extent_inserted(Transaction& tx, ChangeRecord& rec) {
    const Feature& f = *rec.new_value;
    const std::string user = f.get_text("user_id").value_or("");
    const std::int64_t t = f.int_or("t", 0);
    const std::int64_t cap = tx.config().conflict_window_ms;

    std::optional<Feature> previous;
    tx.scan(kExtents, [&](const Feature& o) {
        if (o.id != f.id && o.get_text("user_id") == user && o.int_or("t", 0) < t &&
            (!previous || o.int_or("t", 0) > previous->int_or("t", 0))) {
            previous = o;
        }
    });
    if (previous) {
        const std::int64_t before = previous->int_or("duration_ms", cap);
        const std::int64_t after = std::min(t - previous->int_or("t", 0), cap);
        if (before != after) {
            previous->set("duration_ms", after);
            tx.update(kExtents, *previous);
            add_time(tx, *previous->polygon(), after - before);
        }
    }
    add_time(tx, *f.polygon(), f.int_or("duration_ms", cap));

    for (Feature cell : tx.features(kHexGrid, geom::bbox(*f.polygon()))) {
        if (cell.get_text("status") != "done" && fully_inside(*cell.polygon(), *f.polygon())) {
            cell.set("status", std::string("done"));
            tx.update(kHexGrid, cell);
        }
    }
}

// --- work areas and the grid ---------------------------------------------------

void area_guard(Transaction& tx, ChangeRecord& rec) {
    Feature& f = *rec.new_value;
    if (!f.has("size")) {
        f.set("size", tx.config().hex_size_m);
    }
    const double size = f.real_or("size", 0.0);
    if (!(size > 0.0) || !std::isfinite(size)) {
        throw Error(ErrorCode::Rejected, "hexagon size must be positive", kWorkAreas, rec.id);
    }
}

void area_changed(Transaction& tx, ChangeRecord& rec) {
    std::vector<Feature> old_cells = tx.features(kHexGrid, std::nullopt, [&](const Feature& c) {
        return c.get_int("work_area") == rec.id;
    });
    if (rec.kind == ChangeKind::Delete) {
        for (const Feature& c : old_cells) {
            tx.remove(kHexGrid, c.id);
        }
        return;
    }
    const Feature& area = *rec.new_value;
    const double size = area.real_or("size", tx.config().hex_size_m);
    std::map<HexKey, Feature> kept;
    std::vector<const Feature*> done;
    for (const Feature& c : old_cells) {
        if (c.get_text("status") == "done") {
            done.push_back(&c);
        }
        if (c.real_or("size", 0.0) == size) {
            kept.emplace(HexKey{c.int_or("q", 0), c.int_or("r", 0)}, c);
        }
    }
    std::vector<HexKey> keys = hex_cover(*area.polygon(), size);
    std::vector<geom::Polygon> fresh_polys;
    std::vector<HexKey> fresh;
    std::set<HexKey> wanted(keys.begin(), keys.end());
    for (const HexKey& k : keys) {
        if (!kept.count(k)) {
            fresh.push_back(k);
            fresh_polys.push_back(hex_polygon(k, size));
        }
    }
    for (const Feature& c : old_cells) {
        const HexKey k{c.int_or("q", 0), c.int_or("r", 0)};
        if (c.real_or("size", 0.0) != size || !wanted.count(k)) {
            tx.remove(kHexGrid, c.id);
        }
    }
    const std::vector<std::int64_t> time = aggregate_edit_time(
        read_extents(tx), fresh_polys, tx.config().conflict_window_ms);
    for (std::size_t i = 0; i < fresh.size(); ++i) {
        const geom::Point centre = hex_center(fresh[i], size);
        const bool was_done = std::any_of(done.begin(), done.end(), [&](const Feature* c) {
            return geom::contains(*c->polygon(), centre);
        });
        Feature cell;
        cell.geometry = fresh_polys[i];
        cell.set("work_area", rec.id);
        cell.set("q", fresh[i].q);
        cell.set("r", fresh[i].r);
        cell.set("size", size);
        cell.set("status", std::string(was_done ? "done" : "todo"));
        cell.set("cumulated_ms", time[i]);
        tx.insert(kHexGrid, cell);
    }
}

std::vector<Feature> read_conflicts(const ReadAccess& a) {
    const std::vector<Extent> extents = read_extents(a);
    std::map<std::int64_t, const Extent*> by_id;
    for (const Extent& e : extents) {
        by_id[e.id] = &e;
    }
    std::vector<Feature> out;
    std::int64_t id = 0;
    for (const Conflict& c : detect_conflicts(extents, a.config().conflict_window_ms)) {
        Feature f;
        f.id = ++id;
        auto parts = geom::polygon_intersection(by_id[c.extent_a]->polygon,
                                                by_id[c.extent_b]->polygon);
        if (!parts.empty()) {
            f.geometry = parts.front();
        }
        f.set("kind", std::string(to_string(c.kind)));
        f.set("extent_a", c.extent_a);
        f.set("extent_b", c.extent_b);
        f.set("user_a", c.user_a);
        f.set("user_b", c.user_b);
        f.set("dt_ms", c.dt_ms);
        f.set("overlap_area", c.overlap_area);
        out.push_back(std::move(f));
    }
    return out;
}

} // namespace

geom::Polygon round_extent(const geom::BBox& rect) {
    const double w = rect.width();
    const double h = rect.height();
    if (!(w > 0.0) || !(h > 0.0) || !std::isfinite(w) || !std::isfinite(h)) {
        throw Error(ErrorCode::InvalidGeometry, "a screen extent needs positive width and height",
                    kExtents);
    }
    const double rho = kCornerRatio * std::min(w, h);
    const geom::Point centres[4] = {{rect.max_x - rho, rect.min_y + rho, {}},
                                    {rect.max_x - rho, rect.max_y - rho, {}},
                                    {rect.min_x + rho, rect.max_y - rho, {}},
                                    {rect.min_x + rho, rect.min_y + rho, {}}};
    std::vector<geom::Point> pts;
    for (int c = 0; c < 4; ++c) {
        const double start = -geom::kPi / 2.0 + c * geom::kPi / 2.0;
        for (int j = 0; j <= kArcSegments; ++j) {
            const double a = start + j * (geom::kPi / 2.0) / kArcSegments;
            geom::Point p = centres[c] + geom::from_angle(a) * rho;
            p.x = std::clamp(p.x, rect.min_x, rect.max_x);
            p.y = std::clamp(p.y, rect.min_y, rect.max_y);
            if (pts.empty() || !(pts.back() == p)) {
                pts.push_back(p);
            }
        }
    }
    geom::Polygon out;
    out.exterior = geom::close_ring(std::move(pts));
    return out;
}

std::string_view to_string(ConflictKind kind) {
    return kind == ConflictKind::Revisit ? "revisit" : "concurrent";
}

std::vector<Conflict> detect_conflicts(const std::vector<Extent>& extents, std::int64_t window_ms) {
    std::vector<const Extent*> sorted;
    for (const Extent& e : extents) {
        sorted.push_back(&e);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const Extent* a, const Extent* b) { return a->id < b->id; });
    std::vector<geom::BBox> boxes;
    for (const Extent* e : sorted) {
        boxes.push_back(geom::bbox(e->polygon));
    }
    std::vector<Conflict> out;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        for (std::size_t j = i + 1; j < sorted.size(); ++j) {
            const Extent& a = *sorted[i];
            const Extent& b = *sorted[j];
            const std::int64_t dt = std::llabs(a.t - b.t);
            const bool same = a.user == b.user;
            ConflictKind kind;
            if (same && dt > window_ms) {
                kind = ConflictKind::Revisit;
            } else if (!same && dt < window_ms) {
                kind = ConflictKind::Concurrent;
            } else {
                continue;
            }
            if (!boxes[i].intersects(boxes[j])) {
                continue;
            }
            const double overlap = geom::polygon_intersection_area(a.polygon, b.polygon);
            if (overlap > 1e-9) {
                out.push_back({kind, a.id, b.id, a.user, b.user, dt, overlap});
            }
        }
    }
    return out;
}

std::map<std::int64_t, std::int64_t> durations(const std::vector<Extent>& extents,
                                               std::int64_t cap_ms) {
    std::map<std::string, std::vector<const Extent*>> by_user;
    for (const Extent& e : extents) {
        by_user[e.user].push_back(&e);
    }
    std::map<std::int64_t, std::int64_t> out;
    for (auto& [user, list] : by_user) {
        std::sort(list.begin(), list.end(),
                  [](const Extent* a, const Extent* b) { return a->t < b->t; });
        for (std::size_t i = 0; i < list.size(); ++i) {
            out[list[i]->id] =
                i + 1 < list.size() ? std::min(list[i + 1]->t - list[i]->t, cap_ms) : cap_ms;
        }
    }
    return out;
}

std::vector<std::int64_t> aggregate_edit_time(const std::vector<Extent>& extents,
                                              const std::vector<geom::Polygon>& cells,
                                              std::int64_t cap_ms) {
    const auto dur = durations(extents, cap_ms);
    std::vector<std::int64_t> out(cells.size(), 0);
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const geom::BBox box = geom::bbox(cells[c]);
        for (const Extent& e : extents) {
            if (box.intersects(geom::bbox(e.polygon)) &&
                geom::polygons_overlap(cells[c], e.polygon)) {
                out[c] += dur.at(e.id);
            }
        }
    }
    return out;
}

geom::Point hex_center(const HexKey& key, double size) {
    return {1.5 * size * static_cast<double>(key.q),
            kSqrt3 * size * (static_cast<double>(key.r) + static_cast<double>(key.q) / 2.0),
            {}};
}

geom::Polygon hex_polygon(const HexKey& key, double size) {
    const geom::Point c = hex_center(key, size);
    std::vector<geom::Point> pts;
    for (int k = 0; k < 6; ++k) {
        pts.push_back(c + geom::from_angle(k * geom::kPi / 3.0) * size);
    }
    geom::Polygon out;
    out.exterior = geom::close_ring(std::move(pts));
    return out;
}

std::vector<HexKey> hex_cover(const geom::Polygon& area, double size) {
    const geom::BBox box = geom::bbox(area);
    const auto q0 = static_cast<std::int64_t>(std::floor(box.min_x / (1.5 * size))) - 1;
    const auto q1 = static_cast<std::int64_t>(std::ceil(box.max_x / (1.5 * size))) + 1;
    std::vector<HexKey> out;
    for (std::int64_t q = q0; q <= q1; ++q) {
        const double shift = static_cast<double>(q) / 2.0;
        const auto r0 = static_cast<std::int64_t>(std::floor(box.min_y / (kSqrt3 * size) - shift)) - 1;
        const auto r1 = static_cast<std::int64_t>(std::ceil(box.max_y / (kSqrt3 * size) - shift)) + 1;
        for (std::int64_t r = r0; r <= r1; ++r) {
            const HexKey key{q, r};
            if (geom::polygons_overlap(hex_polygon(key, size), area)) {
                out.push_back(key);
            }
        }
    }
    return out;
}

std::vector<Extent> read_extents(const ReadAccess& a) {
    std::vector<Extent> out;
    a.scan(kExtents, [&](const Feature& f) { out.push_back(extent_of(f)); });
    return out;
}

std::vector<std::string> check(const ReadAccess& a) {
    std::vector<std::string> out;
    const std::vector<Extent> extents = read_extents(a);
    const std::int64_t cap = a.config().conflict_window_ms;
    const auto dur = durations(extents, cap);
    a.scan(kExtents, [&](const Feature& f) {
        if (f.int_or("duration_ms", -1) != dur.at(f.id)) {
            out.push_back("extent " + std::to_string(f.id) + " duration is stale");
        }
    });
    std::vector<Feature> cells = a.features(kHexGrid);
    std::vector<geom::Polygon> polys;
    for (const Feature& c : cells) {
        polys.push_back(*c.polygon());
    }
    const std::vector<std::int64_t> time = aggregate_edit_time(extents, polys, cap);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const Feature& c = cells[i];
        const std::string tag = "hex cell " + std::to_string(c.id);
        const auto status = c.get_text("status").value_or("");
        if (status != "todo" && status != "done") {
            out.push_back(tag + " has unknown status '" + status + "'");
        }
        if (c.int_or("cumulated_ms", -1) != time[i]) {
            out.push_back(tag + " cumulated time differs from the extent log");
        }
        if (!a.find(kWorkAreas, c.int_or("work_area", 0))) {
            out.push_back(tag + " belongs to a missing work area");
        }
    }
    return out;
}

void install(Store& store) {
    store.create_layer({kExtents,
                        GeometryKind::Polygon,
                        false,
                        {{"user_id", AttrType::Text, false},
                         {"t", AttrType::Integer, false},
                         {"scale", AttrType::Real, true},
                         {"duration_ms", AttrType::Integer, true}},
                        true});
    store.create_layer(
        {kWorkAreas, GeometryKind::Polygon, false, {{"size", AttrType::Real, true}}, true});
    store.create_layer({kHexGrid,
                        GeometryKind::Polygon,
                        false,
                        {{"work_area", AttrType::Integer, false},
                         {"q", AttrType::Integer, false},
                         {"r", AttrType::Integer, false},
                         {"size", AttrType::Real, false},
                         {"status", AttrType::Text, false},
                         {"cumulated_ms", AttrType::Integer, false}},
                        false});

    auto& h = store.handlers();
    h.add("collab.extent_guard", extent_guard);
    h.add("collab.extent_inserted", extent_inserted);
    h.add("collab.area_guard", area_guard);
    h.add("collab.area_changed", area_changed);
    h.add_reader("collab.conflicts", read_conflicts);

    store.register_trigger(
        {"extent_round", kExtents, Timing::Before, OnAny, "collab.extent_guard", 0});
    store.register_trigger(
        {"extent_account", kExtents, Timing::After, OnInsert, "collab.extent_inserted", 0});
    store.register_trigger(
        {"work_area_guard", kWorkAreas, Timing::Before, OnInsert | OnUpdate, "collab.area_guard", 0});
    store.register_trigger(
        {"work_area_grid", kWorkAreas, Timing::After, OnAny, "collab.area_changed", 0});

    store.register_virtual_layer({{kConflicts,
                                   GeometryKind::Polygon,
                                   true,
                                   {{"kind", AttrType::Text, false},
                                    {"extent_a", AttrType::Integer, false},
                                    {"extent_b", AttrType::Integer, false},
                                    {"user_a", AttrType::Text, false},
                                    {"user_b", AttrType::Text, false},
                                    {"dt_ms", AttrType::Integer, false},
                                    {"overlap_area", AttrType::Real, false}},
                                   false},
                                  "collab.conflicts"});
}

// --- recorder ----------------------------------------------------------------------

ExtentRecorder::ExtentRecorder(Store& store) : store_(store), worker_([this] { run(); }) {}

ExtentRecorder::~ExtentRecorder() {
    {
        std::lock_guard lock(mutex_);
        stop_ = true;
    }
    wake_.notify_all();
    worker_.join();
}

bool ExtentRecorder::record(const std::string& user, const geom::BBox& rect, std::int64_t t,
                            double scale) {
    const Config& cfg = store_.config();
    if (scale < cfg.min_scale || scale > cfg.max_scale) {
        return false;
    }
    {
        std::lock_guard lock(mutex_);
        queue_.push_back({user, rect, t, scale});
    }
    wake_.notify_one();
    return true;
}

void ExtentRecorder::flush() {
    std::unique_lock lock(mutex_);
    idle_.wait(lock, [&] { return queue_.empty() && !busy_; });
}

std::size_t ExtentRecorder::committed() const {
    std::lock_guard lock(mutex_);
    return committed_;
}

std::size_t ExtentRecorder::dropped() const {
    std::lock_guard lock(mutex_);
    return dropped_;
}

void ExtentRecorder::run() {
    std::unique_lock lock(mutex_);
    for (;;) {
        wake_.wait(lock, [&] { return stop_ || !queue_.empty(); });
        if (queue_.empty()) {
            return;
        }
        std::vector<Pending> batch(queue_.begin(), queue_.end());
        queue_.clear();
        busy_ = true;
        lock.unlock();
        std::stable_sort(batch.begin(), batch.end(),
                         [](const Pending& a, const Pending& b) { return a.t < b.t; });
        std::size_t ok = 0;
        for (const Pending& p : batch) {
            Feature f;
            f.geometry = geom::rectangle(p.rect);
            f.set("user_id", p.user);
            f.set("t", p.t);
            f.set("scale", p.scale);
            try {
                store_.apply(Origin::user(p.user), {Edit::insert(kExtents, std::move(f))});
                ++ok;
            } catch (const Error&) {
            }
        }
        lock.lock();
        committed_ += ok;
        dropped_ += batch.size() - ok;
        busy_ = false;
        if (queue_.empty()) {
            idle_.notify_all();
        }
    }
}

} // namespace streetbase::collab
