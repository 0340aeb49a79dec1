#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "support.hpp"
#include "streetbase/collab.hpp"

using namespace sbtest;
namespace cb = streetbase::collab;

namespace {

constexpr std::int64_t kWindow = 300000;

cb::Extent extent(std::int64_t id, const std::string& user, std::int64_t t, geom::BBox box) {
    return {id, user, t, cb::round_extent(box)};
}

Feature extent_feature(const std::string& user, std::int64_t t, geom::BBox box) {
    Feature f;
    f.geometry = geom::rectangle(box);
    f.set("user_id", user);
    f.set("t", t);
    f.set("scale", 1000.0);
    return f;
}

void record(Store& s, const std::string& user, std::int64_t t, geom::BBox box) {
    s.apply(Origin::user(user), {Edit::insert(cb::kExtents, extent_feature(user, t, box))});
}

std::int64_t add_area(Store& s, geom::BBox box, double size) {
    Feature f;
    f.geometry = geom::rectangle(box);
    f.set("size", size);
    return s.apply(user(), {Edit::insert(cb::kWorkAreas, f)}).edit_ids.at(0);
}

// Convex hexagon inside convex polygon iff all of its vertices are.
bool contained(const geom::Polygon& cell, const geom::Polygon& outer) {
    return std::all_of(cell.exterior.begin(), cell.exterior.end(),
                       [&](const geom::Point& p) { return geom::contains(outer, p); });
}

std::map<std::pair<std::int64_t, std::int64_t>, Feature> cells(const Store& s) {
    std::map<std::pair<std::int64_t, std::int64_t>, Feature> out;
    for (const auto& c : s.query(cb::kHexGrid)) {
        out[{*c.get_int("q"), *c.get_int("r")}] = c;
    }
    return out;
}

std::size_t done_count(const Store& s) {
    std::size_t n = 0;
    for (const auto& [_, c] : cells(s)) {
        n += c.get_text("status") == "done";
    }
    return n;
}

} // namespace

TEST_SUITE("collab") {

TEST_CASE("rounded extent of a 40 by 20 rectangle") {
    const geom::BBox rect{0, 0, 40, 20};
    const geom::Polygon p = cb::round_extent(rect);
    const double oracle = 800.0 - (4.0 - geom::kPi) * 25.0;
    CHECK(std::abs(geom::area(p) - oracle) / oracle < 0.01);
    CHECK(geom::area(p) <= 800.0);
    for (const auto& v : p.exterior) {
        CHECK(v.x >= -1e-12);
        CHECK(v.x <= 40.0 + 1e-12);
        CHECK(v.y >= -1e-12);
        CHECK(v.y <= 20.0 + 1e-12);
    }
    for (const auto& corner : {P(0, 0), P(40, 0), P(40, 20), P(0, 20)}) {
        CHECK_FALSE(geom::contains(p, corner));
    }
    CHECK(geom::contains(p, P(5, 0.0001)));
    CHECK(geom::contains(p, P(20, 10)));
    CHECK_THROWS_AS(cb::round_extent({0, 0, 0, 10}), Error);
}

TEST_CASE("rounded square is four-fold symmetric and convex") {
    const geom::Polygon p = cb::round_extent({-5, -5, 5, 5});
    const auto& ring = p.exterior;
    for (const auto& v : ring) {
        const geom::Point rotated = P(-v.y, v.x);
        const bool found = std::any_of(ring.begin(), ring.end(), [&](const geom::Point& w) {
            return geom::distance(w, rotated) < 1e-9;
        });
        CHECK(found);
    }
    const double sign = shoelace(ring) > 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i + 2 < ring.size(); ++i) {
        CHECK(sign * geom::cross(ring[i + 1] - ring[i], ring[i + 2] - ring[i + 1]) >= -1e-12);
    }
}

TEST_CASE("conflict examples") {
    const geom::BBox box{0, 0, 100, 50};
    auto revisit = cb::detect_conflicts(
        {extent(1, "a", 0, box), extent(2, "a", 400000, {10, 10, 90, 40})}, kWindow);
    REQUIRE(revisit.size() == 1);
    CHECK(revisit[0].kind == cb::ConflictKind::Revisit);
    CHECK(revisit[0].overlap_area > 0.0);

    auto concurrent =
        cb::detect_conflicts({extent(1, "a", 0, box), extent(2, "b", 60000, box)}, kWindow);
    REQUIRE(concurrent.size() == 1);
    CHECK(concurrent[0].kind == cb::ConflictKind::Concurrent);
    CHECK(concurrent[0].user_a == "a");
    CHECK(concurrent[0].user_b == "b");

    CHECK(cb::detect_conflicts({extent(1, "a", 0, box), extent(2, "b", kWindow, box)}, kWindow)
              .empty());
    CHECK(cb::detect_conflicts({extent(1, "a", 0, box), extent(2, "a", kWindow, box)}, kWindow)
              .empty());
    CHECK(cb::detect_conflicts({extent(1, "a", 0, box), extent(2, "a", 1000, box)}, kWindow).empty());
    CHECK(cb::detect_conflicts({extent(1, "a", 0, box), extent(2, "b", 0, {200, 200, 300, 300})},
                               kWindow)
              .empty());
}

TEST_CASE("conflicts are independent of log order") {
    std::mt19937_64 rng(61);
    std::uniform_real_distribution<double> xy(0.0, 300.0);
    std::uniform_real_distribution<double> wh(20.0, 120.0);
    std::vector<cb::Extent> log;
    for (int i = 0; i < 40; ++i) {
        const double x = xy(rng);
        const double y = xy(rng);
        log.push_back(extent(i + 1, "u" + std::to_string(rng() % 4),
                             static_cast<std::int64_t>(rng() % 1000000),
                             {x, y, x + wh(rng), y + wh(rng)}));
    }
    const auto base = cb::detect_conflicts(log, kWindow);
    CHECK_FALSE(base.empty());
    for (int k = 0; k < 5; ++k) {
        std::shuffle(log.begin(), log.end(), rng);
        const auto again = cb::detect_conflicts(log, kWindow);
        REQUIRE(again.size() == base.size());
        for (std::size_t i = 0; i < base.size(); ++i) {
            CHECK(again[i].extent_a == base[i].extent_a);
            CHECK(again[i].extent_b == base[i].extent_b);
            CHECK(again[i].kind == base[i].kind);
        }
    }
}

TEST_CASE("durations and aggregation examples") {
    const geom::BBox box{0, 0, 50, 50};
    const std::vector<cb::Extent> one{extent(1, "a", 0, box), extent(2, "a", 60000, box)};
    const auto d = cb::durations(one, kWindow);
    CHECK(d.at(1) == 60000);
    CHECK(d.at(2) == kWindow);
    const std::vector<geom::Polygon> cell{geom::rectangle({10, 10, 20, 20}),
                                          geom::rectangle({500, 500, 510, 510})};
    auto sum = cb::aggregate_edit_time(one, cell, kWindow);
    CHECK(sum[0] == 60000 + kWindow);
    CHECK(sum[1] == 0);
    const std::vector<cb::Extent> two{extent(1, "a", 0, box), extent(2, "b", 10, box)};
    sum = cb::aggregate_edit_time(two, cell, kWindow);
    CHECK(sum[0] == 2 * kWindow);
    const auto far = cb::durations({extent(1, "a", 0, box), extent(2, "a", 900000, box)}, kWindow);
    CHECK(far.at(1) == kWindow);
}

TEST_CASE("hexagons tile without overlap and cover the area") {
    std::mt19937_64 rng(62);
    std::uniform_real_distribution<double> xy(-100.0, 100.0);
    std::uniform_real_distribution<double> wh(10.0, 90.0);
    std::uniform_real_distribution<double> size(4.0, 30.0);
    for (int trial = 0; trial < 10; ++trial) {
        const double x = xy(rng);
        const double y = xy(rng);
        const geom::Polygon area = geom::rectangle({x, y, x + wh(rng), y + wh(rng)});
        const double s = size(rng);
        const auto keys = cb::hex_cover(area, s);
        std::vector<geom::Polygon> hexes;
        double covered = 0.0;
        for (const auto& k : keys) {
            hexes.push_back(cb::hex_polygon(k, s));
            CHECK(geom::area(hexes.back()) == doctest::Approx(1.5 * std::sqrt(3.0) * s * s));
            covered += geom::polygon_intersection_area(hexes.back(), area);
        }
        CHECK(covered == doctest::Approx(geom::area(area)).epsilon(1e-9));
        for (std::size_t i = 0; i < hexes.size(); ++i) {
            for (std::size_t j = i + 1; j < hexes.size(); ++j) {
                CHECK(geom::polygon_intersection_area(hexes[i], hexes[j]) < 1e-9);
            }
        }
    }
}

TEST_CASE("an extent flips exactly the cells it fully contains") {
    Engine e;
    Store& s = e.store();
    add_area(s, {-1, -12, 1, 48}, 10.0);
    REQUIRE(s.count(cb::kHexGrid) == 5);
    CHECK(done_count(s) == 0);

    const geom::BBox box{-12, -9.5, 12, 44};
    const geom::Polygon rounded = cb::round_extent(box);
    int whole = 0;
    int clipped = 0;
    for (const auto& [_, c] : cells(s)) {
        if (contained(*c.polygon(), rounded)) {
            ++whole;
        } else if (geom::polygons_overlap(*c.polygon(), rounded)) {
            ++clipped;
        }
    }
    REQUIRE(whole == 3);
    REQUIRE(clipped == 2);

    record(s, "a", 0, box);
    CHECK(done_count(s) == 3);
    for (const auto& [_, c] : cells(s)) {
        CHECK((c.get_text("status") == "done") == contained(*c.polygon(), rounded));
    }
    record(s, "a", 1000, box);
    CHECK(done_count(s) == 3);
    record(s, "a", 2000, {0, 0, 3, 3});
    CHECK(done_count(s) == 3);
}

TEST_CASE("cell time equals the aggregation of the extent log") {
    Engine e;
    Store& s = e.store();
    add_area(s, {0, 0, 150, 100}, 20.0);
    std::mt19937_64 rng(63);
    std::uniform_real_distribution<double> xy(-20.0, 140.0);
    std::uniform_real_distribution<double> wh(10.0, 60.0);
    std::map<std::string, std::int64_t> clock;
    std::size_t done_before = 0;
    for (int i = 0; i < 30; ++i) {
        const std::string u = "u" + std::to_string(rng() % 3);
        clock[u] += static_cast<std::int64_t>(rng() % 500000) + 1;
        const double x = xy(rng);
        const double y = xy(rng);
        record(s, u, clock[u], {x, y, x + wh(rng), y + wh(rng)});
        const std::size_t done_now = done_count(s);
        CHECK(done_now >= done_before);
        done_before = done_now;
    }
    std::vector<cb::Extent> log;
    for (const auto& f : s.query(cb::kExtents)) {
        log.push_back({f.id, *f.get_text("user_id"), *f.get_int("t"), *f.polygon()});
    }
    std::map<std::int64_t, std::int64_t> by_id;
    std::map<std::string, std::vector<const cb::Extent*>> per_user;
    for (const auto& x : log) {
        per_user[x.user].push_back(&x);
    }
    for (auto& [_, xs] : per_user) {
        std::sort(xs.begin(), xs.end(), [](auto* a, auto* b) { return a->t < b->t; });
        for (std::size_t i = 0; i < xs.size(); ++i) {
            by_id[xs[i]->id] = i + 1 < xs.size() ? std::min(xs[i + 1]->t - xs[i]->t, kWindow) : kWindow;
        }
    }
    for (const auto& f : s.query(cb::kExtents)) {
        CHECK(f.get_int("duration_ms") == by_id.at(f.id));
    }
    for (const auto& [_, c] : cells(s)) {
        std::int64_t want = 0;
        for (const auto& x : log) {
            if (geom::polygon_intersection_area(*c.polygon(), x.polygon) > 1e-9) {
                want += by_id.at(x.id);
            }
        }
        CHECK(c.get_int("cumulated_ms") == want);
    }
    std::vector<std::string> problems;
    s.read([&](const ReadAccess& a) { problems = cb::check(a); });
    CHECK(problems.empty());
}

TEST_CASE("extent log is append-only and chronological per user") {
    Engine e;
    Store& s = e.store();
    record(s, "a", 1000, {0, 0, 10, 10});
    CHECK_THROWS_AS(record(s, "a", 1000, {0, 0, 10, 10}), Error);
    CHECK_THROWS_AS(record(s, "a", 10, {0, 0, 10, 10}), Error);
    CHECK_NOTHROW(record(s, "b", 10, {0, 0, 10, 10}));
    const Feature f = s.query(cb::kExtents).at(0);
    CHECK_THROWS_AS(s.apply(user(), {Edit::update(cb::kExtents, f)}), Error);
    CHECK_THROWS_AS(s.apply(user(), {Edit::remove(cb::kExtents, f.id)}), Error);
    CHECK(s.count(cb::kConflicts) == 1);
}

TEST_CASE("work area edits regenerate the grid and keep done cells") {
    Engine e;
    Store& s = e.store();
    const auto area = add_area(s, {0, 0, 60, 60}, 10.0);
    const std::size_t before = s.count(cb::kHexGrid);
    record(s, "a", 0, {-20, -20, 80, 80});
    const auto done_keys = cells(s);
    const std::size_t done = done_count(s);
    CHECK(done > 0);

    Feature f = *s.get(cb::kWorkAreas, area);
    f.geometry = geom::rectangle({0, 0, 120, 60});
    s.apply(user(), {Edit::update(cb::kWorkAreas, f)});
    CHECK(s.count(cb::kHexGrid) > before);
    CHECK(done_count(s) == done);
    for (const auto& [k, c] : cells(s)) {
        auto old = done_keys.find(k);
        if (old != done_keys.end()) {
            CHECK(c.get_text("status") == old->second.get_text("status"));
        } else {
            CHECK(c.get_text("status") == "todo");
        }
    }

    f = *s.get(cb::kWorkAreas, area);
    f.set("size", 5.0);
    s.apply(user(), {Edit::update(cb::kWorkAreas, f)});
    for (const auto& [_, c] : cells(s)) {
        CHECK(c.real_or("size", 0) == 5.0);
    }
    CHECK(done_count(s) > 0);

    f.set("size", 0.0);
    CHECK_THROWS_AS(s.apply(user(), {Edit::update(cb::kWorkAreas, f)}), Error);
    s.apply(user(), {Edit::remove(cb::kWorkAreas, area)});
    CHECK(s.count(cb::kHexGrid) == 0);
}

TEST_CASE("the recorder commits bursts in per-user order and skips bad scales") {
    Engine e;
    Store& s = e.store();
    cb::ExtentRecorder rec(s);
    CHECK_FALSE(rec.record("a", {0, 0, 10, 10}, 1, s.config().min_scale / 2.0));
    CHECK_FALSE(rec.record("a", {0, 0, 10, 10}, 2, s.config().max_scale * 2.0));
    for (int i = 0; i < 100; ++i) {
        const std::string u = i % 2 ? "a" : "b";
        CHECK(rec.record(u, {i * 1.0, 0, i + 10.0, 10}, 1000 + i, 1000.0));
    }
    rec.flush();
    CHECK(rec.committed() == 100);
    CHECK(rec.dropped() == 0);
    CHECK(s.count(cb::kExtents) == 100);
    std::map<std::string, std::int64_t> last;
    for (const auto& r : s.feed().since(0)) {
        if (r.layer != cb::kExtents || r.kind != ChangeKind::Insert) {
            continue;
        }
        const std::string u = *r.new_value->get_text("user_id");
        const std::int64_t t = *r.new_value->get_int("t");
        CHECK(r.origin.is_user());
        CHECK(t > last[u]);
        last[u] = t;
    }
}

} // TEST_SUITE
