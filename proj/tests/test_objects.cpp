#include <cmath>

#include "support.hpp"
#include "streetbase/objects.hpp"

using namespace sbtest;
namespace topo = streetbase::topology;
namespace ob = streetbase::objects;

namespace {

constexpr double kDeg = geom::kPi / 180.0;

std::vector<std::string> problems(const Store& s) {
    std::vector<std::string> out;
    s.read([&](const ReadAccess& a) { out = ob::check(a); });
    return out;
}

std::int64_t add_object(Store& s, double x, double y, const std::string& mode,
                        std::optional<std::string> orientation = std::nullopt,
                        std::optional<double> theta = std::nullopt) {
    Feature f = point_feature(x, y);
    f.set("class", std::string("bench"));
    f.set("position_mode", mode);
    if (orientation) {
        f.set("orientation_mode", *orientation);
    }
    if (theta) {
        f.set("theta_abs", *theta);
    }
    return s.apply(user(), {Edit::insert(ob::kObjectView, f)}).edit_ids.at(0);
}

// Rectangle of `length` along `theta` and `width` across it, centred at c.
Feature rectangle_sketch(geom::Point c, double theta, double length, double width) {
    const geom::Point u{std::cos(theta), std::sin(theta), {}};
    const geom::Point n{-u.y, u.x, {}};
    auto at = [&](double a, double b) {
        return P(c.x + a * u.x + b * n.x, c.y + a * u.y + b * n.y);
    };
    return polygon_feature({at(-length / 2, -width / 2), at(length / 2, -width / 2),
                            at(length / 2, width / 2), at(-length / 2, width / 2)});
}

struct Road {
    std::int64_t a = 0;
    std::int64_t b = 0;
    std::int64_t edge = 0;
};

Road straight_road(Store& s, double width = 8.0) {
    Road r;
    r.a = add_node(s, 0, 0);
    r.b = add_node(s, 100, 0);
    r.edge = add_edge(s, {P(0, 0), P(100, 0)}, width);
    return r;
}

} // namespace

TEST_SUITE("objects") {

TEST_CASE("axis objects keep s and d when the axis moves") {
    Engine e;
    Store& s = e.store();
    const Road r = straight_road(s);
    const auto id = add_object(s, 30, 3, "axis");
    Feature obj = *s.get(ob::kObjects, id);
    CHECK(obj.get_int("edge_id") == r.edge);
    CHECK(obj.real_or("s", 0) == doctest::Approx(30.0));
    CHECK(obj.real_or("d", 0) == doctest::Approx(3.0));

    move_node(s, r.b, 60, 80);
    obj = *s.get(ob::kObjects, id);
    const double ux = 0.6;
    const double uy = 0.8;
    CHECK(obj.point()->x == doctest::Approx(30 * ux - 3 * uy));
    CHECK(obj.point()->y == doctest::Approx(30 * uy + 3 * ux));
    CHECK(problems(s).empty());
}

TEST_CASE("sidewalk objects keep their distance from the border") {
    Engine e;
    Store& s = e.store();
    const Road r = straight_road(s, 8.0);
    const auto left = add_object(s, 30, 7, "sidewalk");
    const auto right = add_object(s, 50, -5, "sidewalk");
    CHECK(s.get(ob::kObjects, left)->get_int("side") == 1);
    CHECK(s.get(ob::kObjects, left)->real_or("d", 0) == doctest::Approx(3.0));
    CHECK(s.get(ob::kObjects, right)->get_int("side") == -1);
    CHECK(s.get(ob::kObjects, right)->real_or("d", 0) == doctest::Approx(1.0));

    Feature edge = *s.get(topo::kEdgeView, r.edge);
    edge.set("width", 12.0);
    s.apply(user(), {Edit::update(topo::kEdgeView, edge)});
    CHECK(s.get(ob::kObjects, left)->point()->y == doctest::Approx(9.0));
    CHECK(s.get(ob::kObjects, right)->point()->y == doctest::Approx(-7.0));
    CHECK(ob::axis_offset(ob::PositionMode::Sidewalk, 2.0, -1, 10.0) == -7.0);
    CHECK(problems(s).empty());
}

TEST_CASE("relative orientation turns with the axis") {
    Engine e;
    Store& s = e.store();
    const Road r = straight_road(s);
    const auto id = add_object(s, 30, -6, "axis", std::string("relative"), 0.25);
    CHECK(s.get(ob::kObjects, id)->real_or("theta_rel", 0) == doctest::Approx(0.25));
    move_node(s, r.b, 0.0001, 100);
    move_node(s, r.a, 0, 0);
    const Feature obj = *s.get(ob::kObjects, id);
    const double tangent = std::atan2(100.0, 0.0001);
    CHECK(obj.real_or("theta_abs", 0) == doctest::Approx(tangent + 0.25));

    const auto fixed = add_object(s, 5, 5, "absolute", std::nullopt, 1.0);
    move_node(s, r.b, 100, 0);
    CHECK(s.get(ob::kObjects, fixed)->point()->x == 5.0);
    CHECK(s.get(ob::kObjects, fixed)->real_or("theta_abs", 0) == 1.0);
    CHECK(problems(s).empty());
}

TEST_CASE("a shortened axis clamps s with a warning") {
    Engine e;
    Store& s = e.store();
    const Road r = straight_road(s);
    const auto id = add_object(s, 90, 0, "axis");
    Feature node = *s.get(topo::kNodeView, r.b);
    node.geometry = P(50, 0);
    const auto cs = s.apply(user(), {Edit::update(topo::kNodeView, node)});
    CHECK(s.get(ob::kObjects, id)->real_or("s", 0) == doctest::Approx(50.0));
    CHECK_FALSE(cs.warnings.empty());
    CHECK(problems(s).empty());
}

TEST_CASE("deleting the axis detaches objects and drops crossings") {
    Engine e;
    Store& s = e.store();
    const Road r = straight_road(s);
    const auto id = add_object(s, 30, 3, "axis");
    s.apply(user(), {Edit::insert(ob::kCrossingView, rectangle_sketch(P(60, 0), geom::kPi / 2, 10, 3))});
    CHECK(s.count(ob::kCrossings) == 1);
    s.apply(user(), {Edit::remove(topo::kEdgeView, r.edge)});
    const Feature obj = *s.get(ob::kObjects, id);
    CHECK(obj.get_text("position_mode") == "absolute");
    CHECK_FALSE(obj.has("edge_id"));
    CHECK(obj.point()->x == doctest::Approx(30.0));
    CHECK(s.count(ob::kCrossings) == 0);
    CHECK(problems(s).empty());
}

TEST_CASE("splitting the axis hands later items to the second half") {
    Engine e;
    Store& s = e.store();
    const Road r = straight_road(s);
    const auto early = add_object(s, 20, 3, "axis");
    const auto late = add_object(s, 80, -3, "axis");
    s.apply(user(), {Edit::insert(ob::kCrossingView, rectangle_sketch(P(70, 0), geom::kPi / 2, 10, 3))});
    const auto mid = add_node(s, 50, 0);
    const auto second = s.query(topo::kEdges, std::nullopt,
                                [&](const Feature& f) { return f.get_int("start_node") == mid; });
    REQUIRE(second.size() == 1);
    CHECK(s.get(ob::kObjects, early)->get_int("edge_id") == r.edge);
    const Feature moved = *s.get(ob::kObjects, late);
    CHECK(moved.get_int("edge_id") == second[0].id);
    CHECK(moved.real_or("s", 0) == doctest::Approx(30.0));
    CHECK(moved.point()->x == doctest::Approx(80.0));
    const Feature crossing = s.query(ob::kCrossings).at(0);
    CHECK(crossing.get_int("edge_id") == second[0].id);
    CHECK(crossing.real_or("s", 0) == doctest::Approx(20.0));
    CHECK(problems(s).empty());
}

TEST_CASE("object edits are validated") {
    Engine e;
    Store& s = e.store();
    CHECK_THROWS_AS(add_object(s, 0, 0, "axis"), Error);
    straight_road(s);
    CHECK_THROWS_AS(add_object(s, 0, 0, "diagonal"), Error);
    CHECK_THROWS_AS(add_object(s, 0, 0, "absolute", std::string("relative")), Error);
    CHECK_THROWS_AS(add_object(s, 0, 0, "axis", std::string("upside")), Error);
}

TEST_CASE("crossing fit recovers exact rectangles at every skew") {
    const geom::Polyline axis{{P(0, 0), P(100, 0)}};
    for (int deg = 0; deg <= 75; deg += 5) {
        CAPTURE(deg);
        const double theta = geom::kPi / 2.0 + deg * kDeg;
        const Feature sketch = rectangle_sketch(P(40, 0), theta, 12.0 / std::cos(deg * kDeg), 3.0);
        const ob::CrossingFit fit = ob::fit_crossing(*sketch.polygon(), axis);
        CHECK(geom::orientation_distance(fit.orientation, theta) < 1e-6);
        CHECK(std::abs(fit.width - 3.0) < 1e-6);
        CHECK(std::abs(fit.s - 40.0) < 1e-6);

        const geom::Polygon canon = ob::canonical_crossing(axis, 8.0, fit);
        const ob::CrossingFit again = ob::fit_crossing(canon, axis);
        CHECK(geom::orientation_distance(again.orientation, fit.orientation) < 1e-9);
        CHECK(std::abs(again.width - fit.width) < 1e-9);
        CHECK(std::abs(again.s - fit.s) < 1e-9);
        CHECK(geom::area(canon) == doctest::Approx(3.0 * 8.0 / std::cos(deg * kDeg)));
    }
}

TEST_CASE("crossings are refused off the road or along it") {
    Engine e;
    Store& s = e.store();
    straight_road(s);
    try {
        s.apply(user(), {Edit::insert(ob::kCrossingView, rectangle_sketch(P(50, 60), 0.3, 10, 3))});
        FAIL("expected NotOnRoad");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::NotOnRoad);
    }
    CHECK_THROWS_AS(
        s.apply(user(), {Edit::insert(ob::kCrossingView, rectangle_sketch(P(50, 0), 0.02, 10, 3))}),
        Error);
    CHECK(s.count(ob::kCrossings) == 0);
}

TEST_CASE("crossings follow a rotating axis and keep their relative angle") {
    Engine e;
    Store& s = e.store();
    const Road r = straight_road(s);
    const auto id = s.apply(user(), {Edit::insert(ob::kCrossingView,
                                                  rectangle_sketch(P(40, 0), geom::kPi / 2 + 0.2, 10, 3))})
                        .edit_ids.at(0);
    const double rel = s.get(ob::kCrossings, id)->real_or("orientation_rel", 0);
    CHECK(rel == doctest::Approx(geom::kPi / 2 + 0.2));
    move_node(s, r.b, 80, 60);
    const Feature c = *s.get(ob::kCrossings, id);
    CHECK(geom::orientation_distance(c.real_or("orientation", 0), std::atan2(60.0, 80.0) + rel) < 1e-9);
    CHECK(c.real_or("width", 0) == doctest::Approx(3.0));

    Feature edit = *s.get(ob::kCrossingView, id);
    edit.set("width", 4.5);
    s.apply(user(), {Edit::update(ob::kCrossingView, edit)});
    CHECK(s.get(ob::kCrossings, id)->real_or("width", 0) == 4.5);
    edit = *s.get(ob::kCrossingView, id);
    edit.set("width", -1.0);
    CHECK_THROWS_AS(s.apply(user(), {Edit::update(ob::kCrossingView, edit)}), Error);
    CHECK(problems(s).empty());
}

} // TEST_SUITE
