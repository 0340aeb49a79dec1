// Acceptance run: one PASS/FAIL line per primary criterion. Exit status is
// the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "streetbase/collab.hpp"
#include "streetbase/engine.hpp"
#include "streetbase/geojson.hpp"
#include "streetbase/geom.hpp"
#include "streetbase/objects.hpp"
#include "streetbase/streetgen.hpp"
#include "streetbase/topology.hpp"
#include "streetbase/traffic.hpp"

using namespace streetbase;
namespace fs = std::filesystem;
namespace g = streetbase::geom;
namespace topo = streetbase::topology;
namespace sg = streetbase::streetgen;
namespace tr = streetbase::traffic;
namespace ob = streetbase::objects;
namespace cb = streetbase::collab;

namespace {

// Pinned tolerances.
constexpr double kWidthTolerance = 0.1;
constexpr double kProbeNoise = 0.05;
constexpr double kLatencyBudgetMs = 300.0;
constexpr double kGenerateBudgetMs = 3000.0;
constexpr double kRegenTolerance = 1e-9;
constexpr double kFilletTolerance = 1e-9; // times r
constexpr double kBezierTolerance = 1e-12;
constexpr double kRoundTripTolerance = 1e-9;
constexpr double kCrossingAngleTolerance = 1e-6;
constexpr double kCrossingWidthTolerance = 1e-6;
constexpr double kIdempotenceTolerance = 1e-9;
constexpr double kTilingOverlap = 1e-9;

const Origin kUser = Origin::user("acceptance@127.0.0.1");

g::Point P(double x, double y) { return {x, y, {}}; }

Feature point(double x, double y) {
    Feature f;
    f.geometry = P(x, y);
    return f;
}

std::int64_t add_node(Store& s, double x, double y) {
    return s.apply(kUser, {Edit::insert(topo::kNodeView, point(x, y))}).edit_ids.at(0);
}

std::int64_t add_edge(Store& s, std::vector<g::Point> pts, std::optional<double> width = {}) {
    Feature f;
    f.geometry = g::Polyline{std::move(pts)};
    if (width) {
        f.set("width", *width);
    }
    return s.apply(kUser, {Edit::insert(topo::kEdgeView, f)}).edit_ids.at(0);
}

void move_node(Store& s, std::int64_t id, g::Point to) {
    Feature f = *s.get(topo::kNodeView, id);
    f.geometry = to;
    s.apply(kUser, {Edit::update(topo::kNodeView, f)});
}

template <class T>
T pick(std::mt19937_64& rng, const std::vector<T>& v) {
    return v[rng() % v.size()];
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

// --- width controller ------------------------------------------------------

Outcome width_probes() {
    std::mt19937_64 rng(1001);
    std::uniform_real_distribution<double> heading(0.0, 2.0 * g::kPi);
    std::uniform_real_distribution<double> along(15.0, 85.0);
    std::uniform_real_distribution<double> noise(-kProbeNoise, kProbeNoise);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Engine e;
        Store& s = e.store();
        const g::Point u = g::from_angle(heading(rng));
        const g::Point a = P(500.0, 500.0);
        const g::Point b = a + u * 100.0;
        add_node(s, a.x, a.y);
        add_node(s, b.x, b.y);
        const auto edge = add_edge(s, {a, b}, 6.0);
        std::vector<Edit> probes;
        for (int k = 0; k < 7; ++k) {
            const double side = rng() % 2 ? 1.0 : -1.0;
            const g::Point p = a + u * along(rng) + g::left_normal(u) * (side * (4.0 + noise(rng)));
            probes.push_back(Edit::insert(sg::kProbeView, point(p.x, p.y)));
        }
        s.apply(kUser, probes);
        worst = std::max(worst, std::abs(s.get(topo::kEdges, edge)->real_or("width", 0.0) - 8.0));
    }
    return {worst < kWidthTolerance, fmt("max |width - 8| = %.4f m over 100 trials", worst)};
}

// --- latency -----------------------------------------------------------------

Outcome latency() {
    Engine e;
    Store& s = e.store();
    build_demo(s);
    std::vector<Feature> curved;
    for (const auto& f : s.query(topo::kEdges)) {
        if (f.polyline()->vertices.size() > 2) {
            curved.push_back(f);
        }
    }
    if (curved.empty()) {
        return {false, "the demo has no edge with an interior vertex"};
    }
    std::mt19937_64 rng(1002);
    std::uniform_real_distribution<double> jitter(-2.0, 2.0);
    std::vector<double> ms;
    for (int i = 0; i < 40; ++i) {
        Feature f = *s.get(topo::kEdgeView, pick(rng, curved).id);
        auto& v = std::get<g::Polyline>(f.geometry).vertices;
        const std::size_t k = 1 + rng() % (v.size() - 2);
        v[k] = P(v[k].x + jitter(rng), v[k].y + jitter(rng));
        const auto t0 = std::chrono::steady_clock::now();
        try {
            s.apply(kUser, {Edit::update(topo::kEdgeView, f)});
        } catch (const Error&) {
            continue;
        }
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    const auto t0 = std::chrono::steady_clock::now();
    e.generate();
    const double gen = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (ms.size() < 20) {
        return {false, "too few vertex moves committed"};
    }
    std::sort(ms.begin(), ms.end());
    const double worst = ms.back();
    std::ostringstream d;
    d << fmt("vertex move median %.1f ms, ", ms[ms.size() / 2]) << fmt("max %.1f ms over ", worst)
      << ms.size() << " moves (budget 300 ms); " << fmt("full generate %.0f ms (budget 3000 ms)", gen);
    return {worst < kLatencyBudgetMs && gen < kGenerateBudgetMs, d.str()};
}

// --- override semantics ------------------------------------------------------

using Key = std::vector<Value>;

std::map<Key, Feature> oracle_merge(const Store& s, const std::string& auto_layer,
                                    const std::string& override_layer,
                                    const std::vector<std::string>& key_cols,
                                    const std::vector<std::string>& cols) {
    auto key_of = [&](const Feature& f) {
        Key k;
        for (const auto& c : key_cols) {
            k.push_back(*f.value(c));
        }
        return k;
    };
    std::map<Key, Feature> overrides;
    for (const auto& f : s.query(override_layer)) {
        overrides[key_of(f)] = f;
    }
    std::map<Key, Feature> out;
    for (Feature f : s.query(auto_layer)) {
        if (auto it = overrides.find(key_of(f)); it != overrides.end()) {
            for (const auto& c : cols) {
                if (c == "geometry") {
                    if (kind_of(it->second.geometry) != GeometryKind::None) {
                        f.geometry = it->second.geometry;
                    }
                } else if (const Value* v = it->second.value(c)) {
                    f.set(c, *v);
                }
            }
        }
        out[key_of(f)] = f;
    }
    return out;
}

// Number of merged rows that disagree with the oracle.
int merge_mismatches(const Store& s) {
    int bad = 0;
    const auto lanes = oracle_merge(s, tr::kLanes, tr::kLaneOverrides, {"edge_id", "lane_index"},
                                    {"direction", "geometry"});
    const auto merged_lanes = s.query(tr::kLanesMerged);
    bad += static_cast<int>(merged_lanes.size() != lanes.size());
    for (const auto& f : merged_lanes) {
        auto it = lanes.find({*f.value("edge_id"), *f.value("lane_index")});
        bad += it == lanes.end() || f.get_text("direction") != it->second.get_text("direction") ||
               !(f.geometry == it->second.geometry);
    }
    const auto ics = oracle_merge(s, tr::kInterconnections, tr::kInterconnectionOverrides,
                                  {"node_id", "from_edge", "from_lane", "to_edge", "to_lane"},
                                  {"allowed", "controls"});
    const auto merged_ics = s.query(tr::kInterconnectionsMerged);
    bad += static_cast<int>(merged_ics.size() != ics.size());
    for (const auto& f : merged_ics) {
        auto it = ics.find({*f.value("node_id"), *f.value("from_edge"), *f.value("from_lane"),
                            *f.value("to_edge"), *f.value("to_lane")});
        if (it == ics.end()) {
            ++bad;
            continue;
        }
        const Feature& want = it->second;
        bad += f.get_bool("allowed") != want.get_bool("allowed") ||
               f.get_text("controls") != want.get_text("controls");
        if (!*want.get_bool("allowed")) {
            bad += kind_of(f.geometry) != GeometryKind::None;
        } else {
            const auto curve = tr::discretize(tr::controls_from_text(*want.get_text("controls")));
            bad += !f.polyline() || !(f.polyline()->vertices == curve);
        }
    }
    return bad;
}

// Merged rows serialized in natural-key order. Surrogate ids are left out:
// regeneration after a lane reversal reissues them.
std::string dump_merged(const Store& s) {
    std::string out;
    for (const auto* layer : {&tr::kLanesMerged, &tr::kInterconnectionsMerged}) {
        const std::string& base = layer == &tr::kLanesMerged ? tr::kLanes : tr::kInterconnections;
        std::map<std::vector<Value>, std::string> rows;
        for (Feature f : s.query(*layer)) {
            const auto key = sg::feature_key(base, f);
            f.id = 0;
            rows[key] = geojson::feature_to_json(f).dump();
        }
        for (const auto& [_, row] : rows) {
            out += row;
            out += '\n';
        }
    }
    return out;
}

Outcome overrides() {
    Engine e;
    Store& s = e.store();
    build_demo(s);
    // Start from generated defaults only.
    for (const auto& ov : s.query(tr::kLaneOverrides)) {
        const auto lane = s.query(tr::kLanesMerged, std::nullopt, [&](const Feature& f) {
            return f.value("edge_id") && *f.value("edge_id") == *ov.value("edge_id") &&
                   *f.value("lane_index") == *ov.value("lane_index");
        });
        s.apply(kUser, {Edit::remove(tr::kLaneView, lane.at(0).id)});
    }
    for (const auto& ov : s.query(tr::kInterconnectionOverrides)) {
        const auto ic = s.query(tr::kInterconnectionsMerged, std::nullopt, [&](const Feature& f) {
            return sg::feature_key(tr::kInterconnections, f) == sg::feature_key(tr::kInterconnections, ov);
        });
        s.apply(kUser, {Edit::remove(tr::kInterconnectionView, ic.at(0).id)});
    }
    if (s.count(tr::kLaneOverrides) + s.count(tr::kInterconnectionOverrides) != 0) {
        return {false, "could not clear the demo overrides"};
    }
    const std::string defaults = dump_merged(s);

    std::mt19937_64 rng(1003);
    int mismatches = merge_mismatches(s);
    int applied = 0;
    for (int step = 0; step < 300; ++step) {
        try {
            switch (rng() % 5) {
            case 0: {
                Feature l = pick(rng, s.query(tr::kLaneView));
                l.set("direction", std::string(rng() % 2 ? "forward" : "backward"));
                s.apply(kUser, {Edit::update(tr::kLaneView, l)});
                break;
            }
            case 1: {
                Feature l = pick(rng, s.query(tr::kLaneView));
                auto& v = std::get<g::Polyline>(l.geometry).vertices;
                v.front() = P(v.front().x + 0.5, v.front().y - 0.5);
                s.apply(kUser, {Edit::update(tr::kLaneView, l)});
                break;
            }
            case 2:
                s.apply(kUser, {Edit::remove(tr::kLaneView, pick(rng, s.query(tr::kLaneView)).id)});
                break;
            case 3:
                s.apply(kUser, {Edit::remove(tr::kInterconnectionView,
                                             pick(rng, s.query(tr::kInterconnectionView)).id)});
                break;
            default: {
                Feature ic = pick(rng, s.query(tr::kInterconnectionView));
                auto c = tr::controls_from_text(*ic.get_text("controls"));
                c.insert(c.begin() + 1, P(c[0].x + 1.0, c[0].y + 2.0));
                if (c.size() > 4) {
                    c.erase(c.begin() + 2);
                }
                ic.set("controls", tr::controls_to_text(c));
                s.apply(kUser, {Edit::update(tr::kInterconnectionView, ic)});
            }
            }
            ++applied;
        } catch (const Error&) {
        }
        mismatches += merge_mismatches(s);
    }
    const std::size_t overrides_made = s.count(tr::kLaneOverrides) + s.count(tr::kInterconnectionOverrides);

    for (const auto& ov : s.query(tr::kLaneOverrides)) {
        const auto lane = s.query(tr::kLanesMerged, std::nullopt, [&](const Feature& f) {
            return *f.value("edge_id") == *ov.value("edge_id") && *f.value("lane_index") == *ov.value("lane_index");
        });
        s.apply(kUser, {Edit::remove(tr::kLaneView, lane.at(0).id)});
    }
    for (const auto& ov : s.query(tr::kInterconnectionOverrides)) {
        const auto ic = s.query(tr::kInterconnectionsMerged, std::nullopt, [&](const Feature& f) {
            return sg::feature_key(tr::kInterconnections, f) == sg::feature_key(tr::kInterconnections, ov);
        });
        s.apply(kUser, {Edit::remove(tr::kInterconnectionView, ic.at(0).id)});
    }
    mismatches += merge_mismatches(s);
    const bool restored = dump_merged(s) == defaults;
    std::ostringstream d;
    d << applied << " override edits, " << overrides_made << " live overrides before clearing, "
      << mismatches << " oracle mismatches, defaults " << (restored ? "byte-identical" : "differ")
      << " after deleting all overrides";
    return {mismatches == 0 && restored && overrides_made > 0 && applied > 100, d.str()};
}

// --- cycle guard --------------------------------------------------------------

Outcome cycle_guard() {
    Engine e;
    Store& s = e.store();
    build_demo(s);
    s.create_layer({"ping", GeometryKind::Point, false, {}, true});
    s.create_layer({"pong", GeometryKind::Point, false, {}, true});
    s.handlers().add("to_pong", [](Transaction& tx, ChangeRecord&) { tx.insert("pong", point(0, 0)); });
    s.handlers().add("to_ping", [](Transaction& tx, ChangeRecord&) { tx.insert("ping", point(0, 0)); });
    s.register_trigger({"ping_to_pong", "ping", Timing::After, OnInsert, "to_pong", 0});
    s.register_trigger({"pong_to_ping", "pong", Timing::After, OnInsert, "to_ping", 0});
    const auto before = s.snapshot();
    const auto seq = s.last_sequence();
    const auto next = s.next_feature_id();
    std::string message;
    bool raised = false;
    try {
        s.apply(kUser, {Edit::insert("ping", point(0, 0))});
    } catch (const Error& err) {
        raised = err.code() == ErrorCode::CyclicTriggerError;
        message = err.what();
    }
    const bool unchanged = s.snapshot() == before && s.last_sequence() == seq && s.next_feature_id() == next;
    const bool at_16 = message.find("16") != std::string::npos && s.config().trigger_depth_limit == 16;
    std::string d = raised ? "CyclicTriggerError: " + message : "no CyclicTriggerError raised";
    d += unchanged ? "; store unchanged" : "; store CHANGED";
    return {raised && unchanged && at_16, d};
}

// --- partial regeneration ----------------------------------------------------

// Stored generated features that differ from a full recomputation.
int regen_mismatches(const Store& s) {
    int bad = 0;
    s.read([&](const ReadAccess& a) {
        const sg::LayerSet full = sg::compute_all(a);
        for (const auto& layer : sg::generated_layers()) {
            std::map<std::vector<Value>, Feature> have;
            a.scan(layer, [&](const Feature& f) { bad += !have.emplace(sg::feature_key(layer, f), f).second; });
            const auto& want = full.at(layer);
            bad += static_cast<int>(want.size() != have.size());
            for (Feature w : want) {
                auto it = have.find(sg::feature_key(layer, w));
                if (it == have.end()) {
                    ++bad;
                    continue;
                }
                w.id = it->second.id;
                bad += !nearly_equal(w, it->second, kRegenTolerance);
            }
        }
    });
    return bad;
}

bool random_street_edit(Store& s, std::mt19937_64& rng) {
    std::normal_distribution<double> jitter(0.0, 5.0);
    const int op = static_cast<int>(rng() % 9);
    if (op <= 1) {
        const Feature n = pick(rng, s.query(topo::kNodes));
        move_node(s, n.id, P(n.point()->x + jitter(rng), n.point()->y + jitter(rng)));
    } else if (op == 2) {
        Feature f = *s.get(topo::kEdgeView, pick(rng, s.query(topo::kEdges)).id);
        auto& v = std::get<g::Polyline>(f.geometry).vertices;
        if (v.size() < 3) {
            return false;
        }
        const std::size_t k = 1 + rng() % (v.size() - 2);
        v[k] = P(v[k].x + jitter(rng), v[k].y + jitter(rng));
        s.apply(kUser, {Edit::update(topo::kEdgeView, f)});
    } else if (op == 3) {
        Feature f = *s.get(topo::kEdgeView, pick(rng, s.query(topo::kEdges)).id);
        f.set("width", 5.0 + static_cast<double>(rng() % 80) / 10.0);
        s.apply(kUser, {Edit::update(topo::kEdgeView, f)});
    } else if (op == 4) {
        Feature f = *s.get(topo::kEdgeView, pick(rng, s.query(topo::kEdges)).id);
        f.set("lane_count", static_cast<std::int64_t>(1 + rng() % 4));
        s.apply(kUser, {Edit::update(topo::kEdgeView, f)});
    } else if (op == 5) {
        Feature r = pick(rng, s.query(sg::kRadiusView));
        r.set("r", 2.0 + static_cast<double>(rng() % 60) / 10.0);
        s.apply(kUser, {Edit::update(sg::kRadiusView, r)});
    } else if (op == 6) {
        Feature l = pick(rng, s.query(sg::kLimitView));
        if (rng() % 3 == 0) {
            s.apply(kUser, {Edit::remove(sg::kLimitView, l.id)});
        } else {
            l.set("s", l.real_or("s", 10.0) + jitter(rng) / 2.0);
            s.apply(kUser, {Edit::update(sg::kLimitView, l)});
        }
    } else if (op == 7) {
        const Feature e = pick(rng, s.query(topo::kEdges));
        const auto& line = *e.polyline();
        const g::Point p = g::point_at(line, g::length(line) * 0.5, 0.1).point;
        add_node(s, p.x, p.y);
    } else {
        s.apply(kUser, {Edit::remove(topo::kEdgeView, pick(rng, s.query(topo::kEdges)).id)});
    }
    return true;
}

Outcome partial_regeneration() {
    Engine e;
    Store& s = e.store();
    build_demo(s);
    std::mt19937_64 rng(1004);
    int applied = 0;
    int attempts = 0;
    int bad_steps = 0;
    while (applied < 50 && attempts < 1000) {
        ++attempts;
        try {
            if (!random_street_edit(s, rng)) {
                continue;
            }
        } catch (const Error&) {
            continue;
        }
        ++applied;
        bad_steps += regen_mismatches(s) != 0;
    }
    std::size_t written = 1;
    e.generate(&written);
    std::ostringstream d;
    d << applied << " single edits; " << bad_steps
      << " edits left stored output differing from full regeneration (tol 1e-9); final generate wrote "
      << written;
    return {applied == 50 && bad_steps == 0 && written == 0, d.str()};
}

// --- geometry ---------------------------------------------------------------

double binomial(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) {
        r = r * (n - k + i) / i;
    }
    return r;
}

Outcome geometry() {
    std::mt19937_64 rng(1005);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * g::kPi);
    std::uniform_real_distribution<double> opening(10.0 * g::kPi / 180.0, 170.0 * g::kPi / 180.0);
    std::uniform_real_distribution<double> radius(0.5, 15.0);
    std::uniform_real_distribution<double> coord(-1000.0, 1000.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    double fillet = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const g::Point c = P(coord(rng), coord(rng));
        const double a = angle(rng);
        const g::Point ua = g::from_angle(a);
        const g::Point ub = g::from_angle(a + opening(rng));
        const double r = radius(rng);
        const g::Fillet f = g::fillet_corner({{c - ua * 2.0, c + ua * 500.0}}, {{c - ub * 2.0, c + ub * 500.0}}, r);
        const double residuals[] = {
            std::abs(std::abs(g::cross(ua, f.center - c)) - r), std::abs(std::abs(g::cross(ub, f.center - c)) - r),
            std::abs(g::dot(f.tangent_a - f.center, ua)),       std::abs(g::dot(f.tangent_b - f.center, ub)),
            std::abs(g::cross(ua, f.tangent_a - c)),            std::abs(g::cross(ub, f.tangent_b - c))};
        for (double x : residuals) {
            fillet = std::max(fillet, x / r);
        }
    }

    double bezier = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + trial % 3;
        std::vector<g::Point> c;
        for (int k = 0; k <= n; ++k) {
            c.push_back(P(coord(rng) / 10.0, coord(rng) / 10.0));
        }
        const double t = unit(rng);
        g::Point want = P(0, 0);
        for (int k = 0; k <= n; ++k) {
            const double b = binomial(n, k) * std::pow(t, k) * std::pow(1.0 - t, n - k);
            want = want + c[k] * b;
        }
        bezier = std::max(bezier, g::distance(g::bezier_eval(c, t), want));
    }

    double round_trip = 0.0;
    int checked = 0;
    std::uniform_real_distribution<double> seg(5.0, 40.0);
    std::uniform_real_distribution<double> turn(-0.8, 0.8);
    std::uniform_real_distribution<double> off(-1.0, 1.0);
    while (checked < 1000) {
        g::Polyline line;
        g::Point p = P(coord(rng) / 10.0, coord(rng) / 10.0);
        double heading = angle(rng);
        line.vertices.push_back(p);
        for (int i = 0; i < 4; ++i) {
            p = p + g::from_angle(heading) * seg(rng);
            line.vertices.push_back(p);
            heading += turn(rng);
        }
        const auto cum = g::cumulative_lengths(line);
        const double s = unit(rng) * cum.back();
        const double d = off(rng);
        const bool near_vertex = std::any_of(cum.begin(), cum.end(), [&](double v) {
            return std::abs(v - s) < 4.0 * std::abs(d) + 1e-6;
        });
        if (near_vertex) {
            continue;
        }
        const g::Projection pr = g::project_to_polyline(g::point_at(line, s, d).point, line);
        round_trip = std::max({round_trip, std::abs(pr.s - s), std::abs(pr.d - d)});
        ++checked;
    }
    std::ostringstream d;
    d << fmt("fillet residual/r %.2e (1000 corners), ", fillet) << fmt("de Casteljau vs Bernstein %.2e, ", bezier)
      << fmt("projection round trip %.2e", round_trip);
    return {fillet < kFilletTolerance && bezier < kBezierTolerance && round_trip < kRoundTripTolerance, d.str()};
}

// --- relative/absolute coherence --------------------------------------------

int dangling(const Store& s) {
    std::set<std::int64_t> edges;
    for (const auto& e : s.query(topo::kEdges)) {
        edges.insert(e.id);
    }
    int bad = 0;
    for (const auto& o : s.query(ob::kObjects)) {
        if (auto id = o.get_int("edge_id")) {
            bad += !edges.count(*id);
        } else {
            bad += o.get_text("position_mode") != "absolute";
        }
    }
    for (const auto& c : s.query(ob::kCrossings)) {
        bad += !c.get_int("edge_id") || !edges.count(*c.get_int("edge_id"));
    }
    return bad;
}

Outcome coherence() {
    Engine e;
    Store& s = e.store();
    build_demo(s);
    std::mt19937_64 rng(1006);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> jitter(0.0, 4.0);
    const char* modes[] = {"absolute", "axis", "sidewalk"};
    int applied = 0;
    int incoherent_steps = 0;
    int dangling_refs = 0;
    int axis_deletions = 0;
    for (int step = 0; step < 500; ++step) {
        try {
            const int op = static_cast<int>(rng() % 10);
            if (op <= 2) {
                const Feature edge = pick(rng, s.query(topo::kEdges));
                const auto& line = *edge.polyline();
                const double side = rng() % 2 ? 1.0 : -1.0;
                const g::Point p = g::point_at(line, unit(rng) * g::length(line),
                                               side * (1.0 + unit(rng) * 8.0)).point;
                Feature f = point(p.x, p.y);
                f.set("class", std::string("bench"));
                f.set("position_mode", std::string(modes[rng() % 3]));
                if (f.get_text("position_mode") != "absolute" && rng() % 2) {
                    f.set("orientation_mode", std::string("relative"));
                }
                f.set("theta_abs", unit(rng) * g::kPi);
                s.apply(kUser, {Edit::insert(ob::kObjectView, f)});
            } else if (op == 3) {
                const Feature edge = pick(rng, s.query(topo::kEdges));
                const auto& line = *edge.polyline();
                const auto st = g::point_at(line, (0.3 + 0.4 * unit(rng)) * g::length(line));
                const g::Point u = g::from_angle(st.tangent + g::kPi / 2.0 + (unit(rng) - 0.5));
                const g::Point n = g::left_normal(u);
                auto at = [&](double a, double b) { return st.point + u * a + n * b; };
                Feature f;
                g::Polygon poly;
                poly.exterior = g::close_ring({at(-7, -1.5), at(7, -1.5), at(7, 1.5), at(-7, 1.5)});
                f.geometry = poly;
                s.apply(kUser, {Edit::insert(ob::kCrossingView, f)});
            } else if (op <= 5) {
                const Feature n = pick(rng, s.query(topo::kNodes));
                move_node(s, n.id, P(n.point()->x + jitter(rng), n.point()->y + jitter(rng)));
            } else if (op == 6) {
                s.apply(kUser, {Edit::remove(topo::kEdgeView, pick(rng, s.query(topo::kEdges)).id)});
                ++axis_deletions;
            } else if (op == 7) {
                const Feature edge = pick(rng, s.query(topo::kEdges));
                const auto& line = *edge.polyline();
                const g::Point p = g::point_at(line, (0.2 + 0.6 * unit(rng)) * g::length(line), 0.1).point;
                add_node(s, p.x, p.y);
            } else if (op == 8) {
                auto objs = s.query(ob::kObjectView);
                if (objs.empty()) {
                    continue;
                }
                Feature o = pick(rng, objs);
                if (rng() % 2) {
                    s.apply(kUser, {Edit::remove(ob::kObjectView, o.id)});
                } else {
                    o.geometry = P(o.point()->x + jitter(rng), o.point()->y + jitter(rng));
                    s.apply(kUser, {Edit::update(ob::kObjectView, o)});
                }
            } else {
                auto nodes = s.query(topo::kNodes);
                const Feature a = pick(rng, nodes);
                const Feature b = pick(rng, nodes);
                if (a.id == b.id || g::distance(*a.point(), *b.point()) > 160.0) {
                    continue;
                }
                add_edge(s, {*a.point(), *b.point()});
            }
            ++applied;
        } catch (const Error&) {
            continue;
        }
        std::vector<std::string> problems;
        s.read([&](const ReadAccess& a) { problems = ob::check(a); });
        incoherent_steps += !problems.empty();
        dangling_refs += dangling(s);
    }
    const auto final_problems = e.check();
    std::ostringstream d;
    d << applied << " committed edits (" << axis_deletions << " axis deletions, "
      << s.count(ob::kObjects) << " objects, " << s.count(ob::kCrossings) << " crossings at the end); "
      << incoherent_steps << " incoherent commits, " << dangling_refs << " dangling references, "
      << final_problems.size() << " problems in the final full check";
    return {incoherent_steps == 0 && dangling_refs == 0 && final_problems.empty() && applied > 300 &&
                axis_deletions > 0 && s.count(ob::kObjects) > 0,
            d.str()};
}

// --- pedestrian crossing fit --------------------------------------------------

Outcome crossing_fit() {
    const g::Polyline axis{{P(0, 0), P(100, 0)}};
    double angle_err = 0.0;
    double width_err = 0.0;
    double idem = 0.0;
    for (int deg = 0; deg <= 75; deg += 5) {
        const double skew = deg * g::kPi / 180.0;
        const double theta = g::kPi / 2.0 + skew;
        const g::Point u = g::from_angle(theta);
        const g::Point n = g::left_normal(u);
        const double len = 12.0 / std::cos(skew);
        auto at = [&](double a, double b) { return P(40, 0) + u * a + n * b; };
        g::Polygon rough;
        rough.exterior = g::close_ring({at(-len / 2, -1.5), at(len / 2, -1.5), at(len / 2, 1.5), at(-len / 2, 1.5)});
        const ob::CrossingFit fit = ob::fit_crossing(rough, axis);
        angle_err = std::max(angle_err, g::orientation_distance(fit.orientation, theta));
        width_err = std::max(width_err, std::abs(fit.width - 3.0));
        const ob::CrossingFit again = ob::fit_crossing(ob::canonical_crossing(axis, 8.0, fit), axis);
        idem = std::max({idem, g::orientation_distance(again.orientation, fit.orientation),
                         std::abs(again.width - fit.width), std::abs(again.s - fit.s)});
    }
    std::ostringstream d;
    d << fmt("0-75 deg: orientation error %.2e rad, ", angle_err) << fmt("width error %.2e m, ", width_err)
      << fmt("refit drift %.2e", idem);
    return {angle_err < kCrossingAngleTolerance && width_err < kCrossingWidthTolerance &&
                idem < kIdempotenceTolerance,
            d.str()};
}

// --- collaboration ------------------------------------------------------------

void record(Store& s, const std::string& user, std::int64_t t, g::BBox box) {
    Feature f;
    f.geometry = g::rectangle(box);
    f.set("user_id", user);
    f.set("t", t);
    f.set("scale", 1000.0);
    s.apply(Origin::user(user), {Edit::insert(cb::kExtents, f)});
}

Outcome collaboration() {
    Engine e;
    Store& s = e.store();
    Feature area;
    area.geometry = g::rectangle({0, 0, 400, 300});
    area.set("size", 25.0);
    s.apply(kUser, {Edit::insert(cb::kWorkAreas, area)});

    // Scripted timeline (ms). Expected conflicts by hand:
    //   ana@0 / bob@60000 overlap within 5 min          -> concurrent
    //   ana@0 / ana@400000 overlap after 5 min          -> revisit
    //   bob@60000 / ana@400000 overlap, 340000 apart     -> nothing (different users, beyond window)
    //   cy@100000 is far from everyone                   -> nothing
    //   bob@700000 / ana@400000 overlap, 300000 apart    -> nothing (window is exclusive)
    //   bob@700000 / bob@60000 overlap after 5 min       -> revisit
    struct Step {
        std::string user;
        std::int64_t t;
        g::BBox box;
    };
    const std::vector<Step> script{{"ana", 0, {0, 0, 150, 100}},
                                   {"bob", 60000, {100, 50, 250, 150}},
                                   {"cy", 100000, {300, 200, 400, 300}},
                                   {"ana", 400000, {20, 20, 200, 120}},
                                   {"bob", 700000, {150, 60, 220, 110}}};
    std::size_t done_before = 0;
    bool monotone = true;
    std::map<std::pair<std::string, std::int64_t>, std::int64_t> id_of;
    for (const auto& st : script) {
        record(s, st.user, st.t, st.box);
        const auto ids = s.query(cb::kExtents);
        for (const auto& f : ids) {
            id_of[{*f.get_text("user_id"), *f.get_int("t")}] = f.id;
        }
        std::size_t done = 0;
        for (const auto& c : s.query(cb::kHexGrid)) {
            done += c.get_text("status") == "done";
        }
        monotone = monotone && done >= done_before;
        done_before = done;
    }
    std::set<std::tuple<std::string, std::int64_t, std::int64_t>> want{
        {"concurrent", id_of.at({"ana", 0}), id_of.at({"bob", 60000})},
        {"revisit", id_of.at({"ana", 0}), id_of.at({"ana", 400000})},
        {"revisit", id_of.at({"bob", 60000}), id_of.at({"bob", 700000})}};
    std::set<std::tuple<std::string, std::int64_t, std::int64_t>> got;
    for (const auto& c : s.query(cb::kConflicts)) {
        got.insert({*c.get_text("kind"), *c.get_int("extent_a"), *c.get_int("extent_b")});
    }

    // Tiling of the work area.
    const g::Polygon work = *s.query(cb::kWorkAreas).at(0).polygon();
    std::vector<g::Polygon> cells;
    double covered = 0.0;
    for (const auto& c : s.query(cb::kHexGrid)) {
        cells.push_back(*c.polygon());
        covered += g::polygon_intersection_area(cells.back(), work);
    }
    double overlap = 0.0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        for (std::size_t j = i + 1; j < cells.size(); ++j) {
            overlap = std::max(overlap, g::polygon_intersection_area(cells[i], cells[j]));
        }
    }
    const double gap = std::abs(covered - g::area(work)) / g::area(work);

    std::ostringstream d;
    d << got.size() << " conflicts (" << (got == want ? "exactly the expected set" : "NOT the expected set")
      << "), " << cells.size() << fmt(" cells with max pairwise overlap %.1e, ", overlap)
      << fmt("cover gap %.1e relative, ", gap) << "done count " << (monotone ? "monotone" : "NOT monotone")
      << " ending at " << done_before;
    return {got == want && overlap < kTilingOverlap && gap < 1e-9 && monotone && done_before > 0, d.str()};
}

// --- persistence --------------------------------------------------------------

std::map<std::string, std::string> read_tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            std::ifstream in(entry.path(), std::ios::binary);
            std::ostringstream ss;
            ss << in.rdbuf();
            out[fs::relative(entry.path(), dir).string()] = ss.str();
        }
    }
    return out;
}

Outcome persistence(const std::string& cli) {
    const fs::path root = fs::temp_directory_path() / ("streetbase_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    Engine e;
    build_demo(e.store());
    e.save(root / "first");
    auto back = Engine::open(root / "first");
    back->save(root / "second");
    const auto a = read_tree(root / "first");
    const auto b = read_tree(root / "second");
    const bool identical = !a.empty() && a == b;
    const auto problems = back->check();
    int exit_code = -1;
    if (!cli.empty()) {
        const std::string cmd = "\"" + cli + "\" check --project \"" + (root / "second").string() + "\" > /dev/null";
        const int status = std::system(cmd.c_str());
        exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }
    fs::remove_all(root);
    std::ostringstream d;
    d << a.size() << " files " << (identical ? "byte-identical" : "DIFFER") << " after save, load, save; "
      << problems.size() << " problems from check";
    if (!cli.empty()) {
        d << "; `streetbase check` exit " << exit_code;
    }
    return {identical && problems.empty() && (cli.empty() || exit_code == 0), d.str()};
}

} // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : "";
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"width-controller-accuracy", width_probes},
        {"latency", latency},
        {"override-semantics", overrides},
        {"cycle-guard", cycle_guard},
        {"partial-regeneration-equivalence", partial_regeneration},
        {"geometry-suite", geometry},
        {"relative-absolute-coherence", coherence},
        {"pedestrian-crossing-fit", crossing_fit},
        {"collaboration", collaboration},
        {"persistence", [&] { return persistence(cli); }},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("unexpected exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    return failed;
}
