#include "streetbase/engine.hpp"

#include <cmath>
#include <map>
#include <set>

#include "streetbase/aux.hpp"
#include "streetbase/collab.hpp"
#include "streetbase/objects.hpp"
#include "streetbase/streetgen.hpp"
#include "streetbase/topology.hpp"
#include "streetbase/traffic.hpp"

namespace streetbase {

namespace {

bool points_close(const geom::Point& a, const geom::Point& b, double tol) {
    if (std::abs(a.x - b.x) > tol || std::abs(a.y - b.y) > tol || a.z.has_value() != b.z.has_value()) {
        return false;
    }
    return !a.z || std::abs(*a.z - *b.z) <= tol;
}

bool runs_close(const std::vector<geom::Point>& a, const std::vector<geom::Point>& b, double tol) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!points_close(a[i], b[i], tol)) {
            return false;
        }
    }
    return true;
}

bool geometry_close(const Geometry& a, const Geometry& b, double tol) {
    if (a.index() != b.index()) {
        return false;
    }
    if (const auto* p = std::get_if<geom::Point>(&a)) {
        return points_close(*p, std::get<geom::Point>(b), tol);
    }
    if (const auto* l = std::get_if<geom::Polyline>(&a)) {
        return runs_close(l->vertices, std::get<geom::Polyline>(b).vertices, tol);
    }
    if (const auto* g = std::get_if<geom::Polygon>(&a)) {
        const auto& h = std::get<geom::Polygon>(b);
        if (!runs_close(g->exterior, h.exterior, tol) || g->holes.size() != h.holes.size()) {
            return false;
        }
        for (std::size_t i = 0; i < g->holes.size(); ++i) {
            if (!runs_close(g->holes[i], h.holes[i], tol)) {
                return false;
            }
        }
    }
    return true;
}

std::string describe_key(const std::vector<Value>& key) {
    std::string out = "(";
    for (std::size_t i = 0; i < key.size(); ++i) {
        if (i) {
            out += ", ";
        }
        if (const auto* n = std::get_if<std::int64_t>(&key[i])) {
            out += std::to_string(*n);
        } else {
            out += "?";
        }
    }
    return out + ")";
}

std::vector<std::string> check_generated(const ReadAccess& a) {
    std::vector<std::string> out;
    const streetgen::LayerSet want = streetgen::compute_all(a);
    for (const auto& layer : streetgen::generated_layers()) {
        std::map<std::vector<Value>, Feature> have;
        a.scan(layer, [&](const Feature& f) {
            if (!have.emplace(streetgen::feature_key(layer, f), f).second) {
                out.push_back(layer + " " + std::to_string(f.id) + " duplicates key " +
                              describe_key(streetgen::feature_key(layer, f)));
            }
        });
        for (const Feature& w : want.at(layer)) {
            const auto key = streetgen::feature_key(layer, w);
            auto it = have.find(key);
            if (it == have.end()) {
                out.push_back(layer + " " + describe_key(key) + " is missing");
                continue;
            }
            Feature expected = w;
            expected.id = it->second.id;
            if (!nearly_equal(expected, it->second, 1e-9)) {
                out.push_back(layer + " " + std::to_string(it->second.id) + " is stale");
            }
            have.erase(it);
        }
        for (const auto& [key, f] : have) {
            out.push_back(layer + " " + std::to_string(f.id) + " is orphaned");
        }
    }
    const std::pair<const std::string*, const std::string*> overrides[] = {
        {&traffic::kLaneOverrides, &traffic::kLanes},
        {&traffic::kInterconnectionOverrides, &traffic::kInterconnections}};
    for (const auto& [ov, base] : overrides) {
        std::set<std::vector<Value>> keys;
        a.scan(*base, [&](const Feature& f) { keys.insert(streetgen::feature_key(*base, f)); });
        a.scan(*ov, [&](const Feature& f) {
            if (!keys.count(streetgen::feature_key(*ov, f))) {
                out.push_back(*ov + " " + std::to_string(f.id) + " overrides nothing");
            }
        });
    }
    return out;
}

Feature node_at(double x, double y) {
    Feature f;
    f.geometry = geom::Point{x, y, {}};
    return f;
}

geom::Point pt(double x, double y) { return {x, y, {}}; }

} // namespace

void install_modules(Store& store) {
    topology::install(store);
    streetgen::install(store);
    traffic::install(store);
    objects::install(store);
    aux::install(store);
    collab::install(store);
}

bool nearly_equal(const Feature& a, const Feature& b, double tol) {
    if (a.id != b.id || a.attributes.size() != b.attributes.size() ||
        !geometry_close(a.geometry, b.geometry, tol)) {
        return false;
    }
    for (auto ia = a.attributes.begin(), ib = b.attributes.begin(); ia != a.attributes.end();
         ++ia, ++ib) {
        if (ia->first != ib->first) {
            return false;
        }
        const auto* ra = std::get_if<double>(&ia->second);
        const auto* rb = std::get_if<double>(&ib->second);
        if (ra && rb) {
            if (std::abs(*ra - *rb) > tol) {
                return false;
            }
        } else if (ia->second != ib->second) {
            return false;
        }
    }
    return true;
}

Engine::Engine(Config config) : store_(std::make_unique<Store>(config)) { install_modules(*store_); }

std::unique_ptr<Engine> Engine::open(const std::filesystem::path& dir) {
    auto engine = std::make_unique<Engine>();
    engine->store_->load(dir);
    return engine;
}

ChangeSet Engine::generate(std::size_t* written) {
    std::size_t n = 0;
    ChangeSet cs = store_->run(Origin::system("generate"), [&](Transaction& tx) {
        n = streetgen::regenerate(tx, {}, true);
    });
    if (written) {
        *written = n;
    }
    return cs;
}

std::vector<std::string> Engine::check() const {
    std::vector<std::string> out;
    store_->read([&](const ReadAccess& a) {
        for (auto* fn : {&topology::check, &objects::check, &aux::check, &collab::check,
                         &check_generated}) {
            auto part = fn(a);
            out.insert(out.end(), part.begin(), part.end());
        }
    });
    return out;
}

nlohmann::json Engine::stats() const {
    nlohmann::json layers = nlohmann::json::object();
    for (const LayerInfo& info : store_->layers()) {
        nlohmann::json j{{"kind", to_string(info.kind)}};
        if (info.kind == LayerKind::Physical) {
            j["features"] = store_->count(info.name);
        }
        if (!info.base.empty()) {
            j["base"] = info.base;
        }
        layers[info.name] = j;
    }
    return {{"layers", layers},
            {"last_sequence", store_->last_sequence()},
            {"next_feature_id", store_->next_feature_id()}};
}

void build_demo(Store& store) {
    constexpr int kCols = 6;
    constexpr int kRows = 5;
    constexpr double kStep = 100.0;
    const Origin demo = Origin::user("demo");

    std::vector<Edit> nodes;
    for (int j = 0; j < kRows; ++j) {
        for (int i = 0; i < kCols; ++i) {
            nodes.push_back(Edit::insert(topology::kNodeView, node_at(i * kStep, j * kStep)));
        }
    }
    store.apply(demo, std::move(nodes));

    auto edge = [](std::vector<geom::Point> pts, double width, std::int64_t lanes) {
        Feature f;
        f.geometry = geom::Polyline{std::move(pts)};
        f.set("width", width);
        f.set("lane_count", lanes);
        return Edit::insert(topology::kEdgeView, std::move(f));
    };
    std::vector<Edit> edges;
    for (int j = 0; j < kRows; ++j) {
        const bool avenue = j == 2;
        for (int i = 0; i + 1 < kCols; ++i) {
            const double x0 = i * kStep;
            const double y = j * kStep;
            std::vector<geom::Point> pts{pt(x0, y), pt(x0 + kStep, y)};
            if (j == 1 && i == 1) {
                pts.insert(pts.begin() + 1, pt(x0 + 50.0, y + 10.0));
            } else if (j == 3 && i == 4) {
                pts.insert(pts.begin() + 1, {pt(x0 + 30.0, y - 6.0), pt(x0 + 70.0, y - 6.0)});
            }
            edges.push_back(edge(std::move(pts), avenue ? 14.0 : 8.0, avenue ? 4 : 2));
        }
    }
    for (int i = 0; i < kCols; ++i) {
        const bool lane = i == 0 || i == kCols - 1;
        for (int j = 0; j + 1 < kRows; ++j) {
            const double x = i * kStep;
            const double y0 = j * kStep;
            std::vector<geom::Point> pts{pt(x, y0), pt(x, y0 + kStep)};
            if (i == 3 && j == 2) {
                pts.insert(pts.begin() + 1, pt(x - 8.0, y0 + 50.0));
            }
            edges.push_back(edge(std::move(pts), lane ? 6.0 : 7.0, lane ? 1 : 2));
        }
    }
    store.apply(demo, std::move(edges));

    auto object = [](double x, double y, const std::string& cls, const std::string& mode,
                     double theta) {
        Feature f;
        f.geometry = geom::Point{x, y, {}};
        f.set("class", cls);
        f.set("position_mode", mode);
        f.set("theta_abs", theta);
        return Edit::insert(objects::kObjectView, std::move(f));
    };
    Feature crossing;
    geom::Polygon rough;
    rough.exterior = geom::close_ring({pt(140, -6), pt(146, -6), pt(146, 6), pt(140, 6)});
    crossing.geometry = rough;
    store.apply(demo, {object(250.0, 7.0, "bench", "sidewalk", 0.0),
                       object(330.0, 203.0, "lamp", "axis", 0.0),
                       object(60.0, 60.0, "tree", "absolute", 0.3),
                       Edit::insert(objects::kCrossingView, std::move(crossing))});

    nlohmann::json points = {{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
    for (int k = 0; k < 400; ++k) {
        const double x = 20.0 + (k % 20) * 3.0;
        const double y = 120.0 + (k / 20) * 3.0;
        points["features"].push_back({{"type", "Feature"},
                                      {"geometry", {{"type", "Point"}, {"coordinates", {x, y}}}},
                                      {"properties", {{"pass", 1 + k % 2}}}});
    }
    aux::load_points(store, points);

    Feature lens;
    geom::Polygon lens_poly;
    lens_poly.exterior = geom::close_ring({pt(25, 125), pt(65, 125), pt(65, 165), pt(25, 165)});
    lens.geometry = lens_poly;
    lens.set("lod", std::int64_t{1});
    Feature alti;
    alti.geometry = geom::Polyline{{{10, -40, 100.0}, {60, -45, 102.0}, {110, -40, 101.5}}};
    Feature area;
    geom::Polygon area_poly;
    area_poly.exterior = geom::close_ring({pt(0, 0), pt(250, 0), pt(250, 150), pt(0, 150)});
    area.geometry = area_poly;
    store.apply(demo, {Edit::insert(aux::kLenses, std::move(lens)),
                       Edit::insert(aux::kAltiLines, std::move(alti)),
                       Edit::insert(collab::kWorkAreas, std::move(area))});

    auto extent = [](const std::string& user, geom::BBox box, std::int64_t t) {
        Feature f;
        f.geometry = geom::rectangle(box);
        f.set("user_id", user);
        f.set("t", t);
        f.set("scale", 1000.0);
        return Edit::insert(collab::kExtents, std::move(f));
    };
    store.apply(Origin::user("alice@127.0.0.1"),
                {extent("alice@127.0.0.1", {0, 0, 120, 80}, 0)});
    store.apply(Origin::user("bob@127.0.0.1"),
                {extent("bob@127.0.0.1", {60, 20, 200, 110}, 60000)});
}

} // namespace streetbase
