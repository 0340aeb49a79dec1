#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "streetbase/aux.hpp"
#include "streetbase/collab.hpp"
#include "streetbase/engine.hpp"
#include "streetbase/geojson.hpp"
#include "streetbase/service.hpp"

namespace py = pybind11;
using namespace streetbase;
using nlohmann::json;

namespace {

json changeset_json(const ChangeSet& cs) {
    json records = json::array();
    for (const auto& r : cs.records) {
        records.push_back(geojson::record_to_json(r));
    }
    return {{"ids", cs.edit_ids}, {"records", records}, {"warnings", cs.warnings}};
}

Origin origin_for(const std::string& session) {
    return session.empty() ? Origin::system() : Origin::user(session);
}

std::string apply(Engine& e, ChangeKind kind, const std::string& layer, const std::string& text,
                  const std::string& session) {
    const json j = json::parse(text);
    Feature f = geojson::feature_from_json(j, e.store().layer_info(layer).schema);
    Edit edit{kind, layer, std::move(f), std::nullopt};
    ChangeSet cs;
    {
        py::gil_scoped_release release;
        cs = e.store().apply(origin_for(session), {std::move(edit)});
    }
    return changeset_json(cs).dump();
}

} // namespace

PYBIND11_MODULE(_streetbase, m) {
    m.doc() = "Native core of the streetbase layer engine";

    static py::exception<Error> error(m, "EngineError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) {
                std::rethrow_exception(p);
            }
        } catch (const Error& e) {
            py::set_error(error, json{{"code", to_string(e.code())}, {"message", e.what()}}.dump().c_str());
        } catch (const json::exception& e) {
            py::set_error(error, json{{"code", "ParseError"}, {"message", e.what()}}.dump().c_str());
        }
    });

    py::class_<Engine>(m, "Engine")
        .def(py::init([](const std::string& config) {
                 return std::make_unique<Engine>(config.empty() ? Config{}
                                                                : config_from_json(json::parse(config)));
             }),
             py::arg("config") = "")
        .def_static("open", &Engine::open, py::arg("path"))
        .def("build_demo", [](Engine& e) { build_demo(e.store()); })
        .def("save", &Engine::save, py::arg("path"))
        .def("generate",
             [](Engine& e) {
                 std::size_t written = 0;
                 e.generate(&written);
                 return written;
             })
        .def("check", &Engine::check)
        .def("stats", [](const Engine& e) { return e.stats().dump(); })
        .def("config", [](const Engine& e) { return to_json(e.store().config()).dump(); })
        .def("layers",
             [](const Engine& e) {
                 json out = json::array();
                 for (const LayerInfo& info : e.store().layers()) {
                     out.push_back({{"name", info.name},
                                    {"kind", to_string(info.kind)},
                                    {"editable", info.editable},
                                    {"schema", geojson::schema_to_json(info.schema)}});
                 }
                 return out.dump();
             })
        .def(
            "query",
            [](const Engine& e, const std::string& layer, std::optional<std::vector<double>> bbox) {
                std::optional<geom::BBox> box;
                if (bbox) {
                    if (bbox->size() != 4) {
                        throw Error(ErrorCode::ParseError, "bbox must hold 4 numbers");
                    }
                    box = geom::BBox{(*bbox)[0], (*bbox)[1], (*bbox)[2], (*bbox)[3]};
                }
                return geojson::collection_to_json(e.store().query(layer, box)).dump();
            },
            py::arg("layer"), py::arg("bbox") = std::nullopt)
        .def(
            "insert",
            [](Engine& e, const std::string& layer, const std::string& feature,
               const std::string& session) {
                return apply(e, ChangeKind::Insert, layer, feature, session);
            },
            py::arg("layer"), py::arg("feature"), py::arg("session") = "python")
        .def(
            "update",
            [](Engine& e, const std::string& layer, const std::string& feature,
               const std::string& session) {
                return apply(e, ChangeKind::Update, layer, feature, session);
            },
            py::arg("layer"), py::arg("feature"), py::arg("session") = "python")
        .def(
            "delete",
            [](Engine& e, const std::string& layer, std::int64_t id, const std::string& session) {
                ChangeSet cs;
                {
                    py::gil_scoped_release release;
                    cs = e.store().apply(origin_for(session), {Edit::remove(layer, id)});
                }
                return changeset_json(cs).dump();
            },
            py::arg("layer"), py::arg("id"), py::arg("session") = "python")
        .def("last_sequence", [](const Engine& e) { return e.store().last_sequence(); });

    py::class_<Service>(m, "Service")
        .def(py::init([](Engine& e, std::optional<std::filesystem::path> project) {
                 return std::make_unique<Service>(e, std::move(project));
             }),
             py::arg("engine"), py::arg("project") = std::nullopt, py::keep_alive<1, 2>())
        .def("start", &Service::start, py::arg("host") = "127.0.0.1", py::arg("port") = 0,
             py::call_guard<py::gil_scoped_release>())
        .def("stop", &Service::stop, py::call_guard<py::gil_scoped_release>());

    m.def(
        "round_extent",
        [](double x1, double y1, double x2, double y2) {
            return geojson::geometry_to_json(collab::round_extent({x1, y1, x2, y2})).dump();
        },
        py::arg("x1"), py::arg("y1"), py::arg("x2"), py::arg("y2"));
    m.def(
        "altimetry_profile",
        [](const std::vector<std::array<double, 3>>& line) {
            geom::Polyline pl;
            for (const auto& p : line) {
                pl.vertices.push_back({p[0], p[1], p[2]});
            }
            const aux::Profile prof = aux::altimetry_profile(pl);
            std::vector<std::array<double, 2>> out;
            for (const auto& v : prof.line.vertices) {
                out.push_back({v.x, v.y});
            }
            return py::make_tuple(out, prof.z_min);
        },
        py::arg("line"));
}
