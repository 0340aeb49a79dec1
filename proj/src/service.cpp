#include "streetbase/service.hpp"

#include <atomic>
#include <chrono>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "httplib.h"

#include "streetbase/collab.hpp"
#include "streetbase/geojson.hpp"

namespace streetbase {

using nlohmann::json;

namespace {

constexpr std::size_t kFeedBatch = 512;
constexpr std::size_t kWorkers = 32;
constexpr auto kFeedPoll = std::chrono::milliseconds(250);

struct Session {
    std::string user_id;
    std::int64_t created = 0;
};

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

json error_body(const Error& e) {
    json j{{"code", to_string(e.code())}, {"message", e.what()}};
    if (e.layer()) {
        j["layer"] = *e.layer();
    }
    if (e.feature()) {
        j["feature"] = *e.feature();
    }
    return j;
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
    send_json(res, http_status(e.code()), error_body(e));
}

json parse_body(const httplib::Request& req) {
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("request body is not JSON: ") + e.what());
    }
}

std::int64_t parse_id(const std::string& text) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used == text.size() && v > 0) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::ParseError, "feature id must be a positive integer, not '" + text + "'");
}

std::uint64_t parse_sequence(const std::string& text) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(text, &used);
        if (used == text.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::ParseError, "sequence must be a non-negative integer, not '" + text + "'");
}

geom::BBox parse_bbox(const std::string& text) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(part, &used));
            if (used != part.size()) {
                v.clear();
                break;
            }
        } catch (const std::exception&) {
            v.clear();
            break;
        }
    }
    if (v.size() != 4 || v[0] > v[2] || v[1] > v[3]) {
        throw Error(ErrorCode::ParseError, "bbox must be x1,y1,x2,y2 with x1<=x2 and y1<=y2");
    }
    return {v[0], v[1], v[2], v[3]};
}

json changeset_json(const ChangeSet& cs) {
    json records = json::array();
    for (const auto& r : cs.records) {
        records.push_back(geojson::record_to_json(r));
    }
    return {{"ids", cs.edit_ids}, {"records", records}, {"warnings", cs.warnings}};
}

json records_json(const std::vector<ChangeRecord>& records) {
    json out = json::array();
    for (const auto& r : records) {
        out.push_back(geojson::record_to_json(r));
    }
    return out;
}

std::string sse_frame(const ChangeRecord& r) {
    return "id: " + std::to_string(r.sequence) + "\nevent: change\ndata: " +
           geojson::record_to_json(r).dump() + "\n\n";
}

} // namespace

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::NotFound:
        return 404;
    case ErrorCode::Conflict:
    case ErrorCode::ConcurrentModification:
    case ErrorCode::AmbiguousEdit:
        return 409;
    case ErrorCode::ParseError:
        return 400;
    case ErrorCode::Unsupported:
        return 405;
    case ErrorCode::CyclicTriggerError:
    case ErrorCode::Misconfigured:
        return 500;
    default:
        return 422;
    }
}

struct Service::Impl {
    Engine& engine;
    std::optional<std::filesystem::path> project;
    httplib::Server server;
    collab::ExtentRecorder recorder;
    std::mutex sessions_mutex;
    std::unordered_map<std::string, Session> sessions;
    std::mt19937_64 rng{std::random_device{}()};
    std::atomic<bool> stopping{false};
    bool stopped = false;
    std::thread thread;

    Impl(Engine& e, std::optional<std::filesystem::path> dir)
        : engine(e), project(std::move(dir)), recorder(e.store()) {
        server.new_task_queue = [] { return new httplib::ThreadPool(kWorkers); };
        routes();
    }

    Store& store() { return engine.store(); }

    Origin origin_of(const httplib::Request& req) {
        const std::string token = req.get_header_value("X-Session");
        if (token.empty()) {
            return Origin::user("anonymous@" + req.remote_addr);
        }
        std::lock_guard lock(sessions_mutex);
        auto it = sessions.find(token);
        if (it == sessions.end()) {
            throw Error(ErrorCode::NotFound, "unknown session '" + token + "'");
        }
        return Origin::user(it->second.user_id);
    }

    template <class Fn>
    httplib::Server::Handler guarded(Fn fn) {
        return [fn](const httplib::Request& req, httplib::Response& res) {
            try {
                fn(req, res);
            } catch (const Error& e) {
                send_error(res, e);
            } catch (const json::exception& e) {
                send_error(res, Error(ErrorCode::ParseError, e.what()));
            } catch (const std::exception& e) {
                send_json(res, 500, {{"code", "Internal"}, {"message", e.what()}});
            }
        };
    }

    Feature decode(const std::string& layer, const json& j) {
        const LayerInfo info = store().layer_info(layer);
        if (!j.is_object() || j.value("type", "") != "Feature") {
            throw Error(ErrorCode::ParseError, "expected a GeoJSON Feature", layer);
        }
        return geojson::feature_from_json(j, info.schema);
    }

    void routes() {
        server.Get("/layers", guarded([this](const httplib::Request&, httplib::Response& res) {
            json out = json::array();
            for (const LayerInfo& info : store().layers()) {
                json j{{"name", info.name},
                       {"kind", to_string(info.kind)},
                       {"editable", info.editable},
                       {"schema", geojson::schema_to_json(info.schema)}};
                if (!info.base.empty()) {
                    j["base"] = info.base;
                }
                out.push_back(j);
            }
            send_json(res, 200, out);
        }));

        server.Get("/layers/:name/features",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const std::string layer = req.path_params.at("name");
                       std::optional<geom::BBox> box;
                       if (req.has_param("bbox")) {
                           box = parse_bbox(req.get_param_value("bbox"));
                       }
                       store().layer_info(layer);
                       send_json(res, 200, geojson::collection_to_json(store().query(layer, box)));
                   }));

        server.Get("/layers/:name/features/:id",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const std::string layer = req.path_params.at("name");
                       const std::int64_t id = parse_id(req.path_params.at("id"));
                       auto f = store().get(layer, id);
                       if (!f) {
                           throw Error(ErrorCode::NotFound, "no such feature", layer, id);
                       }
                       send_json(res, 200, geojson::feature_to_json(*f));
                   }));

        server.Post("/layers/:name/features",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const std::string layer = req.path_params.at("name");
                        const json body = parse_body(req);
                        std::vector<Edit> edits;
                        if (body.is_object() && body.value("type", "") == "FeatureCollection") {
                            for (const auto& j : body.at("features")) {
                                edits.push_back(Edit::insert(layer, decode(layer, j)));
                            }
                        } else {
                            edits.push_back(Edit::insert(layer, decode(layer, body)));
                        }
                        for (auto& e : edits) {
                            e.feature.id = 0;
                        }
                        send_json(res, 201, changeset_json(store().apply(origin_of(req), std::move(edits))));
                    }));

        server.Put("/layers/:name/features/:id",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const std::string layer = req.path_params.at("name");
                       const std::int64_t id = parse_id(req.path_params.at("id"));
                       const json body = parse_body(req);
                       if (!body.is_object()) {
                           throw Error(ErrorCode::ParseError, "expected a GeoJSON Feature", layer, id);
                       }
                       const Origin origin = origin_of(req);
                       auto current = store().get(layer, id);
                       if (!current) {
                           throw Error(ErrorCode::NotFound, "no such feature", layer, id);
                       }
                       json merged = geojson::feature_to_json(*current);
                       if (body.contains("geometry")) {
                           merged["geometry"] = body["geometry"];
                       }
                       if (body.contains("properties") && body["properties"].is_object()) {
                           json& props = merged["properties"];
                           if (!props.is_object()) {
                               props = json::object();
                           }
                           for (const auto& [k, v] : body["properties"].items()) {
                               if (v.is_null()) {
                                   props.erase(k);
                               } else {
                                   props[k] = v;
                               }
                           }
                       }
                       Feature f = decode(layer, merged);
                       f.id = id;
                       Edit e = Edit::update(layer, std::move(f));
                       e.expected = *current;
                       send_json(res, 200, changeset_json(store().apply(origin, {std::move(e)})));
                   }));

        server.Delete("/layers/:name/features/:id",
                      guarded([this](const httplib::Request& req, httplib::Response& res) {
                          const std::string layer = req.path_params.at("name");
                          const std::int64_t id = parse_id(req.path_params.at("id"));
                          send_json(res, 200,
                                    changeset_json(store().apply(origin_of(req), {Edit::remove(layer, id)})));
                      }));

        server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
            std::string name = "user";
            if (!req.body.empty()) {
                const json body = parse_body(req);
                name = body.value("name", name);
            }
            if (name.empty() || name.find('@') != std::string::npos) {
                throw Error(ErrorCode::Rejected, "session name must be non-empty and contain no '@'");
            }
            const std::string user = name + "@" + req.remote_addr;
            std::string token;
            Session s{user, now_ms()};
            {
                std::lock_guard lock(sessions_mutex);
                char buf[33];
                std::snprintf(buf, sizeof buf, "%016llx%016llx",
                              static_cast<unsigned long long>(rng()),
                              static_cast<unsigned long long>(rng()));
                token = buf;
                sessions[token] = s;
            }
            send_json(res, 201, {{"session", token}, {"user_id", user}, {"created", s.created}});
        }));

        server.Post("/extents", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const Origin origin = origin_of(req);
            const json body = parse_body(req);
            const auto b = body.at("bbox").get<std::vector<double>>();
            if (b.size() != 4) {
                throw Error(ErrorCode::ParseError, "bbox must hold 4 numbers");
            }
            const std::int64_t t = body.value("t", now_ms());
            const double scale = body.at("scale").get<double>();
            const bool accepted = recorder.record(origin.session, {b[0], b[1], b[2], b[3]}, t, scale);
            if (req.has_param("sync")) {
                recorder.flush();
            }
            send_json(res, 202, {{"accepted", accepted}, {"user_id", origin.session}});
        }));

        server.Get("/conflicts", guarded([this](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, geojson::collection_to_json(store().query(collab::kConflicts)));
        }));

        server.Get("/changes", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const std::uint64_t since =
                req.has_param("since") ? parse_sequence(req.get_param_value("since")) : 0;
            std::size_t max = kFeedBatch * 8;
            if (req.has_param("max")) {
                max = static_cast<std::size_t>(parse_sequence(req.get_param_value("max")));
            }
            std::vector<ChangeRecord> records;
            try {
                records = store().feed().since(since, max);
            } catch (const Error& e) {
                send_json(res, 410, error_body(e));
                return;
            }
            const std::uint64_t next = records.empty() ? since : records.back().sequence;
            send_json(res, 200,
                      {{"records", records_json(records)},
                       {"next", next},
                       {"last", store().feed().last()}});
        }));

        server.Get("/feed", guarded([this](const httplib::Request& req, httplib::Response& res) {
            std::uint64_t since = store().feed().last();
            if (req.has_param("since")) {
                since = parse_sequence(req.get_param_value("since"));
            } else if (req.has_header("Last-Event-ID")) {
                since = parse_sequence(req.get_header_value("Last-Event-ID"));
            }
            if (since + 1 < store().feed().oldest_available() && since < store().feed().last()) {
                send_json(res, 410,
                          error_body(Error(ErrorCode::OutOfRange,
                                           "resume point expired; oldest available sequence is " +
                                               std::to_string(store().feed().oldest_available()))));
                return;
            }
            auto cursor = std::make_shared<std::uint64_t>(since);
            res.set_header("Cache-Control", "no-cache");
            res.set_chunked_content_provider(
                "text/event-stream", [this, cursor](std::size_t, httplib::DataSink& sink) {
                    if (stopping) {
                        sink.done();
                        return true;
                    }
                    std::vector<ChangeRecord> batch;
                    try {
                        batch = store().feed().since(*cursor, kFeedBatch);
                    } catch (const Error& e) {
                        // Fell behind the retained history: tell the client where to resume.
                        const std::string frame = "event: expired\ndata: " + error_body(e).dump() + "\n\n";
                        sink.write(frame.data(), frame.size());
                        sink.done();
                        return true;
                    }
                    if (batch.empty()) {
                        if (!store().feed().wait(*cursor, kFeedPoll)) {
                            static const std::string ping = ": ping\n\n";
                            return sink.write(ping.data(), ping.size());
                        }
                        return true;
                    }
                    std::string out;
                    for (const auto& r : batch) {
                        out += sse_frame(r);
                    }
                    *cursor = batch.back().sequence;
                    return sink.write(out.data(), out.size());
                });
        }));

        server.Get("/check", guarded([this](const httplib::Request&, httplib::Response& res) {
            const auto problems = engine.check();
            send_json(res, 200, {{"ok", problems.empty()}, {"problems", problems}});
        }));

        server.Get("/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, engine.stats());
        }));

        server.Post("/generate", guarded([this](const httplib::Request&, httplib::Response& res) {
            std::size_t written = 0;
            const ChangeSet cs = engine.generate(&written);
            send_json(res, 200, {{"written", written}, {"warnings", cs.warnings}});
        }));

        server.Post("/save", guarded([this](const httplib::Request&, httplib::Response& res) {
            if (!project) {
                throw Error(ErrorCode::Misconfigured, "the service was started without a project directory");
            }
            recorder.flush();
            engine.save(*project);
            send_json(res, 200, {{"saved", project->string()}});
        }));
    }
};

Service::Service(Engine& engine, std::optional<std::filesystem::path> project)
    : impl_(std::make_unique<Impl>(engine, std::move(project))) {}

Service::~Service() { stop(); }

int Service::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound <= 0) {
        throw Error(ErrorCode::Misconfigured,
                    "cannot bind " + host + ":" + std::to_string(port));
    }
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

bool Service::listen(const std::string& host, int port) {
    if (!impl_->server.bind_to_port(host, port)) {
        return false;
    }
    return impl_->server.listen_after_bind();
}

void Service::stop() {
    if (!impl_ || impl_->stopped) {
        return;
    }
    impl_->stopped = true;
    impl_->stopping = true;
    impl_->server.stop();
    if (impl_->thread.joinable()) {
        impl_->thread.join();
    }
    impl_->recorder.flush();
    if (impl_->project) {
        impl_->engine.save(*impl_->project);
    }
}

} // namespace streetbase
