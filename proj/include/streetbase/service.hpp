#pragma once

// HTTP JSON API over an Engine: feature CRUD, sessions, extents, conflicts,
// a polling change endpoint and a server-sent-events feed.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "streetbase/engine.hpp"

namespace streetbase {

// HTTP status for an engine error code.
int http_status(ErrorCode code);

class Service {
public:
    // With a project directory, POST /save and stop() persist to it.
    explicit Service(Engine& engine, std::optional<std::filesystem::path> project = std::nullopt);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Binds and serves on a background thread. Returns the bound port, or
    // throws Misconfigured when binding fails. Port 0 picks a free port.
    int start(const std::string& host, int port);
    // Serves on the calling thread until stop(). Returns false on bind failure.
    bool listen(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace streetbase
