#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <pthread.h>

#include "CLI11.hpp"

#include "streetbase/collab.hpp"
#include "streetbase/engine.hpp"
#include "streetbase/service.hpp"

using namespace streetbase;

namespace {

constexpr int kUsage = 2;

std::unique_ptr<Engine> open_project(const std::string& dir, const std::string& config) {
    auto engine = Engine::open(dir);
    if (!config.empty()) {
        engine->store().set_config(load_config(config));
    }
    return engine;
}

int serve(const std::string& dir, int port, const std::string& host, const std::string& config) {
    auto engine = open_project(dir, config);
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    Service service(*engine, std::filesystem::path(dir));
    const int bound = service.start(host, port);
    std::printf("serving %s on http://%s:%d\n", dir.c_str(), host.c_str(), bound);
    std::fflush(stdout);
    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
    std::printf("stopped, project saved\n");
    return 0;
}

int generate(const std::string& dir) {
    auto engine = Engine::open(dir);
    std::size_t written = 0;
    const ChangeSet cs = engine->generate(&written);
    for (const auto& w : cs.warnings) {
        std::fprintf(stderr, "warning: %s\n", w.c_str());
    }
    engine->save(dir);
    std::printf("%zu features changed\n", written);
    return 0;
}

int check(const std::string& dir) {
    auto engine = Engine::open(dir);
    const auto problems = engine->check();
    for (const auto& p : problems) {
        std::printf("%s\n", p.c_str());
    }
    if (!problems.empty()) {
        std::fprintf(stderr, "%zu problem(s)\n", problems.size());
        return 1;
    }
    std::printf("ok\n");
    return 0;
}

int stats(const std::string& dir) {
    auto engine = Engine::open(dir);
    struct Row {
        std::size_t cells = 0;
        std::size_t todo = 0;
        std::size_t done = 0;
        std::int64_t cumulated_ms = 0;
    };
    std::map<std::int64_t, Row> rows;
    for (const Feature& c : engine->store().query(collab::kHexGrid)) {
        Row& r = rows[c.int_or("work_area", 0)];
        ++r.cells;
        (c.get_text("status") == "done" ? r.done : r.todo)++;
        r.cumulated_ms += c.int_or("cumulated_ms", 0);
    }
    std::printf("%-10s %8s %8s %8s %14s\n", "work_area", "cells", "todo", "done", "cumulated_ms");
    for (const auto& [area, r] : rows) {
        std::printf("%-10lld %8zu %8zu %8zu %14lld\n", static_cast<long long>(area), r.cells, r.todo,
                    r.done, static_cast<long long>(r.cumulated_ms));
    }
    return 0;
}

int demo(const std::string& dir) {
    if (std::filesystem::exists(std::filesystem::path(dir) / "manifest.json")) {
        std::fprintf(stderr, "%s already holds a project\n", dir.c_str());
        return 1;
    }
    Engine engine;
    build_demo(engine.store());
    engine.save(dir);
    std::printf("demo project written to %s\n", dir.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reactive street-network layer engine"};
    app.require_subcommand(1);
    std::string project;
    std::string config;
    std::string host = "127.0.0.1";
    int port = 8080;

    auto* serve_cmd = app.add_subcommand("serve", "Serve a project over HTTP");
    serve_cmd->add_option("--project", project, "Project directory")->required();
    serve_cmd->add_option("--port", port, "TCP port (0 picks a free one)");
    serve_cmd->add_option("--host", host, "Bind address");
    serve_cmd->add_option("--config", config, "JSON configuration file");

    auto* generate_cmd = app.add_subcommand("generate", "Regenerate every street surface");
    generate_cmd->add_option("--project", project, "Project directory")->required();
    auto* check_cmd = app.add_subcommand("check", "Run every consistency sweep");
    check_cmd->add_option("--project", project, "Project directory")->required();
    auto* stats_cmd = app.add_subcommand("stats", "Hex-grid progress per work area");
    stats_cmd->add_option("--project", project, "Project directory")->required();
    auto* demo_cmd = app.add_subcommand("demo", "Write the bundled demo project");
    demo_cmd->add_option("--project", project, "Target directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*serve_cmd) {
            return serve(project, port, host, config);
        }
        if (*generate_cmd) {
            return generate(project);
        }
        if (*check_cmd) {
            return check(project);
        }
        if (*stats_cmd) {
            return stats(project);
        }
        return demo(project);
    } catch (const Error& e) {
        std::fprintf(stderr, "error (%s): %s\n", std::string(to_string(e.code())).c_str(), e.what());
        return 1;
    }
}
