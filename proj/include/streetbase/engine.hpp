#pragma once

// A store with every module installed, plus the project-level operations
// shared by the CLI, the service and the Python bindings.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "streetbase/store.hpp"

namespace streetbase {

void install_modules(Store& store);

// Features equal up to `tol` on coordinates and real attributes.
bool nearly_equal(const Feature& a, const Feature& b, double tol);

class Engine {
public:
    explicit Engine(Config config = {});

    static std::unique_ptr<Engine> open(const std::filesystem::path& dir);

    Store& store() { return *store_; }
    const Store& store() const { return *store_; }

    void save(const std::filesystem::path& dir) const { store_->save(dir); }

    // Full regeneration of the street model; returns the number of writes.
    ChangeSet generate(std::size_t* written = nullptr);

    // One message per inconsistency; empty when the project is coherent.
    std::vector<std::string> check() const;

    nlohmann::json stats() const;

private:
    std::unique_ptr<Store> store_;
};

// Street grid of 6 x 5 nodes with 100 m spacing (49 edges, some curved,
// varied widths and lane counts) plus one example of every controller.
void build_demo(Store& store);

} // namespace streetbase
