#pragma once

#include <cstdint>
#include <filesystem>

#include "json.hpp"

namespace streetbase {

struct Config {
    double snap_tolerance_m = 0.5;
    int trigger_depth_limit = 16;
    double default_width_m = 8.0;
    std::int64_t default_lane_count = 2;
    double default_radius_m = 5.0;
    std::int64_t conflict_window_ms = 300000;
    double hex_size_m = 25.0;
    double min_scale = 100.0;
    double max_scale = 5000.0;
    bool right_hand_traffic = true;

    friend bool operator==(const Config&, const Config&) = default;
};

nlohmann::json to_json(const Config& config);
// Missing keys keep their defaults; unknown keys are a ParseError.
Config config_from_json(const nlohmann::json& j);
Config load_config(const std::filesystem::path& file);

} // namespace streetbase
