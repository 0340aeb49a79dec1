#include "streetbase/config.hpp"

#include <fstream>
#include <sstream>

#include "streetbase/errors.hpp"

namespace streetbase {

nlohmann::json to_json(const Config& c) {
    return {
        {"snap_tolerance_m", c.snap_tolerance_m},
        {"trigger_depth_limit", c.trigger_depth_limit},
        {"default_width_m", c.default_width_m},
        {"default_lane_count", c.default_lane_count},
        {"default_radius_m", c.default_radius_m},
        {"conflict_window_ms", c.conflict_window_ms},
        {"hex_size_m", c.hex_size_m},
        {"min_scale", c.min_scale},
        {"max_scale", c.max_scale},
        {"right_hand_traffic", c.right_hand_traffic},
    };
}

Config config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw Error(ErrorCode::ParseError, "config must be a JSON object");
    }
    Config c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "snap_tolerance_m") {
                c.snap_tolerance_m = value.get<double>();
            } else if (key == "trigger_depth_limit") {
                c.trigger_depth_limit = value.get<int>();
            } else if (key == "default_width_m") {
                c.default_width_m = value.get<double>();
            } else if (key == "default_lane_count") {
                c.default_lane_count = value.get<std::int64_t>();
            } else if (key == "default_radius_m") {
                c.default_radius_m = value.get<double>();
            } else if (key == "conflict_window_ms") {
                c.conflict_window_ms = value.get<std::int64_t>();
            } else if (key == "hex_size_m") {
                c.hex_size_m = value.get<double>();
            } else if (key == "min_scale") {
                c.min_scale = value.get<double>();
            } else if (key == "max_scale") {
                c.max_scale = value.get<double>();
            } else if (key == "right_hand_traffic") {
                c.right_hand_traffic = value.get<bool>();
            } else {
                throw Error(ErrorCode::ParseError, "unknown config key '" + key + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, "config key '" + key + "': " + e.what());
        }
    }
    if (c.snap_tolerance_m < 0 || c.trigger_depth_limit < 1 || c.default_width_m <= 0 ||
        c.default_lane_count < 1 || c.default_radius_m <= 0 || c.conflict_window_ms < 0 ||
        c.hex_size_m <= 0 || c.min_scale > c.max_scale) {
        throw Error(ErrorCode::ParseError, "config value out of range");
    }
    return c;
}

Config load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw Error(ErrorCode::NotFound, "cannot open config file " + file.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(buf.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::ParseError, file.string() + ": " + e.what());
    }
    return config_from_json(j);
}

} // namespace streetbase
