#ifndef CIRDIL_CHANNEL_SCENE_HPP
#define CIRDIL_CHANNEL_SCENE_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cirdil/types.hpp"

namespace cirdil::channel {

inline constexpr double kSpeedOfLight = 3e8;

/// Axis-aligned rectangle [x0, x1] x [y0, y1].
struct Rect {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 0.0;
    double y1 = 0.0;

    bool contains(const Position2D& p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
    double area() const { return (x1 - x0) * (y1 - y0); }
    bool valid() const { return x1 > x0 && y1 > y0; }

    friend bool operator==(const Rect&, const Rect&) = default;
};

/// True when the closed segment a-b touches the closed rectangle.
bool segment_intersects(const Position2D& a, const Position2D& b, const Rect& r);

struct Obstacle {
    int id = 0;
    Rect footprint;
    double attenuation = 1.0;  // amplitude factor in (0, 1] applied to each blocked direct path

    friend bool operator==(const Obstacle&, const Obstacle&) = default;
};

class SceneError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// 2D room with base stations, obstacles and propagation parameters.
struct Scene {
    double width = 20.0;
    double height = 20.0;
    std::vector<Position2D> base_stations;
    std::vector<Obstacle> obstacles;
    double reflection = 0.3;  // wall reflection coefficient in [0, 1)
    double bandwidth = 100e6;
    int n_taps = 64;
    double noise_std = 0.01;

    bool inside(const Position2D& p) const { return p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height; }

    /// Tap index of a path of the given length.
    int tap_index(double path_length) const;

    /// Throws SceneError when a parameter is out of range or when some
    /// position in the room would put its direct path beyond the last tap.
    void validate() const;

    const Obstacle* find_obstacle(int id) const;

    friend bool operator==(const Scene&, const Scene&) = default;
};

/// Six base stations on the room boundary region, one obstacle layout.
Scene default_scene();

nlohmann::json to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& doc);

/// Hash of the canonical JSON serialization.
std::uint64_t scene_hash(const Scene& scene);

}  // namespace cirdil::channel

#endif  // CIRDIL_CHANNEL_SCENE_HPP
