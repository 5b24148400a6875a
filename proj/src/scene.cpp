#include "cirdil/channel/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cirdil/rng.hpp"

namespace cirdil::channel {

bool segment_intersects(const Position2D& a, const Position2D& b, const Rect& r) {
    // Liang-Barsky clipping of a + t (b - a), t in [0, 1].
    double t0 = 0.0;
    double t1 = 1.0;
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double p[4] = {-dx, dx, -dy, dy};
    const double q[4] = {a.x - r.x0, r.x1 - a.x, a.y - r.y0, r.y1 - a.y};
    for (int i = 0; i < 4; ++i) {
        if (p[i] == 0.0) {
            if (q[i] < 0.0) return false;
            continue;
        }
        const double t = q[i] / p[i];
        if (p[i] < 0.0) {
            t0 = std::max(t0, t);
        } else {
            t1 = std::min(t1, t);
        }
        if (t0 > t1) return false;
    }
    return true;
}

int Scene::tap_index(double path_length) const {
    return static_cast<int>(std::lround(path_length / kSpeedOfLight * bandwidth));
}

void Scene::validate() const {
    if (!(width > 0.0) || !(height > 0.0)) throw SceneError("room dimensions must be positive");
    if (base_stations.empty()) throw SceneError("scene needs at least one base station");
    if (n_taps < 1) throw SceneError("n_taps must be at least 1");
    if (!(bandwidth > 0.0)) throw SceneError("bandwidth must be positive");
    if (!(reflection >= 0.0 && reflection < 1.0)) throw SceneError("reflection coefficient must lie in [0, 1)");
    if (!(noise_std >= 0.0)) throw SceneError("noise std must be non-negative");
    for (const auto& bs : base_stations) {
        if (!inside(bs)) throw SceneError("base station outside the room");
    }
    for (const auto& ob : obstacles) {
        if (!ob.footprint.valid()) throw SceneError("obstacle " + std::to_string(ob.id) + " has an empty footprint");
        if (!(ob.attenuation > 0.0 && ob.attenuation <= 1.0)) {
            throw SceneError("obstacle " + std::to_string(ob.id) + " attenuation must lie in (0, 1]");
        }
    }
    // The farthest point of the room from a base station is one of the corners.
    const Position2D corners[4] = {{0.0, 0.0}, {width, 0.0}, {0.0, height}, {width, height}};
    double longest = 0.0;
    for (const auto& bs : base_stations) {
        for (const auto& c : corners) longest = std::max(longest, euclidean(bs, c));
    }
    if (tap_index(longest) >= n_taps) {
        throw SceneError("scene under-resolved: direct path of " + std::to_string(longest) + " m maps to tap " +
                         std::to_string(tap_index(longest)) + " but n_taps is " + std::to_string(n_taps));
    }
}

const Obstacle* Scene::find_obstacle(int id) const {
    auto it = std::find_if(obstacles.begin(), obstacles.end(), [id](const Obstacle& o) { return o.id == id; });
    return it == obstacles.end() ? nullptr : &*it;
}

Scene default_scene() {
    Scene scene;
    scene.base_stations = {{1.0, 1.0}, {19.0, 1.0}, {19.0, 19.0}, {1.0, 19.0}, {10.0, 0.5}, {10.0, 19.5}};
    scene.obstacles = {
        {0, {4.0, 4.0, 8.0, 7.0}, 0.2},
        {1, {12.0, 12.0, 16.0, 15.0}, 0.3},
        {2, {12.5, 3.0, 15.5, 7.0}, 0.25},
        {3, {3.0, 13.0, 6.0, 17.0}, 0.3},
    };
    return scene;
}

namespace {

nlohmann::json rect_json(const Rect& r) { return {r.x0, r.y0, r.x1, r.y1}; }

Rect rect_from(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 4) throw SceneError("rectangle needs four numbers [x0, y0, x1, y1]");
    return {v[0], v[1], v[2], v[3]};
}

}  // namespace

nlohmann::json to_json(const Scene& scene) {
    nlohmann::json bs = nlohmann::json::array();
    for (const auto& p : scene.base_stations) bs.push_back({p.x, p.y});
    nlohmann::json obstacles = nlohmann::json::array();
    for (const auto& o : scene.obstacles) {
        obstacles.push_back({{"id", o.id}, {"rect", rect_json(o.footprint)}, {"attenuation", o.attenuation}});
    }
    return {{"width", scene.width},         {"height", scene.height},         {"base_stations", bs},
            {"obstacles", obstacles},       {"reflection", scene.reflection}, {"bandwidth", scene.bandwidth},
            {"n_taps", scene.n_taps},       {"noise_std", scene.noise_std}};
}

Scene scene_from_json(const nlohmann::json& doc) {
    Scene scene;
    scene.width = doc.value("width", scene.width);
    scene.height = doc.value("height", scene.height);
    scene.reflection = doc.value("reflection", scene.reflection);
    scene.bandwidth = doc.value("bandwidth", scene.bandwidth);
    scene.n_taps = doc.value("n_taps", scene.n_taps);
    scene.noise_std = doc.value("noise_std", scene.noise_std);
    if (doc.contains("base_stations")) {
        for (const auto& p : doc.at("base_stations")) {
            const auto v = p.get<std::vector<double>>();
            if (v.size() != 2) throw SceneError("base station needs [x, y]");
            scene.base_stations.push_back({v[0], v[1]});
        }
    } else {
        scene.base_stations = default_scene().base_stations;
    }
    if (doc.contains("obstacles")) {
        for (const auto& o : doc.at("obstacles")) {
            scene.obstacles.push_back({o.at("id").get<int>(), rect_from(o.at("rect")), o.value("attenuation", 0.3)});
        }
    }
    scene.validate();
    return scene;
}

std::uint64_t scene_hash(const Scene& scene) {
    const std::string text = to_json(scene).dump();
    return fnv1a(text.data(), text.size());
}

}  // namespace cirdil::channel
