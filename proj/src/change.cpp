#include "cirdil/channel/change.hpp"

#include <algorithm>
#include <string>

namespace cirdil::channel {

ChangeResult apply_change(const Scene& scene, const DomainChange& change) {
    Scene next = scene;
    std::vector<Rect> regions;
    for (const auto& edit : change.edits) {
        auto it = std::find_if(next.obstacles.begin(), next.obstacles.end(),
                               [&](const Obstacle& o) { return o.id == edit.id; });
        switch (edit.kind) {
            case ObstacleEdit::Kind::Add:
                if (it != next.obstacles.end()) throw SceneError("obstacle " + std::to_string(edit.id) + " already exists");
                if (!edit.footprint.valid()) throw SceneError("added obstacle has an empty footprint");
                next.obstacles.push_back({edit.id, edit.footprint, edit.attenuation});
                regions.push_back(edit.footprint);
                break;
            case ObstacleEdit::Kind::Remove:
                if (it == next.obstacles.end()) throw SceneError("unknown obstacle " + std::to_string(edit.id));
                regions.push_back(it->footprint);
                next.obstacles.erase(it);
                break;
            case ObstacleEdit::Kind::Move:
                if (it == next.obstacles.end()) throw SceneError("unknown obstacle " + std::to_string(edit.id));
                if (!edit.footprint.valid()) throw SceneError("moved obstacle has an empty footprint");
                regions.push_back(it->footprint);
                regions.push_back(edit.footprint);
                it->footprint = edit.footprint;
                break;
        }
    }
    next.validate();
    return {std::move(next), RegionLabeler(std::move(regions))};
}

namespace {

const char* kind_name(ObstacleEdit::Kind kind) {
    switch (kind) {
        case ObstacleEdit::Kind::Add: return "add";
        case ObstacleEdit::Kind::Remove: return "remove";
        case ObstacleEdit::Kind::Move: return "move";
    }
    return "move";
}

}  // namespace

nlohmann::json to_json(const DomainChange& change) {
    nlohmann::json edits = nlohmann::json::array();
    for (const auto& e : change.edits) {
        nlohmann::json j = {{"op", kind_name(e.kind)}, {"id", e.id}};
        if (e.kind != ObstacleEdit::Kind::Remove) j["rect"] = {e.footprint.x0, e.footprint.y0, e.footprint.x1, e.footprint.y1};
        if (e.kind == ObstacleEdit::Kind::Add) j["attenuation"] = e.attenuation;
        edits.push_back(std::move(j));
    }
    return edits;
}

DomainChange change_from_json(const nlohmann::json& doc) {
    if (!doc.is_array()) throw SceneError("change list must be an array");
    DomainChange change;
    for (const auto& j : doc) {
        if (!j.is_object() || !j.contains("op") || !j.contains("id")) throw SceneError("malformed change entry");
        ObstacleEdit e;
        const auto op = j.at("op").get<std::string>();
        if (op == "add") {
            e.kind = ObstacleEdit::Kind::Add;
        } else if (op == "remove") {
            e.kind = ObstacleEdit::Kind::Remove;
        } else if (op == "move") {
            e.kind = ObstacleEdit::Kind::Move;
        } else {
            throw SceneError("unknown change op '" + op + "'");
        }
        e.id = j.at("id").get<int>();
        if (e.kind != ObstacleEdit::Kind::Remove) {
            if (!j.contains("rect")) throw SceneError("change '" + op + "' needs a rect");
            const auto v = j.at("rect").get<std::vector<double>>();
            if (v.size() != 4) throw SceneError("rectangle needs four numbers [x0, y0, x1, y1]");
            e.footprint = {v[0], v[1], v[2], v[3]};
        }
        e.attenuation = j.value("attenuation", e.attenuation);
        change.edits.push_back(e);
    }
    return change;
}

}  // namespace cirdil::channel
