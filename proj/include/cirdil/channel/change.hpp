#ifndef CIRDIL_CHANNEL_CHANGE_HPP
#define CIRDIL_CHANNEL_CHANGE_HPP

#include <vector>

#include <json.hpp>

#include "cirdil/channel/cir.hpp"
#include "cirdil/channel/scene.hpp"

namespace cirdil::channel {

struct ObstacleEdit {
    enum class Kind { Add, Remove, Move };
    Kind kind = Kind::Move;
    int id = 0;
    Rect footprint;            // target footprint for Add and Move
    double attenuation = 0.3;  // Add only
};

struct DomainChange {
    std::vector<ObstacleEdit> edits;
};

/// Labels positions against the modified-region rectangles of a change.
class RegionLabeler {
public:
    RegionLabeler() = default;
    explicit RegionLabeler(std::vector<Rect> regions) : regions_(std::move(regions)) {}

    Region label(const Position2D& p) const {
        for (const auto& r : regions_) {
            if (r.contains(p)) return Region::Modified;
        }
        return Region::Static;
    }
    const std::vector<Rect>& regions() const { return regions_; }

private:
    std::vector<Rect> regions_;
};

struct ChangeResult {
    Scene scene;
    RegionLabeler labeler;
};

/// Successor scene plus a labeler whose regions are the old and new
/// footprints of every edited obstacle. Throws SceneError on edits that
/// reference unknown ids, re-add an existing id or carry a degenerate rect.
ChangeResult apply_change(const Scene& scene, const DomainChange& change);

nlohmann::json to_json(const DomainChange& change);
DomainChange change_from_json(const nlohmann::json& doc);

}  // namespace cirdil::channel

#endif  // CIRDIL_CHANNEL_CHANGE_HPP
