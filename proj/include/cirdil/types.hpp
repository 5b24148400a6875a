#ifndef CIRDIL_TYPES_HPP
#define CIRDIL_TYPES_HPP

#include <cmath>
#include <cstdint>

namespace cirdil {

struct Position2D {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Position2D&, const Position2D&) = default;
};

inline double euclidean(const Position2D& a, const Position2D& b) { return std::hypot(a.x - b.x, a.y - b.y); }

using SampleId = std::uint64_t;

}  // namespace cirdil

#endif  // CIRDIL_TYPES_HPP
