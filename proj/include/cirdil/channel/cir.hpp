#ifndef CIRDIL_CHANNEL_CIR_HPP
#define CIRDIL_CHANNEL_CIR_HPP

#include <complex>
#include <cstdint>

#include <Eigen/Dense>

#include "cirdil/channel/scene.hpp"
#include "cirdil/rng.hpp"
#include "cirdil/types.hpp"

namespace cirdil::channel {

using TapMatrix = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic>;

enum class Region : std::uint8_t { Static = 0, Modified = 1 };

/// One fingerprint: taps(b, n) is tap n of base station b.
struct CirSample {
    SampleId id = 0;
    Position2D position;
    Region region = Region::Static;
    TapMatrix taps;
};

/// Multipath impulse response at `pos`: the direct path of every base station
/// (amplitude 1/d times the attenuation of each obstacle it crosses) plus four
/// first-order wall images scaled by the reflection coefficient, each placed
/// at tap round(length / c * bandwidth); complex Gaussian noise is added to
/// every tap when noise_std > 0.
CirSample synthesize_cir(const Scene& scene, const Position2D& pos, Rng& rng, SampleId id = 0);

/// [Re h_0, Im h_0, ..., Re h_{B-1}, Im h_{B-1}] scaled by the largest
/// absolute entry; an all-zero sample stays zero.
Eigen::VectorXd to_features(const CirSample& sample);

inline Eigen::Index feature_length(const Scene& scene) {
    return Eigen::Index(2) * static_cast<Eigen::Index>(scene.base_stations.size()) * scene.n_taps;
}

}  // namespace cirdil::channel

#endif  // CIRDIL_CHANNEL_CIR_HPP
