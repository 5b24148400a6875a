#include "cirdil/channel/cir.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace cirdil::channel {

CirSample synthesize_cir(const Scene& scene, const Position2D& pos, Rng& rng, SampleId id) {
    if (!scene.inside(pos)) throw std::invalid_argument("position outside the room");
    const auto n_bs = static_cast<Eigen::Index>(scene.base_stations.size());
    CirSample sample;
    sample.id = id;
    sample.position = pos;
    sample.taps = TapMatrix::Zero(n_bs, scene.n_taps);

    for (Eigen::Index b = 0; b < n_bs; ++b) {
        const Position2D& bs = scene.base_stations[static_cast<std::size_t>(b)];
        const double direct = std::max(euclidean(bs, pos), 1e-3);
        const int direct_tap = scene.tap_index(direct);
        if (direct_tap >= scene.n_taps) {
            throw SceneError("scene under-resolved: direct path lands on tap " + std::to_string(direct_tap));
        }
        double gain = 1.0 / direct;
        for (const auto& ob : scene.obstacles) {
            if (segment_intersects(bs, pos, ob.footprint)) gain *= ob.attenuation;
        }
        sample.taps(b, direct_tap) += gain;

        if (scene.reflection > 0.0) {
            const std::array<Position2D, 4> images = {{{-bs.x, bs.y},
                                                       {2.0 * scene.width - bs.x, bs.y},
                                                       {bs.x, -bs.y},
                                                       {bs.x, 2.0 * scene.height - bs.y}}};
            for (const auto& image : images) {
                const double length = euclidean(image, pos);
                const int tap = scene.tap_index(length);
                if (tap < scene.n_taps) sample.taps(b, tap) += scene.reflection / length;
            }
        }
    }

    if (scene.noise_std > 0.0) {
        const double component = scene.noise_std / std::sqrt(2.0);
        for (Eigen::Index b = 0; b < n_bs; ++b) {
            for (Eigen::Index n = 0; n < scene.n_taps; ++n) {
                const double re = rng.normal();
                const double im = rng.normal();
                sample.taps(b, n) += std::complex<double>(component * re, component * im);
            }
        }
    }
    return sample;
}

Eigen::VectorXd to_features(const CirSample& sample) {
    const Eigen::Index n_bs = sample.taps.rows();
    const Eigen::Index n_taps = sample.taps.cols();
    Eigen::VectorXd features(2 * n_bs * n_taps);
    for (Eigen::Index b = 0; b < n_bs; ++b) {
        features.segment(2 * b * n_taps, n_taps) = sample.taps.row(b).real().transpose();
        features.segment(2 * b * n_taps + n_taps, n_taps) = sample.taps.row(b).imag().transpose();
    }
    const double scale = features.cwiseAbs().maxCoeff();
    if (scale > 0.0) features /= scale;
    return features;
}

}  // namespace cirdil::channel
