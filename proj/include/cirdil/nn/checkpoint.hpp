#ifndef CIRDIL_NN_CHECKPOINT_HPP
#define CIRDIL_NN_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <optional>

#include <json.hpp>

#include "cirdil/nn/adam.hpp"
#include "cirdil/nn/mlp.hpp"

namespace cirdil::nn {

inline constexpr int kCheckpointVersion = 1;

/// Everything needed to resume training of a regressor.
struct Checkpoint {
    Mlp<double> model;
    std::optional<AdamState<double>> optimizer;
    std::uint64_t seed = 0;
    int epoch = 0;
};

nlohmann::json to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const nlohmann::json& doc);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Stable 64-bit hash of a parameter vector's bytes.
std::uint64_t parameter_hash(const VectorX<double>& params);

}  // namespace cirdil::nn

#endif  // CIRDIL_NN_CHECKPOINT_HPP
