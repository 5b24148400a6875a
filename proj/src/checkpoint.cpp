#include "cirdil/nn/checkpoint.hpp"

#include <fstream>
#include <stdexcept>
#include <vector>

namespace cirdil::nn {

namespace {

nlohmann::json vector_to_json(const VectorX<double>& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

VectorX<double> vector_from_json(const nlohmann::json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const VectorX<double>>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

nlohmann::json to_json(const Checkpoint& checkpoint) {
    nlohmann::json doc;
    doc["format"] = "cirdil-checkpoint";
    doc["version"] = kCheckpointVersion;
    doc["layer_sizes"] = checkpoint.model.sizes();
    doc["parameters"] = vector_to_json(checkpoint.model.flatten());
    doc["seed"] = checkpoint.seed;
    doc["epoch"] = checkpoint.epoch;
    if (checkpoint.optimizer) {
        const auto& opt = *checkpoint.optimizer;
        doc["optimizer"] = {
            {"base_learning_rate", opt.base_learning_rate},
            {"learning_rate", opt.learning_rate},
            {"beta1", opt.beta1},
            {"beta2", opt.beta2},
            {"epsilon", opt.epsilon},
            {"milestones", opt.milestones},
            {"decay", opt.decay},
            {"step", opt.step},
            {"epoch", opt.epoch},
            {"first_moment", vector_to_json(opt.first_moment)},
            {"second_moment", vector_to_json(opt.second_moment)},
        };
    } else {
        doc["optimizer"] = nullptr;
    }
    return doc;
}

Checkpoint checkpoint_from_json(const nlohmann::json& doc) {
    if (doc.value("format", "") != "cirdil-checkpoint") throw std::runtime_error("not a cirdil checkpoint");
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint checkpoint;
    checkpoint.model = Mlp<double>(doc.at("layer_sizes").get<std::vector<int>>());
    checkpoint.model.unflatten(vector_from_json(doc.at("parameters")));
    checkpoint.seed = doc.at("seed").get<std::uint64_t>();
    checkpoint.epoch = doc.at("epoch").get<int>();
    const auto& opt = doc.at("optimizer");
    if (!opt.is_null()) {
        AdamState<double> state;
        state.base_learning_rate = opt.at("base_learning_rate").get<double>();
        state.learning_rate = opt.at("learning_rate").get<double>();
        state.beta1 = opt.at("beta1").get<double>();
        state.beta2 = opt.at("beta2").get<double>();
        state.epsilon = opt.at("epsilon").get<double>();
        state.milestones = opt.at("milestones").get<std::vector<int>>();
        state.decay = opt.at("decay").get<double>();
        state.step = opt.at("step").get<std::int64_t>();
        state.epoch = opt.at("epoch").get<int>();
        state.first_moment = vector_from_json(opt.at("first_moment"));
        state.second_moment = vector_from_json(opt.at("second_moment"));
        if (state.first_moment.size() != checkpoint.model.num_params() ||
            state.second_moment.size() != checkpoint.model.num_params()) {
            throw std::runtime_error("optimizer moments do not match parameter count");
        }
        checkpoint.optimizer = std::move(state);
    }
    return checkpoint;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_json(checkpoint).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return checkpoint_from_json(nlohmann::json::parse(in));
}

std::uint64_t parameter_hash(const VectorX<double>& params) {
    return fnv1a(params.data(), static_cast<std::size_t>(params.size()) * sizeof(double));
}

}  // namespace cirdil::nn
