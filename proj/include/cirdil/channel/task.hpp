#ifndef CIRDIL_CHANNEL_TASK_HPP
#define CIRDIL_CHANNEL_TASK_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cirdil/channel/change.hpp"
#include "cirdil/channel/cir.hpp"
#include "cirdil/channel/scene.hpp"

namespace cirdil::channel {

/// Piecewise random walk: each segment starts at a uniform position in the
/// room and advances `step` metres per sample with a jittered heading,
/// reflecting at the walls.
struct TrajectorySpec {
    double step = 0.05;
    int segment_length = 50;
    double heading_jitter = 0.3;  // radians, std of the per-step heading change
};

struct TaskDataset {
    int task_id = 0;
    std::string name;
    std::vector<CirSample> samples;  // samples[i].id == i
    std::vector<SampleId> train;
    std::vector<SampleId> test;
    std::uint64_t scene_hash = 0;

    std::size_t size() const { return samples.size(); }
};

/// Feature and position matrices of a dataset, samples as columns.
struct FeatureTable {
    Eigen::MatrixXd features;
    Eigen::MatrixXd positions;
    std::vector<Region> regions;
};

FeatureTable make_feature_table(const TaskDataset& dataset);

std::vector<Position2D> random_walk(const Scene& scene, const TrajectorySpec& spec, std::size_t count, Rng& rng);

/// `count` samples along a seeded trajectory. Per-sample noise comes from
/// substreams derived from (seed, sample id).
TaskDataset generate_task(const Scene& scene, const TrajectorySpec& trajectory, std::size_t count, std::uint64_t seed,
                          const RegionLabeler& labeler = {}, int task_id = 0);

/// Seeded split stratified by region label; train and test are disjoint,
/// cover every id and are sorted.
void split_task(TaskDataset& dataset, double train_fraction, std::uint64_t seed);

struct TaskSpec {
    std::string name;
    DomainChange change;  // relative to the previous task's scene
};

/// Scene, sequence of domain changes and generation settings.
struct Scenario {
    Scene scene;
    std::vector<TaskSpec> tasks;
    TrajectorySpec trajectory;
    std::size_t samples_per_task = 5000;
    double train_fraction = 0.8;
    std::uint64_t seed = 2025;
};

/// Five-domain desk scenario; the first two domains form the default
/// two-domain benchmark.
Scenario default_scenario();

nlohmann::json to_json(const Scenario& scenario);
Scenario scenario_from_json(const nlohmann::json& doc);

struct GeneratedTask {
    TaskDataset dataset;
    Scene scene;
    RegionLabeler labeler;
};

/// Applies the changes in order and generates every task's dataset.
std::vector<GeneratedTask> generate_scenario(const Scenario& scenario);

/// Binary dataset file. Layout (little-endian):
///   magic "CIRDSET1" (8 bytes), u32 version, i32 task_id, u32 base stations B,
///   u32 n_taps, u64 count, u64 scene_hash, u64 n_train, u64 n_test, u32 name
///   length, name bytes; then per sample: u64 id, f64 x, f64 y, u8 region,
///   B*n_taps pairs of f64 (re, im) ordered by base station then tap; then the
///   train ids and test ids as u64.
void write_dataset(const TaskDataset& dataset, const std::filesystem::path& path);
TaskDataset read_dataset(const std::filesystem::path& path);

}  // namespace cirdil::channel

#endif  // CIRDIL_CHANNEL_TASK_HPP
