#include "cirdil/channel/task.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace cirdil::channel {

static_assert(std::endian::native == std::endian::little, "dataset files assume a little-endian host");

FeatureTable make_feature_table(const TaskDataset& dataset) {
    FeatureTable table;
    if (dataset.samples.empty()) return table;
    const Eigen::Index n = static_cast<Eigen::Index>(dataset.samples.size());
    const Eigen::Index f = 2 * dataset.samples.front().taps.size();
    table.features.resize(f, n);
    table.positions.resize(2, n);
    table.regions.reserve(dataset.samples.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = dataset.samples[static_cast<std::size_t>(i)];
        table.features.col(i) = to_features(s);
        table.positions(0, i) = s.position.x;
        table.positions(1, i) = s.position.y;
        table.regions.push_back(s.region);
    }
    return table;
}

std::vector<Position2D> random_walk(const Scene& scene, const TrajectorySpec& spec, std::size_t count, Rng& rng) {
    if (spec.segment_length < 1) throw std::invalid_argument("trajectory segment length must be at least 1");
    std::vector<Position2D> path;
    path.reserve(count);
    Position2D p;
    double heading = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        if (i % static_cast<std::size_t>(spec.segment_length) == 0) {
            p = {rng.uniform(0.0, scene.width), rng.uniform(0.0, scene.height)};
            heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
        } else {
            heading += spec.heading_jitter * rng.normal();
            p.x += spec.step * std::cos(heading);
            p.y += spec.step * std::sin(heading);
            if (p.x < 0.0) {
                p.x = -p.x;
                heading = std::numbers::pi - heading;
            } else if (p.x > scene.width) {
                p.x = 2.0 * scene.width - p.x;
                heading = std::numbers::pi - heading;
            }
            if (p.y < 0.0) {
                p.y = -p.y;
                heading = -heading;
            } else if (p.y > scene.height) {
                p.y = 2.0 * scene.height - p.y;
                heading = -heading;
            }
            p.x = std::clamp(p.x, 0.0, scene.width);
            p.y = std::clamp(p.y, 0.0, scene.height);
        }
        path.push_back(p);
    }
    return path;
}

TaskDataset generate_task(const Scene& scene, const TrajectorySpec& trajectory, std::size_t count, std::uint64_t seed,
                          const RegionLabeler& labeler, int task_id) {
    if (count < 1) throw std::invalid_argument("a task needs at least one sample");
    scene.validate();
    Rng walk_rng(derive_seed(seed, 0));
    const auto path = random_walk(scene, trajectory, count, walk_rng);
    const std::uint64_t noise_seed = derive_seed(seed, 1);

    TaskDataset dataset;
    dataset.task_id = task_id;
    dataset.scene_hash = scene_hash(scene);
    dataset.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng noise(derive_seed(noise_seed, i));
        CirSample s = synthesize_cir(scene, path[i], noise, i);
        s.region = labeler.label(s.position);
        dataset.samples.push_back(std::move(s));
    }
    dataset.train.resize(count);
    for (std::size_t i = 0; i < count; ++i) dataset.train[i] = i;
    return dataset;
}

void split_task(TaskDataset& dataset, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw std::invalid_argument("train fraction must lie in (0, 1]");
    Rng rng(seed);
    dataset.train.clear();
    dataset.test.clear();
    for (Region region : {Region::Static, Region::Modified}) {
        std::vector<SampleId> group;
        for (const auto& s : dataset.samples) {
            if (s.region == region) group.push_back(s.id);
        }
        rng.shuffle(std::span<SampleId>(group));
        const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(group.size())));
        dataset.train.insert(dataset.train.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(n_train));
        dataset.test.insert(dataset.test.end(), group.begin() + static_cast<std::ptrdiff_t>(n_train), group.end());
    }
    std::sort(dataset.train.begin(), dataset.train.end());
    std::sort(dataset.test.begin(), dataset.test.end());
}

Scenario default_scenario() {
    using K = ObstacleEdit::Kind;
    Scenario s;
    s.scene = default_scene();
    s.tasks = {
        {"T1", {}},
        {"T2", {{{K::Move, 0, {5.0, 8.5, 9.0, 11.5}}, {K::Move, 1, {13.0, 8.0, 17.0, 11.0}},
                 {K::Add, 4, {8.0, 15.0, 11.0, 18.0}, 0.2}}}},
        {"T3", {{{K::Move, 2, {14.0, 2.0, 17.0, 6.0}}, {K::Remove, 3, {}}}}},
        {"T4", {{{K::Add, 5, {2.0, 2.0, 3.0, 9.0}, 0.1}, {K::Add, 6, {16.0, 13.0, 17.0, 19.0}, 0.1}}}},
        {"T5", {{{K::Move, 5, {9.0, 2.0, 10.0, 9.0}}, {K::Remove, 6, {}}, {K::Move, 4, {7.0, 14.0, 10.0, 17.0}}}}},
    };
    return s;
}

nlohmann::json to_json(const Scenario& scenario) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : scenario.tasks) tasks.push_back({{"name", t.name}, {"changes", to_json(t.change)}});
    return {{"scene", to_json(scenario.scene)},
            {"tasks", tasks},
            {"generation",
             {{"seed", scenario.seed},
              {"samples", scenario.samples_per_task},
              {"train_fraction", scenario.train_fraction},
              {"trajectory",
               {{"step", scenario.trajectory.step},
                {"segment_length", scenario.trajectory.segment_length},
                {"heading_jitter", scenario.trajectory.heading_jitter}}}}}};
}

Scenario scenario_from_json(const nlohmann::json& doc) {
    Scenario s = default_scenario();
    if (doc.contains("scene")) s.scene = scene_from_json(doc.at("scene"));
    if (doc.contains("tasks")) {
        s.tasks.clear();
        for (const auto& t : doc.at("tasks")) {
            TaskSpec spec;
            spec.name = t.at("name").get<std::string>();
            if (t.contains("changes")) spec.change = change_from_json(t.at("changes"));
            s.tasks.push_back(std::move(spec));
        }
    }
    if (s.tasks.empty()) throw std::invalid_argument("scenario needs at least one task");
    if (doc.contains("generation")) {
        const auto& g = doc.at("generation");
        s.seed = g.value("seed", s.seed);
        s.samples_per_task = g.value("samples", s.samples_per_task);
        s.train_fraction = g.value("train_fraction", s.train_fraction);
        if (g.contains("trajectory")) {
            const auto& tr = g.at("trajectory");
            s.trajectory.step = tr.value("step", s.trajectory.step);
            s.trajectory.segment_length = tr.value("segment_length", s.trajectory.segment_length);
            s.trajectory.heading_jitter = tr.value("heading_jitter", s.trajectory.heading_jitter);
        }
    }
    if (s.samples_per_task < 1) throw std::invalid_argument("samples per task must be at least 1");
    return s;
}

std::vector<GeneratedTask> generate_scenario(const Scenario& scenario) {
    std::vector<GeneratedTask> out;
    Scene scene = scenario.scene;
    scene.validate();
    for (std::size_t t = 0; t < scenario.tasks.size(); ++t) {
        RegionLabeler labeler;
        if (t > 0 || !scenario.tasks[t].change.edits.empty()) {
            auto changed = apply_change(scene, scenario.tasks[t].change);
            scene = std::move(changed.scene);
            labeler = std::move(changed.labeler);
        }
        const std::uint64_t task_seed = derive_seed(scenario.seed, t);
        TaskDataset ds = generate_task(scene, scenario.trajectory, scenario.samples_per_task, task_seed, labeler,
                                       static_cast<int>(t));
        ds.name = scenario.tasks[t].name;
        split_task(ds, scenario.train_fraction, derive_seed(task_seed, 2));
        out.push_back({std::move(ds), scene, std::move(labeler)});
    }
    return out;
}

namespace {

constexpr char kMagic[8] = {'C', 'I', 'R', 'D', 'S', 'E', 'T', '1'};
constexpr std::uint32_t kDatasetVersion = 1;

template <typename T>
void put(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw std::runtime_error("truncated dataset file");
    return value;
}

}  // namespace

void write_dataset(const TaskDataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const std::uint32_t n_bs = dataset.samples.empty() ? 0 : static_cast<std::uint32_t>(dataset.samples[0].taps.rows());
    const std::uint32_t n_taps = dataset.samples.empty() ? 0 : static_cast<std::uint32_t>(dataset.samples[0].taps.cols());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kDatasetVersion);
    put<std::int32_t>(out, dataset.task_id);
    put<std::uint32_t>(out, n_bs);
    put<std::uint32_t>(out, n_taps);
    put<std::uint64_t>(out, dataset.samples.size());
    put<std::uint64_t>(out, dataset.scene_hash);
    put<std::uint64_t>(out, dataset.train.size());
    put<std::uint64_t>(out, dataset.test.size());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.name.size()));
    out.write(dataset.name.data(), static_cast<std::streamsize>(dataset.name.size()));
    for (const auto& s : dataset.samples) {
        put<std::uint64_t>(out, s.id);
        put<double>(out, s.position.x);
        put<double>(out, s.position.y);
        put<std::uint8_t>(out, static_cast<std::uint8_t>(s.region));
        for (Eigen::Index b = 0; b < s.taps.rows(); ++b) {
            for (Eigen::Index n = 0; n < s.taps.cols(); ++n) {
                put<double>(out, s.taps(b, n).real());
                put<double>(out, s.taps(b, n).imag());
            }
        }
    }
    for (auto id : dataset.train) put<std::uint64_t>(out, id);
    for (auto id : dataset.test) put<std::uint64_t>(out, id);
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

TaskDataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error("not a cirdil dataset file");
    if (get<std::uint32_t>(in) != kDatasetVersion) throw std::runtime_error("unsupported dataset version");
    TaskDataset ds;
    ds.task_id = get<std::int32_t>(in);
    const auto n_bs = get<std::uint32_t>(in);
    const auto n_taps = get<std::uint32_t>(in);
    const auto count = get<std::uint64_t>(in);
    ds.scene_hash = get<std::uint64_t>(in);
    const auto n_train = get<std::uint64_t>(in);
    const auto n_test = get<std::uint64_t>(in);
    const auto name_len = get<std::uint32_t>(in);
    ds.name.resize(name_len);
    in.read(ds.name.data(), name_len);
    ds.samples.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        CirSample s;
        s.id = get<std::uint64_t>(in);
        s.position.x = get<double>(in);
        s.position.y = get<double>(in);
        const auto region = get<std::uint8_t>(in);
        if (region > 1) throw std::runtime_error("bad region tag in dataset file");
        s.region = static_cast<Region>(region);
        s.taps.resize(n_bs, n_taps);
        for (std::uint32_t b = 0; b < n_bs; ++b) {
            for (std::uint32_t n = 0; n < n_taps; ++n) {
                const double re = get<double>(in);
                const double im = get<double>(in);
                s.taps(b, n) = {re, im};
            }
        }
        ds.samples.push_back(std::move(s));
    }
    ds.train.resize(n_train);
    for (auto& id : ds.train) id = get<std::uint64_t>(in);
    ds.test.resize(n_test);
    for (auto& id : ds.test) id = get<std::uint64_t>(in);
    return ds;
}

}  // namespace cirdil::channel
